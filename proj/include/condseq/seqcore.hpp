#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "condseq/errors.hpp"

namespace condseq {

using TokenId = std::uint8_t;

inline constexpr std::size_t kNumResidues = 20;
inline constexpr std::size_t kVocabSize = 21;
inline constexpr TokenId kMaskId = 20;
inline constexpr char kMaskSymbol = 'X';

/// The 20 standard amino acids (IUPAC one-letter codes) plus the absorbing
/// mask token, which is always the last id.
class Vocabulary {
 public:
  Vocabulary();

  static const Vocabulary& standard();

  std::size_t size() const noexcept { return kVocabSize; }
  TokenId mask_id() const noexcept { return kMaskId; }

  /// Symbol for an id; the mask renders as 'X'.
  char symbol(TokenId id) const;
  /// Id for a residue symbol (case-insensitive). Returns nullopt for anything
  /// outside the 20 standard residues, including 'X'.
  std::optional<TokenId> id(char symbol) const;

 private:
  std::array<std::int16_t, 256> lookup_{};
};

/// Token ids of one chain. Immutable after construction.
class Sequence {
 public:
  Sequence() = default;
  /// Throws InvalidSequence when empty or when an id is outside [0, 21).
  explicit Sequence(std::vector<TokenId> ids);

  /// Length-L sequence of mask tokens.
  static Sequence all_mask(std::size_t length);

  std::span<const TokenId> ids() const noexcept { return ids_; }
  const std::vector<TokenId>& vec() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  TokenId operator[](std::size_t i) const { return ids_[i]; }
  bool has_mask() const;
  std::size_t mask_count() const;

  friend bool operator==(const Sequence&, const Sequence&) = default;

 private:
  std::vector<TokenId> ids_;
};

/// Throws InvalidResidue(position, symbol) for symbols outside the vocabulary.
Sequence encode_sequence(std::string_view text, const Vocabulary& vocab = Vocabulary::standard());
std::string decode_sequence(const Sequence& seq, const Vocabulary& vocab = Vocabulary::standard());

/// Annotation ids, each an index into the per-type label registry.
struct AnnotationSet {
  std::set<int> go;
  std::set<int> ipr;
  std::set<int> ec;

  bool empty() const noexcept { return go.empty() && ipr.empty() && ec.empty(); }
  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

/// One motif fragment occupying the half-open range [start, end).
struct MotifSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<TokenId> residues;

  friend bool operator==(const MotifSpan&, const MotifSpan&) = default;
};

/// Sorted, non-overlapping motif fragments. Validated on construction.
class MotifSpec {
 public:
  MotifSpec() = default;
  /// Throws InvalidMotif on unsorted or overlapping spans, a residue count
  /// that differs from end - start, empty spans, or mask residues.
  explicit MotifSpec(std::vector<MotifSpan> spans, bool dynamic_update = false);

  const std::vector<MotifSpan>& spans() const noexcept { return spans_; }
  bool dynamic_update() const noexcept { return dynamic_update_; }
  bool empty() const noexcept { return spans_.empty(); }
  /// Largest end over all spans (0 when empty).
  std::size_t extent() const noexcept;
  std::size_t residue_count() const noexcept;

  friend bool operator==(const MotifSpec&, const MotifSpec&) = default;

 private:
  std::vector<MotifSpan> spans_;
  bool dynamic_update_ = false;
};

/// Parses "start-end:RESIDUES[,start-end:RESIDUES...]" with 0-based
/// half-open bounds, as used on the command line.
MotifSpec parse_motif(std::string_view text, bool dynamic_update = false);

/// Inverse of parse_motif.
std::string format_motif(const MotifSpec& motif);

/// Writes the motif residues into `seq`. Positions outside the spans are
/// untouched. Throws SpanOutOfRange when a span ends past the sequence.
Sequence apply_motif(const Sequence& seq, const MotifSpec& motif);

/// Mask-padded motif sequence of length L (c_seq before embedding).
Sequence motif_sequence(const MotifSpec& motif, std::size_t length);

using Vec3 = std::array<double, 3>;

/// Backbone atoms in the fixed order N, CA, C, O.
enum BackboneAtom : std::size_t { kAtomN = 0, kAtomCA = 1, kAtomC = 2, kAtomO = 3 };

struct BackboneStructure {
  std::vector<std::array<Vec3, 4>> residues;

  std::size_t size() const noexcept { return residues.size(); }
  bool all_finite() const;
  friend bool operator==(const BackboneStructure&, const BackboneStructure&) = default;
};

/// Any subset of the three condition channels, including none.
struct ConditionBundle {
  std::optional<AnnotationSet> annotations;
  std::optional<MotifSpec> motif;
  std::optional<BackboneStructure> structure;

  bool unconditional() const noexcept { return !annotations && !motif && !structure; }
};

}  // namespace condseq
