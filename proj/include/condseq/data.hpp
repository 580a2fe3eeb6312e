#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "condseq/registry.hpp"
#include "condseq/seqcore.hpp"
#include "condseq/training.hpp"

namespace condseq {

struct FastaEntry {
  std::string id;
  std::string sequence;
};

/// Ids are the header up to the first whitespace; sequences are uppercased
/// and may span lines. Throws ParseError on empty records, duplicate ids or
/// sequence data before the first header.
std::vector<FastaEntry> parse_fasta_text(std::string_view text);
std::vector<FastaEntry> parse_fasta(const std::filesystem::path& path);

/// `>id` headers and sequence lines wrapped at 60 columns.
std::string format_fasta_entries(const std::vector<FastaEntry>& entries);

/// Domain hit from the annotation TSV, converted to a 0-based half-open span.
/// Hits listed without boundaries carry no span.
struct DomainHit {
  std::string label;
  std::optional<std::pair<std::size_t, std::size_t>> span;
};

struct AnnotationRow {
  std::vector<std::string> go;
  std::vector<DomainHit> ipr;
  std::vector<std::string> ec;
  /// Optional fifth column: a motif in "start-end:RESIDUES" form.
  std::optional<std::string> motif;
};

/// Header row required; columns id, go, ipr, ec and an optional motif.
/// Lists are semicolon separated; IPR entries are LABEL:start-end with
/// 1-based inclusive bounds. Throws ParseError(line, column).
std::map<std::string, AnnotationRow> parse_annotations_text(std::string_view text);
std::map<std::string, AnnotationRow> parse_annotations(const std::filesystem::path& path);

/// PDB fixed-column ATOM records of the first model. Keeps N, CA, C and O per
/// residue (alternate locations other than blank and 'A' are skipped).
/// Throws IncompleteResidue and ParseError.
BackboneStructure parse_backbone_text(std::string_view text);
BackboneStructure parse_backbone(const std::filesystem::path& path);

/// ATOM records for a backbone, readable by parse_backbone.
std::string format_backbone_pdb(const BackboneStructure& structure, const Sequence& sequence);

struct DatasetRecord {
  std::string id;
  Sequence sequence;
  AnnotationSet annotations;
  std::optional<MotifSpec> motif;
  std::optional<BackboneStructure> structure;

  /// Throws SpanOutOfRange or LengthMismatch.
  void validate() const;
  /// Annotations, motif and structure as a conditioning bundle; absent
  /// channels stay absent.
  ConditionBundle bundle() const;
};

std::vector<TrainingExample> to_training_examples(const std::vector<DatasetRecord>& records);

/// Uncurated input: raw sequence text plus string labels.
struct RawRecord {
  std::string id;
  std::string sequence;
  AnnotationRow annotations;
};

/// Joins FASTA entries with annotation rows by id; sequences without a row
/// get empty annotations.
std::vector<RawRecord> join_records(const std::vector<FastaEntry>& fasta,
                                    const std::map<std::string, AnnotationRow>& annotations);

struct CurationConfig {
  std::size_t min_label_count = 100;
  std::size_t val_per_label = 30;
  /// Longer sequences are dropped; 0 keeps all lengths.
  std::size_t max_len = 0;

  /// Throws InvalidConfig.
  void validate() const;
  nlohmann::json to_json() const;
  static CurationConfig from_json(const nlohmann::json& j);
};

struct CuratedDataset {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> val;
  Registries registries;
  /// Human-readable notes on dropped records and motif choices.
  std::vector<std::string> log;
};

/// Drops labels with fewer than min_label_count supporting sequences and the
/// records left without labels; moves up to val_per_label sequences per label
/// (first by id) to validation without letting any label's training count
/// fall below min_label_count - val_per_label; picks each record's motif from
/// its domain hits by GO co-occurrence. Throws EmptyDataset.
CuratedDataset curate(const std::vector<RawRecord>& records, const CurationConfig& config);

struct SyntheticSpec {
  std::size_t n_classes = 4;
  std::size_t n_sequences = 2000;
  std::size_t signature_length = 8;
  std::size_t signatures_per_class = 1;
  std::size_t min_length = 32;
  std::size_t max_length = 40;
  /// Labels per record are drawn uniformly from [1, max_labels].
  std::size_t max_labels = 2;
  /// Fraction of records held out for validation.
  double val_fraction = 0.1;
  bool structures = false;
  std::uint64_t seed = 0;

  /// Throws InvalidSpec.
  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

/// Scores a sequence per class by the best sliding-window identity to any of
/// the class signatures; an exact occurrence scores 1.
class SyntheticOracle {
 public:
  SyntheticOracle() = default;
  SyntheticOracle(std::vector<std::string> class_labels, std::vector<std::vector<Sequence>> signatures);

  std::size_t n_classes() const noexcept { return signatures_.size(); }
  const std::vector<std::string>& class_labels() const noexcept { return labels_; }
  const std::vector<std::vector<Sequence>>& signatures() const noexcept { return signatures_; }

  std::vector<double> scores(const Sequence& seq) const;
  /// Label -> confidence for every class.
  std::map<std::string, double> confidences(const Sequence& seq) const;
  /// Mean confidence over the GO ids in `annotations` (0 when there are none).
  double function_score(const Sequence& seq, const AnnotationSet& annotations) const;

  nlohmann::json to_json() const;
  static SyntheticOracle from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<Sequence>> signatures_;
};

struct SyntheticCorpus {
  std::vector<DatasetRecord> records;
  Registries registries;
  SyntheticOracle oracle;
};

/// Uniform background with one class signature inserted per assigned label at
/// non-overlapping random positions. Labels go in the GO slot; the motif is
/// the first inserted signature. Byte-identical for equal specs.
SyntheticCorpus make_synthetic(const SyntheticSpec& spec);

/// Backbone of an ideal chain with fixed phi/psi/omega (degrees).
BackboneStructure ideal_backbone(std::size_t length, double phi = -57.0, double psi = -47.0, double omega = 180.0);

struct StructureSynthesis {
  /// Residues are split into this many seeded groups that share an offset,
  /// so a structure reveals the group but not the exact residue.
  std::size_t residue_groups = 5;
  /// Offsets are uniform in +-offset_scale angstroms per coordinate.
  double offset_scale = 0.5;
};

/// Ideal helix plus a per-residue atom offset given by a seeded projection of
/// the residue identity. Each residue's offset moves only its own atoms.
void make_synthetic_structures(std::vector<DatasetRecord>& records, std::uint64_t seed,
                               const StructureSynthesis& options = {});

/// Dataset directory: train.fasta, val.fasta, annotations.tsv,
/// registries.json, optional oracle.json and structures/<id>.bin.
struct Dataset {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> val;
  Registries registries;
  std::optional<SyntheticOracle> oracle;
};

/// Written into a staging directory and moved into place.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
/// Throws IoError, ParseError and UnknownLabel.
Dataset read_dataset(const std::filesystem::path& dir);

/// Little-endian u64 residue count followed by f32 L x 4 x 3 coordinates.
std::string encode_structure(const BackboneStructure& structure);
BackboneStructure decode_structure(std::string_view bytes);

/// Split of a synthetic corpus: the last val_fraction of records by index.
Dataset split_synthetic(const SyntheticCorpus& corpus, double val_fraction);

}  // namespace condseq
