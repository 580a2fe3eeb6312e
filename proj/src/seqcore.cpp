#include "condseq/seqcore.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace condseq {

namespace {
constexpr std::string_view kResidueSymbols = "ACDEFGHIKLMNPQRSTVWY";
}  // namespace

Vocabulary::Vocabulary() {
  lookup_.fill(-1);
  for (std::size_t i = 0; i < kResidueSymbols.size(); ++i) {
    const auto upper = static_cast<unsigned char>(kResidueSymbols[i]);
    lookup_[upper] = static_cast<std::int16_t>(i);
    lookup_[static_cast<unsigned char>(std::tolower(upper))] = static_cast<std::int16_t>(i);
  }
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab;
  return vocab;
}

char Vocabulary::symbol(TokenId id) const {
  if (id == kMaskId) return kMaskSymbol;
  if (id >= kNumResidues) throw InvalidSequence("token id out of range: " + std::to_string(id));
  return kResidueSymbols[id];
}

std::optional<TokenId> Vocabulary::id(char symbol) const {
  const auto v = lookup_[static_cast<unsigned char>(symbol)];
  if (v < 0) return std::nullopt;
  return static_cast<TokenId>(v);
}

Sequence::Sequence(std::vector<TokenId> ids) : ids_(std::move(ids)) {
  if (ids_.empty()) throw InvalidSequence("sequence must be non-empty");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] >= kVocabSize)
      throw InvalidSequence("token id " + std::to_string(ids_[i]) + " at position " + std::to_string(i) +
                            " is out of range");
  }
}

Sequence Sequence::all_mask(std::size_t length) { return Sequence(std::vector<TokenId>(length, kMaskId)); }

bool Sequence::has_mask() const { return std::find(ids_.begin(), ids_.end(), kMaskId) != ids_.end(); }

std::size_t Sequence::mask_count() const {
  return static_cast<std::size_t>(std::count(ids_.begin(), ids_.end(), kMaskId));
}

Sequence encode_sequence(std::string_view text, const Vocabulary& vocab) {
  if (text.empty()) throw InvalidSequence("cannot encode an empty sequence");
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto id = vocab.id(text[i]);
    if (!id) throw InvalidResidue(i, text[i]);
    ids.push_back(*id);
  }
  return Sequence(std::move(ids));
}

std::string decode_sequence(const Sequence& seq, const Vocabulary& vocab) {
  std::string out;
  out.reserve(seq.size());
  for (const TokenId id : seq.ids()) out.push_back(vocab.symbol(id));
  return out;
}

MotifSpec::MotifSpec(std::vector<MotifSpan> spans, bool dynamic_update)
    : spans_(std::move(spans)), dynamic_update_(dynamic_update) {
  for (std::size_t i = 0; i < spans_.size(); ++i) {
    const auto& s = spans_[i];
    if (s.start >= s.end) throw InvalidMotif("motif span " + std::to_string(i) + " is empty or reversed");
    if (s.residues.size() != s.end - s.start)
      throw InvalidMotif("motif span " + std::to_string(i) + " has " + std::to_string(s.residues.size()) +
                         " residues for width " + std::to_string(s.end - s.start));
    for (const TokenId r : s.residues) {
      if (r >= kNumResidues) throw InvalidMotif("motif span " + std::to_string(i) + " contains a mask or invalid token");
    }
    if (i > 0 && s.start < spans_[i - 1].end)
      throw InvalidMotif("motif spans " + std::to_string(i - 1) + " and " + std::to_string(i) +
                         " overlap or are unsorted");
  }
}

std::size_t MotifSpec::extent() const noexcept { return spans_.empty() ? 0 : spans_.back().end; }

std::size_t MotifSpec::residue_count() const noexcept {
  std::size_t n = 0;
  for (const auto& s : spans_) n += s.residues.size();
  return n;
}

MotifSpec parse_motif(std::string_view text, bool dynamic_update) {
  std::vector<MotifSpan> spans;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    const auto colon = item.find(':');
    const auto dash = item.find('-');
    if (colon == std::string_view::npos || dash == std::string_view::npos || dash > colon)
      throw InvalidMotif("malformed motif item '" + std::string(item) + "', expected start-end:RESIDUES");
    MotifSpan span;
    try {
      span.start = std::stoul(std::string(item.substr(0, dash)));
      span.end = std::stoul(std::string(item.substr(dash + 1, colon - dash - 1)));
    } catch (const std::exception&) {
      throw InvalidMotif("malformed motif bounds in '" + std::string(item) + "'");
    }
    const auto residues = item.substr(colon + 1);
    for (std::size_t i = 0; i < residues.size(); ++i) {
      const auto id = Vocabulary::standard().id(residues[i]);
      if (!id) throw InvalidResidue(i, residues[i]);
      span.residues.push_back(*id);
    }
    spans.push_back(std::move(span));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return MotifSpec(std::move(spans), dynamic_update);
}

std::string format_motif(const MotifSpec& motif) {
  std::string out;
  for (const auto& span : motif.spans()) {
    if (!out.empty()) out += ',';
    out += std::to_string(span.start) + '-' + std::to_string(span.end) + ':' + decode_sequence(Sequence(span.residues));
  }
  return out;
}

Sequence apply_motif(const Sequence& seq, const MotifSpec& motif) {
  if (motif.extent() > seq.size())
    throw SpanOutOfRange("motif extends to " + std::to_string(motif.extent()) + " but sequence length is " +
                         std::to_string(seq.size()));
  std::vector<TokenId> ids = seq.vec();
  for (const auto& span : motif.spans())
    std::copy(span.residues.begin(), span.residues.end(), ids.begin() + static_cast<std::ptrdiff_t>(span.start));
  return Sequence(std::move(ids));
}

Sequence motif_sequence(const MotifSpec& motif, std::size_t length) {
  return apply_motif(Sequence::all_mask(length), motif);
}

bool BackboneStructure::all_finite() const {
  for (const auto& residue : residues)
    for (const auto& atom : residue)
      for (const double v : atom)
        if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace condseq
