#include "condseq/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <numbers>
#include <set>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "condseq/errors.hpp"
#include "condseq/io.hpp"
#include "condseq/rng.hpp"
#include "json_util.hpp"

namespace condseq {

namespace fs = std::filesystem;

namespace {

// Splits into lines, dropping a trailing '\r' from each.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto at = s.find(sep, pos);
    out.emplace_back(s.substr(pos, at == std::string_view::npos ? std::string_view::npos : at - pos));
    if (at == std::string_view::npos) break;
    pos = at + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// Non-empty trimmed items of a semicolon list.
std::vector<std::string> list_cell(std::string_view cell) {
  std::vector<std::string> out;
  for (const auto& item : split(cell, ';')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

bool parse_size(std::string_view s, std::size_t& out) {
  if (s.empty() || s.size() > 12) return false;
  out = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    out = out * 10 + static_cast<std::size_t>(c - '0');
  }
  return true;
}

std::string wrap60(std::string_view seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); i += 60) {
    out += seq.substr(i, 60);
    out += '\n';
  }
  return out;
}

AnnotationSet to_ids(const AnnotationRow& row, const Registries& reg) {
  AnnotationSet a;
  for (const auto& g : row.go) a.go.insert(reg.go.id(g));
  for (const auto& h : row.ipr) a.ipr.insert(reg.ipr.id(h.label));
  for (const auto& e : row.ec) a.ec.insert(reg.ec.id(e));
  return a;
}

Eigen::Vector3d place(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c, double bond,
                      double angle, double torsion) {
  const Eigen::Vector3d bc = (c - b).normalized();
  const Eigen::Vector3d n = (b - a).cross(bc).normalized();
  const Eigen::Vector3d m = n.cross(bc);
  return c - bond * std::cos(angle) * bc + bond * std::sin(angle) * std::cos(torsion) * m +
         bond * std::sin(angle) * std::sin(torsion) * n;
}

Vec3 to_vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

Sequence random_residues(Rng& rng, std::size_t n) {
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(rng.uniform_int(kNumResidues));
  return Sequence(std::move(ids));
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(i)]);
}

constexpr const char* kThreeLetter[kNumResidues] = {"ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS",
                                                    "ILE", "LYS", "LEU", "MET", "ASN", "PRO", "GLN",
                                                    "ARG", "SER", "THR", "VAL", "TRP", "TYR"};

}  // namespace

// ---------------------------------------------------------------- parsing

std::vector<FastaEntry> parse_fasta_text(std::string_view text) {
  std::vector<FastaEntry> out;
  std::set<std::string> ids;
  std::size_t header_line = 0;
  const auto lines = split_lines(text);
  auto close = [&] {
    if (!out.empty() && out.back().sequence.empty()) throw ParseError(header_line, "empty record '" + out.back().id + "'");
  };
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto line = lines[n];
    if (trim(line).empty()) continue;
    if (line.front() == '>') {
      close();
      header_line = n + 1;
      const auto header = line.substr(1);
      const auto end = header.find_first_of(" \t");
      std::string id(header.substr(0, end));
      if (id.empty()) throw ParseError(n + 1, "empty FASTA id");
      if (!ids.insert(id).second) throw ParseError(n + 1, "duplicate id '" + id + "'");
      out.push_back({std::move(id), {}});
      continue;
    }
    if (out.empty()) throw ParseError(n + 1, "sequence data before the first header");
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c)))
        out.back().sequence.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  close();
  return out;
}

std::vector<FastaEntry> parse_fasta(const fs::path& path) { return parse_fasta_text(read_file(path)); }

std::string format_fasta_entries(const std::vector<FastaEntry>& entries) {
  std::string out;
  for (const auto& e : entries) out += '>' + e.id + '\n' + wrap60(e.sequence);
  return out;
}

std::map<std::string, AnnotationRow> parse_annotations_text(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t n = 0;
  while (n < lines.size() && trim(lines[n]).empty()) ++n;
  if (n == lines.size()) throw ParseError(1, "annotation table has no header row");
  const auto header = split(lines[n], '\t');
  std::vector<std::string> names;
  for (const auto& h : header) names.push_back(trim(h));
  const std::vector<std::string> required{"id", "go", "ipr", "ec"};
  if (names.size() < 4 || names.size() > 5 || !std::equal(required.begin(), required.end(), names.begin()) ||
      (names.size() == 5 && names[4] != "motif"))
    throw ParseError(n + 1, "header must be id, go, ipr, ec and optionally motif");
  const bool has_motif = names.size() == 5;

  std::map<std::string, AnnotationRow> out;
  for (++n; n < lines.size(); ++n) {
    if (trim(lines[n]).empty()) continue;
    const std::size_t line_no = n + 1;
    const auto cells = split(lines[n], '\t');
    if (cells.size() > names.size()) throw ParseError(line_no, "too many columns", names.size() + 1);
    auto cell = [&](std::size_t i) { return i < cells.size() ? std::string_view(cells[i]) : std::string_view(); };
    const std::string id = trim(cell(0));
    if (id.empty()) throw ParseError(line_no, "empty id", 1);
    AnnotationRow row;
    row.go = list_cell(cell(1));
    for (const auto& item : list_cell(cell(2))) {
      DomainHit hit;
      const auto colon = item.rfind(':');
      if (colon == std::string::npos) {
        hit.label = item;
      } else {
        hit.label = item.substr(0, colon);
        const auto span = std::string_view(item).substr(colon + 1);
        const auto dash = span.find('-');
        std::size_t start = 0, end = 0;
        if (hit.label.empty() || dash == std::string_view::npos || !parse_size(span.substr(0, dash), start) ||
            !parse_size(span.substr(dash + 1), end))
          throw ParseError(line_no, "malformed domain span '" + item + "'", 3);
        if (start < 1 || end < start) throw ParseError(line_no, "domain span end before start in '" + item + "'", 3);
        hit.span = std::make_pair(start - 1, end);
      }
      row.ipr.push_back(std::move(hit));
    }
    row.ec = list_cell(cell(3));
    if (has_motif) {
      auto m = trim(cell(4));
      if (!m.empty()) {
        try {
          parse_motif(m);
        } catch (const Error& e) {
          throw ParseError(line_no, std::string("bad motif: ") + e.what(), 5);
        }
        row.motif = std::move(m);
      }
    }
    if (!out.emplace(id, std::move(row)).second) throw ParseError(line_no, "duplicate id '" + id + "'", 1);
  }
  return out;
}

std::map<std::string, AnnotationRow> parse_annotations(const fs::path& path) {
  return parse_annotations_text(read_file(path));
}

BackboneStructure parse_backbone_text(std::string_view text) {
  static const std::array<std::string, 4> names{"N", "CA", "C", "O"};
  struct Pending {
    std::string key;
    std::array<std::optional<Vec3>, 4> atoms;
  };
  std::vector<Pending> residues;
  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto line = lines[n];
    if (line.substr(0, 6) == "ENDMDL") break;
    if (line.substr(0, 6) != "ATOM  ") continue;
    if (line.size() < 54) throw ParseError(n + 1, "ATOM record shorter than 54 columns");
    const char alt = line[16];
    if (alt != ' ' && alt != 'A') continue;
    const std::string name = trim(line.substr(12, 4));
    const std::string key = std::string(line.substr(17, 3)) + std::string(line.substr(21, 6));
    if (residues.empty() || residues.back().key != key) residues.push_back({key, {}});
    const auto slot = std::find(names.begin(), names.end(), name);
    if (slot == names.end()) continue;
    auto& atom = residues.back().atoms[static_cast<std::size_t>(slot - names.begin())];
    if (atom) continue;
    Vec3 xyz{};
    for (std::size_t k = 0; k < 3; ++k) {
      const std::string field = trim(line.substr(30 + 8 * k, 8));
      try {
        std::size_t used = 0;
        xyz[k] = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ParseError(n + 1, "bad coordinate '" + field + "'", 31 + 8 * k);
      }
    }
    atom = xyz;
  }
  if (residues.empty()) throw ParseError(1, "no ATOM records");
  BackboneStructure out;
  for (std::size_t i = 0; i < residues.size(); ++i) {
    std::array<Vec3, 4> atoms{};
    for (std::size_t a = 0; a < 4; ++a) {
      if (!residues[i].atoms[a]) throw IncompleteResidue(i);
      atoms[a] = *residues[i].atoms[a];
    }
    out.residues.push_back(atoms);
  }
  return out;
}

BackboneStructure parse_backbone(const fs::path& path) { return parse_backbone_text(read_file(path)); }

std::string format_backbone_pdb(const BackboneStructure& structure, const Sequence& sequence) {
  if (sequence.size() != structure.size()) throw LengthMismatch("sequence and structure lengths differ");
  static const char* names[4] = {" N  ", " CA ", " C  ", " O  "};
  static const char elements[4] = {'N', 'C', 'C', 'O'};
  std::string out;
  char buf[96];
  std::size_t serial = 1;
  for (std::size_t i = 0; i < structure.size(); ++i) {
    const char* res = sequence[i] < kNumResidues ? kThreeLetter[sequence[i]] : "UNK";
    for (std::size_t a = 0; a < 4; ++a, ++serial) {
      const auto& p = structure.residues[i][a];
      std::snprintf(buf, sizeof buf, "ATOM  %5zu %4s %3s A%4zu    %8.3f%8.3f%8.3f  1.00  0.00           %c\n", serial,
                    names[a], res, i + 1, p[0], p[1], p[2], elements[a]);
      out += buf;
    }
  }
  out += "END\n";
  return out;
}

// ---------------------------------------------------------------- records

void DatasetRecord::validate() const {
  if (motif && motif->extent() > sequence.size())
    throw SpanOutOfRange("motif of '" + id + "' extends past the sequence");
  if (structure && structure->size() != sequence.size())
    throw LengthMismatch("structure of '" + id + "' has " + std::to_string(structure->size()) + " residues, sequence " +
                         std::to_string(sequence.size()));
}

ConditionBundle DatasetRecord::bundle() const {
  ConditionBundle b;
  if (!annotations.empty()) b.annotations = annotations;
  b.motif = motif;
  b.structure = structure;
  return b;
}

std::vector<TrainingExample> to_training_examples(const std::vector<DatasetRecord>& records) {
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.sequence, r.bundle()});
  return out;
}

std::vector<RawRecord> join_records(const std::vector<FastaEntry>& fasta,
                                    const std::map<std::string, AnnotationRow>& annotations) {
  std::vector<RawRecord> out;
  out.reserve(fasta.size());
  for (const auto& e : fasta) {
    RawRecord r{e.id, e.sequence, {}};
    if (auto it = annotations.find(e.id); it != annotations.end()) r.annotations = it->second;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- curation

void CurationConfig::validate() const {
  if (min_label_count < 1) throw InvalidConfig("min_label_count must be at least 1");
}

nlohmann::json CurationConfig::to_json() const {
  return {{"min_label_count", min_label_count}, {"val_per_label", val_per_label}, {"max_len", max_len}};
}

CurationConfig CurationConfig::from_json(const nlohmann::json& j) {
  CurationConfig c;
  detail::StrictObject o(j, "curation config");
  o.read("min_label_count", c.min_label_count);
  o.read("val_per_label", c.val_per_label);
  o.read("max_len", c.max_len);
  o.finish();
  c.validate();
  return c;
}

CuratedDataset curate(const std::vector<RawRecord>& records, const CurationConfig& config) {
  config.validate();
  if (records.empty()) throw EmptyDataset("no input records");
  CuratedDataset out;

  struct Work {
    const RawRecord* raw;
    Sequence seq;
    AnnotationRow labels;
  };
  std::vector<Work> work;
  std::size_t dropped_residue = 0, dropped_length = 0;
  for (const auto& r : records) {
    if (config.max_len && r.sequence.size() > config.max_len) {
      ++dropped_length;
      continue;
    }
    try {
      auto seq = encode_sequence(r.sequence);
      if (seq.has_mask() || seq.size() == 0) throw InvalidSequence("mask or empty");
      work.push_back({&r, std::move(seq), r.annotations});
    } catch (const Error&) {
      ++dropped_residue;
    }
  }
  if (dropped_length) out.log.push_back("dropped " + std::to_string(dropped_length) + " records longer than max_len");
  if (dropped_residue)
    out.log.push_back("dropped " + std::to_string(dropped_residue) + " records with non-standard residues");

  // Support counts: distinct sequences per label.
  std::map<std::string, std::size_t> go_n, ipr_n, ec_n;
  for (const auto& w : work) {
    for (const auto& g : std::set<std::string>(w.labels.go.begin(), w.labels.go.end())) ++go_n[g];
    std::set<std::string> ipr;
    for (const auto& h : w.labels.ipr) ipr.insert(h.label);
    for (const auto& l : ipr) ++ipr_n[l];
    for (const auto& e : std::set<std::string>(w.labels.ec.begin(), w.labels.ec.end())) ++ec_n[e];
  }
  auto survivors = [&](const std::map<std::string, std::size_t>& counts) {
    std::vector<std::string> keep;
    for (const auto& [label, n] : counts)
      if (n >= config.min_label_count) keep.push_back(label);
    return keep;
  };
  out.registries.go = LabelRegistry(survivors(go_n));
  out.registries.ipr = LabelRegistry(survivors(ipr_n));
  out.registries.ec = LabelRegistry(survivors(ec_n));
  const auto& reg = out.registries;
  if (reg.go.size() + reg.ipr.size() + reg.ec.size() == 0)
    throw EmptyDataset("no label has at least " + std::to_string(config.min_label_count) + " sequences");

  // Filter labels; drop records left with none.
  std::vector<Work> kept;
  for (auto& w : work) {
    AnnotationRow f;
    for (const auto& g : w.labels.go)
      if (reg.go.contains(g) && std::find(f.go.begin(), f.go.end(), g) == f.go.end()) f.go.push_back(g);
    for (const auto& h : w.labels.ipr)
      if (reg.ipr.contains(h.label)) f.ipr.push_back(h);
    for (const auto& e : w.labels.ec)
      if (reg.ec.contains(e) && std::find(f.ec.begin(), f.ec.end(), e) == f.ec.end()) f.ec.push_back(e);
    if (f.go.empty() && f.ipr.empty() && f.ec.empty()) continue;
    w.labels = std::move(f);
    kept.push_back(std::move(w));
  }
  if (kept.size() < work.size())
    out.log.push_back("dropped " + std::to_string(work.size() - kept.size()) + " records without surviving labels");

  // Corpus-level domain/GO co-occurrence.
  std::map<std::pair<std::string, std::string>, std::size_t> cooc;
  for (const auto& w : kept) {
    std::set<std::string> ipr;
    for (const auto& h : w.labels.ipr) ipr.insert(h.label);
    for (const auto& i : ipr)
      for (const auto& g : w.labels.go) ++cooc[{i, g}];
  }

  std::vector<DatasetRecord> curated;
  curated.reserve(kept.size());
  std::size_t intersections = 0;
  for (const auto& w : kept) {
    DatasetRecord rec;
    rec.id = w.raw->id;
    rec.sequence = w.seq;
    rec.annotations = to_ids(w.labels, reg);

    struct Candidate {
      std::size_t relevance, start, end;
      std::string label;
    };
    std::vector<Candidate> cands;
    for (const auto& h : w.labels.ipr) {
      if (!h.span) continue;
      if (h.span->second > w.seq.size()) {
        out.log.push_back("ignored domain span of " + h.label + " past the end of " + rec.id);
        continue;
      }
      std::size_t rel = 0;
      for (const auto& g : w.labels.go) {
        auto it = cooc.find({h.label, g});
        if (it != cooc.end()) rel += it->second;
      }
      cands.push_back({rel, h.span->first, h.span->second, h.label});
    }
    if (!cands.empty()) {
      std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.relevance != b.relevance) return a.relevance > b.relevance;
        if (a.end - a.start != b.end - b.start) return a.end - a.start > b.end - b.start;
        if (a.start != b.start) return a.start < b.start;
        return a.label < b.label;
      });
      std::size_t start = cands[0].start, end = cands[0].end;
      // Equally relevant overlapping domains: keep their intersection.
      if (cands.size() > 1 && cands[1].relevance == cands[0].relevance) {
        const auto lo = std::max(start, cands[1].start), hi = std::min(end, cands[1].end);
        if (lo < hi) {
          start = lo;
          end = hi;
          ++intersections;
        }
      }
      const auto& ids = w.seq.vec();
      rec.motif = MotifSpec({MotifSpan{start, end, std::vector<TokenId>(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                                                          ids.begin() + static_cast<std::ptrdiff_t>(end))}});
    }
    curated.push_back(std::move(rec));
  }
  if (intersections) out.log.push_back("motif from intersecting domains in " + std::to_string(intersections) + " records");

  // Validation selection: per label in registry order, first records by id.
  std::vector<std::size_t> by_id(curated.size());
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return curated[a].id < curated[b].id; });

  // Label keys: (type, id).
  auto keys_of = [](const AnnotationSet& a) {
    std::vector<std::pair<int, int>> k;
    for (int g : a.go) k.emplace_back(0, g);
    for (int i : a.ipr) k.emplace_back(1, i);
    for (int e : a.ec) k.emplace_back(2, e);
    return k;
  };
  std::map<std::pair<int, int>, std::size_t> train_n, val_n;
  for (const auto& r : curated)
    for (const auto& k : keys_of(r.annotations)) ++train_n[k];
  const std::size_t floor_n =
      config.min_label_count > config.val_per_label ? config.min_label_count - config.val_per_label : 0;
  std::vector<bool> in_val(curated.size(), false);
  const std::size_t sizes[3] = {reg.go.size(), reg.ipr.size(), reg.ec.size()};
  for (int type = 0; type < 3; ++type)
    for (int label = 0; label < static_cast<int>(sizes[type]); ++label) {
      const std::pair<int, int> key{type, label};
      for (std::size_t idx : by_id) {
        if (val_n[key] >= config.val_per_label) break;
        if (in_val[idx]) continue;
        const auto ks = keys_of(curated[idx].annotations);
        if (std::find(ks.begin(), ks.end(), key) == ks.end()) continue;
        const bool safe = std::all_of(ks.begin(), ks.end(), [&](const auto& k) { return train_n[k] > floor_n; });
        if (!safe) continue;
        in_val[idx] = true;
        for (const auto& k : ks) {
          --train_n[k];
          ++val_n[k];
        }
      }
    }
  for (std::size_t i = 0; i < curated.size(); ++i) (in_val[i] ? out.val : out.train).push_back(std::move(curated[i]));
  out.log.push_back("curated " + std::to_string(out.train.size()) + " training and " + std::to_string(out.val.size()) +
                    " validation records");
  return out;
}

// ---------------------------------------------------------------- synthetic

void SyntheticSpec::validate() const {
  if (n_classes < 1) throw InvalidSpec("n_classes must be at least 1");
  if (n_sequences < 1) throw InvalidSpec("n_sequences must be at least 1");
  if (signature_length < 6 || signature_length > 12) throw InvalidSpec("signature_length must be in [6, 12]");
  if (signatures_per_class < 1) throw InvalidSpec("signatures_per_class must be at least 1");
  if (max_labels < 1 || max_labels > n_classes) throw InvalidSpec("max_labels must be in [1, n_classes]");
  if (min_length > max_length) throw InvalidSpec("min_length exceeds max_length");
  if (min_length < max_labels * signature_length)
    throw InvalidSpec("signatures too long for background: need length " +
                      std::to_string(max_labels * signature_length));
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InvalidSpec("val_fraction must be in [0, 1)");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"n_classes", n_classes},
          {"n_sequences", n_sequences},
          {"signature_length", signature_length},
          {"signatures_per_class", signatures_per_class},
          {"min_length", min_length},
          {"max_length", max_length},
          {"max_labels", max_labels},
          {"val_fraction", val_fraction},
          {"structures", structures},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  detail::StrictObject o(j, "synthetic spec");
  o.read("n_classes", s.n_classes);
  o.read("n_sequences", s.n_sequences);
  o.read("signature_length", s.signature_length);
  o.read("signatures_per_class", s.signatures_per_class);
  o.read("min_length", s.min_length);
  o.read("max_length", s.max_length);
  o.read("max_labels", s.max_labels);
  o.read("val_fraction", s.val_fraction);
  o.read("structures", s.structures);
  o.read("seed", s.seed);
  try {
    o.finish();
  } catch (const InvalidConfig& e) {
    throw InvalidSpec(e.what());
  }
  s.validate();
  return s;
}

SyntheticOracle::SyntheticOracle(std::vector<std::string> class_labels, std::vector<std::vector<Sequence>> signatures)
    : labels_(std::move(class_labels)), signatures_(std::move(signatures)) {
  if (labels_.size() != signatures_.size()) throw InvalidSpec("one label per signature class required");
}

std::vector<double> SyntheticOracle::scores(const Sequence& seq) const {
  std::vector<double> out(signatures_.size(), 0.0);
  for (std::size_t c = 0; c < signatures_.size(); ++c)
    for (const auto& sig : signatures_[c]) {
      const std::size_t n = sig.size();
      for (std::size_t s = 0; s + n <= seq.size(); ++s) {
        std::size_t same = 0;
        for (std::size_t k = 0; k < n; ++k) same += seq[s + k] == sig[k];
        out[c] = std::max(out[c], static_cast<double>(same) / static_cast<double>(n));
      }
    }
  return out;
}

std::map<std::string, double> SyntheticOracle::confidences(const Sequence& seq) const {
  const auto s = scores(seq);
  std::map<std::string, double> out;
  for (std::size_t c = 0; c < s.size(); ++c) out[labels_[c]] = s[c];
  return out;
}

double SyntheticOracle::function_score(const Sequence& seq, const AnnotationSet& annotations) const {
  if (annotations.go.empty()) return 0.0;
  const auto s = scores(seq);
  double total = 0.0;
  for (int g : annotations.go) {
    if (g < 0 || static_cast<std::size_t>(g) >= s.size()) throw UnknownLabel("class id out of range for the oracle");
    total += s[static_cast<std::size_t>(g)];
  }
  return total / static_cast<double>(annotations.go.size());
}

nlohmann::json SyntheticOracle::to_json() const {
  nlohmann::json sigs = nlohmann::json::array();
  for (const auto& cls : signatures_) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& s : cls) row.push_back(decode_sequence(s));
    sigs.push_back(row);
  }
  return {{"labels", labels_}, {"signatures", sigs}};
}

SyntheticOracle SyntheticOracle::from_json(const nlohmann::json& j) {
  try {
    std::vector<std::vector<Sequence>> sigs;
    for (const auto& row : j.at("signatures")) {
      sigs.emplace_back();
      for (const auto& s : row) sigs.back().push_back(encode_sequence(s.get<std::string>()));
    }
    return SyntheticOracle(j.at("labels").get<std::vector<std::string>>(), std::move(sigs));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("malformed oracle: ") + e.what());
  }
}

SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticCorpus out;

  std::vector<std::string> labels;
  std::vector<std::vector<Sequence>> sigs(spec.n_classes);
  std::set<std::vector<TokenId>> used;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "SYN:%03zu", c);
    labels.emplace_back(name);
    for (std::size_t k = 0; k < spec.signatures_per_class; ++k) {
      Sequence s;
      do s = random_residues(rng, spec.signature_length);
      while (!used.insert(s.vec()).second);
      sigs[c].push_back(s);
    }
  }
  out.registries.go = LabelRegistry(labels);
  out.oracle = SyntheticOracle(labels, sigs);

  std::vector<std::size_t> classes(spec.n_classes);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  for (std::size_t i = 0; i < spec.n_sequences; ++i) {
    const std::size_t L = spec.min_length + rng.uniform_int(spec.max_length - spec.min_length + 1);
    const std::size_t n_labels = 1 + rng.uniform_int(spec.max_labels);
    // Partial Fisher-Yates: the first n_labels entries are the chosen classes.
    for (std::size_t k = 0; k < n_labels; ++k)
      std::swap(classes[k], classes[k + rng.uniform_int(classes.size() - k)]);
    std::vector<TokenId> ids = random_residues(rng, L).vec();

    std::vector<const Sequence*> inserts;
    for (std::size_t k = 0; k < n_labels; ++k)
      inserts.push_back(&sigs[classes[k]][rng.uniform_int(spec.signatures_per_class)]);
    // Random composition of the free residues into n_labels + 1 gaps.
    const std::size_t free = L - n_labels * spec.signature_length;
    std::vector<std::size_t> cuts(n_labels);
    for (auto& c : cuts) c = rng.uniform_int(free + 1);
    std::sort(cuts.begin(), cuts.end());

    DatasetRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", i);
    rec.id = id;
    std::size_t pos = 0, prev_cut = 0;
    for (std::size_t k = 0; k < n_labels; ++k) {
      pos += cuts[k] - prev_cut;
      prev_cut = cuts[k];
      const auto& sig = inserts[k]->vec();
      std::copy(sig.begin(), sig.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos));
      if (k == 0) rec.motif = MotifSpec({MotifSpan{pos, pos + sig.size(), sig}});
      pos += sig.size();
      rec.annotations.go.insert(static_cast<int>(classes[k]));
    }
    rec.sequence = Sequence(std::move(ids));
    out.records.push_back(std::move(rec));
  }
  if (spec.structures) make_synthetic_structures(out.records, Rng(spec.seed).derive(0x57C7).next_u64());
  return out;
}

BackboneStructure ideal_backbone(std::size_t length, double phi, double psi, double omega) {
  constexpr double deg = std::numbers::pi / 180.0;
  phi *= deg;
  psi *= deg;
  omega *= deg;
  BackboneStructure s;
  Eigen::Vector3d n(0, 0, 0), ca(1.458, 0, 0);
  Eigen::Vector3d c = ca + 1.525 * Eigen::Vector3d(-std::cos(111.2 * deg), std::sin(111.2 * deg), 0);
  for (std::size_t i = 0; i < length; ++i) {
    if (i > 0) {
      const Eigen::Vector3d pn = n, pca = ca, pc = c;
      n = place(pn, pca, pc, 1.329, 116.2 * deg, psi);
      ca = place(pca, pc, n, 1.458, 121.7 * deg, omega);
      c = place(pc, n, ca, 1.525, 111.2 * deg, phi);
    }
    const Eigen::Vector3d o = place(n, ca, c, 1.231, 120.5 * deg, psi + std::numbers::pi);
    s.residues.push_back({to_vec3(n), to_vec3(ca), to_vec3(c), to_vec3(o)});
  }
  return s;
}

void make_synthetic_structures(std::vector<DatasetRecord>& records, std::uint64_t seed,
                               const StructureSynthesis& options) {
  if (options.residue_groups < 1 || options.residue_groups > kNumResidues)
    throw InvalidSpec("residue_groups must be in [1, 20]");
  Rng rng(seed);
  std::vector<std::size_t> order(kNumResidues);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  std::array<std::size_t, kNumResidues> group{};
  for (std::size_t k = 0; k < kNumResidues; ++k) group[order[k]] = k % options.residue_groups;
  // Projection: one 12-vector (four atom offsets) per group.
  std::vector<std::array<double, 12>> offsets(options.residue_groups);
  for (auto& col : offsets)
    for (auto& v : col) v = rng.uniform(-1.0, 1.0) * options.offset_scale;

  std::size_t longest = 0;
  for (const auto& r : records) longest = std::max(longest, r.sequence.size());
  const auto helix = ideal_backbone(longest);
  for (auto& r : records) {
    BackboneStructure s;
    s.residues.assign(helix.residues.begin(), helix.residues.begin() + static_cast<std::ptrdiff_t>(r.sequence.size()));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (r.sequence[i] >= kNumResidues) throw InvalidSequence("structure synthesis needs unmasked sequences");
      const auto& off = offsets[group[r.sequence[i]]];
      for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t d = 0; d < 3; ++d) s.residues[i][a][d] += off[3 * a + d];
    }
    r.structure = std::move(s);
  }
}

// ---------------------------------------------------------------- dataset I/O

std::string encode_structure(const BackboneStructure& structure) {
  std::string out;
  auto put_u64 = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  };
  put_u64(structure.size());
  for (const auto& res : structure.residues)
    for (const auto& atom : res)
      for (double v : atom) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
      }
  return out;
}

BackboneStructure decode_structure(std::string_view bytes) {
  auto byte = [&](std::size_t i) { return static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])); };
  if (bytes.size() < 8) throw ParseError(1, "structure file shorter than its header");
  std::uint64_t L = 0;
  for (int b = 0; b < 8; ++b) L |= byte(static_cast<std::size_t>(b)) << (8 * b);
  if (L > (bytes.size() - 8) / 48 || bytes.size() != 8 + L * 48)
    throw ParseError(1, "structure file size does not match its residue count");
  BackboneStructure s;
  s.residues.resize(L);
  std::size_t pos = 8;
  for (auto& res : s.residues)
    for (auto& atom : res)
      for (auto& v : atom) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(byte(pos + static_cast<std::size_t>(b))) << (8 * b);
        v = static_cast<double>(std::bit_cast<float>(bits));
        pos += 4;
      }
  return s;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  const auto& reg = dataset.registries;
  auto labels_of = [](const LabelRegistry& r, const std::set<int>& ids) {
    std::vector<std::string> out;
    for (int i : ids) out.push_back(r.label(i));
    return join(out, ';');
  };
  std::string tsv = "id\tgo\tipr\tec\tmotif\n";
  auto fasta = [&](const std::vector<DatasetRecord>& recs) {
    std::vector<FastaEntry> entries;
    for (const auto& r : recs) {
      r.validate();
      entries.push_back({r.id, decode_sequence(r.sequence)});
      tsv += r.id + '\t' + labels_of(reg.go, r.annotations.go) + '\t' + labels_of(reg.ipr, r.annotations.ipr) + '\t' +
             labels_of(reg.ec, r.annotations.ec) + '\t' + (r.motif ? format_motif(*r.motif) : std::string()) + '\n';
    }
    return format_fasta_entries(entries);
  };
  const auto train = fasta(dataset.train);
  const auto val = fasta(dataset.val);

  fs::create_directories(dir.has_parent_path() ? dir.parent_path() : fs::path("."));
  const auto staging = make_temp_sibling(dir);
  try {
    auto put = [&](const fs::path& name, std::string_view contents) {
      std::ofstream f(staging / name, std::ios::binary);
      f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
      if (!f) throw IoError("cannot write " + (staging / name).string());
    };
    put("train.fasta", train);
    put("val.fasta", val);
    put("annotations.tsv", tsv);
    put("registries.json", reg.to_json().dump(2) + "\n");
    if (dataset.oracle) put("oracle.json", dataset.oracle->to_json().dump(2) + "\n");
    bool any_structure = false;
    for (const auto* recs : {&dataset.train, &dataset.val})
      for (const auto& r : *recs)
        if (r.structure) {
          if (!any_structure) fs::create_directories(staging / "structures");
          any_structure = true;
          put(fs::path("structures") / (r.id + ".bin"), encode_structure(*r.structure));
        }
    commit_directory(staging, dir);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
}

Dataset read_dataset(const fs::path& dir) {
  Dataset d;
  try {
    d.registries = Registries::from_json(nlohmann::json::parse(read_file(dir / "registries.json")));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, "registries.json: " + std::string(e.what()));
  }
  if (fs::exists(dir / "oracle.json")) {
    try {
      d.oracle = SyntheticOracle::from_json(nlohmann::json::parse(read_file(dir / "oracle.json")));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(1, "oracle.json: " + std::string(e.what()));
    }
  }
  const auto rows = parse_annotations(dir / "annotations.tsv");
  auto load = [&](const fs::path& fasta) {
    std::vector<DatasetRecord> out;
    for (const auto& e : parse_fasta(fasta)) {
      DatasetRecord r;
      r.id = e.id;
      r.sequence = encode_sequence(e.sequence);
      if (auto it = rows.find(e.id); it != rows.end()) {
        r.annotations = to_ids(it->second, d.registries);
        if (it->second.motif) r.motif = parse_motif(*it->second.motif);
      }
      const auto sfile = dir / "structures" / (e.id + ".bin");
      if (fs::exists(sfile)) r.structure = decode_structure(read_file(sfile));
      r.validate();
      out.push_back(std::move(r));
    }
    return out;
  };
  d.train = load(dir / "train.fasta");
  d.val = load(dir / "val.fasta");
  return d;
}

Dataset split_synthetic(const SyntheticCorpus& corpus, double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InvalidSpec("val_fraction must be in [0, 1)");
  Dataset d;
  d.registries = corpus.registries;
  d.oracle = corpus.oracle;
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(corpus.records.size()) * val_fraction));
  const auto n_train = corpus.records.size() - n_val;
  d.train.assign(corpus.records.begin(), corpus.records.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.val.assign(corpus.records.begin() + static_cast<std::ptrdiff_t>(n_train), corpus.records.end());
  return d;
}

}  // namespace condseq
