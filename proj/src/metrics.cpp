#include "condseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "condseq/errors.hpp"
#include "condseq/io.hpp"

namespace condseq {

namespace {

double squared_distance(const Embedding& x, const Embedding& y) {
  if (x.size() != y.size()) throw LengthMismatch("embedding dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

Embedding mean_of(const std::vector<Embedding>& set) {
  Embedding m(set.front().size(), 0.0);
  for (const auto& e : set) {
    if (e.size() != m.size()) throw LengthMismatch("embedding dimensions differ");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += e[i];
  }
  for (auto& v : m) v /= static_cast<double>(set.size());
  return m;
}

void require_nonempty(const std::vector<Embedding>& S, const std::vector<Embedding>& P) {
  if (S.empty() || P.empty()) throw EmptySet("embedding set is empty");
}

// Curve points after each group of tied scores, in descending score order.
struct TieGroupCounts {
  std::vector<double> tp, fp;
  double positives = 0, negatives = 0;
};

TieGroupCounts cumulative_by_score(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw LengthMismatch("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  TieGroupCounts out;
  double tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (labels[order[k]] ? tp : fp) += 1;
    if (k + 1 == order.size() || scores[order[k + 1]] != scores[order[k]]) {
      out.tp.push_back(tp);
      out.fp.push_back(fp);
    }
  }
  out.positives = tp;
  out.negatives = fp;
  return out;
}

std::string format6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

SpectrumEmbedding spectrum_embed(const Sequence& seq, std::size_t k) {
  if (k == 0 || k > 6) throw InvalidConfig("spectrum order must be in [1, 6]");
  if (seq.size() < k) throw SequenceTooShort("sequence shorter than k-mer order");
  if (seq.has_mask()) throw InvalidSequence("spectrum embedding of a masked sequence");
  std::size_t dim = 1;
  for (std::size_t i = 0; i < k; ++i) dim *= kNumResidues;
  SpectrumEmbedding out{k, Embedding(dim, 0.0)};
  const std::size_t windows = seq.size() - k + 1;
  for (std::size_t s = 0; s < windows; ++s) {
    std::size_t index = 0;
    for (std::size_t j = 0; j < k; ++j) index = index * kNumResidues + seq[s + j];
    out.vector[index] += 1.0;
  }
  for (auto& v : out.vector) v /= static_cast<double>(windows);
  return out;
}

double mmd_linear(const std::vector<Embedding>& S, const std::vector<Embedding>& P) {
  require_nonempty(S, P);
  return std::sqrt(squared_distance(mean_of(S), mean_of(P)));
}

double median_bandwidth(const std::vector<Embedding>& S, const std::vector<Embedding>& P) {
  std::vector<const Embedding*> pooled;
  for (const auto& e : S) pooled.push_back(&e);
  for (const auto& e : P) pooled.push_back(&e);
  std::vector<double> d;
  d.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j) d.push_back(std::sqrt(squared_distance(*pooled[i], *pooled[j])));
  if (d.empty()) return 0.0;
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

double mmd_gaussian(const std::vector<Embedding>& S, const std::vector<Embedding>& P) {
  require_nonempty(S, P);
  const double sigma = median_bandwidth(S, P);
  if (!(sigma > 0.0)) throw DegenerateBandwidth("median pairwise distance is zero");
  const double gamma = 1.0 / (2.0 * sigma * sigma);
  auto mean_kernel = [&](const std::vector<Embedding>& A, const std::vector<Embedding>& B) {
    double s = 0.0;
    for (const auto& a : A)
      for (const auto& b : B) s += std::exp(-gamma * squared_distance(a, b));
    return s / (static_cast<double>(A.size()) * static_cast<double>(B.size()));
  };
  const double v = mean_kernel(S, S) + mean_kernel(P, P) - 2.0 * mean_kernel(S, P);
  return std::max(v, 0.0);
}

double mrr(const std::map<std::string, std::vector<Embedding>>& generated,
           const std::map<std::string, std::vector<Embedding>>& reference) {
  if (generated.empty()) throw EmptySet("no classes");
  if (generated.size() != reference.size()) throw ClassMismatch("class sets differ");
  for (auto g = generated.begin(), r = reference.begin(); g != generated.end(); ++g, ++r)
    if (g->first != r->first) throw ClassMismatch("class sets differ at '" + g->first + "'");

  double total = 0.0;
  for (const auto& [cls, S] : generated) {
    const double own = mmd_linear(S, reference.at(cls));
    std::size_t rank = 1;
    for (const auto& [other, P] : reference)
      if (other != cls && mmd_linear(S, P) < own) ++rank;
    total += 1.0 / static_cast<double>(rank);
  }
  return total / static_cast<double>(generated.size());
}

void LabeledPredictions::validate() const {
  if (confidences.size() != truth.size()) throw InvalidPredictions("predictions and truth differ in length");
  for (const auto& m : confidences)
    for (const auto& [label, c] : m)
      if (!(c >= 0.0 && c <= 1.0)) throw InvalidPredictions("confidence for '" + label + "' outside [0, 1]");
}

std::vector<std::string> LabeledPredictions::classes() const {
  std::set<std::string> all;
  for (const auto& m : confidences)
    for (const auto& kv : m) all.insert(kv.first);
  for (const auto& t : truth) all.insert(t.begin(), t.end());
  return {all.begin(), all.end()};
}

double f1_from_counts(double tp, double fp, double fn) {
  const double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 0.0;
}

double average_precision_trapezoid(const std::vector<double>& scores, const std::vector<bool>& labels) {
  const auto c = cumulative_by_score(scores, labels);
  if (c.positives == 0) throw NoPositives("class has no positive instances");
  double area = 0.0, prev_r = 0.0, prev_p = 1.0;
  for (std::size_t g = 0; g < c.tp.size(); ++g) {
    const double r = c.tp[g] / c.positives;
    const double p = c.tp[g] / (c.tp[g] + c.fp[g]);
    area += (r - prev_r) * (p + prev_p) * 0.5;
    prev_r = r;
    prev_p = p;
  }
  return area;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  const auto c = cumulative_by_score(scores, labels);
  if (c.positives == 0) throw NoPositives("class has no positive instances");
  if (c.negatives == 0) throw NoPositives("class has no negative instances");
  double area = 0.0, prev_x = 0.0, prev_y = 0.0;
  for (std::size_t g = 0; g < c.tp.size(); ++g) {
    const double x = c.fp[g] / c.negatives;
    const double y = c.tp[g] / c.positives;
    area += (x - prev_x) * (y + prev_y) * 0.5;
    prev_x = x;
    prev_y = y;
  }
  return area;
}

MultilabelResult multilabel_metrics(const LabeledPredictions& preds, double threshold) {
  preds.validate();
  const auto classes = preds.classes();
  const std::size_t n = preds.truth.size();
  MultilabelResult out;
  double tp_all = 0, fp_all = 0, fn_all = 0;
  double f1_sum = 0, aupr_sum = 0, auc_sum = 0;
  for (const auto& cls : classes) {
    std::vector<double> scores(n, 0.0);
    std::vector<bool> labels(n, false);
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto it = preds.confidences[i].find(cls);
      scores[i] = it == preds.confidences[i].end() ? 0.0 : it->second;
      labels[i] = preds.truth[i].count(cls) > 0;
      const bool predicted = it != preds.confidences[i].end() && it->second >= threshold;
      if (predicted && labels[i]) ++tp;
      else if (predicted) ++fp;
      else if (labels[i]) ++fn;
    }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    const bool has_pos = tp + fn > 0;
    if (!has_pos) continue;
    const bool has_neg = std::find(labels.begin(), labels.end(), false) != labels.end();
    const double f1 = f1_from_counts(tp, fp, fn);
    const double ap = average_precision_trapezoid(scores, labels);
    out.per_class_f1[cls] = f1;
    out.per_class_aupr[cls] = ap;
    f1_sum += f1;
    aupr_sum += ap;
    ++out.classes_with_positives;
    if (has_neg) {
      auc_sum += roc_auc(scores, labels);
      ++out.classes_for_auc;
    }
  }
  if (out.classes_with_positives == 0) throw NoPositives("no class has a positive instance");
  const double k = static_cast<double>(out.classes_with_positives);
  out.micro_f1 = f1_from_counts(tp_all, fp_all, fn_all);
  out.macro_f1 = f1_sum / k;
  out.macro_aupr = aupr_sum / k;
  if (out.classes_for_auc > 0) out.macro_auc = auc_sum / static_cast<double>(out.classes_for_auc);
  return out;
}

double f_max(const LabeledPredictions& preds) {
  preds.validate();
  double best = 0.0;
  for (int step = 10; step <= 100; ++step) {
    const double tau = step / 100.0;
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.truth.size(); ++i) {
      const auto& truth = preds.truth[i];
      for (const auto& [label, c] : preds.confidences[i])
        if (c >= tau) (truth.count(label) ? tp : fp) += 1;
      for (const auto& label : truth) {
        const auto it = preds.confidences[i].find(label);
        if (it == preds.confidences[i].end() || it->second < tau) fn += 1;
      }
    }
    if (tp + fp == 0) continue;
    const double precision = tp / (tp + fp);
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    if (precision + recall > 0) best = std::max(best, 2 * precision * recall / (precision + recall));
  }
  return best;
}

double aar(const Sequence& generated, const Sequence& reference) {
  if (generated.size() != reference.size()) throw LengthMismatch("sequences differ in length");
  if (generated.size() == 0) throw EmptySet("empty sequences");
  std::size_t same = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) same += generated[i] == reference[i];
  return static_cast<double>(same) / static_cast<double>(generated.size());
}

std::size_t ngram_repeats(const Sequence& seq, std::size_t n) {
  if (n < 2) throw InvalidConfig("n-gram order must be at least 2");
  if (seq.size() < n) return 0;
  std::map<std::vector<TokenId>, std::size_t> counts;
  const auto ids = seq.vec();
  for (std::size_t s = 0; s + n <= ids.size(); ++s) ++counts[std::vector<TokenId>(ids.begin() + s, ids.begin() + s + n)];
  std::size_t repeated = 0;
  for (const auto& kv : counts) repeated += kv.second >= 2;
  return repeated;
}

std::size_t ngram_repeats(const std::vector<Sequence>& seqs, std::size_t n) {
  if (n < 2) throw InvalidConfig("n-gram order must be at least 2");
  std::size_t total = 0;
  for (const auto& s : seqs) total += ngram_repeats(s, n);
  return total;
}

double ngram_repeats_mean(const std::vector<Sequence>& seqs, std::size_t n) {
  const auto total = ngram_repeats(seqs, n);
  return seqs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(seqs.size());
}

Alignment align_global(const Sequence& a, const Sequence& b) {
  const std::size_t n = a.size(), m = b.size();
  const std::size_t w = m + 1;
  std::vector<int> score((n + 1) * w);
  for (std::size_t i = 0; i <= n; ++i) score[i * w] = -static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) score[j] = -static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = score[(i - 1) * w + j - 1] + (a[i - 1] == b[j - 1] ? 1 : 0);
      const int up = score[(i - 1) * w + j] - 1;
      const int left = score[i * w + j - 1] - 1;
      score[i * w + j] = std::max({diag, up, left});
    }

  const auto& vocab = Vocabulary::standard();
  Alignment out;
  out.score = score[n * w + m];
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const int here = score[i * w + j];
    if (i > 0 && j > 0 && here == score[(i - 1) * w + j - 1] + (a[i - 1] == b[j - 1] ? 1 : 0)) {
      out.matches += a[i - 1] == b[j - 1];
      out.a.push_back(vocab.symbol(a[i - 1]));
      out.b.push_back(vocab.symbol(b[j - 1]));
      --i;
      --j;
    } else if (i > 0 && here == score[(i - 1) * w + j] - 1) {
      out.a.push_back(vocab.symbol(a[i - 1]));
      out.b.push_back('-');
      --i;
    } else {
      out.a.push_back('-');
      out.b.push_back(vocab.symbol(b[j - 1]));
      --j;
    }
  }
  std::reverse(out.a.begin(), out.a.end());
  std::reverse(out.b.begin(), out.b.end());
  out.length = out.a.size();
  return out;
}

double sequence_identity(const Sequence& a, const Sequence& b) { return align_global(a, b).identity(); }

NoveltyDiversity novelty_diversity(const std::vector<Sequence>& generated, const std::vector<Sequence>& training) {
  if (generated.empty() || training.empty()) throw EmptySet("novelty needs non-empty generated and training sets");
  NoveltyDiversity out;
  double cross = 0.0;
  for (const auto& g : generated) {
    double best = 0.0;
    for (const auto& t : training) {
      const double id = sequence_identity(g, t);
      best = std::max(best, id);
      cross += id;
    }
    out.novelty.push_back(1.0 - best);
  }
  out.cross_diversity = 1.0 - cross / (static_cast<double>(generated.size()) * static_cast<double>(training.size()));
  if (generated.size() > 1) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < generated.size(); ++i)
      for (std::size_t j = i + 1; j < generated.size(); ++j, ++pairs) sum += sequence_identity(generated[i], generated[j]);
    out.diversity = 1.0 - sum / static_cast<double>(pairs);
  }
  return out;
}

void export_embeddings(const std::vector<LabeledSequence>& seqs, std::size_t k, const std::filesystem::path& path) {
  std::size_t dim = 1;
  for (std::size_t i = 0; i < k; ++i) dim *= kNumResidues;
  std::string text = "id,label";
  for (std::size_t i = 0; i < dim; ++i) text += ",v_" + std::to_string(i);
  text += '\n';
  for (const auto& s : seqs) {
    if (s.id.find_first_of(",\n\"") != std::string::npos || s.label.find_first_of(",\n\"") != std::string::npos)
      throw InvalidSpec("id or label contains a CSV delimiter: " + s.id);
    const auto e = spectrum_embed(s.sequence, k);
    text += s.id + ',' + s.label;
    for (double v : e.vector) text += ',' + format6(v);
    text += '\n';
  }
  write_file_atomic(path, text);
}

double round6(double v) {
  if (!std::isfinite(v)) return v;
  return std::stod(format6(v));
}

void MetricReport::set(const std::string& name, double value) {
  if (!std::isfinite(value)) throw InvalidDistribution("metric '" + name + "' is not finite");
  values[name] = value;
}

nlohmann::json MetricReport::to_json() const {
  auto rounded = [](const nlohmann::json& j, const auto& self) -> nlohmann::json {
    if (j.is_number_float()) return round6(j.get<double>());
    if (j.is_structured()) {
      nlohmann::json out = j;
      for (auto it = out.begin(); it != out.end(); ++it) *it = self(*it, self);
      return out;
    }
    return j;
  };
  nlohmann::json vals = nlohmann::json::object();
  for (const auto& [k, v] : values) vals[k] = round6(v);
  return {{"values", vals}, {"tables", rounded(tables, rounded)}, {"metadata", rounded(metadata, rounded)}};
}

}  // namespace condseq
