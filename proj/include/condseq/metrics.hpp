#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condseq/seqcore.hpp"

namespace condseq {

using Embedding = std::vector<double>;

/// Normalised k-mer counts, indexed by the base-20 value of the k-mer.
struct SpectrumEmbedding {
  std::size_t k = 0;
  Embedding vector;
};

/// Throws SequenceTooShort when L < k and InvalidSequence on mask tokens.
SpectrumEmbedding spectrum_embed(const Sequence& seq, std::size_t k = 3);

/// Euclidean distance between the two set means (not squared). Throws EmptySet.
double mmd_linear(const std::vector<Embedding>& S, const std::vector<Embedding>& P);

/// Bandwidth from the median heuristic: median distance over all unordered
/// pairs of the pooled set.
double median_bandwidth(const std::vector<Embedding>& S, const std::vector<Embedding>& P);

/// Biased (V-statistic) squared MMD with kernel exp(-gamma |x - y|^2),
/// gamma = 1 / (2 sigma^2), sigma from median_bandwidth; clipped at 0.
/// Throws EmptySet, DegenerateBandwidth when sigma is 0.
double mmd_gaussian(const std::vector<Embedding>& S, const std::vector<Embedding>& P);

/// Mean reciprocal rank of each class's own reference set among all
/// reference sets, by linear MMD. Ties rank optimistically. Throws
/// ClassMismatch when the key sets differ, EmptySet for empty classes.
double mrr(const std::map<std::string, std::vector<Embedding>>& generated,
           const std::map<std::string, std::vector<Embedding>>& reference);

/// Per-sequence class confidences plus ground-truth label sets.
struct LabeledPredictions {
  std::vector<std::map<std::string, double>> confidences;
  std::vector<std::set<std::string>> truth;

  /// Throws InvalidPredictions on size mismatch or confidences outside [0, 1].
  void validate() const;
  /// Union of labels seen in predictions or truth, sorted.
  std::vector<std::string> classes() const;
};

struct MultilabelResult {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double macro_aupr = 0.0;
  /// Absent when no class has both positives and negatives.
  std::optional<double> macro_auc;
  std::size_t classes_with_positives = 0;
  std::size_t classes_for_auc = 0;
  std::map<std::string, double> per_class_f1;
  std::map<std::string, double> per_class_aupr;
};

/// F1 from counts: 2TP / (2TP + FP + FN), 0 when the denominator is 0.
double f1_from_counts(double tp, double fp, double fn);

/// Area under the precision-recall curve of one class (trapezoidal, curve
/// starting at recall 0, precision 1; tied scores form one point).
double average_precision_trapezoid(const std::vector<double>& scores, const std::vector<bool>& labels);

/// ROC AUC of one class (trapezoidal with tie groups). Requires at least one
/// positive and one negative.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels);

/// Thresholded F1 (prediction when confidence >= threshold) and threshold-
/// free AUPR/AUC. Macro averages skip classes without positives (and,
/// for AUC, without negatives). Throws NoPositives.
MultilabelResult multilabel_metrics(const LabeledPredictions& preds, double threshold);

/// Maximum pooled F1 over thresholds 0.10, 0.11, ..., 1.00. Precision with
/// no predicted labels is undefined and scores F = 0 at that threshold.
double f_max(const LabeledPredictions& preds);

/// Fraction of equal positions. Throws LengthMismatch.
double aar(const Sequence& generated, const Sequence& reference);

/// Distinct n-grams occurring at least twice within one sequence.
std::size_t ngram_repeats(const Sequence& seq, std::size_t n);
/// Sum over the set of per-sequence repeat counts. Throws InvalidConfig when n < 2.
std::size_t ngram_repeats(const std::vector<Sequence>& seqs, std::size_t n);
/// Mean of the per-sequence counts (0 for an empty set).
double ngram_repeats_mean(const std::vector<Sequence>& seqs, std::size_t n);

/// Global alignment with match 1, mismatch 0 and linear gap -1.
struct Alignment {
  int score = 0;
  std::size_t matches = 0;
  std::size_t length = 0;
  /// Aligned rows with '-' for gaps.
  std::string a, b;

  double identity() const { return length ? static_cast<double>(matches) / static_cast<double>(length) : 0.0; }
};

/// Needleman-Wunsch; on equal scores the traceback prefers diagonal, then a
/// gap in `b`, then a gap in `a`.
Alignment align_global(const Sequence& a, const Sequence& b);

/// matches / alignment length.
double sequence_identity(const Sequence& a, const Sequence& b);

struct NoveltyDiversity {
  /// 1 - max identity to any training sequence, per generated sequence.
  std::vector<double> novelty;
  /// 1 - mean pairwise identity within the generated set (0 for one sequence).
  double diversity = 0.0;
  /// 1 - mean identity over generated x training pairs.
  double cross_diversity = 0.0;
};

/// Throws EmptySet.
NoveltyDiversity novelty_diversity(const std::vector<Sequence>& generated, const std::vector<Sequence>& training);

struct LabeledSequence {
  std::string id;
  std::string label;
  Sequence sequence;
};

/// CSV with header id,label,v_0..v_{20^k - 1}; values printed with 6
/// significant digits. Written atomically.
void export_embeddings(const std::vector<LabeledSequence>& seqs, std::size_t k, const std::filesystem::path& path);

/// Named results plus tables and metadata; serialised with 6 significant
/// digits.
struct MetricReport {
  std::map<std::string, double> values;
  nlohmann::json tables = nlohmann::json::object();
  nlohmann::json metadata = nlohmann::json::object();

  /// Throws InvalidDistribution for non-finite values.
  void set(const std::string& name, double value);
  nlohmann::json to_json() const;
};

/// Rounds to 6 significant digits (the precision of every printed metric).
double round6(double v);

}  // namespace condseq
