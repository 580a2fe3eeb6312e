#pragma once

// Brute-force reimplementations of the evaluation metrics, written from the
// definitions without sharing code with the library. Used by the unit tests
// and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "condseq/metrics.hpp"
#include "condseq/rng.hpp"

namespace oracle {

using condseq::Embedding;

inline std::vector<Embedding> random_set(condseq::Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<Embedding> out(n, Embedding(dim));
  for (auto& e : out)
    for (auto& v : e) v = rng.uniform(0, 1);
  return out;
}

inline Embedding spectrum(const std::string& s, std::size_t k) {
  static const std::string alphabet = "ACDEFGHIKLMNPQRSTVWY";
  std::size_t dim = 1;
  for (std::size_t i = 0; i < k; ++i) dim *= 20;
  Embedding out(dim, 0.0);
  const std::size_t windows = s.size() - k + 1;
  for (std::size_t index = 0; index < dim; ++index) {
    std::string kmer(k, ' ');
    std::size_t rest = index;
    for (std::size_t j = k; j-- > 0;) {
      kmer[j] = alphabet[rest % 20];
      rest /= 20;
    }
    std::size_t count = 0;
    for (std::size_t p = 0; p < windows; ++p) count += s.compare(p, k, kmer) == 0;
    out[index] = static_cast<double>(count) / static_cast<double>(windows);
  }
  return out;
}

inline double dot(const Embedding& a, const Embedding& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sqdist(const Embedding& a, const Embedding& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Linear-kernel MMD via the kernel-mean expansion.
inline double mmd_linear(const std::vector<Embedding>& S, const std::vector<Embedding>& P) {
  auto mean_k = [](const std::vector<Embedding>& A, const std::vector<Embedding>& B) {
    double s = 0;
    for (const auto& a : A)
      for (const auto& b : B) s += dot(a, b);
    return s / static_cast<double>(A.size() * B.size());
  };
  const double sq = mean_k(S, S) + mean_k(P, P) - 2 * mean_k(S, P);
  return std::sqrt(std::max(sq, 0.0));
}

inline double mmd_gaussian(const std::vector<Embedding>& S, const std::vector<Embedding>& P) {
  std::vector<Embedding> pooled = S;
  pooled.insert(pooled.end(), P.begin(), P.end());
  std::vector<double> d;
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) d.push_back(std::sqrt(sqdist(pooled[i], pooled[j])));
  std::sort(d.begin(), d.end());
  const double sigma = d.size() % 2 ? d[d.size() / 2] : (d[d.size() / 2 - 1] + d[d.size() / 2]) / 2;
  const double gamma = 1 / (2 * sigma * sigma);
  double ss = 0, pp = 0, sp = 0;
  for (const auto& a : S)
    for (const auto& b : S) ss += std::exp(-gamma * sqdist(a, b));
  for (const auto& a : P)
    for (const auto& b : P) pp += std::exp(-gamma * sqdist(a, b));
  for (const auto& a : S)
    for (const auto& b : P) sp += std::exp(-gamma * sqdist(a, b));
  const double n = static_cast<double>(S.size()), m = static_cast<double>(P.size());
  return std::max(ss / (n * n) + pp / (m * m) - 2 * sp / (n * m), 0.0);
}

// Ascending sort of each row; the rank is the first position holding the
// diagonal value.
inline double mrr(const std::map<std::string, std::vector<Embedding>>& G,
                  const std::map<std::string, std::vector<Embedding>>& R) {
  double total = 0;
  for (const auto& [c, S] : G) {
    std::vector<double> row;
    for (const auto& kv : R) row.push_back(mmd_linear(S, kv.second));
    const double own = mmd_linear(S, R.at(c));
    std::sort(row.begin(), row.end());
    const auto pos = std::find(row.begin(), row.end(), own) - row.begin();
    total += 1.0 / static_cast<double>(pos + 1);
  }
  return total / static_cast<double>(G.size());
}

inline condseq::LabeledPredictions random_predictions(condseq::Rng& rng, std::size_t n, std::size_t classes,
                                                      bool coarse) {
  condseq::LabeledPredictions p;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::string, double> conf;
    std::set<std::string> truth;
    for (std::size_t c = 0; c < classes; ++c) {
      const std::string name = "c" + std::to_string(c);
      // Coarse scores produce many ties.
      if (rng.uniform() < 0.7) conf[name] = coarse ? static_cast<double>(rng.uniform_int(5)) / 4 : rng.uniform();
      if (rng.uniform() < 0.35) truth.insert(name);
    }
    p.confidences.push_back(conf);
    p.truth.push_back(truth);
  }
  return p;
}

struct MultilabelOracle {
  double micro_f1 = 0, macro_f1 = 0, macro_aupr = 0;
  std::optional<double> macro_auc;
};

inline MultilabelOracle multilabel(const condseq::LabeledPredictions& p, double thr) {
  std::set<std::string> classes;
  for (const auto& m : p.confidences)
    for (const auto& kv : m) classes.insert(kv.first);
  for (const auto& t : p.truth) classes.insert(t.begin(), t.end());

  auto score = [&](std::size_t i, const std::string& c) {
    auto it = p.confidences[i].find(c);
    return it == p.confidences[i].end() ? 0.0 : it->second;
  };
  auto predicted = [&](std::size_t i, const std::string& c) {
    auto it = p.confidences[i].find(c);
    return it != p.confidences[i].end() && it->second >= thr;
  };
  auto truth = [&](std::size_t i, const std::string& c) { return p.truth[i].count(c) > 0; };
  auto f1 = [](double tp, double fp, double fn) {
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0, rec = tp + fn > 0 ? tp / (tp + fn) : 0;
    return prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  };

  MultilabelOracle out;
  double TP = 0, FP = 0, FN = 0, f1sum = 0, apsum = 0, aucsum = 0;
  int kpos = 0, kauc = 0;
  const std::size_t n = p.truth.size();
  for (const auto& c : classes) {
    double tp = 0, fp = 0, fn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += predicted(i, c) && truth(i, c);
      fp += predicted(i, c) && !truth(i, c);
      fn += !predicted(i, c) && truth(i, c);
      pos += truth(i, c);
      neg += !truth(i, c);
    }
    TP += tp, FP += fp, FN += fn;
    if (pos == 0) continue;
    ++kpos;
    f1sum += f1(tp, fp, fn);

    // PR curve: one point per distinct score, thresholding at >= score.
    std::set<double, std::greater<>> cuts;
    for (std::size_t i = 0; i < n; ++i) cuts.insert(score(i, c));
    double r0 = 0, p0 = 1, ap = 0;
    for (double cut : cuts) {
      double t = 0, f = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (score(i, c) >= cut) (truth(i, c) ? t : f) += 1;
      const double r = t / pos, pr = t / (t + f);
      ap += (r - r0) * (pr + p0) / 2;
      r0 = r, p0 = pr;
    }
    apsum += ap;

    // Mann-Whitney statistic with half credit for ties.
    if (neg > 0) {
      double wins = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (truth(i, c) && !truth(j, c))
            wins += score(i, c) > score(j, c) ? 1.0 : score(i, c) == score(j, c) ? 0.5 : 0.0;
      aucsum += wins / (pos * neg);
      ++kauc;
    }
  }
  out.micro_f1 = f1(TP, FP, FN);
  out.macro_f1 = f1sum / kpos;
  out.macro_aupr = apsum / kpos;
  if (kauc) out.macro_auc = aucsum / kauc;
  return out;
}

inline double f_max(const condseq::LabeledPredictions& p) {
  double best = 0;
  for (int k = 10; k <= 100; ++k) {
    const double tau = k / 100.0;
    double tp = 0, npred = 0, ntrue = 0;
    for (std::size_t i = 0; i < p.truth.size(); ++i) {
      std::set<std::string> pred;
      for (const auto& [c, v] : p.confidences[i])
        if (v >= tau) pred.insert(c);
      for (const auto& c : pred) tp += p.truth[i].count(c);
      npred += static_cast<double>(pred.size());
      ntrue += static_cast<double>(p.truth[i].size());
    }
    if (npred == 0) continue;
    const double prec = tp / npred, rec = ntrue > 0 ? tp / ntrue : 0;
    if (prec + rec > 0) best = std::max(best, 2 * prec * rec / (prec + rec));
  }
  return best;
}

inline double aar(const std::string& a, const std::string& b) {
  double same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return same / static_cast<double>(a.size());
}

inline std::size_t ngram_repeats(const std::string& s, std::size_t n) {
  std::set<std::string> seen, repeated;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    const auto g = s.substr(i, n);
    if (!seen.insert(g).second) repeated.insert(g);
  }
  return repeated.size();
}

struct AlignmentOracle {
  int score = 0;
  std::size_t matches = 0, length = 0;
  std::string a, b;
};

// Top-down memoised recursion with the same traceback preference.
inline AlignmentOracle align(const std::string& x, const std::string& y) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  std::function<int(std::size_t, std::size_t)> best = [&](std::size_t i, std::size_t j) -> int {
    if (i == 0) return -static_cast<int>(j);
    if (j == 0) return -static_cast<int>(i);
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const int v = std::max({best(i - 1, j - 1) + (x[i - 1] == y[j - 1]), best(i - 1, j) - 1, best(i, j - 1) - 1});
    memo[key] = v;
    return v;
  };
  AlignmentOracle out;
  out.score = best(x.size(), y.size());
  std::size_t i = x.size(), j = y.size();
  while (i || j) {
    if (i && j && best(i, j) == best(i - 1, j - 1) + (x[i - 1] == y[j - 1])) {
      out.matches += x[i - 1] == y[j - 1];
      out.a.insert(out.a.begin(), x[--i]);
      out.b.insert(out.b.begin(), y[--j]);
    } else if (i && best(i, j) == best(i - 1, j) - 1) {
      out.a.insert(out.a.begin(), x[--i]);
      out.b.insert(out.b.begin(), '-');
    } else {
      out.a.insert(out.a.begin(), '-');
      out.b.insert(out.b.begin(), y[--j]);
    }
  }
  out.length = out.a.size();
  return out;
}

}  // namespace oracle
