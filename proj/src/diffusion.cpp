#include "condseq/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace condseq {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear-alpha") return ScheduleKind::LinearAlpha;
  if (name == "cosine-alpha") return ScheduleKind::CosineAlpha;
  throw InvalidSchedule("unknown schedule kind '" + std::string(name) + "'");
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::LinearAlpha ? "linear-alpha" : "cosine-alpha";
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw InvalidSchedule("schedule needs at least one step");
  NoiseSchedule s;
  s.alpha_.reserve(betas.size());
  double alpha = 1.0;
  for (const double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) throw InvalidSchedule("beta outside [0, 1]: " + std::to_string(b));
    alpha *= b;
    s.alpha_.push_back(alpha);
  }
  if (s.alpha_.back() > 1e-6)
    throw InvalidSchedule("terminal alpha " + std::to_string(s.alpha_.back()) + " exceeds 1e-6");
  s.beta_ = std::move(betas);
  return s;
}

double NoiseSchedule::beta(std::size_t t) const {
  if (t < 1 || t > beta_.size())
    throw StepOutOfRange("step " + std::to_string(t) + " outside [1, " + std::to_string(beta_.size()) + "]");
  return beta_[t - 1];
}

double NoiseSchedule::alpha(std::size_t t) const {
  if (t > alpha_.size())
    throw StepOutOfRange("step " + std::to_string(t) + " outside [0, " + std::to_string(alpha_.size()) + "]");
  return t == 0 ? 1.0 : alpha_[t - 1];
}

double NoiseSchedule::alpha_at(double t) const {
  const double T = static_cast<double>(steps());
  if (t <= 0.0) return 1.0;
  if (t >= T) return alpha_.back();
  const auto lo = static_cast<std::size_t>(std::floor(t));
  const double frac = t - static_cast<double>(lo);
  if (frac == 0.0) return alpha(lo);
  return (1.0 - frac) * alpha(lo) + frac * alpha(lo + 1);
}

NoiseSchedule make_schedule(std::size_t steps, ScheduleKind kind) {
  if (steps == 0) throw InvalidSchedule("schedule needs T >= 1");
  const double T = static_cast<double>(steps);
  auto target = [&](std::size_t t) {
    if (t == steps) return 0.0;
    const double u = static_cast<double>(t) / T;
    return kind == ScheduleKind::LinearAlpha ? 1.0 - u : std::cos(0.5 * std::numbers::pi * u);
  };
  std::vector<double> betas(steps);
  double prev = 1.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double a = target(t);
    betas[t - 1] = prev > 0.0 ? a / prev : 0.0;
    prev = a;
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

TransitionMatrix::TransitionMatrix(double beta) {
  for (std::size_t i = 0; i < kVocabSize; ++i) {
    (*this)(i, i) += beta;
    (*this)(i, kMaskId) += 1.0 - beta;
  }
}

TransitionMatrix TransitionMatrix::operator*(const TransitionMatrix& rhs) const {
  TransitionMatrix out;
  for (std::size_t i = 0; i < kVocabSize; ++i)
    for (std::size_t k = 0; k < kVocabSize; ++k) {
      const double a = (*this)(i, k);
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < kVocabSize; ++j) out(i, j) += a * rhs(k, j);
    }
  return out;
}

TransitionMatrix transition_matrix(const NoiseSchedule& schedule, std::size_t t) {
  return TransitionMatrix(schedule.beta(t));
}

Sequence corrupt(const Sequence& seq, const NoiseSchedule& schedule, std::size_t t, Rng& rng) {
  if (seq.has_mask()) throw AlreadyCorrupted("corrupt() expects a clean sequence without mask tokens");
  if (t < 1 || t > schedule.steps())
    throw StepOutOfRange("step " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
  const double keep = schedule.alpha(t);
  std::vector<TokenId> ids = seq.vec();
  for (auto& id : ids)
    if (!(rng.uniform() < keep)) id = kMaskId;
  return Sequence(std::move(ids));
}

Sequence corrupt_step(const Sequence& seq, const NoiseSchedule& schedule, std::size_t t, Rng& rng) {
  const double keep = schedule.beta(t);
  std::vector<TokenId> ids = seq.vec();
  for (auto& id : ids) {
    if (id == kMaskId) continue;
    if (!(rng.uniform() < keep)) id = kMaskId;
  }
  return Sequence(std::move(ids));
}

std::vector<TokenDistribution> reverse_posterior(const Sequence& x_t,
                                                 const std::vector<TokenDistribution>& x0_probs,
                                                 const NoiseSchedule& schedule, std::size_t t) {
  if (t < 1 || t > schedule.steps())
    throw StepOutOfRange("step " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
  if (x0_probs.size() != x_t.size())
    throw InvalidDistribution("expected " + std::to_string(x_t.size()) + " rows, got " +
                              std::to_string(x0_probs.size()));
  const double a_prev = schedule.alpha(t - 1);
  const double a_t = schedule.alpha(t);
  const double denom = 1.0 - a_t;
  const double stay_masked = denom > 0.0 ? (1.0 - a_prev) / denom : 0.0;
  const double reveal = denom > 0.0 ? (a_prev - a_t) / denom : 1.0;

  std::vector<TokenDistribution> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const auto& p = x0_probs[i];
    double sum = 0.0;
    for (const double v : p) {
      if (!(v >= 0.0)) throw InvalidDistribution("negative or NaN probability at position " + std::to_string(i));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw InvalidDistribution("row " + std::to_string(i) + " sums to " + std::to_string(sum));
    if (p[kMaskId] != 0.0) throw InvalidDistribution("x0 distribution assigns mass to the mask token");

    auto& row = out[i];
    row.fill(0.0);
    if (x_t[i] != kMaskId) {
      row[x_t[i]] = 1.0;
      continue;
    }
    for (std::size_t v = 0; v < kNumResidues; ++v) row[v] = reveal * p[v];
    row[kMaskId] = stay_masked;
  }
  return out;
}

}  // namespace condseq
