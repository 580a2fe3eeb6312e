#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "condseq/rng.hpp"
#include "condseq/seqcore.hpp"

namespace condseq {

enum class ScheduleKind { LinearAlpha, CosineAlpha };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string to_string(ScheduleKind kind);

/// Absorbing-state noise schedule over steps 1..T. beta(t) is the per-step
/// keep probability; alpha(t) is the cumulative product of beta(1..t).
class NoiseSchedule {
 public:
  /// Builds the schedule from explicit per-step keep probabilities. Throws
  /// InvalidSchedule for an empty list, values outside [0, 1], or a terminal
  /// alpha above 1e-6.
  static NoiseSchedule from_betas(std::vector<double> betas);

  std::size_t steps() const noexcept { return beta_.size(); }
  /// beta(t) for 1 <= t <= T. Throws StepOutOfRange.
  double beta(std::size_t t) const;
  /// alpha(t) for 0 <= t <= T, with alpha(0) = 1. Throws StepOutOfRange.
  double alpha(std::size_t t) const;
  /// Piecewise-linear interpolation of alpha at a fractional step in [0, T].
  double alpha_at(double t) const;

  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alphas() const noexcept { return alpha_; }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_;
};

/// linear-alpha: alpha_t = 1 - t/T. cosine-alpha: alpha_t = cos(pi/2 * t/T).
/// Throws InvalidSchedule for T = 0.
NoiseSchedule make_schedule(std::size_t steps, ScheduleKind kind = ScheduleKind::LinearAlpha);

/// Row-stochastic 21x21 matrix Q_t = beta_t I + (1 - beta_t) 1 e_mask^T.
class TransitionMatrix {
 public:
  explicit TransitionMatrix(double beta);

  double operator()(std::size_t from, std::size_t to) const { return q_[from * kVocabSize + to]; }
  double& operator()(std::size_t from, std::size_t to) { return q_[from * kVocabSize + to]; }

  TransitionMatrix operator*(const TransitionMatrix& rhs) const;

 private:
  TransitionMatrix() = default;
  std::array<double, kVocabSize * kVocabSize> q_{};
};

/// Throws StepOutOfRange unless 1 <= t <= T.
TransitionMatrix transition_matrix(const NoiseSchedule& schedule, std::size_t t);

/// Samples x^(t) ~ q(x^(t) | x^(0)): each position kept with probability
/// alpha_t, otherwise masked. Throws AlreadyCorrupted on masked input.
Sequence corrupt(const Sequence& seq, const NoiseSchedule& schedule, std::size_t t, Rng& rng);

/// One forward transition x^(t-1) -> x^(t) under Q_t. Masked positions stay
/// masked.
Sequence corrupt_step(const Sequence& seq, const NoiseSchedule& schedule, std::size_t t, Rng& rng);

using TokenDistribution = std::array<double, kVocabSize>;

/// q(x^(t-1) | x^(t)) with x^(0) marginalised over the predicted
/// distribution. Unmasked positions are one-hot on their token. Throws
/// InvalidDistribution when a row of `x0_probs` is unnormalised or puts mass
/// on the mask token.
std::vector<TokenDistribution> reverse_posterior(const Sequence& x_t,
                                                 const std::vector<TokenDistribution>& x0_probs,
                                                 const NoiseSchedule& schedule, std::size_t t);

}  // namespace condseq
