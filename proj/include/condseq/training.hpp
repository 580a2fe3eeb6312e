#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condseq/denoiser.hpp"
#include "condseq/diffusion.hpp"

namespace condseq {

enum class LambdaKind { ReciprocalT, Uniform };
LambdaKind parse_lambda_kind(std::string_view name);
std::string to_string(LambdaKind kind);

/// Step weight: 1/t or 1.
double lambda_weight(LambdaKind kind, std::size_t t);

/// How the annotation channel is dropped: all three types together, or each
/// type on its own coin.
enum class AnnotationDropout { Joint, PerType };

enum class LrDecay { None, Linear, Cosine };

struct TrainConfig {
  DenoiserConfig model;
  std::size_t T = 500;
  ScheduleKind schedule = ScheduleKind::LinearAlpha;
  /// Examples are added to a step until their lengths reach this budget.
  std::size_t batch_tokens = 4096;
  double lr = 4e-5;
  double condition_dropout = 0.5;
  AnnotationDropout annotation_dropout = AnnotationDropout::Joint;
  LambdaKind lambda_kind = LambdaKind::ReciprocalT;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double warmup_frac = 0.01;
  LrDecay lr_decay = LrDecay::Cosine;
  /// Floor of the decayed learning rate as a fraction of `lr`.
  double min_lr_ratio = 0.1;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 1.0;
  /// Tensor groups (see tensor_group) excluded from updates.
  std::vector<std::string> frozen_groups;
  /// Accepted for interface compatibility. Training runs on one thread.
  std::size_t workers = 1;

  /// Throws InvalidConfig.
  void validate() const;
  nlohmann::json to_json() const;
  /// Strict: unknown keys are rejected with InvalidConfig. Missing keys keep
  /// their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double total = 0.0;
  /// 1 at masked positions, 0 elsewhere.
  std::vector<double> per_position_weights;
  double step_weight = 0.0;
  std::size_t masked_count = 0;
};

/// Weighted masked cross-entropy for an already corrupted input `in.tokens`
/// against clean targets `x0`. When `grads` is non-null, adds
/// `grad_scale * d(total)/d(params)` into it.
template <typename T>
LossBreakdown masked_loss(Denoiser<T>& model, const ModelInput& in, const Sequence& x0, double step_weight,
                          ParamSet<T>* grads = nullptr, double grad_scale = 1.0);

/// Corrupts `x0` to step `t` and evaluates the training loss.
LossBreakdown loss(const Sequence& x0, const ConditionBundle& bundle, std::size_t t,
                   const DenoiserParams<float>& params, const NoiseSchedule& schedule, Rng& rng,
                   LambdaKind lambda_kind = LambdaKind::ReciprocalT);

/// Independently drops each condition channel with probability `p`. Always
/// consumes the same number of draws regardless of which channels are set.
ConditionBundle dropout_conditions(const ConditionBundle& bundle, double p, Rng& rng,
                                   AnnotationDropout mode = AnnotationDropout::Joint);

struct TrainingExample {
  Sequence sequence;
  ConditionBundle bundle;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lambda_t_mean = 0.0;
  double masked_frac = 0.0;
  double lr = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  DenoiserParams<float> params;
  std::vector<TrainRecord> log;
};

/// Learning rate at 1-based `step`: linear warmup then the configured decay.
double learning_rate(const TrainConfig& config, std::size_t step);

/// Runs `config.max_steps` AdamW updates. Registry sizes in `init.config`
/// must cover every annotation id in the data. Throws DivergedAtStep when a
/// step produces a non-finite loss or gradient, EmptyDataset on no data.
TrainResult train(const std::vector<TrainingExample>& data, const TrainConfig& config, DenoiserParams<float> init,
                  const std::function<void(const TrainRecord&)>& on_step = {});

/// One example for gradient checking: fixed corrupted input and targets.
struct GradientProbe {
  Sequence x_t;
  Sequence x0;
  ConditionBundle bundle;
  double step_weight = 1.0;
};

struct GradientCheckResult {
  /// Largest relative error per tensor group.
  std::map<std::string, double> worst_by_group;
  double worst = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic loss gradients with central differences on
/// `per_tensor` random entries of every non-empty tensor. Relative error
/// is |a - n| / max(|a|, |n|, floor).
GradientCheckResult check_gradients(DenoiserParams<double>& params, const std::vector<GradientProbe>& probes,
                                    std::size_t per_tensor, Rng& rng, double step = 1e-6, double floor = 1e-3);

}  // namespace condseq
