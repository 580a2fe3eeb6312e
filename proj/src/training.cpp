#include "condseq/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "json_util.hpp"

namespace condseq {

namespace {

// Independent stream for condition dropout, so that changing the dropout
// rate never shifts the corruption and batching draws.
constexpr std::uint64_t kDropoutStream = 0xD209;

LrDecay parse_lr_decay(std::string_view s) {
  if (s == "none") return LrDecay::None;
  if (s == "linear") return LrDecay::Linear;
  if (s == "cosine") return LrDecay::Cosine;
  throw InvalidConfig("lr_decay must be 'none', 'linear' or 'cosine'");
}

std::string lr_decay_name(LrDecay d) {
  switch (d) {
    case LrDecay::None: return "none";
    case LrDecay::Linear: return "linear";
    case LrDecay::Cosine: return "cosine";
  }
  return "none";
}

AnnotationDropout parse_annotation_dropout(std::string_view s) {
  if (s == "joint") return AnnotationDropout::Joint;
  if (s == "per-type") return AnnotationDropout::PerType;
  throw InvalidConfig("annotation_dropout must be 'joint' or 'per-type'");
}

ScheduleKind parse_schedule_config(std::string_view s) {
  try {
    return parse_schedule_kind(s);
  } catch (const InvalidSchedule& e) {
    throw InvalidConfig(e.what());
  }
}

template <typename T>
bool all_finite(const ParamSet<T>& ps) {
  for (const auto& t : ps)
    for (const T v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

// Decoupled weight decay applies to matrices only: biases, gains and null
// embeddings are left alone.
bool decays(const NamedTensor<float>& t) { return t.shape.size() == 2 && !t.name.ends_with(".null"); }

struct AdamState {
  ParamSet<float> m, v;
};

}  // namespace

LambdaKind parse_lambda_kind(std::string_view name) {
  if (name == "reciprocal-t") return LambdaKind::ReciprocalT;
  if (name == "uniform") return LambdaKind::Uniform;
  throw InvalidConfig("lambda_kind must be 'reciprocal-t' or 'uniform'");
}

std::string to_string(LambdaKind kind) { return kind == LambdaKind::ReciprocalT ? "reciprocal-t" : "uniform"; }

double lambda_weight(LambdaKind kind, std::size_t t) {
  if (t == 0) throw StepOutOfRange("lambda weight needs t >= 1");
  return kind == LambdaKind::ReciprocalT ? 1.0 / static_cast<double>(t) : 1.0;
}

// ---------------------------------------------------------------------------
// Config.

void TrainConfig::validate() const {
  model.validate();
  if (T == 0) throw InvalidConfig("T must be at least 1");
  if (batch_tokens == 0) throw InvalidConfig("batch_tokens must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) throw InvalidConfig("lr must be positive");
  if (!(condition_dropout >= 0 && condition_dropout <= 1)) throw InvalidConfig("condition_dropout must be in [0, 1]");
  if (weight_decay < 0) throw InvalidConfig("weight_decay must be non-negative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1))
    throw InvalidConfig("adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) throw InvalidConfig("adam_eps must be positive");
  if (!(warmup_frac >= 0 && warmup_frac <= 1)) throw InvalidConfig("warmup_frac must be in [0, 1]");
  if (!(min_lr_ratio >= 0 && min_lr_ratio <= 1)) throw InvalidConfig("min_lr_ratio must be in [0, 1]");
  if (grad_clip < 0) throw InvalidConfig("grad_clip must be non-negative");
  if (workers == 0) throw InvalidConfig("workers must be at least 1");
  static const std::set<std::string> groups = {"embedding", "annotation", "agfm", "attention",
                                               "ffn",       "rcfe",       "structure", "head"};
  for (const auto& g : frozen_groups)
    if (!groups.count(g)) throw InvalidConfig("unknown tensor group '" + g + "' in frozen_groups");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"model", model.to_json()},
                        {"T", T},
                        {"schedule", condseq::to_string(schedule)},
                        {"batch_tokens", batch_tokens},
                        {"lr", lr},
                        {"condition_dropout", condition_dropout},
                        {"annotation_dropout", annotation_dropout == AnnotationDropout::Joint ? "joint" : "per-type"},
                        {"lambda_kind", condseq::to_string(lambda_kind)},
                        {"max_steps", max_steps},
                        {"seed", seed},
                        {"weight_decay", weight_decay},
                        {"adam_beta1", adam_beta1},
                        {"adam_beta2", adam_beta2},
                        {"adam_eps", adam_eps},
                        {"warmup_frac", warmup_frac},
                        {"lr_decay", lr_decay_name(lr_decay)},
                        {"min_lr_ratio", min_lr_ratio},
                        {"grad_clip", grad_clip},
                        {"frozen_groups", frozen_groups},
                        {"workers", workers}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  detail::StrictObject o(j, "train config");
  if (o.has("model")) c.model = DenoiserConfig::from_json(o.raw("model"));
  o.read("T", c.T);
  o.read_with("schedule", c.schedule, parse_schedule_config);
  o.read("batch_tokens", c.batch_tokens);
  o.read("lr", c.lr);
  o.read("condition_dropout", c.condition_dropout);
  o.read_with("annotation_dropout", c.annotation_dropout, parse_annotation_dropout);
  o.read_with("lambda_kind", c.lambda_kind, parse_lambda_kind);
  o.read("max_steps", c.max_steps);
  o.read("seed", c.seed);
  o.read("weight_decay", c.weight_decay);
  o.read("adam_beta1", c.adam_beta1);
  o.read("adam_beta2", c.adam_beta2);
  o.read("adam_eps", c.adam_eps);
  o.read("warmup_frac", c.warmup_frac);
  o.read_with("lr_decay", c.lr_decay, parse_lr_decay);
  o.read("min_lr_ratio", c.min_lr_ratio);
  o.read("grad_clip", c.grad_clip);
  o.read("frozen_groups", c.frozen_groups);
  o.read("workers", c.workers);
  o.finish();
  c.validate();
  return c;
}

nlohmann::json TrainRecord::to_json() const {
  return nlohmann::json{
      {"step", step}, {"loss", loss}, {"lambda_t_mean", lambda_t_mean}, {"masked_frac", masked_frac}, {"lr", lr}};
}

// ---------------------------------------------------------------------------
// Loss.

template <typename T>
LossBreakdown masked_loss(Denoiser<T>& model, const ModelInput& in, const Sequence& x0, double step_weight,
                          ParamSet<T>* grads, double grad_scale) {
  const std::size_t L = x0.size();
  if (in.tokens.size() != L) throw LengthMismatch("corrupted input and targets differ in length");
  if (x0.has_mask()) throw AlreadyCorrupted("training targets contain mask tokens");

  LossBreakdown out;
  out.step_weight = step_weight;
  out.per_position_weights.assign(L, 0.0);
  for (std::size_t i = 0; i < L; ++i)
    if (in.tokens[i] == kMaskId) {
      out.per_position_weights[i] = 1.0;
      ++out.masked_count;
    }
  if (out.masked_count == 0) return out;

  const Mat<T> logits = model.forward(in);
  const double scale = step_weight / static_cast<double>(out.masked_count);
  Mat<T> dlogits;
  if (grads) dlogits = Mat<T>::Zero(logits.rows(), logits.cols());
  double ce_sum = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    if (out.per_position_weights[i] == 0.0) continue;
    const auto row = static_cast<Eigen::Index>(i);
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index v = 0; v < static_cast<Eigen::Index>(kNumResidues); ++v)
      m = std::max(m, static_cast<double>(logits(row, v)));
    double z = 0.0;
    for (Eigen::Index v = 0; v < static_cast<Eigen::Index>(kNumResidues); ++v)
      z += std::exp(static_cast<double>(logits(row, v)) - m);
    const double log_z = m + std::log(z);
    ce_sum += log_z - static_cast<double>(logits(row, x0[i]));
    if (grads) {
      for (Eigen::Index v = 0; v < static_cast<Eigen::Index>(kNumResidues); ++v)
        dlogits(row, v) = static_cast<T>(grad_scale * scale * std::exp(static_cast<double>(logits(row, v)) - log_z));
      dlogits(row, x0[i]) -= static_cast<T>(grad_scale * scale);
    }
  }
  out.total = scale * ce_sum;
  if (grads) model.backward(dlogits, *grads);
  return out;
}

template LossBreakdown masked_loss(Denoiser<float>&, const ModelInput&, const Sequence&, double, ParamSet<float>*,
                                   double);
template LossBreakdown masked_loss(Denoiser<double>&, const ModelInput&, const Sequence&, double,
                                   ParamSet<double>*, double);

LossBreakdown loss(const Sequence& x0, const ConditionBundle& bundle, std::size_t t,
                   const DenoiserParams<float>& params, const NoiseSchedule& schedule, Rng& rng,
                   LambdaKind lambda_kind) {
  const Sequence x_t = corrupt(x0, schedule, t, rng);
  Denoiser<float> model(params);
  return masked_loss(model, make_model_input(x_t, bundle, params.config), x0, lambda_weight(lambda_kind, t));
}

ConditionBundle dropout_conditions(const ConditionBundle& bundle, double p, Rng& rng, AnnotationDropout mode) {
  if (!(p >= 0 && p <= 1)) throw InvalidConfig("dropout probability must be in [0, 1]");
  ConditionBundle out = bundle;
  const bool drop_anno = rng.bernoulli(p);
  bool drop_type[3] = {drop_anno, drop_anno, drop_anno};
  if (mode == AnnotationDropout::PerType) {
    drop_type[1] = rng.bernoulli(p);
    drop_type[2] = rng.bernoulli(p);
  }
  const bool drop_motif = rng.bernoulli(p);
  const bool drop_structure = rng.bernoulli(p);
  if (out.annotations) {
    if (mode == AnnotationDropout::Joint) {
      if (drop_anno) out.annotations.reset();
    } else {
      if (drop_type[0]) out.annotations->go.clear();
      if (drop_type[1]) out.annotations->ipr.clear();
      if (drop_type[2]) out.annotations->ec.clear();
      if (out.annotations->empty()) out.annotations.reset();
    }
  }
  if (drop_motif) out.motif.reset();
  if (drop_structure) out.structure.reset();
  return out;
}

// ---------------------------------------------------------------------------
// Optimisation.

double learning_rate(const TrainConfig& c, std::size_t step) {
  const double total = static_cast<double>(std::max<std::size_t>(c.max_steps, 1));
  const double warmup = std::max(1.0, std::ceil(c.warmup_frac * total));
  const double s = static_cast<double>(step);
  if (s <= warmup) return c.lr * s / warmup;
  const double progress = std::min(1.0, (s - warmup) / std::max(1.0, total - warmup));
  double factor = 1.0;
  switch (c.lr_decay) {
    case LrDecay::None: factor = 1.0; break;
    case LrDecay::Linear: factor = 1.0 - progress; break;
    case LrDecay::Cosine: factor = 0.5 * (1.0 + std::cos(std::numbers::pi * progress)); break;
  }
  return c.lr * (c.min_lr_ratio + (1.0 - c.min_lr_ratio) * factor);
}

TrainResult train(const std::vector<TrainingExample>& data, const TrainConfig& config, DenoiserParams<float> init,
                  const std::function<void(const TrainRecord&)>& on_step) {
  config.validate();
  TrainResult result{std::move(init), {}};
  if (config.max_steps == 0) return result;
  if (data.empty()) throw EmptyDataset("training set is empty");

  auto& params = result.params;
  const auto schedule = make_schedule(config.T, config.schedule);
  Rng rng(config.seed);
  Rng drop_rng = rng.derive(kDropoutStream);

  // Structure features are fixed per record; compute them once.
  std::vector<std::optional<StructureFeatures>> features(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].bundle.structure && params.config.structure_enabled)
      features[i] = featurize_structure(*data[i].bundle.structure);

  std::vector<bool> frozen(params.tensors.size(), false);
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    frozen[i] = std::find(config.frozen_groups.begin(), config.frozen_groups.end(),
                          tensor_group(params.tensors[i].name)) != config.frozen_groups.end();

  AdamState adam{params.tensors.zeros_like(), params.tensors.zeros_like()};
  auto grads = params.tensors.zeros_like();
  Denoiser<float> model(params);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    grads.set_zero();
    std::vector<std::size_t> batch;
    std::size_t tokens = 0;
    while (batch.empty() || tokens < config.batch_tokens) {
      if (cursor == order.size()) {
        // Fisher-Yates with the library generator keeps shuffles portable.
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
      tokens += data[batch.back()].sequence.size();
      if (batch.size() >= data.size() && tokens < config.batch_tokens) break;
    }

    double loss_sum = 0.0, lambda_sum = 0.0;
    std::size_t masked = 0;
    const double grad_scale = 1.0 / static_cast<double>(batch.size());
    for (const std::size_t idx : batch) {
      const auto& ex = data[idx];
      const std::size_t t = 1 + static_cast<std::size_t>(rng.uniform_int(config.T));
      const Sequence x_t = corrupt(ex.sequence, schedule, t, rng);
      const ConditionBundle bundle =
          dropout_conditions(ex.bundle, config.condition_dropout, drop_rng, config.annotation_dropout);
      const auto in = make_model_input(x_t, bundle, params.config, bundle.structure ? features[idx] : std::nullopt);
      const double lambda = lambda_weight(config.lambda_kind, t);
      const auto lb = masked_loss(model, in, ex.sequence, lambda, &grads, grad_scale);
      loss_sum += lb.total;
      lambda_sum += lambda;
      masked += lb.masked_count;
    }

    const double batch_loss = loss_sum / static_cast<double>(batch.size());
    if (!std::isfinite(batch_loss) || !all_finite(grads)) throw DivergedAtStep(step);

    double norm_sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (!frozen[i])
        for (const float g : grads[i].data) norm_sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm_sq);
    const double clip = (config.grad_clip > 0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;

    const double lr = learning_rate(config, step);
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
    const float b1 = static_cast<float>(config.adam_beta1), b2 = static_cast<float>(config.adam_beta2);
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      if (frozen[i]) continue;
      auto& p = params.tensors[i];
      auto& m = adam.m[i].data;
      auto& v = adam.v[i].data;
      const auto& g = grads[i].data;
      const bool wd = decays(p) && config.weight_decay > 0;
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        const float gk = static_cast<float>(g[k] * clip);
        m[k] = b1 * m[k] + (1.0f - b1) * gk;
        v[k] = b2 * v[k] + (1.0f - b2) * gk * gk;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        double update = mhat / (std::sqrt(vhat) + config.adam_eps);
        if (wd) update += config.weight_decay * p.data[k];
        p.data[k] = static_cast<float>(p.data[k] - lr * update);
      }
    }

    TrainRecord rec{step, batch_loss, lambda_sum / static_cast<double>(batch.size()),
                    static_cast<double>(masked) / static_cast<double>(tokens), lr};
    result.log.push_back(rec);
    if (on_step) on_step(rec);
  }
  if (!all_finite(params.tensors)) throw DivergedAtStep(config.max_steps);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient verification.

GradientCheckResult check_gradients(DenoiserParams<double>& params, const std::vector<GradientProbe>& probes,
                                    std::size_t per_tensor, Rng& rng, double step, double floor) {
  std::vector<ModelInput> inputs;
  for (const auto& p : probes) inputs.push_back(make_model_input(p.x_t, p.bundle, params.config));
  Denoiser<double> model(params);
  auto total = [&](ParamSet<double>* grads) {
    double sum = 0.0;
    for (std::size_t i = 0; i < probes.size(); ++i)
      sum += masked_loss(model, inputs[i], probes[i].x0, probes[i].step_weight, grads).total;
    return sum;
  };
  auto grads = params.tensors.zeros_like();
  total(&grads);

  GradientCheckResult out;
  for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& t = params.tensors[ti];
    if (t.data.empty()) continue;
    const std::string group = tensor_group(t.name);
    double& worst = out.worst_by_group[group];
    for (std::size_t probe = 0; probe < per_tensor; ++probe) {
      const std::size_t k = rng.uniform_int(t.data.size());
      const double orig = t.data[k];
      t.data[k] = orig + step;
      const double up = total(nullptr);
      t.data[k] = orig - step;
      const double down = total(nullptr);
      t.data[k] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grads[ti].data[k];
      const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), floor});
      worst = std::max(worst, err);
      out.worst = std::max(out.worst, err);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace condseq
