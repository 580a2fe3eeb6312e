#include "condseq/generation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "json_util.hpp"

namespace condseq {

namespace {

struct Choice {
  TokenId token;
  double rank_score;  // log-probability at the sampling temperature
  double log_prob;    // log-probability at temperature 1
};

Choice choose_token(const Mat<float>& logits, Eigen::Index row, const SampleConfig& cfg, Rng& rng) {
  std::array<double, kNumResidues> z{};
  double m = -std::numeric_limits<double>::infinity(), m1 = m;
  for (std::size_t v = 0; v < kNumResidues; ++v) {
    const double l = logits(row, static_cast<Eigen::Index>(v));
    z[v] = l / cfg.temperature;
    m = std::max(m, z[v]);
    m1 = std::max(m1, l);
  }
  double zs = 0.0, zs1 = 0.0;
  for (std::size_t v = 0; v < kNumResidues; ++v) {
    zs += std::exp(z[v] - m);
    zs1 += std::exp(logits(row, static_cast<Eigen::Index>(v)) - m1);
  }
  std::size_t best = 0;
  double best_key = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < kNumResidues; ++v) {
    const double key = cfg.gumbel ? z[v] + rng.gumbel() : z[v];
    if (key > best_key) {
      best_key = key;
      best = v;
    }
  }
  return {static_cast<TokenId>(best), z[best] - m - std::log(zs),
          logits(row, static_cast<Eigen::Index>(best)) - m1 - std::log(zs1)};
}

// Sampling-resolution schedule: alpha at S evenly spaced points of [0, T].
NoiseSchedule resample_schedule(const NoiseSchedule& schedule, std::size_t steps) {
  const double T = static_cast<double>(schedule.steps());
  std::vector<double> betas(steps);
  double prev = 1.0;
  for (std::size_t s = 1; s <= steps; ++s) {
    const double a = schedule.alpha_at(T * static_cast<double>(s) / static_cast<double>(steps));
    betas[s - 1] = prev > 0.0 ? std::clamp(a / prev, 0.0, 1.0) : 0.0;
    prev = a;
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

MotifMode parse_motif_mode(std::string_view name) {
  if (name == "fixed") return MotifMode::Fixed;
  if (name == "dynamic") return MotifMode::Dynamic;
  throw InvalidConfig("motif_mode must be 'fixed' or 'dynamic'");
}

std::string to_string(MotifMode mode) { return mode == MotifMode::Fixed ? "fixed" : "dynamic"; }

void SampleConfig::validate() const {
  if (steps == 0) throw InvalidConfig("steps must be at least 1");
  if (!(temperature > 0) || !std::isfinite(temperature)) throw InvalidConfig("temperature must be positive");
  if (length == 0 && (min_length == 0 || min_length > max_length))
    throw InvalidConfig("length range must satisfy 1 <= min_length <= max_length");
  if (n_candidates == 0) throw InvalidConfig("n_candidates must be at least 1");
  if (!std::isfinite(confidence_weight) || !std::isfinite(function_weight))
    throw InvalidConfig("rerank weights must be finite");
}

nlohmann::json SampleConfig::to_json() const {
  return nlohmann::json{{"steps", steps},
                        {"length", length},
                        {"min_length", min_length},
                        {"max_length", max_length},
                        {"temperature", temperature},
                        {"seed", seed},
                        {"motif_mode", condseq::to_string(motif_mode)},
                        {"n_candidates", n_candidates},
                        {"gumbel", gumbel},
                        {"exact_posterior", exact_posterior},
                        {"confidence_weight", confidence_weight},
                        {"function_weight", function_weight}};
}

SampleConfig SampleConfig::from_json(const nlohmann::json& j) {
  SampleConfig c;
  detail::StrictObject o(j, "sample config");
  o.read("steps", c.steps);
  o.read("length", c.length);
  o.read("min_length", c.min_length);
  o.read("max_length", c.max_length);
  o.read("temperature", c.temperature);
  o.read("seed", c.seed);
  o.read_with("motif_mode", c.motif_mode, parse_motif_mode);
  o.read("n_candidates", c.n_candidates);
  o.read("gumbel", c.gumbel);
  o.read("exact_posterior", c.exact_posterior);
  o.read("confidence_weight", c.confidence_weight);
  o.read("function_weight", c.function_weight);
  o.finish();
  c.validate();
  return c;
}

std::size_t unmask_target(const NoiseSchedule& schedule, std::size_t steps, std::size_t s, std::size_t L) {
  if (s >= steps) return L;
  const double t = static_cast<double>(schedule.steps()) * static_cast<double>(steps - s) / static_cast<double>(steps);
  const double keep = schedule.alpha_at(t);
  return std::min<std::size_t>(L, static_cast<std::size_t>(std::llround(static_cast<double>(L) * keep)));
}

ScoredCandidate sample_scored(const ConditionBundle& bundle, const DenoiserParams<float>& params,
                              const NoiseSchedule& schedule, const SampleConfig& cfg,
                              const std::function<void(std::size_t, const Sequence&)>& on_step) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t extent = bundle.motif ? bundle.motif->extent() : 0;

  std::size_t L = 0;
  if (bundle.structure) {
    L = bundle.structure->size();
    if (cfg.length != 0 && cfg.length != L)
      throw LengthMismatch("requested length " + std::to_string(cfg.length) + " but the structure has " +
                           std::to_string(L) + " residues");
  } else if (cfg.length != 0) {
    L = cfg.length;
  } else {
    const std::size_t lo = std::max(cfg.min_length, extent);
    const std::size_t hi = std::max(cfg.max_length, lo);
    L = lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1));
  }
  if (extent > L)
    throw SpanOutOfRange("motif extends to " + std::to_string(extent) + " but the length is " + std::to_string(L));

  std::optional<StructureFeatures> features;
  if (bundle.structure && params.config.structure_enabled) features = featurize_structure(*bundle.structure);

  std::vector<TokenId> x(L, kMaskId);
  std::vector<bool> pinned(L, false);
  if (bundle.motif && cfg.motif_mode == MotifMode::Fixed)
    for (const auto& span : bundle.motif->spans())
      for (std::size_t i = span.start; i < span.end; ++i) {
        x[i] = span.residues[i - span.start];
        pinned[i] = true;
      }

  Denoiser<float> model(params);
  auto logits_for = [&](const std::vector<TokenId>& tokens) {
    return model.forward(make_model_input(Sequence(tokens), bundle, params.config, features));
  };

  double logp_sum = 0.0;
  std::size_t committed = 0;
  const std::size_t S = cfg.steps;

  if (cfg.exact_posterior) {
    const auto fine = resample_schedule(schedule, S);
    for (std::size_t k = 1; k <= S; ++k) {
      const std::size_t s = S - k + 1;  // reverse time index
      if (std::find(x.begin(), x.end(), kMaskId) == x.end()) break;
      const Mat<float> logits = logits_for(x);
      const auto probs = softmax_rows(logits, cfg.temperature);
      const auto unit = softmax_rows(logits, 1.0);
      const auto post = reverse_posterior(Sequence(x), probs, fine, s);
      for (std::size_t i = 0; i < L; ++i) {
        if (x[i] != kMaskId) continue;
        double u = rng.uniform();
        std::size_t v = 0;
        for (; v + 1 < kVocabSize; ++v) {
          if (u < post[i][v]) break;
          u -= post[i][v];
        }
        if (v == kMaskId) continue;
        x[i] = static_cast<TokenId>(v);
        logp_sum += std::log(unit[i][v]);
        ++committed;
      }
      if (on_step) on_step(k, Sequence(x));
    }
  } else {
    for (std::size_t s = 1; s <= S; ++s) {
      std::vector<std::size_t> masked;
      for (std::size_t i = 0; i < L; ++i)
        if (x[i] == kMaskId) masked.push_back(i);
      const std::size_t unmasked = L - masked.size();
      const std::size_t target = std::max(unmask_target(schedule, S, s, L), unmasked);
      if (target > unmasked) {
        const Mat<float> logits = logits_for(x);
        std::vector<Choice> choices;
        choices.reserve(masked.size());
        for (const std::size_t i : masked) choices.push_back(choose_token(logits, static_cast<Eigen::Index>(i), cfg, rng));
        std::vector<std::size_t> order(masked.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return choices[a].rank_score > choices[b].rank_score; });
        for (std::size_t r = 0; r < target - unmasked; ++r) {
          const auto& c = choices[order[r]];
          x[masked[order[r]]] = c.token;
          logp_sum += c.log_prob;
          ++committed;
        }
      }
      if (on_step) on_step(s, Sequence(x));
    }
  }

  ScoredCandidate out;
  out.sequence = Sequence(x);
  out.model_confidence = committed ? logp_sum / static_cast<double>(committed) : 0.0;
  out.seed = cfg.seed;
  return out;
}

Sequence sample(const ConditionBundle& bundle, const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                const SampleConfig& cfg) {
  return sample_scored(bundle, params, schedule, cfg).sequence;
}

Sequence inpaint(const MotifSpec& motif, const ConditionBundle& bundle, const DenoiserParams<float>& params,
                 const NoiseSchedule& schedule, const SampleConfig& cfg) {
  ConditionBundle b = bundle;
  b.motif = motif;
  return sample(b, params, schedule, cfg);
}

Sequence inverse_fold(const BackboneStructure& structure, const ConditionBundle& bundle,
                      const DenoiserParams<float>& params, const NoiseSchedule& schedule, const SampleConfig& cfg) {
  if (structure.size() < 3)
    throw StructureTooShort("structure has " + std::to_string(structure.size()) + " residues, need at least 3");
  ConditionBundle b = bundle;
  b.structure = structure;
  SampleConfig c = cfg;
  c.length = structure.size();
  return sample(b, params, schedule, c);
}

ScoredCandidate generate_reranked(const ConditionBundle& bundle, const DenoiserParams<float>& params,
                                  const NoiseSchedule& schedule, const SampleConfig& cfg,
                                  const FunctionScorer& scorer, std::vector<ScoredCandidate>* all) {
  cfg.validate();
  const AnnotationSet annotations = bundle.annotations.value_or(AnnotationSet{});
  std::vector<ScoredCandidate> candidates;
  for (std::size_t i = 0; i < cfg.n_candidates; ++i) {
    SampleConfig c = cfg;
    c.seed = cfg.seed + i;
    auto cand = sample_scored(bundle, params, schedule, c);
    cand.func_score = scorer(cand.sequence, annotations);
    if (!std::isfinite(cand.func_score))
      throw ScorerError("scorer returned a non-finite value for candidate seed " + std::to_string(c.seed));
    candidates.push_back(std::move(cand));
  }
  auto total = [&](const ScoredCandidate& c) {
    return cfg.confidence_weight * c.model_confidence + cfg.function_weight * c.func_score;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto& a = candidates[i];
    const auto& b = candidates[best];
    const double ta = total(a), tb = total(b);
    if (ta > tb || (ta == tb && (a.model_confidence > b.model_confidence ||
                                 (a.model_confidence == b.model_confidence && a.seed < b.seed))))
      best = i;
  }
  ScoredCandidate out = candidates[best];
  if (all) *all = std::move(candidates);
  return out;
}

std::string format_fasta(const std::vector<GeneratedRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += ">" + r.id + "|mode=" + r.mode + "|seed=" + std::to_string(r.seed) + "|conf=" + fmt6(r.confidence) +
           "|func=" + fmt6(r.func_score) + "|labels=" + r.labels + "\n";
    const std::string s = decode_sequence(r.sequence);
    for (std::size_t i = 0; i < s.size(); i += 60) out += s.substr(i, 60) + "\n";
  }
  return out;
}

}  // namespace condseq
