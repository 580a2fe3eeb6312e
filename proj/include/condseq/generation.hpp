#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condseq/denoiser.hpp"
#include "condseq/diffusion.hpp"

namespace condseq {

enum class MotifMode { Fixed, Dynamic };
MotifMode parse_motif_mode(std::string_view name);
std::string to_string(MotifMode mode);

struct SampleConfig {
  std::size_t steps = 100;
  /// Target length; 0 draws one uniformly from [min_length, max_length].
  std::size_t length = 0;
  std::size_t min_length = 200;
  std::size_t max_length = 400;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  MotifMode motif_mode = MotifMode::Fixed;
  std::size_t n_candidates = 1;
  /// Token choice by Gumbel-max over logits / temperature. Off: argmax.
  bool gumbel = true;
  /// Ancestral sampling through the reverse posterior instead of
  /// confidence-ordered commitment.
  bool exact_posterior = false;
  /// Weights of model confidence and function score in reranking.
  double confidence_weight = 1.0;
  double function_weight = 1.0;

  /// Throws InvalidConfig.
  void validate() const;
  nlohmann::json to_json() const;
  /// Strict: unknown keys are rejected.
  static SampleConfig from_json(const nlohmann::json& j);
};

/// A sample plus the statistics used for reranking.
struct ScoredCandidate {
  Sequence sequence;
  /// Mean log-probability of the tokens the sampler committed.
  double model_confidence = 0.0;
  double func_score = 0.0;
  std::uint64_t seed = 0;
};

/// Unmasked-token count the sampler must reach after step `s` of `steps`
/// for a length-L chain.
std::size_t unmask_target(const NoiseSchedule& schedule, std::size_t steps, std::size_t s, std::size_t L);

/// Reverse diffusion from the all-mask state. Returns the sequence and its
/// model confidence (func_score is 0). Called with every step's unmasked
/// set when `on_step` is given.
ScoredCandidate sample_scored(const ConditionBundle& bundle, const DenoiserParams<float>& params,
                              const NoiseSchedule& schedule, const SampleConfig& cfg,
                              const std::function<void(std::size_t step, const Sequence& x)>& on_step = {});

Sequence sample(const ConditionBundle& bundle, const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                const SampleConfig& cfg);

/// Motif-conditioned generation. Fixed mode pins the motif residues; dynamic
/// mode passes the motif only to the control branch.
Sequence inpaint(const MotifSpec& motif, const ConditionBundle& bundle, const DenoiserParams<float>& params,
                 const NoiseSchedule& schedule, const SampleConfig& cfg);

/// Structure-conditioned generation; the length is the residue count.
Sequence inverse_fold(const BackboneStructure& structure, const ConditionBundle& bundle,
                      const DenoiserParams<float>& params, const NoiseSchedule& schedule, const SampleConfig& cfg);

using FunctionScorer = std::function<double(const Sequence&, const AnnotationSet&)>;

/// Draws `cfg.n_candidates` samples with seeds cfg.seed, cfg.seed + 1, ...
/// and returns the one maximising confidence_weight * confidence +
/// function_weight * score; ties go to higher confidence, then lower seed.
/// Throws ScorerError when the scorer returns a non-finite value.
ScoredCandidate generate_reranked(const ConditionBundle& bundle, const DenoiserParams<float>& params,
                                  const NoiseSchedule& schedule, const SampleConfig& cfg,
                                  const FunctionScorer& scorer, std::vector<ScoredCandidate>* all = nullptr);

struct GeneratedRecord {
  std::string id;
  std::string mode;
  std::uint64_t seed = 0;
  double confidence = 0.0;
  double func_score = 0.0;
  std::string labels;
  Sequence sequence;
};

/// `>id|mode=...|seed=...|conf=...|func=...|labels=...` headers, sequence
/// lines wrapped at 60 columns.
std::string format_fasta(const std::vector<GeneratedRecord>& records);

}  // namespace condseq
