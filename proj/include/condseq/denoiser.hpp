#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condseq/registry.hpp"
#include "condseq/rng.hpp"
#include "condseq/seqcore.hpp"
#include "condseq/structure.hpp"
#include "condseq/tensor.hpp"

namespace condseq {

enum class AlphaInit { Ones, Zeros };

/// Architecture of the conditional denoiser.
struct DenoiserConfig {
  std::size_t n_blocks = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  /// Control-branch depth; copies of the first `rcfe_blocks` main blocks.
  std::size_t rcfe_blocks = 1;
  std::size_t max_len = 512;
  AlphaInit agfm_alpha_init = AlphaInit::Ones;
  /// Literal modulation gamma * LN(x) + beta instead of (1 + gamma) * LN(x) + beta.
  bool agfm_literal = false;
  bool structure_enabled = true;
  std::size_t n_go = 0;
  std::size_t n_ipr = 0;
  std::size_t n_ec = 0;

  /// Throws InvalidConfig.
  void validate() const;
  nlohmann::json to_json() const;
  /// Strict: unknown keys are rejected with InvalidConfig.
  static DenoiserConfig from_json(const nlohmann::json& j);

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Tensor indices of one scale/shift/gate head set (one per sub-layer).
struct ModulationIndex {
  std::size_t gamma_w, gamma_b, beta_w, beta_b, alpha_w, alpha_b;
};

struct AttentionIndex {
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockIndex {
  ModulationIndex sa_mod, ffn_mod;
  AttentionIndex attn;
  std::size_t w1, b1, w2, b2;
};

/// Where every tensor lives inside the ParamSet. Built from the config.
struct ParamLayout {
  std::size_t tok_emb, pos_emb;
  std::size_t go_table, go_null, ipr_table, ipr_null, ec_table, ec_null;
  std::vector<BlockIndex> blocks;
  std::vector<BlockIndex> ctrl;
  std::size_t f_in_w = 0, f_in_b = 0;
  std::vector<std::size_t> f_out_w, f_out_b;
  std::size_t struct_w = 0, struct_b = 0;
  AttentionIndex xattn{};
  std::size_t head_w, head_b;
};

/// All trainable tensors plus the config that shaped them.
template <typename T>
struct DenoiserParams {
  DenoiserConfig config;
  ParamLayout layout;
  ParamSet<T> tensors;

  /// Zero-filled parameters with the layout implied by `config`.
  static DenoiserParams zeros(const DenoiserConfig& config);

  template <typename U>
  DenoiserParams<U> cast() const {
    return DenoiserParams<U>{config, layout, tensors.template cast<U>()};
  }
};

template <>
DenoiserParams<float> DenoiserParams<float>::zeros(const DenoiserConfig& config);
template <>
DenoiserParams<double> DenoiserParams<double>::zeros(const DenoiserConfig& config);

/// Scaled-uniform weights, zero biases, and the conditioning-specific
/// initialisation: zero gamma/beta heads, ones or zeros alpha weights, zero
/// null embeddings, zero control in/out maps, zero cross-attention output.
/// Control blocks start as exact copies of their main blocks.
DenoiserParams<float> init_params(const DenoiserConfig& config, Rng& rng);

/// One forward-pass input, with conditions already resolved.
struct ModelInput {
  std::vector<TokenId> tokens;
  std::optional<AnnotationSet> annotations;
  /// Mask-padded motif tokens of length L (control branch input).
  std::optional<std::vector<TokenId>> motif_tokens;
  std::optional<StructureFeatures> structure;
};

/// Validates the bundle against the config and featurises the structure.
/// Channels the architecture does not have (structure with
/// structure_enabled = false, motif with rcfe_blocks = 0) are dropped.
ModelInput make_model_input(const Sequence& x_t, const ConditionBundle& bundle, const DenoiserConfig& config);

/// Same as make_model_input but reuses precomputed structure features.
ModelInput make_model_input(const Sequence& x_t, const ConditionBundle& bundle, const DenoiserConfig& config,
                            const std::optional<StructureFeatures>& features);

/// gamma, beta, alpha for one sub-layer.
template <typename T>
struct Modulation {
  RowVec<T> gamma, beta, alpha;
};

/// Pre-MLP condition vector: sum of present annotation embeddings, with the
/// per-type null embedding standing in for absent or empty types. Throws
/// UnknownLabel for ids outside the registries.
template <typename T>
RowVec<T> embed_conditions(const std::optional<AnnotationSet>& annotations, const DenoiserParams<T>& params);

template <typename T>
Modulation<T> compute_modulation(const RowVec<T>& cond, const ParamSet<T>& p, const ModulationIndex& idx);

/// (1 + gamma) * LN(x) + beta, or gamma * LN(x) + beta when `literal`.
template <typename T>
Mat<T> agfm_modulate(const Mat<T>& x, const Modulation<T>& mod, bool literal);

/// alpha * y + y applied to a sub-layer output y.
template <typename T>
Mat<T> agfm_gate(const Mat<T>& sublayer_out, const Modulation<T>& mod);

/// Forward pass plus the state needed for backward. `T` is float for
/// training and double for gradient checks.
template <typename T>
class Denoiser {
 public:
  explicit Denoiser(const DenoiserParams<T>& params);

  /// Logits [L, 21]; the mask column is -infinity.
  Mat<T> forward(const ModelInput& input);

  /// Accumulates parameter gradients for d(loss)/d(logits) of the most
  /// recent forward call. Entries of the mask column are ignored.
  void backward(const Mat<T>& dlogits, ParamSet<T>& grads);

  /// Logits without the control branch, for identity checks.
  Mat<T> forward_without_control(ModelInput input) {
    input.motif_tokens.reset();
    return forward(input);
  }

  ~Denoiser();
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

 private:
  struct State;
  const DenoiserParams<T>& params_;
  std::unique_ptr<State> state_;
};

/// Convenience: logits for a sequence and bundle.
Mat<float> forward(const Sequence& x_t, const ConditionBundle& bundle, const DenoiserParams<float>& params);

/// Row-wise softmax over the 20 residue tokens (mask probability 0), in double.
std::vector<std::array<double, kVocabSize>> softmax_rows(const Mat<float>& logits, double temperature = 1.0);

/// A loaded checkpoint.
struct Checkpoint {
  DenoiserParams<float> params;
  Registries registries;
  nlohmann::json metadata;
};

/// Writes `manifest.json` + `tensors.bin` into `dir` atomically (temp
/// directory then rename).
void save_checkpoint(const DenoiserParams<float>& params, const Registries& registries,
                     const std::filesystem::path& dir, const nlohmann::json& metadata = nlohmann::json::object());

/// Throws CorruptCheckpoint on any manifest/tensor inconsistency, including a
/// registry content hash that does not match the stored registries.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Parameter tensor group of a name: "embedding", "annotation", "agfm",
/// "attention", "ffn", "rcfe", "structure" or "head".
std::string tensor_group(const std::string& name);

}  // namespace condseq
