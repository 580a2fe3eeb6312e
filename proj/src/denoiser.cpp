#include "condseq/denoiser.hpp"

#include <cmath>
#include <limits>
#include <set>

namespace condseq {

namespace {

constexpr double kLayerNormEps = 1e-5;

using Eigen::Index;

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Reductions in a fixed left-to-right order. Eigen's vectorised reductions
// are not bitwise reproducible across buffer alignments.
template <typename Derived>
typename Derived::Scalar seq_sum(const Eigen::DenseBase<Derived>& v) {
  typename Derived::Scalar s(0);
  for (Index k = 0; k < v.size(); ++k) s += v.derived().coeff(k);
  return s;
}

template <typename Derived>
typename Derived::Scalar seq_mean(const Eigen::DenseBase<Derived>& v) {
  return seq_sum(v) / static_cast<typename Derived::Scalar>(v.size());
}

template <typename Derived>
RowVec<typename Derived::Scalar> col_sums(const Eigen::DenseBase<Derived>& m) {
  RowVec<typename Derived::Scalar> out = RowVec<typename Derived::Scalar>::Zero(m.cols());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index k = 0; k < m.cols(); ++k) out(k) += m.derived().coeff(i, k);
  return out;
}

template <typename Derived>
ColVec<typename Derived::Scalar> row_sums(const Eigen::DenseBase<Derived>& m) {
  ColVec<typename Derived::Scalar> out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) out(i) = seq_sum(m.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Layer primitives. Each *_bwd accumulates parameter gradients and returns the
// gradient with respect to its input.

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  ColVec<T> rstd;
};

template <typename T>
void layernorm_fwd(const Mat<T>& x, LayerNormCache<T>& c) {
  const Index L = x.rows();
  c.xhat.resize(L, x.cols());
  c.rstd.resize(L);
  for (Index i = 0; i < L; ++i) {
    const T mu = seq_mean(x.row(i));
    const auto centered = (x.row(i).array() - mu).eval();
    const T var = seq_mean(centered.square());
    const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
    c.rstd(i) = rs;
    c.xhat.row(i) = centered * rs;
  }
}

template <typename T>
Mat<T> layernorm_bwd(const Mat<T>& dxhat, const LayerNormCache<T>& c) {
  Mat<T> dx(dxhat.rows(), dxhat.cols());
  for (Index i = 0; i < dxhat.rows(); ++i) {
    const T m1 = seq_mean(dxhat.row(i));
    const T m2 = seq_mean(dxhat.row(i).array() * c.xhat.row(i).array());
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename T>
Mat<T> linear(const Mat<T>& x, const NamedTensor<T>& w, const NamedTensor<T>& b) {
  Mat<T> y(x.rows(), static_cast<Index>(w.shape[1]));
  y.noalias() = x * as_matrix(w);
  y.rowwise() += as_row(b);
  return y;
}

template <typename T>
Mat<T> linear_bwd(const Mat<T>& dy, const Mat<T>& x, const NamedTensor<T>& w, NamedTensor<T>& gw,
                  NamedTensor<T>& gb) {
  as_matrix(gw).noalias() += x.transpose() * dy;
  as_row(gb) += col_sums(dy);
  Mat<T> dx(dy.rows(), x.cols());
  dx.noalias() = dy * as_matrix(w).transpose();
  return dx;
}

template <typename T>
void softmax_rows_inplace(Mat<T>& s) {
  for (Index i = 0; i < s.rows(); ++i) {
    const T m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp();
    s.row(i) /= seq_sum(s.row(i));
  }
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

template <typename T>
T gelu(T z) {
  return T(0.5) * z * (T(1) + std::tanh(T(kGeluK) * (z + T(kGeluC) * z * z * z)));
}

template <typename T>
T gelu_grad(T z) {
  const T th = std::tanh(T(kGeluK) * (z + T(kGeluC) * z * z * z));
  return T(0.5) * (T(1) + th) + T(0.5) * z * (T(1) - th * th) * T(kGeluK) * (T(1) + T(3 * kGeluC) * z * z);
}

template <typename T>
struct AttentionCache {
  Mat<T> xq, xkv, q, k, v, ctx;
  std::vector<Mat<T>> probs;
};

template <typename T>
Mat<T> attention_fwd(const ParamSet<T>& p, const AttentionIndex& a, const Mat<T>& xq, const Mat<T>& xkv,
                     std::size_t heads, AttentionCache<T>& c) {
  c.xq = xq;
  c.xkv = xkv;
  c.q = linear(xq, p[a.wq], p[a.bq]);
  c.k = linear(xkv, p[a.wk], p[a.bk]);
  c.v = linear(xkv, p[a.wv], p[a.bv]);
  const Index d = c.q.cols();
  const Index dh = d / static_cast<Index>(heads);
  const T scale = T(1) / std::sqrt(T(dh));
  c.ctx.resize(xq.rows(), d);
  c.probs.resize(heads);
  for (Index h = 0; h < static_cast<Index>(heads); ++h) {
    Mat<T> s(xq.rows(), xkv.rows());
    s.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
    s *= scale;
    softmax_rows_inplace(s);
    c.ctx.middleCols(h * dh, dh).noalias() = s * c.v.middleCols(h * dh, dh);
    c.probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return linear(c.ctx, p[a.wo], p[a.bo]);
}

/// Returns {dxq, dxkv}.
template <typename T>
std::pair<Mat<T>, Mat<T>> attention_bwd(const ParamSet<T>& p, const AttentionIndex& a, const Mat<T>& dout,
                                        const AttentionCache<T>& c, ParamSet<T>& g) {
  const Mat<T> dctx = linear_bwd(dout, c.ctx, p[a.wo], g[a.wo], g[a.bo]);
  const Index d = c.q.cols();
  const Index heads = static_cast<Index>(c.probs.size());
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  Mat<T> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (Index h = 0; h < heads; ++h) {
    const Mat<T>& P = c.probs[static_cast<std::size_t>(h)];
    const auto dctx_h = dctx.middleCols(h * dh, dh);
    Mat<T> dp(P.rows(), P.cols());
    dp.noalias() = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = P.transpose() * dctx_h;
    const ColVec<T> inner = row_sums(dp.array() * P.array());
    Mat<T> ds = (P.array() * (dp.colwise() - inner).array()).matrix();
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  Mat<T> dxq = linear_bwd(dq, c.xq, p[a.wq], g[a.wq], g[a.bq]);
  Mat<T> dxkv = linear_bwd(dk, c.xkv, p[a.wk], g[a.wk], g[a.bk]);
  dxkv += linear_bwd(dv, c.xkv, p[a.wv], g[a.wv], g[a.bv]);
  return {std::move(dxq), std::move(dxkv)};
}

template <typename T>
RowVec<T> modulation_scale(const Modulation<T>& mod, bool literal) {
  return literal ? mod.gamma : (mod.gamma.array() + T(1)).matrix().eval();
}

/// Backward through the modulation heads: accumulates head gradients and
/// the condition gradient.
template <typename T>
void modulation_bwd(const ParamSet<T>& p, const ModulationIndex& m, const RowVec<T>& cond, const RowVec<T>& dgamma,
                    const RowVec<T>& dbeta, const RowVec<T>& dalpha, ParamSet<T>& g, RowVec<T>& dcond) {
  const std::pair<std::size_t, std::size_t> heads[] = {{m.gamma_w, m.gamma_b}, {m.beta_w, m.beta_b},
                                                       {m.alpha_w, m.alpha_b}};
  const RowVec<T>* grads[] = {&dgamma, &dbeta, &dalpha};
  for (int k = 0; k < 3; ++k) {
    const auto [w, b] = heads[k];
    as_matrix(g[w]).noalias() += cond.transpose() * (*grads[k]);
    as_row(g[b]) += *grads[k];
    dcond.noalias() += (*grads[k]) * as_matrix(p[w]).transpose();
  }
}

// ---------------------------------------------------------------------------
// Transformer block with modulation before each sub-layer and gating after.

template <typename T>
struct BlockCache {
  LayerNormCache<T> ln1, ln2, lnc;
  Modulation<T> sa_mod, ffn_mod;
  AttentionCache<T> sa, xa;
  Mat<T> a, u2, z, act, f;
  bool cross = false;
};

struct BlockShape {
  std::size_t heads;
  bool literal;
};

template <typename T>
Mat<T> block_fwd(const ParamSet<T>& p, const BlockIndex& b, const RowVec<T>& cond, const Mat<T>& x,
                 const Mat<T>* memory, const AttentionIndex* xattn, BlockShape shape, BlockCache<T>& c) {
  c.sa_mod = compute_modulation(cond, p, b.sa_mod);
  c.ffn_mod = compute_modulation(cond, p, b.ffn_mod);

  layernorm_fwd(x, c.ln1);
  Mat<T> u1 = c.ln1.xhat;
  u1.array().rowwise() *= modulation_scale(c.sa_mod, shape.literal).array();
  u1.rowwise() += c.sa_mod.beta;
  c.a = attention_fwd(p, b.attn, u1, u1, shape.heads, c.sa);
  Mat<T> h = x;
  h.array() += c.a.array().rowwise() * (c.sa_mod.alpha.array() + T(1));

  c.cross = memory != nullptr;
  if (c.cross) {
    layernorm_fwd(h, c.lnc);
    h += attention_fwd(p, *xattn, c.lnc.xhat, *memory, shape.heads, c.xa);
  }

  layernorm_fwd(h, c.ln2);
  c.u2 = c.ln2.xhat;
  c.u2.array().rowwise() *= modulation_scale(c.ffn_mod, shape.literal).array();
  c.u2.rowwise() += c.ffn_mod.beta;
  c.z = linear(c.u2, p[b.w1], p[b.b1]);
  c.act = c.z.unaryExpr([](T v) { return gelu(v); });
  c.f = linear(c.act, p[b.w2], p[b.b2]);
  h.array() += c.f.array().rowwise() * (c.ffn_mod.alpha.array() + T(1));
  return h;
}

/// Returns the gradient wrt the block input. Adds into `dcond` and, for the
/// cross-attention block, into `dmemory`.
template <typename T>
Mat<T> block_bwd(const ParamSet<T>& p, const BlockIndex& b, const RowVec<T>& cond, const Mat<T>& dout,
                 const AttentionIndex* xattn, BlockShape shape, const BlockCache<T>& c, ParamSet<T>& g,
                 RowVec<T>& dcond, Mat<T>* dmemory) {
  // FFN sub-layer.
  const RowVec<T> dalpha2 = col_sums(dout.array() * c.f.array());
  Mat<T> df = dout;
  df.array().rowwise() *= (c.ffn_mod.alpha.array() + T(1));
  Mat<T> dact = linear_bwd(df, c.act, p[b.w2], g[b.w2], g[b.b2]);
  dact.array() *= c.z.unaryExpr([](T v) { return gelu_grad(v); }).array();
  const Mat<T> du2 = linear_bwd(dact, c.u2, p[b.w1], g[b.w1], g[b.b1]);
  const RowVec<T> dgamma2 = col_sums(du2.array() * c.ln2.xhat.array());
  const RowVec<T> dbeta2 = col_sums(du2);
  Mat<T> dxhat2 = du2;
  dxhat2.array().rowwise() *= modulation_scale(c.ffn_mod, shape.literal).array();
  Mat<T> dh = dout + layernorm_bwd(dxhat2, c.ln2);
  modulation_bwd(p, b.ffn_mod, cond, dgamma2, dbeta2, dalpha2, g, dcond);

  if (c.cross) {
    auto [dq, dkv] = attention_bwd(p, *xattn, dh, c.xa, g);
    dh += layernorm_bwd(dq, c.lnc);
    *dmemory += dkv;
  }

  // Self-attention sub-layer.
  const RowVec<T> dalpha1 = col_sums(dh.array() * c.a.array());
  Mat<T> da = dh;
  da.array().rowwise() *= (c.sa_mod.alpha.array() + T(1));
  auto [dq, dkv] = attention_bwd(p, b.attn, da, c.sa, g);
  const Mat<T> du1 = dq + dkv;
  const RowVec<T> dgamma1 = col_sums(du1.array() * c.ln1.xhat.array());
  const RowVec<T> dbeta1 = col_sums(du1);
  Mat<T> dxhat1 = du1;
  dxhat1.array().rowwise() *= modulation_scale(c.sa_mod, shape.literal).array();
  dh += layernorm_bwd(dxhat1, c.ln1);
  modulation_bwd(p, b.sa_mod, cond, dgamma1, dbeta1, dalpha1, g, dcond);
  return dh;
}

// ---------------------------------------------------------------------------
// Layout construction.

ModulationIndex add_modulation(ParamSet<float>& ps, const std::string& prefix, std::size_t d) {
  ModulationIndex m{};
  m.gamma_w = ps.add(prefix + ".gamma.w", {d, d});
  m.gamma_b = ps.add(prefix + ".gamma.b", {d});
  m.beta_w = ps.add(prefix + ".beta.w", {d, d});
  m.beta_b = ps.add(prefix + ".beta.b", {d});
  m.alpha_w = ps.add(prefix + ".alpha.w", {d, d});
  m.alpha_b = ps.add(prefix + ".alpha.b", {d});
  return m;
}

AttentionIndex add_attention(ParamSet<float>& ps, const std::string& prefix, std::size_t d) {
  AttentionIndex a{};
  a.wq = ps.add(prefix + ".wq", {d, d});
  a.bq = ps.add(prefix + ".bq", {d});
  a.wk = ps.add(prefix + ".wk", {d, d});
  a.bk = ps.add(prefix + ".bk", {d});
  a.wv = ps.add(prefix + ".wv", {d, d});
  a.bv = ps.add(prefix + ".bv", {d});
  a.wo = ps.add(prefix + ".wo", {d, d});
  a.bo = ps.add(prefix + ".bo", {d});
  return a;
}

BlockIndex add_block(ParamSet<float>& ps, const std::string& prefix, const DenoiserConfig& c) {
  BlockIndex b{};
  b.sa_mod = add_modulation(ps, prefix + ".sa_mod", c.d_model);
  b.attn = add_attention(ps, prefix + ".attn", c.d_model);
  b.ffn_mod = add_modulation(ps, prefix + ".ffn_mod", c.d_model);
  b.w1 = ps.add(prefix + ".ffn.w1", {c.d_model, c.d_ff});
  b.b1 = ps.add(prefix + ".ffn.b1", {c.d_ff});
  b.w2 = ps.add(prefix + ".ffn.w2", {c.d_ff, c.d_model});
  b.b2 = ps.add(prefix + ".ffn.b2", {c.d_model});
  return b;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

template <typename T>
void check_annotation_ids(const std::set<int>& ids, std::size_t registry_size, const char* type) {
  for (const int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= registry_size)
      throw UnknownLabel(std::string(type) + " label id " + std::to_string(id) + " outside registry of size " +
                         std::to_string(registry_size));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config.

void DenoiserConfig::validate() const {
  if (n_blocks == 0) throw InvalidConfig("n_blocks must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw InvalidConfig("d_model must be a positive multiple of n_heads");
  if (d_ff == 0) throw InvalidConfig("d_ff must be positive");
  if (rcfe_blocks > n_blocks) throw InvalidConfig("rcfe_blocks cannot exceed n_blocks");
  if (max_len == 0) throw InvalidConfig("max_len must be positive");
}

nlohmann::json DenoiserConfig::to_json() const {
  return nlohmann::json{{"n_blocks", n_blocks},
                        {"d_model", d_model},
                        {"n_heads", n_heads},
                        {"d_ff", d_ff},
                        {"rcfe_blocks", rcfe_blocks},
                        {"max_len", max_len},
                        {"agfm_alpha_init", agfm_alpha_init == AlphaInit::Ones ? "ones" : "zeros"},
                        {"agfm_literal", agfm_literal},
                        {"structure_enabled", structure_enabled},
                        {"n_go", n_go},
                        {"n_ipr", n_ipr},
                        {"n_ec", n_ec}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidConfig("model config must be a JSON object");
  DenoiserConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "n_blocks") c.n_blocks = value.get<std::size_t>();
      else if (key == "d_model") c.d_model = value.get<std::size_t>();
      else if (key == "n_heads") c.n_heads = value.get<std::size_t>();
      else if (key == "d_ff") c.d_ff = value.get<std::size_t>();
      else if (key == "rcfe_blocks") c.rcfe_blocks = value.get<std::size_t>();
      else if (key == "max_len") c.max_len = value.get<std::size_t>();
      else if (key == "agfm_alpha_init") {
        const auto s = value.get<std::string>();
        if (s == "ones") c.agfm_alpha_init = AlphaInit::Ones;
        else if (s == "zeros") c.agfm_alpha_init = AlphaInit::Zeros;
        else throw InvalidConfig("agfm_alpha_init must be 'ones' or 'zeros'");
      } else if (key == "agfm_literal") c.agfm_literal = value.get<bool>();
      else if (key == "structure_enabled") c.structure_enabled = value.get<bool>();
      else if (key == "n_go") c.n_go = value.get<std::size_t>();
      else if (key == "n_ipr") c.n_ipr = value.get<std::size_t>();
      else if (key == "n_ec") c.n_ec = value.get<std::size_t>();
      else throw InvalidConfig("unknown model config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig("bad value for model config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters.

template <>
DenoiserParams<float> DenoiserParams<float>::zeros(const DenoiserConfig& config) {
  config.validate();
  DenoiserParams<float> out;
  out.config = config;
  auto& ps = out.tensors;
  auto& lay = out.layout;
  const std::size_t d = config.d_model;
  lay.tok_emb = ps.add("tok_emb", {kVocabSize, d});
  lay.pos_emb = ps.add("pos_emb", {config.max_len, d});
  lay.go_table = ps.add("anno.go.table", {config.n_go, d});
  lay.go_null = ps.add("anno.go.null", {d});
  lay.ipr_table = ps.add("anno.ipr.table", {config.n_ipr, d});
  lay.ipr_null = ps.add("anno.ipr.null", {d});
  lay.ec_table = ps.add("anno.ec.table", {config.n_ec, d});
  lay.ec_null = ps.add("anno.ec.null", {d});
  for (std::size_t b = 0; b < config.n_blocks; ++b)
    lay.blocks.push_back(add_block(ps, "block" + std::to_string(b), config));
  if (config.rcfe_blocks > 0) {
    lay.f_in_w = ps.add("ctrl.f_in.w", {d, d});
    lay.f_in_b = ps.add("ctrl.f_in.b", {d});
    for (std::size_t b = 0; b < config.rcfe_blocks; ++b) {
      const std::string prefix = "ctrl" + std::to_string(b);
      lay.ctrl.push_back(add_block(ps, prefix, config));
      lay.f_out_w.push_back(ps.add(prefix + ".f_out.w", {d, d}));
      lay.f_out_b.push_back(ps.add(prefix + ".f_out.b", {d}));
    }
  }
  if (config.structure_enabled) {
    lay.struct_w = ps.add("struct.proj.w", {kStructureFeatureDim, d});
    lay.struct_b = ps.add("struct.proj.b", {d});
    lay.xattn = add_attention(ps, "struct.xattn", d);
  }
  lay.head_w = ps.add("head.w", {d, kVocabSize});
  lay.head_b = ps.add("head.b", {kVocabSize});
  return out;
}

template <>
DenoiserParams<double> DenoiserParams<double>::zeros(const DenoiserConfig& config) {
  return DenoiserParams<float>::zeros(config).cast<double>();
}

DenoiserParams<float> init_params(const DenoiserConfig& config, Rng& rng) {
  auto params = DenoiserParams<float>::zeros(config);
  const float emb_scale = 1.0f / std::sqrt(static_cast<float>(config.d_model));
  for (auto& t : params.tensors) {
    const std::string& n = t.name;
    if (starts_with(n, "ctrl") && !starts_with(n, "ctrl.f_in") && n.find(".f_out.") == std::string::npos)
      continue;  // copied below
    if (t.shape.size() < 2 || ends_with(n, ".null")) continue;  // biases and null embeddings stay zero
    if (n.find("_mod.gamma.") != std::string::npos || n.find("_mod.beta.") != std::string::npos) continue;
    if (n.find("_mod.alpha.w") != std::string::npos) {
      if (config.agfm_alpha_init == AlphaInit::Ones) std::fill(t.data.begin(), t.data.end(), 1.0f);
      continue;
    }
    if (starts_with(n, "ctrl.f_in") || n.find(".f_out.") != std::string::npos) continue;
    if (n == "struct.xattn.wo") continue;
    const bool embedding = n == "tok_emb" || n == "pos_emb" || starts_with(n, "anno.");
    const float a = embedding ? emb_scale : 1.0f / std::sqrt(static_cast<float>(t.shape[0]));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-a, a));
  }
  for (std::size_t b = 0; b < config.rcfe_blocks; ++b) {
    const std::string src = "block" + std::to_string(b) + ".";
    const std::string dst = "ctrl" + std::to_string(b) + ".";
    for (auto& t : params.tensors) {
      if (!starts_with(t.name, dst) || t.name.find(".f_out.") != std::string::npos) continue;
      t.data = params.tensors[params.tensors.index(src + t.name.substr(dst.size()))].data;
    }
  }
  return params;
}

std::string tensor_group(const std::string& name) {
  if (starts_with(name, "ctrl")) return "rcfe";
  if (starts_with(name, "struct.")) return "structure";
  if (starts_with(name, "anno.")) return "annotation";
  if (name == "tok_emb" || name == "pos_emb") return "embedding";
  if (starts_with(name, "head.")) return "head";
  if (name.find("_mod.") != std::string::npos) return "agfm";
  if (name.find(".attn.") != std::string::npos) return "attention";
  return "ffn";
}

// ---------------------------------------------------------------------------
// Inputs and conditioning.

ModelInput make_model_input(const Sequence& x_t, const ConditionBundle& bundle, const DenoiserConfig& config,
                            const std::optional<StructureFeatures>& features) {
  const std::size_t L = x_t.size();
  if (L > config.max_len)
    throw InvalidSequence("sequence length " + std::to_string(L) + " exceeds model max_len " +
                          std::to_string(config.max_len));
  ModelInput in;
  in.tokens = x_t.vec();
  if (bundle.annotations) {
    check_annotation_ids<float>(bundle.annotations->go, config.n_go, "GO");
    check_annotation_ids<float>(bundle.annotations->ipr, config.n_ipr, "IPR");
    check_annotation_ids<float>(bundle.annotations->ec, config.n_ec, "EC");
    in.annotations = bundle.annotations;
  }
  if (bundle.motif && config.rcfe_blocks > 0) in.motif_tokens = motif_sequence(*bundle.motif, L).vec();
  if (bundle.structure && config.structure_enabled) {
    if (bundle.structure->size() != L)
      throw LengthMismatch("structure has " + std::to_string(bundle.structure->size()) +
                           " residues but sequence length is " + std::to_string(L));
    in.structure = features ? *features : featurize_structure(*bundle.structure);
  }
  return in;
}

ModelInput make_model_input(const Sequence& x_t, const ConditionBundle& bundle, const DenoiserConfig& config) {
  return make_model_input(x_t, bundle, config, std::nullopt);
}

template <typename T>
RowVec<T> embed_conditions(const std::optional<AnnotationSet>& annotations, const DenoiserParams<T>& params) {
  const auto& p = params.tensors;
  const auto& lay = params.layout;
  const auto& cfg = params.config;
  RowVec<T> c = RowVec<T>::Zero(static_cast<Index>(cfg.d_model));
  auto add_type = [&](const std::set<int>* ids, std::size_t table, std::size_t null, std::size_t size,
                      const char* type) {
    if (ids == nullptr || ids->empty()) {
      c += as_row(p[null]);
      return;
    }
    check_annotation_ids<T>(*ids, size, type);
    const auto tab = as_matrix(p[table]);
    for (const int id : *ids) c += tab.row(id);
  };
  add_type(annotations ? &annotations->go : nullptr, lay.go_table, lay.go_null, cfg.n_go, "GO");
  add_type(annotations ? &annotations->ipr : nullptr, lay.ipr_table, lay.ipr_null, cfg.n_ipr, "IPR");
  add_type(annotations ? &annotations->ec : nullptr, lay.ec_table, lay.ec_null, cfg.n_ec, "EC");
  return c;
}

template <typename T>
Modulation<T> compute_modulation(const RowVec<T>& cond, const ParamSet<T>& p, const ModulationIndex& idx) {
  Modulation<T> m;
  m.gamma = cond * as_matrix(p[idx.gamma_w]) + as_row(p[idx.gamma_b]);
  m.beta = cond * as_matrix(p[idx.beta_w]) + as_row(p[idx.beta_b]);
  m.alpha = cond * as_matrix(p[idx.alpha_w]) + as_row(p[idx.alpha_b]);
  return m;
}

template <typename T>
Mat<T> agfm_modulate(const Mat<T>& x, const Modulation<T>& mod, bool literal) {
  LayerNormCache<T> ln;
  layernorm_fwd(x, ln);
  Mat<T> u = ln.xhat;
  u.array().rowwise() *= modulation_scale(mod, literal).array();
  u.rowwise() += mod.beta;
  return u;
}

template <typename T>
Mat<T> agfm_gate(const Mat<T>& sublayer_out, const Modulation<T>& mod) {
  Mat<T> y = sublayer_out;
  y.array().rowwise() *= (mod.alpha.array() + T(1));
  return y;
}

// ---------------------------------------------------------------------------
// Denoiser.

template <typename T>
struct Denoiser<T>::State {
  std::vector<TokenId> tokens;
  std::optional<AnnotationSet> annotations;
  std::vector<TokenId> motif;
  bool control = false;
  bool structure = false;
  RowVec<T> cond;
  Mat<T> features, memory, motif_emb;
  std::vector<BlockCache<T>> main, ctrl;
  std::vector<Mat<T>> ctrl_out;
  LayerNormCache<T> ln_final;
};

template <typename T>
Denoiser<T>::Denoiser(const DenoiserParams<T>& params) : params_(params) {}

template <typename T>
Denoiser<T>::~Denoiser() = default;

template <typename T>
Mat<T> Denoiser<T>::forward(const ModelInput& input) {
  if (!state_) state_ = std::make_unique<State>();
  State& s = *state_;
  const auto& cfg = params_.config;
  const auto& p = params_.tensors;
  const auto& lay = params_.layout;
  const Index L = static_cast<Index>(input.tokens.size());
  const Index d = static_cast<Index>(cfg.d_model);
  if (L == 0 || static_cast<std::size_t>(L) > cfg.max_len)
    throw InvalidSequence("sequence length " + std::to_string(L) + " outside [1, " + std::to_string(cfg.max_len) +
                          "]");
  const BlockShape shape{cfg.n_heads, cfg.agfm_literal};

  s.tokens = input.tokens;
  s.annotations = input.annotations;
  s.control = input.motif_tokens.has_value() && cfg.rcfe_blocks > 0;
  s.structure = input.structure.has_value() && cfg.structure_enabled;

  const auto tok = as_matrix(p[lay.tok_emb]);
  const auto pos = as_matrix(p[lay.pos_emb]);
  Mat<T> h(L, d);
  for (Index i = 0; i < L; ++i) h.row(i) = tok.row(s.tokens[static_cast<std::size_t>(i)]) + pos.row(i);

  s.cond = embed_conditions(input.annotations, params_);

  if (s.structure) {
    const auto& f = *input.structure;
    if (static_cast<Index>(f.length) != L || f.dim != kStructureFeatureDim)
      throw LengthMismatch("structure features do not match the sequence");
    s.features.resize(L, static_cast<Index>(f.dim));
    for (Index i = 0; i < L; ++i)
      for (Index k = 0; k < static_cast<Index>(f.dim); ++k) s.features(i, k) = static_cast<T>(f.row(i)[k]);
    s.memory = linear(s.features, p[lay.struct_w], p[lay.struct_b]);
    s.memory += pos.topRows(L);
  }

  Mat<T> y;
  if (s.control) {
    s.motif = *input.motif_tokens;
    if (static_cast<Index>(s.motif.size()) != L) throw LengthMismatch("motif tokens do not match the sequence");
    s.motif_emb.resize(L, d);
    for (Index i = 0; i < L; ++i) s.motif_emb.row(i) = tok.row(s.motif[static_cast<std::size_t>(i)]);
    y = h + linear(s.motif_emb, p[lay.f_in_w], p[lay.f_in_b]);
  }

  const std::size_t nb = cfg.n_blocks;
  s.main.resize(nb);
  s.ctrl.resize(cfg.rcfe_blocks);
  s.ctrl_out.resize(cfg.rcfe_blocks);
  for (std::size_t b = 0; b < nb; ++b) {
    const bool cross = s.structure && b + 1 == nb;
    Mat<T> out = block_fwd(p, lay.blocks[b], s.cond, h, cross ? &s.memory : nullptr, cross ? &lay.xattn : nullptr,
                           shape, s.main[b]);
    if (s.control && b < cfg.rcfe_blocks) {
      y = block_fwd<T>(p, lay.ctrl[b], s.cond, y, nullptr, nullptr, shape, s.ctrl[b]);
      s.ctrl_out[b] = y;
      out += linear(y, p[lay.f_out_w[b]], p[lay.f_out_b[b]]);
    }
    h = std::move(out);
  }

  layernorm_fwd(h, s.ln_final);
  Mat<T> logits = linear(s.ln_final.xhat, p[lay.head_w], p[lay.head_b]);
  logits.col(kMaskId).setConstant(-std::numeric_limits<T>::infinity());
  return logits;
}

template <typename T>
void Denoiser<T>::backward(const Mat<T>& dlogits, ParamSet<T>& g) {
  if (!state_) throw InvalidConfig("backward() called before forward()");
  const State& s = *state_;
  const auto& cfg = params_.config;
  const auto& p = params_.tensors;
  const auto& lay = params_.layout;
  const Index L = static_cast<Index>(s.tokens.size());
  const Index d = static_cast<Index>(cfg.d_model);
  const BlockShape shape{cfg.n_heads, cfg.agfm_literal};

  Mat<T> dl = dlogits;
  dl.col(kMaskId).setZero();
  Mat<T> dh = layernorm_bwd(linear_bwd(dl, s.ln_final.xhat, p[lay.head_w], g[lay.head_w], g[lay.head_b]),
                            s.ln_final);

  RowVec<T> dcond = RowVec<T>::Zero(d);
  Mat<T> dmemory;
  if (s.structure) dmemory = Mat<T>::Zero(L, d);
  Mat<T> dy;  // gradient flowing into the output of the next control block
  if (s.control) dy = Mat<T>::Zero(L, d);

  for (std::size_t bi = cfg.n_blocks; bi-- > 0;) {
    if (s.control && bi < cfg.rcfe_blocks) {
      Mat<T> dyb = dy + linear_bwd(dh, s.ctrl_out[bi], p[lay.f_out_w[bi]], g[lay.f_out_w[bi]], g[lay.f_out_b[bi]]);
      dy = block_bwd<T>(p, lay.ctrl[bi], s.cond, dyb, nullptr, shape, s.ctrl[bi], g, dcond, nullptr);
    }
    const bool cross = s.structure && bi + 1 == cfg.n_blocks;
    dh = block_bwd(p, lay.blocks[bi], s.cond, dh, cross ? &lay.xattn : nullptr, shape, s.main[bi], g, dcond,
                   cross ? &dmemory : nullptr);
  }

  auto gtok = as_matrix(g[lay.tok_emb]);
  auto gpos = as_matrix(g[lay.pos_emb]);
  if (s.control) {
    dh += dy;
    const Mat<T> dmotif = linear_bwd(dy, s.motif_emb, p[lay.f_in_w], g[lay.f_in_w], g[lay.f_in_b]);
    for (Index i = 0; i < L; ++i) gtok.row(s.motif[static_cast<std::size_t>(i)]) += dmotif.row(i);
  }
  for (Index i = 0; i < L; ++i) {
    gtok.row(s.tokens[static_cast<std::size_t>(i)]) += dh.row(i);
    gpos.row(i) += dh.row(i);
  }
  if (s.structure) {
    linear_bwd(dmemory, s.features, p[lay.struct_w], g[lay.struct_w], g[lay.struct_b]);
    gpos.topRows(L) += dmemory;
  }

  auto type_grad = [&](const std::set<int>* ids, std::size_t table, std::size_t null) {
    if (ids == nullptr || ids->empty()) {
      as_row(g[null]) += dcond;
      return;
    }
    auto tab = as_matrix(g[table]);
    for (const int id : *ids) tab.row(id) += dcond;
  };
  const auto* a = s.annotations ? &*s.annotations : nullptr;
  type_grad(a ? &a->go : nullptr, lay.go_table, lay.go_null);
  type_grad(a ? &a->ipr : nullptr, lay.ipr_table, lay.ipr_null);
  type_grad(a ? &a->ec : nullptr, lay.ec_table, lay.ec_null);
}

Mat<float> forward(const Sequence& x_t, const ConditionBundle& bundle, const DenoiserParams<float>& params) {
  Denoiser<float> model(params);
  return model.forward(make_model_input(x_t, bundle, params.config));
}

std::vector<std::array<double, kVocabSize>> softmax_rows(const Mat<float>& logits, double temperature) {
  std::vector<std::array<double, kVocabSize>> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    auto& row = out[static_cast<std::size_t>(i)];
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < kNumResidues; ++v) m = std::max(m, static_cast<double>(logits(i, static_cast<Index>(v))));
    double sum = 0.0;
    for (std::size_t v = 0; v < kNumResidues; ++v) {
      row[v] = std::exp((static_cast<double>(logits(i, static_cast<Index>(v))) - m) / temperature);
      sum += row[v];
    }
    for (std::size_t v = 0; v < kNumResidues; ++v) row[v] /= sum;
    row[kMaskId] = 0.0;
  }
  return out;
}

template class Denoiser<float>;
template class Denoiser<double>;
template RowVec<float> embed_conditions(const std::optional<AnnotationSet>&, const DenoiserParams<float>&);
template RowVec<double> embed_conditions(const std::optional<AnnotationSet>&, const DenoiserParams<double>&);
template Modulation<float> compute_modulation(const RowVec<float>&, const ParamSet<float>&, const ModulationIndex&);
template Modulation<double> compute_modulation(const RowVec<double>&, const ParamSet<double>&,
                                               const ModulationIndex&);
template Mat<float> agfm_modulate(const Mat<float>&, const Modulation<float>&, bool);
template Mat<double> agfm_modulate(const Mat<double>&, const Modulation<double>&, bool);
template Mat<float> agfm_gate(const Mat<float>&, const Modulation<float>&);
template Mat<double> agfm_gate(const Mat<double>&, const Modulation<double>&);

}  // namespace condseq
