#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "condseq/denoiser.hpp"
#include "condseq/rng.hpp"
#include "condseq/seqcore.hpp"

namespace testutil {

using condseq::Vec3;

inline Eigen::Vector3d ev(const Vec3& v) { return {v[0], v[1], v[2]}; }
inline Vec3 av(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

// Places d given a, b, c, the bond |cd|, angle bcd and dihedral abcd.
inline Eigen::Vector3d place(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c,
                             double bond, double angle, double torsion) {
  const Eigen::Vector3d bc = (c - b).normalized();
  const Eigen::Vector3d n = (b - a).cross(bc).normalized();
  const Eigen::Vector3d m = n.cross(bc);
  const Eigen::Vector3d d2(-bond * std::cos(angle), bond * std::sin(angle) * std::cos(torsion),
                           bond * std::sin(angle) * std::sin(torsion));
  return c + d2.x() * bc + d2.y() * m + d2.z() * n;
}

// Backbone built from fixed torsions with ideal bond geometry.
inline condseq::BackboneStructure ideal_chain(std::size_t L, double phi_deg = -57.0, double psi_deg = -47.0,
                                              double omega_deg = 180.0) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double phi = phi_deg * deg, psi = psi_deg * deg, omega = omega_deg * deg;
  condseq::BackboneStructure s;
  Eigen::Vector3d n(0, 0, 0), ca(1.458, 0, 0);
  Eigen::Vector3d c = ca + 1.525 * Eigen::Vector3d(std::cos(std::numbers::pi - 111.2 * deg),
                                                   std::sin(std::numbers::pi - 111.2 * deg), 0);
  for (std::size_t i = 0; i < L; ++i) {
    if (i > 0) {
      const Eigen::Vector3d prev_n = n, prev_ca = ca, prev_c = c;
      n = place(prev_n, prev_ca, prev_c, 1.329, 116.2 * deg, psi);
      ca = place(prev_ca, prev_c, n, 1.458, 121.7 * deg, omega);
      c = place(prev_c, n, ca, 1.525, 111.2 * deg, phi);
    }
    const Eigen::Vector3d o = place(n, ca, c, 1.231, 120.5 * deg, psi + std::numbers::pi);
    s.residues.push_back({av(n), av(ca), av(c), av(o)});
  }
  return s;
}

inline condseq::Sequence random_sequence(condseq::Rng& rng, std::size_t L) {
  std::vector<condseq::TokenId> ids(L);
  for (auto& id : ids) id = static_cast<condseq::TokenId>(rng.uniform_int(condseq::kNumResidues));
  return condseq::Sequence(ids);
}

// Overwrites every tensor with small random values so that no path is
// inert (the zero-initialised heads would otherwise hide gradient bugs).
template <typename T>
void randomize(condseq::ParamSet<T>& ps, condseq::Rng& rng, double scale = 0.3) {
  for (auto& t : ps)
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-scale, scale));
}

inline condseq::DenoiserConfig tiny_config(std::size_t d = 32) {
  condseq::DenoiserConfig c;
  c.n_blocks = 2;
  c.d_model = d;
  c.n_heads = 4;
  c.d_ff = 2 * d;
  c.rcfe_blocks = 1;
  c.max_len = 32;
  c.n_go = 5;
  c.n_ipr = 3;
  c.n_ec = 2;
  return c;
}

}  // namespace testutil
