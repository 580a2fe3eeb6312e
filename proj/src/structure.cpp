#include "condseq/structure.hpp"

#include <cmath>

#include <Eigen/Geometry>

namespace condseq {

namespace {

Eigen::Vector3d v3(const Vec3& p) { return {p[0], p[1], p[2]}; }

Eigen::Vector3d safe_normalized(const Eigen::Vector3d& v) {
  const double n = v.norm();
  return n > 1e-12 ? Eigen::Vector3d(v / n) : Eigen::Vector3d::Zero();
}

}  // namespace

double dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Eigen::Vector3d b0 = v3(a) - v3(b);
  const Eigen::Vector3d b1 = safe_normalized(v3(c) - v3(b));
  const Eigen::Vector3d b2 = v3(d) - v3(c);
  const Eigen::Vector3d v = b0 - b0.dot(b1) * b1;
  const Eigen::Vector3d w = b2 - b2.dot(b1) * b1;
  const double x = v.dot(w);
  const double y = b1.cross(v).dot(w);
  return std::atan2(y, x);
}

StructureFeatures featurize_structure(const BackboneStructure& structure) {
  const std::size_t L = structure.size();
  if (L < 3) throw StructureTooShort("structure has " + std::to_string(L) + " residues, need at least 3");
  if (!structure.all_finite()) throw InvalidSequence("structure contains non-finite coordinates");

  StructureFeatures out;
  out.length = L;
  out.dim = kStructureFeatureDim;
  out.values.assign(L * kStructureFeatureDim, 0.0);
  const auto& res = structure.residues;
  constexpr int half = static_cast<int>(kStructureNeighbors / 2);

  for (std::size_t i = 0; i < L; ++i) {
    double* f = out.values.data() + i * kStructureFeatureDim;
    const Eigen::Vector3d ca = v3(res[i][kAtomCA]);

    std::size_t slot = 0;
    for (int o = -half; o <= half; ++o) {
      if (o == 0) continue;
      const long j = static_cast<long>(i) + o;
      if (j >= 0 && j < static_cast<long>(L)) {
        f[slot] = (v3(res[static_cast<std::size_t>(j)][kAtomCA]) - ca).norm() / 10.0;
        f[kStructureNeighbors + slot] = 1.0;
      }
      ++slot;
    }

    double* dih = f + 2 * kStructureNeighbors;
    if (i > 0) {
      const double phi = dihedral(res[i - 1][kAtomC], res[i][kAtomN], res[i][kAtomCA], res[i][kAtomC]);
      dih[0] = std::sin(phi);
      dih[1] = std::cos(phi);
    }
    if (i + 1 < L) {
      const double psi = dihedral(res[i][kAtomN], res[i][kAtomCA], res[i][kAtomC], res[i + 1][kAtomN]);
      const double omega = dihedral(res[i][kAtomCA], res[i][kAtomC], res[i + 1][kAtomN], res[i + 1][kAtomCA]);
      dih[2] = std::sin(psi);
      dih[3] = std::cos(psi);
      dih[4] = std::sin(omega);
      dih[5] = std::cos(omega);
    }

    // Residue frame: e1 along CA->C, e2 in the N-CA-C plane.
    const Eigen::Vector3d n = v3(res[i][kAtomN]);
    const Eigen::Vector3d c = v3(res[i][kAtomC]);
    const Eigen::Vector3d o = v3(res[i][kAtomO]);
    const Eigen::Vector3d e1 = safe_normalized(c - ca);
    const Eigen::Vector3d u = n - ca;
    const Eigen::Vector3d e2 = safe_normalized(u - u.dot(e1) * e1);
    const Eigen::Vector3d e3 = e1.cross(e2);
    auto local = [&](const Eigen::Vector3d& v, double* dst) {
      const Eigen::Vector3d d = safe_normalized(v);
      dst[0] = d.dot(e1);
      dst[1] = d.dot(e2);
      dst[2] = d.dot(e3);
    };
    double* dirs = dih + 6;
    local(n - ca, dirs);
    local(o - ca, dirs + 3);
    if (i > 0) local(v3(res[i - 1][kAtomCA]) - ca, dirs + 6);
    if (i + 1 < L) local(v3(res[i + 1][kAtomCA]) - ca, dirs + 9);

    double* bonds = dirs + 12;
    bonds[0] = (n - ca).norm();
    bonds[1] = (c - ca).norm();
    bonds[2] = (o - c).norm();
  }
  return out;
}

}  // namespace condseq
