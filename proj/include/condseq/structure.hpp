#pragma once

#include <cstddef>
#include <vector>

#include "condseq/seqcore.hpp"

namespace condseq {

/// Per-residue invariant geometry features, row-major [L, dim].
struct StructureFeatures {
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  const double* row(std::size_t i) const { return values.data() + i * dim; }
};

/// Sequence-neighbour window on each side used for CA-CA distances.
inline constexpr std::size_t kStructureNeighbors = 16;
/// 16 distances + 16 presence flags, 3 dihedral sin/cos pairs, four unit
/// vectors in the residue frame, three intra-residue bond lengths.
inline constexpr std::size_t kStructureFeatureDim = 2 * kStructureNeighbors + 6 + 12 + 3;

/// Deterministic stand-in for a learned structure encoder. Features use only
/// distances, dihedrals and directions expressed in each residue's N-CA-C
/// frame, so they are invariant to rigid motions of the input. Throws
/// StructureTooShort below 3 residues and InvalidSequence on non-finite
/// coordinates.
StructureFeatures featurize_structure(const BackboneStructure& structure);

/// Dihedral angle (radians) for four points.
double dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

}  // namespace condseq
