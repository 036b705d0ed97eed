#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "capbound/convop.hpp"
#include "capbound/tensors.hpp"

namespace capbound {

enum class ConstraintId { distance, spectral, support };

/// Constraints for one circular stride-1 conv layer; kernels live on the h x w grid while projecting.
struct ConstraintSet {
  KernelTensor reference;  // same shape as the layer kernel (K0 or zeros)
  double distance_bound = std::numeric_limits<double>::infinity();
  double lipschitz_bound = std::numeric_limits<double>::infinity();
  ConvSpec spec;  // kernel_shape of the spec is the support window
  std::vector<ConstraintId> order{ConstraintId::distance, ConstraintId::spectral, ConstraintId::support};

  void validate() const;
};

std::vector<ConstraintId> parse_projection_order(const std::string& text);

KernelTensor project_l21_ball(const KernelTensor& k, const KernelTensor& center, double b);
/// Result lives on the full h x w grid of `spec`.
KernelTensor project_spectral(const KernelTensor& k, const ConvSpec& spec, double s);
KernelTensor project_support(const KernelTensor& grid, std::size_t kh, std::size_t kw);

struct Violation {
  double distance_excess = 0.0;   // max(0, ||K - K0||_{2,1} - b)
  double lipschitz_excess = 0.0;  // max(0, Lip - s)
  double relative() const;        // excesses divided by their bounds, maximum of the two
  double distance_bound = 0.0, lipschitz_bound = 0.0;
};

Violation measure_violation(const KernelTensor& k, const ConstraintSet& c);

struct FeasibilityReport {
  Violation final;
  std::vector<Violation> trajectory;  // one entry per cycle
  std::vector<double> step_distance;  // Frobenius change per cycle (diagnostic)
};

struct ProjectionResult {
  KernelTensor kernel;
  FeasibilityReport report;
};

ProjectionResult alternating_projections(const KernelTensor& k, const ConstraintSet& c, int rounds);
ProjectionResult dykstra(const KernelTensor& k, const ConstraintSet& c, int iterations = 100);

enum class RadialNorm { l21, spectral };

/// Radial shrink toward `center`; spectral needs `spec` for the Lipschitz constant of K - center.
KernelTensor radial_project(const KernelTensor& k, const KernelTensor& center, double radius, RadialNorm norm,
                            const ConvSpec* spec = nullptr);

/// Radial point of the joint constraints: shrink toward the reference until both constraints hold.
ProjectionResult radial_joint(const KernelTensor& k, const ConstraintSet& c);

KernelTensor init_scale_to_feasible(const KernelTensor& k0, const ConvSpec& spec, double s);

}  // namespace capbound
