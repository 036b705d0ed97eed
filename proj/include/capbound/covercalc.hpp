#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "capbound/capacity.hpp"
#include "capbound/convop.hpp"
#include "capbound/tensors.hpp"

namespace capbound {

/// Log covering bound of a layer family given the norm of its input data and a radius.
using LeafCoverFn = std::function<double(double data_norm, double radius)>;

struct LayerFamily {
  std::string name;
  double lipschitz = 1.0;  // s
  double distance = 0.0;   // b
  double param_count = 1;  // W
  LeafCoverFn cover;       // empty: single-layer bound with the tree's variant
};

enum class NodeKind { layer, fixed, compose, sum, concat };

struct ArchNode {
  NodeKind kind = NodeKind::fixed;
  std::string name;
  LayerFamily family;     // layer nodes
  double lipschitz = 1.0; // fixed nodes
  std::vector<ArchNode> children;

  static ArchNode layer(LayerFamily f);
  static ArchNode fixed(std::string name, double lip);
  static ArchNode compose(std::vector<ArchNode> children);
  static ArchNode sum(std::vector<ArchNode> children);
  static ArchNode concat(std::vector<ArchNode> children);

  /// Throws UsageError on malformed trees.
  void validate() const;
  double lipschitz_bound() const;
};

struct CoverPiece {
  double radius = 0.0;
  double log_cover = 0.0;
  double lipschitz = 1.0;
  bool singleton = false;
};

/// Children ordered input to output.
CoverPiece compose_rule(const std::vector<CoverPiece>& children);
CoverPiece sum_rule(const std::vector<CoverPiece>& children);
CoverPiece concat_rule(const std::vector<CoverPiece>& children);

struct LeafPlacement {
  std::string name;
  double prefix_lip = 1.0;    // Lipschitz product between the network input and the leaf input
  double trailing_lip = 1.0;  // radius multiplier from leaf output to network output
  double lipschitz = 1.0, distance = 0.0, param_count = 1;
};

std::vector<LeafPlacement> leaf_placements(const ArchNode& tree);

enum class AllocationScheme { norm_weighted, uniform };
AllocationScheme parse_allocation_scheme(const std::string& name);

struct CoverBudget {
  std::vector<std::string> names;
  std::vector<double> leaf_radius;  // zero only for leaves with zero distance bound
  double total_radius = 0.0;        // recomputed through the composition rules
};

CoverBudget allocate_radii(const ArchNode& tree, double eps, AllocationScheme scheme);

struct DataSummary {
  std::size_t n = 1;
  double norm = 0.0;
};

struct LeafBound {
  std::string name;
  double capacity = 0.0;   // 2 |X|/sqrt(n) * prefix * trailing * b
  double radius = 0.0;     // allocated radius
  double log_cover = 0.0;  // leaf bound at half the allocated radius
};

struct TreeBound {
  double log_cover = 0.0;            // closed form over leaf capacities
  double allocated_log_cover = 0.0;  // leaf bounds at allocated radii combined by the rules
  double allocated_radius = 0.0;
  std::vector<LeafBound> leaves;
};

TreeBound evaluate_tree(const ArchNode& tree, double eps, const DataSummary& data, CoverVariant variant,
                        AllocationScheme scheme);

/// Tree for the residual architecture described by `in` (shortcut summed with the layer chain).
ArchNode residual_tree(const CapacityInput& in);
/// ResNet18-shaped capacity input with the given per-layer Lipschitz and distance constraints.
CapacityInput resnet18_input(double s, double b, std::size_t n, double data_norm, double gamma, std::size_t classes);

// Oracles ----------------------------------------------------------------------

struct CoverCounts {
  std::size_t internal = 0;
  std::size_t external = 0;  // over the candidate centers; 0 when none supplied
};

CoverCounts brute_force_cover(const std::vector<Eigen::VectorXd>& points, double eps,
                              const std::vector<Eigen::VectorXd>& candidates = {});

struct MaureyReport {
  std::size_t m = 0;
  std::size_t basis_size = 0;  // 2W
  unsigned __int128 cardinality = 0;
  unsigned __int128 closed_form = 0;   // C(m + 2W - 1, 2W - 1)
  unsigned __int128 bound_pow_2w = 0;  // (2W)^m
  unsigned __int128 bound_pow_m = 0;   // (1 + m)^{2W - 1}
  double worst_distance = 0.0;         // max over sampled kernels of the distance to the nearest element
  double eps = 0.0;
  std::size_t kernels_checked = 0;
  bool all_within = false;
  bool cardinality_ok() const;
};

MaureyReport maurey_cover_oracle(const ConvSpec& spec, std::size_t c_out, double b, const DataBatch& x, double eps,
                                 std::size_t kernels = 100, std::uint64_t seed = 0);

struct RademacherEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Rows of `values` are functions, columns the n sample points.
RademacherEstimate sampled_rademacher(const Eigen::MatrixXd& values, std::size_t trials, std::uint64_t seed = 0);

}  // namespace capbound
