#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "capbound/capacity.hpp"
#include "capbound/convop.hpp"
#include "capbound/tensors.hpp"

namespace capbound {

enum class BlockShortcut { none, identity, shifted_pool };

BlockShortcut parse_block_shortcut(const std::string& name);
std::string to_string(BlockShortcut s);
/// 0, 1 and sqrt(2) respectively.
double shortcut_lipschitz(BlockShortcut s);

/// Conv layer followed by ReLU (or nothing) and an optional 3x3 stride-2 max-pool.
struct LayerDoc {
  std::string name;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Padding padding = Padding::circular;
  bool pool = false;
  bool relu = true;
  double lipschitz_constraint = std::numeric_limits<double>::infinity();
  double distance_constraint = std::numeric_limits<double>::infinity();

  /// Activation (1) times the pool factor 2.
  double nonlinearity_lipschitz() const { return pool ? 2.0 : 1.0; }
};

/// out = shortcut(x) + chain(x); the block nonlinearity is the identity.
struct BlockDoc {
  std::vector<LayerDoc> layers;
  BlockShortcut shortcut = BlockShortcut::none;
};

struct ArchDoc {
  std::size_t in_channels = 1, height = 8, width = 8;
  std::size_t classes = 2;
  std::vector<BlockDoc> blocks;
};

/// Resolved shapes for one conv layer.
struct LayerShape {
  std::size_t block = 0, index = 0;
  ConvSpec spec;
  std::size_t out_channels = 1;
  std::array<std::size_t, 3> out_shape{};  // after ReLU and pooling
  std::array<std::size_t, 4> kernel_shape() const { return {out_channels, spec.c_in, spec.kh, spec.kw}; }
};

struct ArchShapes {
  std::vector<LayerShape> layers;           // flattened in forward order
  std::array<std::size_t, 3> feature_shape{};  // input to the head
};

/// Validates the document and infers every layer's input geometry.
ArchShapes resolve_shapes(const ArchDoc& doc);

/// Rows are kappa unit vertices of a centered regular simplex, embedded in the first kappa-1 of `dim` coordinates.
DenseMatrix simplex_classifier(std::size_t classes, std::size_t dim);

/// Output size of the 3x3 stride-2 pool with -inf padding.
inline std::size_t pooled_size(std::size_t n) { return (n + 1) / 2; }

std::string archdoc_to_json(const ArchDoc& doc, int indent = 2);
ArchDoc archdoc_from_json(const std::string& text);
ArchDoc load_archdoc(const std::string& path);
void save_archdoc(const ArchDoc& doc, const std::string& path);

}  // namespace capbound
