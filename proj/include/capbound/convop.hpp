#pragma once

#include <cstddef>
#include <optional>

#include "capbound/tensors.hpp"

namespace capbound {

struct ConvSpec {
  std::size_t c_in = 1, h = 1, w = 1;
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  Padding padding = Padding::circular;

  std::size_t out_h() const { return (h + sh - 1) / sh; }
  std::size_t out_w() const { return (w + sw - 1) / sw; }
  std::size_t input_size() const { return c_in * h * w; }

  /// Throws UsageError when the spec violates its invariants.
  void validate() const;
  /// Circular, stride 1, kernel within the grid: the exact spectral machinery applies.
  bool fft_eligible() const;
};

/// Spec for kernel k acting on inputs of spatial size h x w.
ConvSpec make_spec(const KernelTensor& k, std::size_t h, std::size_t w, std::size_t stride = 1,
                   Padding padding = Padding::circular);

Sample conv_forward(const KernelTensor& k, const ConvSpec& spec, const Sample& x);
Sample conv_adjoint(const KernelTensor& k, const ConvSpec& spec, const Sample& y);
/// Gradient of <y_grad, conv_forward(K, x)> with respect to K.
KernelTensor conv_weight_grad(const KernelTensor& k, const ConvSpec& spec, const Sample& x,
                              const Sample& y_grad);

/// Full-grid kernel (c_out, c_in, h, w) acting identically to k under circular padding.
KernelTensor embed_in_grid(const KernelTensor& k, std::size_t h, std::size_t w);
/// Inverse of embed_in_grid; entries outside the (kh, kw) window are dropped.
KernelTensor crop_from_grid(const KernelTensor& grid, std::size_t kh, std::size_t kw);
/// Grid rows [first, first + k) hold the window of a size-k kernel embedded in size n.
inline std::size_t grid_window_start(std::size_t n, std::size_t k) { return n / 2 - k / 2; }

/// Default entry cap for materialize, overridable via CAPBOUND_MATERIALIZE_CAP.
std::size_t materialize_cap();
DenseMatrix materialize(const KernelTensor& k, const ConvSpec& spec,
                        std::optional<std::size_t> cap = std::nullopt);

struct NormIdentityReport {
  double measured_21 = 0, predicted_21 = 0;
  double measured_fro = 0, predicted_fro = 0;
  double measured_1inf = 0, predicted_1inf = 0;
  double inequality_lhs = 0, inequality_rhs = 0;
  bool agree = false;
  bool inequality_holds = false;
};

/// Checks the closed forms of the (2,1), Frobenius and (1,inf) norms of M_K.
NormIdentityReport mk_norm_identities(const KernelTensor& k, const ConvSpec& spec);

}  // namespace capbound
