#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "capbound/convop.hpp"
#include "capbound/tensors.hpp"

namespace capbound {

enum class SpectralMethod { power_iteration, fft_exact, dense_svd };

std::string to_string(SpectralMethod m);

struct SpectralEstimate {
  double value = 0.0;
  SpectralMethod method = SpectralMethod::power_iteration;
  int iterations_used = 0;
  double residual = 0.0;
};

struct PowerIterationOptions {
  double tol = 1e-6;
  int max_iters = 1000;
  std::uint64_t seed = 0;
};

SpectralEstimate power_iteration(const KernelTensor& k, const ConvSpec& spec,
                                 const PowerIterationOptions& opts = {});
SpectralEstimate power_iteration(const DenseMatrix& a, const PowerIterationOptions& opts = {});

/// Per-frequency c_out x c_in matrices of a circular stride-1 conv, frequency index f1 * w + f2.
std::vector<Eigen::MatrixXcd> frequency_matrices(const KernelTensor& k, const ConvSpec& spec);
/// Full-grid kernel (c_out, c_in, h, w) whose frequency matrices are `mats`.
KernelTensor kernel_from_frequency_matrices(const std::vector<Eigen::MatrixXcd>& mats, std::size_t h,
                                            std::size_t w);

struct Spectrum {
  std::vector<double> values;  // sorted descending
  double max = 0.0;
};

Spectrum fft_exact_spectrum(const KernelTensor& k, const ConvSpec& spec);

double dense_spectral_norm(const DenseMatrix& a);

/// Exact FFT value where eligible, power iteration otherwise.
SpectralEstimate lipschitz_constant(const KernelTensor& k, const ConvSpec& spec,
                                    const PowerIterationOptions& opts = {});

}  // namespace capbound
