#include "capbound/lipschitz.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <random>

#include <unsupported/Eigen/FFT>

#include "capbound/errors.hpp"

namespace capbound {

std::string to_string(SpectralMethod m) {
  switch (m) {
    case SpectralMethod::power_iteration: return "power_iteration";
    case SpectralMethod::fft_exact: return "fft_exact";
    case SpectralMethod::dense_svd: return "dense_svd";
  }
  return "unknown";
}

namespace {

// Power iteration on A^T A given matvec closures; x is normalized each step.
SpectralEstimate power_iterate(std::size_t dim, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fwd,
                               const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& adj,
                               const PowerIterationOptions& opts) {
  if (!(opts.tol > 0) || opts.max_iters < 1) throw UsageError("power iteration needs tol > 0 and max_iters >= 1");
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = nd(rng);
  x.normalize();
  SpectralEstimate est;
  est.method = SpectralMethod::power_iteration;
  double lambda_prev = -1.0;
  for (int it = 1; it <= opts.max_iters; ++it) {
    Eigen::VectorXd y = fwd(x);
    double lambda = y.squaredNorm();
    est.iterations_used = it;
    if (lambda == 0.0) {
      est.value = 0.0;
      est.residual = 0.0;
      return est;
    }
    Eigen::VectorXd z = adj(y);
    double change = lambda_prev < 0 ? 1.0 : std::abs(lambda - lambda_prev) / lambda;
    est.value = std::sqrt(lambda);
    est.residual = change;
    if (!std::isfinite(lambda)) throw NumericalError("power iteration diverged");
    if (change < opts.tol) break;
    lambda_prev = lambda;
    x = z / z.norm();
  }
  return est;
}

Eigen::VectorXd to_vec(const Sample& s) {
  auto v = s.values();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Sample to_sample(const Eigen::VectorXd& v, std::size_t c, std::size_t h, std::size_t w) {
  return Sample({c, h, w}, std::vector<double>(v.data(), v.data() + v.size()));
}

// In-place 2-D DFT of a row-major h x w complex plane.
void dft2(std::vector<std::complex<double>>& plane, std::size_t h, std::size_t w, bool inverse) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in, out;
  in.resize(w);
  // Length-1 transforms are the identity and trip up the FFT backend.
  for (std::size_t p = 0; p < h && w > 1; ++p) {
    std::copy(plane.begin() + static_cast<long>(p * w), plane.begin() + static_cast<long>((p + 1) * w), in.begin());
    if (inverse) fft.inv(out, in); else fft.fwd(out, in);
    std::copy(out.begin(), out.end(), plane.begin() + static_cast<long>(p * w));
  }
  in.resize(h);
  for (std::size_t q = 0; q < w && h > 1; ++q) {
    for (std::size_t p = 0; p < h; ++p) in[p] = plane[p * w + q];
    if (inverse) fft.inv(out, in); else fft.fwd(out, in);
    for (std::size_t p = 0; p < h; ++p) plane[p * w + q] = out[p];
  }
}

}  // namespace

SpectralEstimate power_iteration(const KernelTensor& k, const ConvSpec& spec, const PowerIterationOptions& opts) {
  spec.validate();
  const std::size_t oc = k.c_out(), oh = spec.out_h(), ow = spec.out_w();
  auto fwd = [&](const Eigen::VectorXd& x) {
    return to_vec(conv_forward(k, spec, to_sample(x, spec.c_in, spec.h, spec.w)));
  };
  auto adj = [&](const Eigen::VectorXd& y) { return to_vec(conv_adjoint(k, spec, to_sample(y, oc, oh, ow))); };
  return power_iterate(spec.input_size(), fwd, adj, opts);
}

SpectralEstimate power_iteration(const DenseMatrix& a, const PowerIterationOptions& opts) {
  auto fwd = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x; };
  auto adj = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd { return a.transpose() * y; };
  return power_iterate(static_cast<std::size_t>(a.cols()), fwd, adj, opts);
}

std::vector<Eigen::MatrixXcd> frequency_matrices(const KernelTensor& k, const ConvSpec& spec) {
  spec.validate();
  if (!spec.fft_eligible()) throw UsageError("exact spectrum needs circular padding, stride 1 and kernel within the grid");
  if (k.c_in() != spec.c_in || k.kh() != spec.kh || k.kw() != spec.kw)
    throw UsageError("kernel shape does not match conv spec");
  const std::size_t h = spec.h, w = spec.w;
  const long offh = kernel_offset(k.kh()), offw = kernel_offset(k.kw());
  std::vector<Eigen::MatrixXcd> mats(h * w, Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(k.c_out()),
                                                                    static_cast<Eigen::Index>(k.c_in())));
  std::vector<std::complex<double>> plane(h * w);
  for (std::size_t o = 0; o < k.c_out(); ++o)
    for (std::size_t i = 0; i < k.c_in(); ++i) {
      std::fill(plane.begin(), plane.end(), std::complex<double>(0.0));
      for (std::size_t a = 0; a < k.kh(); ++a)
        for (std::size_t b = 0; b < k.kw(); ++b) {
          long p = ((static_cast<long>(a) + offh) % static_cast<long>(h) + static_cast<long>(h)) % static_cast<long>(h);
          long q = ((static_cast<long>(b) + offw) % static_cast<long>(w) + static_cast<long>(w)) % static_cast<long>(w);
          plane[static_cast<std::size_t>(p) * w + static_cast<std::size_t>(q)] += k(o, i, a, b);
        }
      dft2(plane, h, w, false);
      for (std::size_t f = 0; f < h * w; ++f) mats[f](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) = plane[f];
    }
  return mats;
}

KernelTensor kernel_from_frequency_matrices(const std::vector<Eigen::MatrixXcd>& mats, std::size_t h, std::size_t w) {
  if (mats.size() != h * w || mats.empty()) throw UsageError("frequency matrix count does not match grid");
  const std::size_t co = static_cast<std::size_t>(mats[0].rows()), ci = static_cast<std::size_t>(mats[0].cols());
  KernelTensor g(co, ci, h, w);
  const long offh = kernel_offset(h), offw = kernel_offset(w);
  std::vector<std::complex<double>> plane(h * w);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i) {
      for (std::size_t f = 0; f < h * w; ++f) plane[f] = mats[f](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i));
      dft2(plane, h, w, true);
      for (std::size_t a = 0; a < h; ++a)
        for (std::size_t b = 0; b < w; ++b) {
          long p = ((static_cast<long>(a) + offh) % static_cast<long>(h) + static_cast<long>(h)) % static_cast<long>(h);
          long q = ((static_cast<long>(b) + offw) % static_cast<long>(w) + static_cast<long>(w)) % static_cast<long>(w);
          g(o, i, a, b) = plane[static_cast<std::size_t>(p) * w + static_cast<std::size_t>(q)].real();
        }
    }
  return g;
}

Spectrum fft_exact_spectrum(const KernelTensor& k, const ConvSpec& spec) {
  auto mats = frequency_matrices(k, spec);
  Spectrum s;
  s.values.reserve(mats.size() * static_cast<std::size_t>(std::min(mats[0].rows(), mats[0].cols())));
  for (const auto& m : mats) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
    for (Eigen::Index j = 0; j < svd.singularValues().size(); ++j) s.values.push_back(svd.singularValues()[j]);
  }
  std::sort(s.values.begin(), s.values.end(), std::greater<>());
  s.max = s.values.empty() ? 0.0 : s.values.front();
  return s;
}

double dense_spectral_norm(const DenseMatrix& a) {
  if (a.size() == 0) return 0.0;
  require_finite(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())), "matrix");
  Eigen::BDCSVD<DenseMatrix> svd(a);
  return svd.singularValues()[0];
}

SpectralEstimate lipschitz_constant(const KernelTensor& k, const ConvSpec& spec, const PowerIterationOptions& opts) {
  if (spec.fft_eligible()) {
    SpectralEstimate e;
    e.value = fft_exact_spectrum(k, spec).max;
    e.method = SpectralMethod::fft_exact;
    return e;
  }
  return power_iteration(k, spec, opts);
}

}  // namespace capbound
