#include "capbound/convop.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "capbound/errors.hpp"

namespace capbound {

void ConvSpec::validate() const {
  if (c_in == 0 || h == 0 || w == 0) throw UsageError("conv input extents must be >= 1");
  if (kh == 0 || kw == 0) throw UsageError("conv kernel extents must be >= 1");
  if (sh == 0 || sw == 0) throw UsageError("conv strides must be >= 1");
  if (padding == Padding::circular && (kh > h || kw > w))
    throw UsageError("circular padding needs kernel no larger than the input");
}

bool ConvSpec::fft_eligible() const {
  return padding == Padding::circular && sh == 1 && sw == 1 && kh <= h && kw <= w;
}

ConvSpec make_spec(const KernelTensor& k, std::size_t h, std::size_t w, std::size_t stride,
                   Padding padding) {
  ConvSpec s;
  s.c_in = k.c_in();
  s.h = h;
  s.w = w;
  s.kh = k.kh();
  s.kw = k.kw();
  s.sh = s.sw = stride;
  s.padding = padding;
  s.validate();
  return s;
}

namespace {

void check_kernel(const KernelTensor& k, const ConvSpec& spec) {
  spec.validate();
  if (k.c_in() != spec.c_in || k.kh() != spec.kh || k.kw() != spec.kw)
    throw UsageError("kernel shape does not match conv spec");
}

// Calls f(o, r, a, b, mu, nu, p, q) for every nonzero coupling of the conv.
template <class F>
void for_each_tap(const ConvSpec& spec, F&& f) {
  const long h = static_cast<long>(spec.h), w = static_cast<long>(spec.w);
  const long offh = kernel_offset(spec.kh), offw = kernel_offset(spec.kw);
  const bool circ = spec.padding == Padding::circular;
  const std::size_t oh = spec.out_h(), ow = spec.out_w();
  for (std::size_t mu = 0; mu < oh; ++mu)
    for (std::size_t nu = 0; nu < ow; ++nu)
      for (std::size_t a = 0; a < spec.kh; ++a) {
        long p = static_cast<long>(mu * spec.sh + a) + offh;
        if (circ) p = ((p % h) + h) % h;
        else if (p < 0 || p >= h) continue;
        for (std::size_t b = 0; b < spec.kw; ++b) {
          long q = static_cast<long>(nu * spec.sw + b) + offw;
          if (circ) q = ((q % w) + w) % w;
          else if (q < 0 || q >= w) continue;
          f(a, b, mu, nu, static_cast<std::size_t>(p), static_cast<std::size_t>(q));
        }
      }
}

}  // namespace

Sample conv_forward(const KernelTensor& k, const ConvSpec& spec, const Sample& x) {
  check_kernel(k, spec);
  if (x.shape() != std::array<std::size_t, 3>{spec.c_in, spec.h, spec.w})
    throw UsageError("conv input shape mismatch");
  Sample y(k.c_out(), spec.out_h(), spec.out_w());
  for_each_tap(spec, [&](std::size_t a, std::size_t b, std::size_t mu, std::size_t nu,
                            std::size_t p, std::size_t q) {
    for (std::size_t o = 0; o < k.c_out(); ++o) {
      double s = 0.0;
      for (std::size_t r = 0; r < k.c_in(); ++r) s += k(o, r, a, b) * x(r, p, q);
      y(o, mu, nu) += s;
    }
  });
  return y;
}

Sample conv_adjoint(const KernelTensor& k, const ConvSpec& spec, const Sample& y) {
  check_kernel(k, spec);
  if (y.shape() != std::array<std::size_t, 3>{k.c_out(), spec.out_h(), spec.out_w()})
    throw UsageError("conv adjoint input shape mismatch");
  Sample x(spec.c_in, spec.h, spec.w);
  for_each_tap(spec, [&](std::size_t a, std::size_t b, std::size_t mu, std::size_t nu,
                            std::size_t p, std::size_t q) {
    for (std::size_t r = 0; r < k.c_in(); ++r) {
      double s = 0.0;
      for (std::size_t o = 0; o < k.c_out(); ++o) s += k(o, r, a, b) * y(o, mu, nu);
      x(r, p, q) += s;
    }
  });
  return x;
}

KernelTensor conv_weight_grad(const KernelTensor& k, const ConvSpec& spec, const Sample& x,
                              const Sample& y_grad) {
  check_kernel(k, spec);
  KernelTensor g(k.c_out(), k.c_in(), k.kh(), k.kw());
  for_each_tap(spec, [&](std::size_t a, std::size_t b, std::size_t mu, std::size_t nu,
                            std::size_t p, std::size_t q) {
    for (std::size_t o = 0; o < k.c_out(); ++o) {
      double gy = y_grad(o, mu, nu);
      if (gy == 0.0) continue;
      for (std::size_t r = 0; r < k.c_in(); ++r) g(o, r, a, b) += gy * x(r, p, q);
    }
  });
  return g;
}

KernelTensor embed_in_grid(const KernelTensor& k, std::size_t h, std::size_t w) {
  if (k.kh() > h || k.kw() > w) throw UsageError("kernel larger than the embedding grid");
  KernelTensor g(k.c_out(), k.c_in(), h, w);
  const std::size_t a0 = grid_window_start(h, k.kh()), b0 = grid_window_start(w, k.kw());
  for (std::size_t o = 0; o < k.c_out(); ++o)
    for (std::size_t i = 0; i < k.c_in(); ++i)
      for (std::size_t a = 0; a < k.kh(); ++a)
        for (std::size_t b = 0; b < k.kw(); ++b) g(o, i, a0 + a, b0 + b) = k(o, i, a, b);
  return g;
}

KernelTensor crop_from_grid(const KernelTensor& grid, std::size_t kh, std::size_t kw) {
  if (kh > grid.kh() || kw > grid.kw()) throw UsageError("crop window larger than the grid");
  KernelTensor k(grid.c_out(), grid.c_in(), kh, kw);
  const std::size_t a0 = grid_window_start(grid.kh(), kh), b0 = grid_window_start(grid.kw(), kw);
  for (std::size_t o = 0; o < k.c_out(); ++o)
    for (std::size_t i = 0; i < k.c_in(); ++i)
      for (std::size_t a = 0; a < kh; ++a)
        for (std::size_t b = 0; b < kw; ++b) k(o, i, a, b) = grid(o, i, a0 + a, b0 + b);
  return k;
}

std::size_t materialize_cap() {
  if (const char* env = std::getenv("CAPBOUND_MATERIALIZE_CAP")) {
    char* end = nullptr;
    double v = std::strtod(env, &end);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return 10'000'000;
}

DenseMatrix materialize(const KernelTensor& k, const ConvSpec& spec, std::optional<std::size_t> cap) {
  check_kernel(k, spec);
  const std::size_t rows = k.c_out() * spec.out_h() * spec.out_w();
  const std::size_t cols = spec.input_size();
  const std::size_t limit = cap.value_or(materialize_cap());
  if (rows * cols > limit)
    throw ResourceError("materialized matrix has " + std::to_string(rows * cols) +
                        " entries, cap is " + std::to_string(limit));
  DenseMatrix m = DenseMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const std::size_t oh = spec.out_h(), ow = spec.out_w();
  for_each_tap(spec, [&](std::size_t a, std::size_t b, std::size_t mu, std::size_t nu,
                            std::size_t p, std::size_t q) {
    for (std::size_t o = 0; o < k.c_out(); ++o)
      for (std::size_t r = 0; r < k.c_in(); ++r)
        m((o * oh + mu) * ow + nu, (r * spec.h + p) * spec.w + q) += k(o, r, a, b);
  });
  return m;
}

NormIdentityReport mk_norm_identities(const KernelTensor& k, const ConvSpec& spec) {
  check_kernel(k, spec);
  if (spec.padding != Padding::circular || spec.h != spec.w || spec.sh != spec.sw ||
      spec.h % spec.sh != 0 || spec.kh != spec.kw || spec.kh > spec.h)
    throw UsageError("norm identities need circular padding, square input, d % t == 0, square k <= d");
  const double d = static_cast<double>(spec.h), t = static_cast<double>(spec.sh),
               kk = static_cast<double>(spec.kh);
  DenseMatrix m = materialize(k, spec);
  NormIdentityReport r;
  r.measured_21 = group_norm_matrix_21(m);
  r.measured_fro = m.norm();
  r.measured_1inf = m.rowwise().lpNorm<1>().maxCoeff();
  double sum_l2 = 0.0;
  for (double v : outslice_l2(k)) sum_l2 += v;
  r.predicted_21 = (d / t) * (d / t) * sum_l2;
  r.predicted_fro = (d / t) * frobenius(k);
  r.predicted_1inf = max_outslice_l1(k);
  r.inequality_lhs = r.measured_21;
  r.inequality_rhs = std::pow(d / (t * kk), 2.0) * kk * group_norm_21(k);
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-8 * std::max({1.0, std::abs(a), std::abs(b)}); };
  r.agree = close(r.measured_21, r.predicted_21) && close(r.measured_fro, r.predicted_fro) &&
            close(r.measured_1inf, r.predicted_1inf);
  r.inequality_holds = r.inequality_lhs >= r.inequality_rhs * (1 - 1e-12);
  return r;
}

}  // namespace capbound
