#pragma once

// Independent reference implementations used by the unit and acceptance tests. Nothing here calls into the
// library's numerical routines.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "capbound/tensors.hpp"

namespace oracle {

using capbound::DataBatch;
using capbound::KernelTensor;
using capbound::Padding;
using capbound::Sample;

inline KernelTensor random_kernel(std::mt19937_64& rng, std::size_t co, std::size_t ci, std::size_t kh,
                                  std::size_t kw, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  KernelTensor k(co, ci, kh, kw);
  for (auto& v : k.values()) v = nd(rng);
  return k;
}

inline Sample random_sample(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Sample s(c, h, w);
  for (auto& v : s.values()) v = nd(rng);
  return s;
}

inline DataBatch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  std::vector<Sample> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back(random_sample(rng, c, h, w));
  return DataBatch(std::move(xs));
}

inline long floor_div(long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

/// Coordinate-wise strided conv with 1-based indices and floor summation limits; zero padding is an indicator,
/// circular padding wraps.
inline Sample naive_conv(const KernelTensor& k, const Sample& x, long sh, long sw, Padding pad) {
  const long h = static_cast<long>(x.height()), w = static_cast<long>(x.width());
  const long kh = static_cast<long>(k.kh()), kw = static_cast<long>(k.kw());
  const long oh = (h + sh - 1) / sh, ow = (w + sw - 1) / sw;
  const long lo_i = floor_div(-(kh - 1), 2), hi_i = floor_div(kh - 1, 2);
  const long lo_j = floor_div(-(kw - 1), 2), hi_j = floor_div(kw - 1, 2);
  Sample y(k.c_out(), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow));
  for (std::size_t sigma = 0; sigma < k.c_out(); ++sigma)
    for (long mu = 1; mu <= oh; ++mu)
      for (long nu = 1; nu <= ow; ++nu) {
        double acc = 0.0;
        for (std::size_t r = 0; r < k.c_in(); ++r)
          for (long i = lo_i; i <= hi_i; ++i)
            for (long j = lo_j; j <= hi_j; ++j) {
              long p = 1 + sh * (mu - 1) + i, q = 1 + sw * (nu - 1) + j;
              if (pad == Padding::zero_same) {
                if (p < 1 || p > h || q < 1 || q > w) continue;
              } else {
                p = ((p - 1) % h + h) % h + 1;
                q = ((q - 1) % w + w) % w + 1;
              }
              acc += k(sigma, r, static_cast<std::size_t>(i - lo_i), static_cast<std::size_t>(j - lo_j)) *
                     x(r, static_cast<std::size_t>(p - 1), static_cast<std::size_t>(q - 1));
            }
        y(sigma, static_cast<std::size_t>(mu - 1), static_cast<std::size_t>(nu - 1)) = acc;
      }
  return y;
}

/// Dense matrix of the naive conv, built from basis inputs.
inline Eigen::MatrixXd naive_matrix(const KernelTensor& k, std::size_t h, std::size_t w, long sh, long sw,
                                    Padding pad) {
  const std::size_t n_in = k.c_in() * h * w;
  Eigen::MatrixXd m;
  for (std::size_t col = 0; col < n_in; ++col) {
    Sample e(k.c_in(), h, w);
    e.values()[col] = 1.0;
    Sample y = naive_conv(k, e, sh, sw, pad);
    if (m.size() == 0) m = Eigen::MatrixXd::Zero(static_cast<long>(y.size()), static_cast<long>(n_in));
    for (std::size_t r = 0; r < y.size(); ++r) m(static_cast<long>(r), static_cast<long>(col)) = y.values()[r];
  }
  return m;
}

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues();
}

/// Direct O(N^2) 2-D DFT of an h x w real grid.
inline std::vector<std::complex<double>> direct_dft2(const std::vector<double>& g, std::size_t h, std::size_t w) {
  std::vector<std::complex<double>> out(h * w);
  const double two_pi = 2.0 * std::acos(-1.0);
  for (std::size_t f1 = 0; f1 < h; ++f1)
    for (std::size_t f2 = 0; f2 < w; ++f2) {
      std::complex<double> acc = 0.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double ang = -two_pi * (static_cast<double>(f1 * y) / h + static_cast<double>(f2 * x) / w);
          acc += g[y * w + x] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      out[f1 * w + f2] = acc;
    }
  return out;
}

inline double fiber_norm_sum(const KernelTensor& k) {
  double s = 0.0;
  for (std::size_t o = 0; o < k.c_out(); ++o)
    for (std::size_t a = 0; a < k.kh(); ++a)
      for (std::size_t b = 0; b < k.kw(); ++b) {
        double q = 0.0;
        for (std::size_t i = 0; i < k.c_in(); ++i) q += k(o, i, a, b) * k(o, i, a, b);
        s += std::sqrt(q);
      }
  return s;
}

inline double frob_dist(const KernelTensor& a, const KernelTensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double fiber_norm_sum_diff(const KernelTensor& a, const KernelTensor& c) {
  KernelTensor d = a;
  for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] -= c.values()[i];
  return fiber_norm_sum(d);
}

/// Max patch norm over every output position, enumerating each kernel window explicitly.
inline double patch_norm_enum(const Sample& x, long kh, long kw, long sh, long sw, Padding pad) {
  const long h = static_cast<long>(x.height()), w = static_cast<long>(x.width());
  const long lo_i = floor_div(-(kh - 1), 2), lo_j = floor_div(-(kw - 1), 2);
  double best = 0.0;
  for (long mu = 0; mu < (h + sh - 1) / sh; ++mu)
    for (long nu = 0; nu < (w + sw - 1) / sw; ++nu) {
      double q = 0.0;
      for (std::size_t c = 0; c < x.channels(); ++c)
        for (long i = 0; i < kh; ++i)
          for (long j = 0; j < kw; ++j) {
            long p = mu * sh + lo_i + i, r = nu * sw + lo_j + j;
            if (pad == Padding::zero_same) {
              if (p < 0 || p >= h || r < 0 || r >= w) continue;
            } else {
              p = (p % h + h) % h;
              r = (r % w + w) % w;
            }
            double v = x(c, static_cast<std::size_t>(p), static_cast<std::size_t>(r));
            q += v * v;
          }
      best = std::max(best, std::sqrt(q));
    }
  return best;
}

/// Projection onto the (2,1) ball by bisection on the soft-threshold level.
inline KernelTensor l21_bisection(const KernelTensor& k, const KernelTensor& center, double b) {
  KernelTensor d = k;
  for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] -= center.values()[i];
  if (fiber_norm_sum(d) <= b) return k;
  std::vector<double> norms;
  for (std::size_t o = 0; o < d.c_out(); ++o)
    for (std::size_t a = 0; a < d.kh(); ++a)
      for (std::size_t bb = 0; bb < d.kw(); ++bb) {
        double q = 0.0;
        for (std::size_t i = 0; i < d.c_in(); ++i) q += d(o, i, a, bb) * d(o, i, a, bb);
        norms.push_back(std::sqrt(q));
      }
  double lo = 0.0, hi = *std::max_element(norms.begin(), norms.end());
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi), s = 0.0;
    for (double v : norms) s += std::max(0.0, v - mid);
    (s > b ? lo : hi) = mid;
  }
  const double lam = 0.5 * (lo + hi);
  KernelTensor out = center;
  std::size_t idx = 0;
  for (std::size_t o = 0; o < d.c_out(); ++o)
    for (std::size_t a = 0; a < d.kh(); ++a)
      for (std::size_t bb = 0; bb < d.kw(); ++bb, ++idx) {
        double f = norms[idx] > 0 ? std::max(0.0, 1.0 - lam / norms[idx]) : 0.0;
        for (std::size_t i = 0; i < d.c_in(); ++i) out(o, i, a, bb) += f * d(o, i, a, bb);
      }
  return out;
}

/// Projection of p onto {|z - c1| <= r1} intersect {|z - c2| <= r2} in the plane, analytic.
inline Eigen::Vector2d lens_projection(const Eigen::Vector2d& p, const Eigen::Vector2d& c1, double r1,
                                       const Eigen::Vector2d& c2, double r2) {
  auto in = [&](const Eigen::Vector2d& z) {
    return (z - c1).norm() <= r1 * (1 + 1e-12) && (z - c2).norm() <= r2 * (1 + 1e-12);
  };
  if (in(p)) return p;
  Eigen::Vector2d q1 = c1 + r1 * (p - c1).normalized();
  if ((p - c1).norm() > r1 && in(q1)) return q1;
  Eigen::Vector2d q2 = c2 + r2 * (p - c2).normalized();
  if ((p - c2).norm() > r2 && in(q2)) return q2;
  // Nearest corner of the lens.
  const double d = (c2 - c1).norm();
  const double a = (r1 * r1 - r2 * r2 + d * d) / (2 * d);
  const double hh = std::sqrt(std::max(0.0, r1 * r1 - a * a));
  Eigen::Vector2d u = (c2 - c1) / d, v(-u.y(), u.x());
  Eigen::Vector2d m = c1 + a * u;
  Eigen::Vector2d x1 = m + hh * v, x2 = m - hh * v;
  return (p - x1).norm() <= (p - x2).norm() ? x1 : x2;
}

inline double harmonic(std::uint64_t m) {
  long double s = 0;
  for (std::uint64_t k = m; k >= 1; --k) s += 1.0L / static_cast<long double>(k);
  return static_cast<double>(s);
}

/// Exact binomial through Pascal's triangle.
inline unsigned __int128 pascal(unsigned n, unsigned k) {
  std::vector<unsigned __int128> row(n + 1, 0);
  row[0] = 1;
  for (unsigned i = 1; i <= n; ++i)
    for (unsigned j = i; j >= 1; --j) row[j] += row[j - 1];
  return row[k];
}

inline unsigned __int128 ipow(unsigned __int128 b, unsigned e) {
  unsigned __int128 r = 1;
  while (e--) r *= b;
  return r;
}

/// Frozen high-precision reference values (mpmath, 30 digits).
constexpr double zeta_3_2 = 2.6123753486854883433485675679;          // zeta(3/2, 1)
constexpr double zeta_3_2_q2 = 1.6123753486854883433485675679;       // zeta(3/2, 2)
constexpr double zeta_3_2_q1p1 = 2.4301989133918095226859525845;     // zeta(3/2, 1.1)
constexpr double zeta_2_q3 = 0.39493406684822643647241516665;        // zeta(2, 3)
constexpr double zeta_4_q0p5 = 16.234848505667072872740055448;       // zeta(4, 0.5)
constexpr double psi_1 = 1.8937499110076971415933231352;             // psi(1)
constexpr double psi_10 = 2.4894671920590400271119616529;            // psi(10)

}  // namespace oracle
