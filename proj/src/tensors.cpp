#include "capbound/tensors.hpp"

#include <algorithm>
#include <cmath>

#include "capbound/errors.hpp"

namespace capbound {

Padding parse_padding(const std::string& name) {
  if (name == "zero_same" || name == "zero") return Padding::zero_same;
  if (name == "circular") return Padding::circular;
  throw UsageError("unknown padding '" + name + "'");
}

std::string to_string(Padding p) { return p == Padding::circular ? "circular" : "zero_same"; }

void require_finite(std::span<const double> values, const std::string& what) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericalError(what + ": non-finite entry");
}

KernelTensor::KernelTensor(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw)
    : shape_{c_out, c_in, kh, kw} {
  if (c_out == 0 || c_in == 0 || kh == 0 || kw == 0)
    throw UsageError("kernel extents must be >= 1");
  data_.assign(c_out * c_in * kh * kw, 0.0);
}

KernelTensor::KernelTensor(std::array<std::size_t, 4> shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0 || shape[3] == 0)
    throw UsageError("kernel extents must be >= 1");
  if (data_.size() != shape[0] * shape[1] * shape[2] * shape[3])
    throw UsageError("kernel value count does not match shape");
  require_finite(data_, "kernel");
}

KernelTensor& KernelTensor::operator+=(const KernelTensor& other) {
  if (!same_shape(other)) throw UsageError("kernel shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

KernelTensor& KernelTensor::operator-=(const KernelTensor& other) {
  if (!same_shape(other)) throw UsageError("kernel shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

KernelTensor& KernelTensor::operator*=(double alpha) {
  for (double& v : data_) v *= alpha;
  return *this;
}

KernelTensor operator+(KernelTensor a, const KernelTensor& b) { return a += b; }
KernelTensor operator-(KernelTensor a, const KernelTensor& b) { return a -= b; }
KernelTensor operator*(double alpha, KernelTensor a) { return a *= alpha; }

Sample::Sample(std::size_t c, std::size_t h, std::size_t w) : shape_{c, h, w} {
  if (c == 0 || h == 0 || w == 0) throw UsageError("sample extents must be >= 1");
  data_.assign(c * h * w, 0.0);
}

Sample::Sample(std::array<std::size_t, 3> shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0)
    throw UsageError("sample extents must be >= 1");
  if (data_.size() != shape[0] * shape[1] * shape[2])
    throw UsageError("sample value count does not match shape");
}

double dot(const Sample& a, const Sample& b) {
  if (a.shape() != b.shape()) throw UsageError("sample shape mismatch");
  double s = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return s;
}

double norm2(const Sample& a) { return std::sqrt(dot(a, a)); }

DataBatch::DataBatch(std::vector<Sample> samples) : samples_(std::move(samples)) {
  if (samples_.empty()) throw UsageError("data batch must contain at least one sample");
  double sq = 0.0;
  for (const auto& s : samples_) {
    if (s.shape() != samples_.front().shape()) throw UsageError("data batch samples differ in shape");
    require_finite(s.values(), "data sample");
    sq += dot(s, s);
  }
  norm_ = std::sqrt(sq);
}

SliceNorm parse_slice_norm(const std::string& name) {
  if (name == "l1_outslice") return SliceNorm::l1_outslice;
  if (name == "l2_outslice") return SliceNorm::l2_outslice;
  if (name == "frobenius") return SliceNorm::frobenius;
  if (name == "max_l1_outslice") return SliceNorm::max_l1_outslice;
  throw UsageError("unknown slice norm kind '" + name + "'");
}

double group_norm_21(const KernelTensor& k) {
  double total = 0.0;
  for (std::size_t o = 0; o < k.c_out(); ++o)
    for (std::size_t a = 0; a < k.kh(); ++a)
      for (std::size_t b = 0; b < k.kw(); ++b) {
        double sq = 0.0;
        for (std::size_t i = 0; i < k.c_in(); ++i) sq += k(o, i, a, b) * k(o, i, a, b);
        total += std::sqrt(sq);
      }
  return total;
}

double group_norm_matrix_21(const DenseMatrix& a) { return a.rowwise().norm().sum(); }

std::vector<double> outslice_l2(const KernelTensor& k) {
  std::vector<double> out(k.c_out(), 0.0);
  std::size_t per = k.size() / k.c_out();
  auto v = k.values();
  for (std::size_t o = 0; o < k.c_out(); ++o) {
    double sq = 0.0;
    for (std::size_t j = 0; j < per; ++j) sq += v[o * per + j] * v[o * per + j];
    out[o] = std::sqrt(sq);
  }
  return out;
}

std::vector<double> outslice_l1(const KernelTensor& k) {
  std::vector<double> out(k.c_out(), 0.0);
  std::size_t per = k.size() / k.c_out();
  auto v = k.values();
  for (std::size_t o = 0; o < k.c_out(); ++o)
    for (std::size_t j = 0; j < per; ++j) out[o] += std::abs(v[o * per + j]);
  return out;
}

double frobenius(const KernelTensor& k) {
  double sq = 0.0;
  for (double v : k.values()) sq += v * v;
  return std::sqrt(sq);
}

double max_outslice_l1(const KernelTensor& k) {
  auto l1 = outslice_l1(k);
  return *std::max_element(l1.begin(), l1.end());
}

std::vector<double> slice_norms(const KernelTensor& k, SliceNorm kind) {
  switch (kind) {
    case SliceNorm::l1_outslice: return outslice_l1(k);
    case SliceNorm::l2_outslice: return outslice_l2(k);
    case SliceNorm::frobenius: return {frobenius(k)};
    case SliceNorm::max_l1_outslice: return {max_outslice_l1(k)};
  }
  throw UsageError("unknown slice norm kind");
}

double data_norm(const DataBatch& x) { return x.norm(); }

double max_abs_entry(const DataBatch& x) {
  double m = 0.0;
  for (const auto& s : x.samples())
    for (double v : s.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_patch_norm(const Sample& x, const PatchGeometry& g) {
  const long h = static_cast<long>(x.height()), w = static_cast<long>(x.width());
  if (g.kh == 0 || g.kw == 0 || g.sh == 0 || g.sw == 0)
    throw UsageError("patch extents and strides must be >= 1");
  if (static_cast<long>(g.kh) > h || static_cast<long>(g.kw) > w)
    throw UsageError("patch larger than the spatial extent");
  const long oh = (h + static_cast<long>(g.sh) - 1) / static_cast<long>(g.sh);
  const long ow = (w + static_cast<long>(g.sw) - 1) / static_cast<long>(g.sw);
  const long offh = kernel_offset(g.kh), offw = kernel_offset(g.kw);
  double best = 0.0;
  for (long mu = 0; mu < oh; ++mu)
    for (long nu = 0; nu < ow; ++nu) {
      double sq = 0.0;
      for (long a = 0; a < static_cast<long>(g.kh); ++a)
        for (long b = 0; b < static_cast<long>(g.kw); ++b) {
          long p = mu * static_cast<long>(g.sh) + a + offh;
          long q = nu * static_cast<long>(g.sw) + b + offw;
          if (g.padding == Padding::circular) {
            p = ((p % h) + h) % h;
            q = ((q % w) + w) % w;
          } else if (p < 0 || p >= h || q < 0 || q >= w) {
            continue;
          }
          for (std::size_t c = 0; c < x.channels(); ++c) {
            double v = x(c, static_cast<std::size_t>(p), static_cast<std::size_t>(q));
            sq += v * v;
          }
        }
      best = std::max(best, sq);
    }
  return std::sqrt(best);
}

double max_patch_norm(const DataBatch& x, const PatchGeometry& g) {
  double best = 0.0;
  for (const auto& s : x.samples()) best = std::max(best, max_patch_norm(s, g));
  return best;
}

DenseMatrix kernel_as_matrix(const KernelTensor& k) {
  if (k.kh() != 1 || k.kw() != 1) throw UsageError("kernel_as_matrix needs a 1x1 kernel");
  DenseMatrix a(k.c_out(), k.c_in());
  for (std::size_t o = 0; o < k.c_out(); ++o)
    for (std::size_t i = 0; i < k.c_in(); ++i) a(o, i) = k(o, i, 0, 0);
  return a;
}

KernelTensor matrix_as_kernel(const DenseMatrix& a) {
  KernelTensor k(a.rows(), a.cols(), 1, 1);
  for (Eigen::Index o = 0; o < a.rows(); ++o)
    for (Eigen::Index i = 0; i < a.cols(); ++i) k(o, i, 0, 0) = a(o, i);
  return k;
}

}  // namespace capbound
