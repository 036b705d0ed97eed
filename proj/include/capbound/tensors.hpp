#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace capbound {

using DenseMatrix = Eigen::MatrixXd;

enum class Padding { zero_same, circular };

Padding parse_padding(const std::string& name);
std::string to_string(Padding p);

/// 4-axis kernel (c_out, c_in, k_h, k_w), row-major.
class KernelTensor {
 public:
  KernelTensor() = default;
  KernelTensor(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw);
  KernelTensor(std::array<std::size_t, 4> shape, std::vector<double> values);

  std::size_t c_out() const { return shape_[0]; }
  std::size_t c_in() const { return shape_[1]; }
  std::size_t kh() const { return shape_[2]; }
  std::size_t kw() const { return shape_[3]; }
  const std::array<std::size_t, 4>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t o, std::size_t i, std::size_t a, std::size_t b) {
    return data_[((o * shape_[1] + i) * shape_[2] + a) * shape_[3] + b];
  }
  double operator()(std::size_t o, std::size_t i, std::size_t a, std::size_t b) const {
    return data_[((o * shape_[1] + i) * shape_[2] + a) * shape_[3] + b];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  KernelTensor& operator+=(const KernelTensor& other);
  KernelTensor& operator-=(const KernelTensor& other);
  KernelTensor& operator*=(double alpha);

  bool same_shape(const KernelTensor& other) const { return shape_ == other.shape_; }

 private:
  std::array<std::size_t, 4> shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

KernelTensor operator+(KernelTensor a, const KernelTensor& b);
KernelTensor operator-(KernelTensor a, const KernelTensor& b);
KernelTensor operator*(double alpha, KernelTensor a);

/// 3-axis sample (c, h, w), row-major.
class Sample {
 public:
  Sample() = default;
  Sample(std::size_t c, std::size_t h, std::size_t w);
  Sample(std::array<std::size_t, 3> shape, std::vector<double> values);

  std::size_t channels() const { return shape_[0]; }
  std::size_t height() const { return shape_[1]; }
  std::size_t width() const { return shape_[2]; }
  const std::array<std::size_t, 3>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }

 private:
  std::array<std::size_t, 3> shape_{0, 0, 0};
  std::vector<double> data_;
};

double dot(const Sample& a, const Sample& b);
double norm2(const Sample& a);

/// n samples of identical shape with the global norm cached at construction.
class DataBatch {
 public:
  explicit DataBatch(std::vector<Sample> samples);

  std::size_t size() const { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<Sample>& samples() const { return samples_; }
  const std::array<std::size_t, 3>& sample_shape() const { return samples_.front().shape(); }
  double norm() const { return norm_; }

 private:
  std::vector<Sample> samples_;
  double norm_ = 0.0;
};

struct PatchGeometry {
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  Padding padding = Padding::zero_same;
};

/// Kernel storage index a sits at spatial offset a + floor(-(k-1)/2).
inline long kernel_offset(std::size_t k) { return -static_cast<long>(k / 2); }

enum class SliceNorm { l1_outslice, l2_outslice, frobenius, max_l1_outslice };

SliceNorm parse_slice_norm(const std::string& name);

double group_norm_21(const KernelTensor& k);
double group_norm_matrix_21(const DenseMatrix& a);

/// Vector kinds return one entry per output channel, scalar kinds a single entry.
std::vector<double> slice_norms(const KernelTensor& k, SliceNorm kind);
std::vector<double> outslice_l2(const KernelTensor& k);
std::vector<double> outslice_l1(const KernelTensor& k);
double frobenius(const KernelTensor& k);
double max_outslice_l1(const KernelTensor& k);

double data_norm(const DataBatch& x);
double max_abs_entry(const DataBatch& x);
double max_patch_norm(const DataBatch& x, const PatchGeometry& g);
double max_patch_norm(const Sample& x, const PatchGeometry& g);

/// Matrix of a 1x1 spatial kernel, rows indexed by output channel.
DenseMatrix kernel_as_matrix(const KernelTensor& k);
KernelTensor matrix_as_kernel(const DenseMatrix& a);

void require_finite(std::span<const double> values, const std::string& what);

}  // namespace capbound
