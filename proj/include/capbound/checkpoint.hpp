#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "capbound/train.hpp"

namespace capbound {

enum class TensorRole { weight, reference, data, labels, logits };
enum class DType { f32, f64 };

std::string to_string(TensorRole r);
TensorRole parse_tensor_role(const std::string& s);
std::string to_string(DType d);
DType parse_dtype(const std::string& s);

struct TensorEntry {
  std::string name;
  TensorRole role = TensorRole::weight;
  std::vector<std::size_t> shape;
  DType dtype = DType::f32;
  std::vector<double> values;  // row-major
  std::string reference;       // weights only: reference tensor name or "zero"

  std::size_t element_count() const;
};

struct Checkpoint {
  std::vector<TensorEntry> tensors;
  nlohmann::json attributes = nlohmann::json::object();

  const TensorEntry* find(const std::string& name) const;
  const TensorEntry* find_role(TensorRole role) const;
  /// Throws UsageError when shapes, names or references are inconsistent.
  void validate() const;
};

inline constexpr int checkpoint_format_version = 1;

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& bytes);
void write_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::string& path);

Checkpoint checkpoint_from_net(const TinyNet& net, DType dtype = DType::f32);
/// Weights by layer name; a "zero" reference marker yields zeros.
TinyNet net_from_checkpoint(const ArchDoc& doc, const Checkpoint& c);

Checkpoint checkpoint_from_data(const LabeledData& d, DType dtype = DType::f64);
LabeledData data_from_checkpoint(const Checkpoint& c);

/// Logits stored with role "logits", shape (n, classes).
void add_logits(Checkpoint& c, const std::vector<double>& logits, std::size_t classes, const std::string& name);
std::vector<double> logits_from_checkpoint(const Checkpoint& c, std::size_t& classes);

}  // namespace capbound
