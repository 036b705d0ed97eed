#include "capbound/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "capbound/errors.hpp"

namespace capbound {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian");

namespace {
constexpr const char* magic = "CAPBOUND-CKPT";
}

std::string to_string(TensorRole r) {
  switch (r) {
    case TensorRole::weight: return "weight";
    case TensorRole::reference: return "reference";
    case TensorRole::data: return "data";
    case TensorRole::labels: return "labels";
    case TensorRole::logits: return "logits";
  }
  return "weight";
}

TensorRole parse_tensor_role(const std::string& s) {
  if (s == "weight") return TensorRole::weight;
  if (s == "reference") return TensorRole::reference;
  if (s == "data") return TensorRole::data;
  if (s == "labels") return TensorRole::labels;
  if (s == "logits") return TensorRole::logits;
  throw UsageError("unknown tensor role '" + s + "'");
}

std::string to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw UsageError("unknown dtype '" + s + "'");
}

std::size_t TensorEntry::element_count() const {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

const TensorEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const TensorEntry* Checkpoint::find_role(TensorRole role) const {
  for (const auto& t : tensors)
    if (t.role == role) return &t;
  return nullptr;
}

void Checkpoint::validate() const {
  std::set<std::string> names;
  for (const auto& t : tensors) {
    if (t.name.empty()) throw UsageError("tensor without a name");
    if (!names.insert(t.name).second) throw UsageError("duplicate tensor '" + t.name + "'");
    if (t.values.size() != t.element_count())
      throw UsageError("tensor '" + t.name + "' holds " + std::to_string(t.values.size()) + " values for shape of " +
                       std::to_string(t.element_count()));
  }
  for (const auto& t : tensors) {
    if (t.role != TensorRole::weight) continue;
    if (t.reference.empty()) throw UsageError("weight '" + t.name + "' has no reference");
    if (t.reference == "zero") continue;
    const auto* r = find(t.reference);
    if (!r) throw UsageError("weight '" + t.name + "' names missing reference '" + t.reference + "'");
    if (r->shape != t.shape) throw UsageError("reference '" + r->name + "' differs in shape from '" + t.name + "'");
  }
}

std::string serialize_checkpoint(const Checkpoint& c) {
  c.validate();
  json manifest;
  manifest["format_version"] = checkpoint_format_version;
  manifest["attributes"] = c.attributes;
  manifest["tensors"] = json::array();
  std::string payload;
  for (const auto& t : c.tensors) {
    const std::size_t width = t.dtype == DType::f32 ? 4 : 8;
    json e{{"name", t.name},
           {"role", to_string(t.role)},
           {"shape", t.shape},
           {"dtype", to_string(t.dtype)},
           {"byte_offset", payload.size()},
           {"byte_length", t.values.size() * width}};
    if (t.role == TensorRole::weight) e["reference"] = t.reference;
    manifest["tensors"].push_back(e);
    for (double v : t.values) {
      char buf[8];
      if (t.dtype == DType::f32) {
        const float f = static_cast<float>(v);
        std::memcpy(buf, &f, 4);
      } else {
        std::memcpy(buf, &v, 8);
      }
      payload.append(buf, width);
    }
  }
  const std::string m = manifest.dump(1);
  return std::string(magic) + " " + std::to_string(m.size()) + "\n" + m + payload;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos || bytes.compare(0, std::strlen(magic), magic) != 0)
    throw UsageError("not a checkpoint file (bad magic line)");
  std::size_t len = 0;
  try {
    len = std::stoull(bytes.substr(std::strlen(magic), nl - std::strlen(magic)));
  } catch (const std::exception&) {
    throw UsageError("checkpoint header has no manifest length");
  }
  if (nl + 1 + len > bytes.size()) throw UsageError("checkpoint manifest is truncated");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(nl + 1, len));
  } catch (const json::exception& e) {
    throw UsageError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const std::size_t base = nl + 1 + len;
  const std::size_t payload_size = bytes.size() - base;
  Checkpoint c;
  try {
    if (manifest.at("format_version").get<int>() != checkpoint_format_version)
      throw UsageError("unsupported checkpoint format version");
    if (manifest.contains("attributes")) c.attributes = manifest.at("attributes");
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (const auto& e : manifest.at("tensors")) {
      TensorEntry t;
      t.name = e.at("name").get<std::string>();
      t.role = parse_tensor_role(e.at("role").get<std::string>());
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      t.dtype = parse_dtype(e.at("dtype").get<std::string>());
      if (t.role == TensorRole::weight) t.reference = e.value("reference", "");
      const std::size_t off = e.at("byte_offset").get<std::size_t>();
      const std::size_t blen = e.at("byte_length").get<std::size_t>();
      const std::size_t width = t.dtype == DType::f32 ? 4 : 8;
      if (blen != t.element_count() * width)
        throw UsageError("tensor '" + t.name + "' byte length does not match its shape and dtype");
      if (off > payload_size || blen > payload_size - off)
        throw UsageError("tensor '" + t.name + "' extends past the end of the payload");
      ranges.emplace_back(off, off + blen);
      t.values.resize(t.element_count());
      const char* p = bytes.data() + base + off;
      for (std::size_t i = 0; i < t.values.size(); ++i) {
        if (t.dtype == DType::f32) {
          float f;
          std::memcpy(&f, p + 4 * i, 4);
          t.values[i] = f;
        } else {
          std::memcpy(&t.values[i], p + 8 * i, 8);
        }
      }
      c.tensors.push_back(std::move(t));
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
      if (ranges[i].first < ranges[i - 1].second) throw UsageError("checkpoint tensors overlap in the payload");
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  c.validate();
  return c;
}

void write_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

namespace {

TensorEntry kernel_entry(const std::string& name, TensorRole role, const KernelTensor& k, DType dtype) {
  TensorEntry t;
  t.name = name;
  t.role = role;
  t.shape = {k.c_out(), k.c_in(), k.kh(), k.kw()};
  t.dtype = dtype;
  t.values.assign(k.values().begin(), k.values().end());
  return t;
}

KernelTensor entry_kernel(const TensorEntry& t) {
  if (t.shape.size() != 4) throw UsageError("tensor '" + t.name + "' is not a 4-axis kernel");
  return KernelTensor({t.shape[0], t.shape[1], t.shape[2], t.shape[3]}, t.values);
}

}  // namespace

Checkpoint checkpoint_from_net(const TinyNet& net, DType dtype) {
  Checkpoint c;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const std::string name = net.layer_doc(i).name;
    auto w = kernel_entry(name, TensorRole::weight, net.weights[i], dtype);
    w.reference = name + ".ref";
    c.tensors.push_back(w);
    c.tensors.push_back(kernel_entry(name + ".ref", TensorRole::reference, net.reference[i], dtype));
  }
  return c;
}

TinyNet net_from_checkpoint(const ArchDoc& doc, const Checkpoint& c) {
  c.validate();
  const ArchShapes shapes = resolve_shapes(doc);
  std::vector<KernelTensor> weights, refs;
  for (const auto& s : shapes.layers) {
    const auto& l = doc.blocks[s.block].layers[s.index];
    const auto* t = c.find(l.name);
    if (!t || t->role != TensorRole::weight) throw UsageError("checkpoint has no weight tensor '" + l.name + "'");
    const auto want = s.kernel_shape();
    if (t->shape != std::vector<std::size_t>(want.begin(), want.end()))
      throw UsageError("tensor '" + l.name + "' has shape inconsistent with the architecture");
    weights.push_back(entry_kernel(*t));
    if (t->reference == "zero") refs.emplace_back(want[0], want[1], want[2], want[3]);
    else refs.push_back(entry_kernel(*c.find(t->reference)));
  }
  return TinyNet::from_weights(doc, std::move(weights), std::move(refs));
}

Checkpoint checkpoint_from_data(const LabeledData& d, DType dtype) {
  Checkpoint c;
  const auto s = d.x.sample_shape();
  TensorEntry x;
  x.name = "x";
  x.role = TensorRole::data;
  x.shape = {d.x.size(), s[0], s[1], s[2]};
  x.dtype = dtype;
  for (const auto& smp : d.x.samples()) x.values.insert(x.values.end(), smp.values().begin(), smp.values().end());
  TensorEntry y;
  y.name = "y";
  y.role = TensorRole::labels;
  y.shape = {d.labels.size()};
  y.dtype = DType::f64;
  for (auto l : d.labels) y.values.push_back(static_cast<double>(l));
  c.tensors.push_back(std::move(x));
  c.tensors.push_back(std::move(y));
  return c;
}

LabeledData data_from_checkpoint(const Checkpoint& c) {
  const auto* x = c.find_role(TensorRole::data);
  const auto* y = c.find_role(TensorRole::labels);
  if (!x) throw UsageError("data file has no tensor with role 'data'");
  if (!y) throw UsageError("data file has no tensor with role 'labels'");
  if (x->shape.size() != 4) throw UsageError("data tensor '" + x->name + "' must have shape (n, c, h, w)");
  if (y->shape.size() != 1 || y->shape[0] != x->shape[0])
    throw UsageError("labels tensor '" + y->name + "' must have shape (n)");
  const std::size_t per = x->shape[1] * x->shape[2] * x->shape[3];
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < x->shape[0]; ++i)
    samples.emplace_back(std::array<std::size_t, 3>{x->shape[1], x->shape[2], x->shape[3]},
                         std::vector<double>(x->values.begin() + static_cast<long>(i * per),
                                             x->values.begin() + static_cast<long>((i + 1) * per)));
  std::vector<std::size_t> labels;
  for (double v : y->values) {
    if (!(v >= 0) || v != std::floor(v)) throw UsageError("labels must be nonnegative integers");
    labels.push_back(static_cast<std::size_t>(v));
  }
  return LabeledData{DataBatch(std::move(samples)), std::move(labels)};
}

void add_logits(Checkpoint& c, const std::vector<double>& logits, std::size_t classes, const std::string& name) {
  if (classes == 0 || logits.size() % classes != 0) throw UsageError("logits do not divide into rows");
  TensorEntry t;
  t.name = name;
  t.role = TensorRole::logits;
  t.shape = {logits.size() / classes, classes};
  t.dtype = DType::f64;
  t.values = logits;
  c.tensors.push_back(std::move(t));
}

std::vector<double> logits_from_checkpoint(const Checkpoint& c, std::size_t& classes) {
  const auto* t = c.find_role(TensorRole::logits);
  if (!t) throw UsageError("file has no tensor with role 'logits'");
  if (t->shape.size() != 2) throw UsageError("logits tensor '" + t->name + "' must have shape (n, classes)");
  classes = t->shape[1];
  return t->values;
}

}  // namespace capbound
