#include "capbound/archdoc.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "capbound/errors.hpp"

namespace capbound {

using nlohmann::json;

BlockShortcut parse_block_shortcut(const std::string& name) {
  if (name == "none") return BlockShortcut::none;
  if (name == "identity") return BlockShortcut::identity;
  if (name == "shifted_pool") return BlockShortcut::shifted_pool;
  throw UsageError("unknown shortcut '" + name + "'");
}

std::string to_string(BlockShortcut s) {
  switch (s) {
    case BlockShortcut::none: return "none";
    case BlockShortcut::identity: return "identity";
    case BlockShortcut::shifted_pool: return "shifted_pool";
  }
  return "none";
}

double shortcut_lipschitz(BlockShortcut s) {
  switch (s) {
    case BlockShortcut::none: return 0.0;
    case BlockShortcut::identity: return 1.0;
    case BlockShortcut::shifted_pool: return std::sqrt(2.0);
  }
  return 0.0;
}

ArchShapes resolve_shapes(const ArchDoc& doc) {
  if (doc.in_channels < 1 || doc.height < 1 || doc.width < 1) throw UsageError("input extents must be >= 1");
  if (doc.classes < 2) throw UsageError("need at least two classes");
  if (doc.blocks.empty()) throw UsageError("architecture has no blocks");
  ArchShapes out;
  std::array<std::size_t, 3> cur{doc.in_channels, doc.height, doc.width};
  std::set<std::string> names;
  for (std::size_t bi = 0; bi < doc.blocks.size(); ++bi) {
    const auto& b = doc.blocks[bi];
    if (b.layers.empty()) throw UsageError("block " + std::to_string(bi) + " has no layers");
    const auto block_in = cur;
    for (std::size_t li = 0; li < b.layers.size(); ++li) {
      const auto& l = b.layers[li];
      if (l.name.empty()) throw UsageError("layer without a name in block " + std::to_string(bi));
      if (!names.insert(l.name).second) throw UsageError("duplicate layer name '" + l.name + "'");
      if (l.out_channels < 1) throw UsageError("layer '" + l.name + "' needs out_channels >= 1");
      if (!(l.lipschitz_constraint > 0)) throw UsageError("layer '" + l.name + "' Lipschitz constraint must be > 0");
      if (!(l.distance_constraint >= 0)) throw UsageError("layer '" + l.name + "' distance constraint must be >= 0");
      LayerShape s;
      s.block = bi;
      s.index = li;
      s.spec = ConvSpec{cur[0], cur[1], cur[2], l.kernel, l.kernel, l.stride, l.stride, l.padding};
      try {
        s.spec.validate();
      } catch (const UsageError& e) {
        throw UsageError("layer '" + l.name + "': " + e.what());
      }
      s.out_channels = l.out_channels;
      std::size_t h = s.spec.out_h(), w = s.spec.out_w();
      if (l.pool) {
        h = pooled_size(h);
        w = pooled_size(w);
      }
      s.out_shape = {l.out_channels, h, w};
      cur = s.out_shape;
      out.layers.push_back(s);
    }
    switch (b.shortcut) {
      case BlockShortcut::none: break;
      case BlockShortcut::identity:
        if (cur != block_in) throw UsageError("identity shortcut in block " + std::to_string(bi) + " changes shape");
        break;
      case BlockShortcut::shifted_pool: {
        if (block_in[1] % 2 != 0 || block_in[2] % 2 != 0)
          throw UsageError("shifted pool shortcut in block " + std::to_string(bi) + " needs even spatial extents");
        std::array<std::size_t, 3> want{2 * block_in[0], block_in[1] / 2, block_in[2] / 2};
        if (cur != want)
          throw UsageError("shifted pool shortcut in block " + std::to_string(bi) +
                           " needs the chain to double channels and halve the grid");
        break;
      }
    }
  }
  out.feature_shape = cur;
  if (cur[0] + 1 < doc.classes) throw UsageError("final channel count must be at least classes - 1");
  return out;
}

DenseMatrix simplex_classifier(std::size_t classes, std::size_t dim) {
  if (classes < 2) throw UsageError("need at least two classes");
  if (dim + 1 < classes) throw UsageError("simplex needs dim >= classes - 1");
  const double k = static_cast<double>(classes);
  DenseMatrix centered = DenseMatrix::Identity(classes, classes) - DenseMatrix::Constant(classes, classes, 1.0 / k);
  Eigen::JacobiSVD<DenseMatrix> svd(centered, Eigen::ComputeFullV);
  DenseMatrix coords = centered * svd.matrixV().leftCols(classes - 1);
  for (Eigen::Index r = 0; r < coords.rows(); ++r) coords.row(r).normalize();
  DenseMatrix out = DenseMatrix::Zero(classes, dim);
  out.leftCols(classes - 1) = coords;
  return out;
}

namespace {

json constraint_json(double v) { return std::isinf(v) ? json(nullptr) : json(v); }

double constraint_value(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::infinity();
  if (j.at(key).is_string() && j.at(key).get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  return j.at(key).get<double>();
}

}  // namespace

std::string archdoc_to_json(const ArchDoc& doc, int indent) {
  json j;
  j["input"] = {{"channels", doc.in_channels}, {"height", doc.height}, {"width", doc.width}};
  j["classes"] = doc.classes;
  j["head"] = {{"kind", "simplex"}};
  json blocks = json::array();
  for (const auto& b : doc.blocks) {
    json jb;
    jb["shortcut"] = to_string(b.shortcut);
    jb["layers"] = json::array();
    for (const auto& l : b.layers) {
      jb["layers"].push_back({{"name", l.name},
                              {"kind", "conv"},
                              {"out_channels", l.out_channels},
                              {"kernel", l.kernel},
                              {"stride", l.stride},
                              {"padding", to_string(l.padding)},
                              {"activation", l.relu ? "relu" : "identity"},
                              {"pool", l.pool},
                              {"lipschitz_constraint", constraint_json(l.lipschitz_constraint)},
                              {"distance_constraint", constraint_json(l.distance_constraint)}});
    }
    blocks.push_back(jb);
  }
  j["blocks"] = blocks;
  return j.dump(indent);
}

ArchDoc archdoc_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("architecture document is not valid JSON: ") + e.what());
  }
  ArchDoc doc;
  try {
    const auto& in = j.at("input");
    doc.in_channels = in.at("channels").get<std::size_t>();
    doc.height = in.at("height").get<std::size_t>();
    doc.width = in.at("width").get<std::size_t>();
    doc.classes = j.at("classes").get<std::size_t>();
    if (j.contains("head") && j.at("head").value("kind", "simplex") != "simplex")
      throw UsageError("only the simplex head is supported");
    for (const auto& jb : j.at("blocks")) {
      BlockDoc b;
      b.shortcut = parse_block_shortcut(jb.value("shortcut", "none"));
      for (const auto& jl : jb.at("layers")) {
        if (jl.value("kind", "conv") != "conv") throw UsageError("only conv layers are supported");
        LayerDoc l;
        l.name = jl.at("name").get<std::string>();
        l.out_channels = jl.at("out_channels").get<std::size_t>();
        l.kernel = jl.value("kernel", std::size_t{3});
        l.stride = jl.value("stride", std::size_t{1});
        l.padding = parse_padding(jl.value("padding", "circular"));
        l.pool = jl.value("pool", false);
        const std::string act = jl.value("activation", "relu");
        if (act != "relu" && act != "identity") throw UsageError("unknown activation '" + act + "'");
        l.relu = act == "relu";
        l.lipschitz_constraint = constraint_value(jl, "lipschitz_constraint");
        l.distance_constraint = constraint_value(jl, "distance_constraint");
        b.layers.push_back(l);
      }
      doc.blocks.push_back(b);
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed architecture document: ") + e.what());
  }
  resolve_shapes(doc);
  return doc;
}

ArchDoc load_archdoc(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open architecture document '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return archdoc_from_json(ss.str());
}

void save_archdoc(const ArchDoc& doc, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw UsageError("cannot write '" + path + "'");
  f << archdoc_to_json(doc) << "\n";
}

}  // namespace capbound
