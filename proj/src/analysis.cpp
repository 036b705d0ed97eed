#include "capbound/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "capbound/errors.hpp"

namespace capbound {

using nlohmann::json;

namespace {

/// Head map: global average pool followed by the simplex classifier, as one dense matrix.
DenseMatrix head_matrix(const TinyNet& net) {
  const auto& f = net.shapes.feature_shape;
  const std::size_t hw = f[1] * f[2];
  DenseMatrix a = DenseMatrix::Zero(net.classifier.rows(), static_cast<Eigen::Index>(f[0] * hw));
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (std::size_t ch = 0; ch < f[0]; ++ch)
      for (std::size_t k = 0; k < hw; ++k)
        a(r, static_cast<Eigen::Index>(ch * hw + k)) =
            net.classifier(r, static_cast<Eigen::Index>(ch)) / static_cast<double>(hw);
  return a;
}

ShortcutKind capacity_shortcut(BlockShortcut s) {
  switch (s) {
    case BlockShortcut::none: return ShortcutKind::zero;
    case BlockShortcut::identity: return ShortcutKind::identity;
    case BlockShortcut::shifted_pool: return ShortcutKind::fixed;
  }
  return ShortcutKind::zero;
}

double log10_or_nan(double v) { return v > 0 ? std::log10(v) : (v == 0 ? -std::numeric_limits<double>::infinity() : NAN); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

CapacityInput capacity_input(const TinyNet& net, std::size_t n, double data_norm, double gamma,
                             const PowerIterationOptions& power) {
  CapacityInput in;
  in.n = n;
  in.data_norm = data_norm;
  in.gamma = gamma;
  std::size_t li = 0;
  for (const auto& b : net.doc.blocks) {
    BlockRecord br;
    br.shortcut = capacity_shortcut(b.shortcut);
    br.shortcut_lip = shortcut_lipschitz(b.shortcut);
    for (std::size_t j = 0; j < b.layers.size(); ++j, ++li) {
      const auto& s = net.shapes.layers[li];
      LayerRecord r;
      r.name = b.layers[j].name;
      r.lipschitz = lipschitz_constant(net.weights[li], s.spec, power).value;
      r.distance = group_norm_21(net.weights[li] - net.reference[li]);
      r.rho = b.layers[j].nonlinearity_lipschitz();
      r.param_count = static_cast<double>(net.weights[li].size());
      r.geometry = {static_cast<double>(s.spec.w), static_cast<double>(s.spec.sw), static_cast<double>(s.spec.kw),
                    static_cast<double>(s.spec.c_in)};
      br.layers.push_back(r);
    }
    in.blocks.push_back(br);
  }
  BlockRecord head;
  LayerRecord h;
  h.name = "head";
  h.kind = LayerKind::dense;
  h.lipschitz = dense_spectral_norm(head_matrix(net));
  h.distance = 0.0;
  h.param_count = static_cast<double>(net.classifier.size());
  head.layers.push_back(h);
  in.blocks.push_back(head);
  return in;
}

Analysis analyze_model(const TinyNet& net, const LabeledData& data, double gamma, std::optional<double> delta,
                       const PowerIterationOptions& power) {
  if (!(gamma > 0) || !std::isfinite(gamma)) throw UsageError("gamma must be positive and finite");
  if (data.x.size() != data.labels.size()) throw UsageError("data and label counts differ");
  Analysis a;
  a.gamma = gamma;
  a.delta = delta;
  const std::size_t n = data.x.size();
  const std::size_t L = net.layer_count();

  // Forward pass recording the input of every layer.
  std::vector<std::vector<Sample>> inputs(L + 1);
  for (const auto& x : data.x.samples()) {
    auto ins = layer_inputs(net, x);
    for (std::size_t i = 0; i <= L; ++i) inputs[i].push_back(std::move(ins[i]));
  }
  a.logits = forward(net, data.x);
  a.error = classification_error(a.logits, data.labels, net.doc.classes);
  a.ramp_risk = ramp_risk(a.logits, data.labels, net.doc.classes, gamma);

  for (std::size_t i = 0; i < L; ++i) {
    const auto& s = net.shapes.layers[i];
    const auto& k = net.weights[i];
    const KernelTensor diff = k - net.reference[i];
    LayerAnalysis la;
    auto est = lipschitz_constant(k, s.spec, power);
    la.lipschitz_method = to_string(est.method);
    LayerStats& st = la.stats;
    st.name = net.layer_doc(i).name;
    st.lipschitz = est.value;
    st.dist_21 = group_norm_21(diff);
    auto l2 = outslice_l2(k), l2d = outslice_l2(diff);
    st.sum_l2_out = std::accumulate(l2.begin(), l2.end(), 0.0);
    st.sum_l2_out_diff = std::accumulate(l2d.begin(), l2d.end(), 0.0);
    st.max_l2_out = *std::max_element(l2.begin(), l2.end());
    st.max_l1_out = max_outslice_l1(k);
    st.max_l1_out_diff = max_outslice_l1(diff);
    st.fro = frobenius(k);
    st.fro_diff = frobenius(diff);
    st.geometry = {static_cast<double>(s.spec.w), static_cast<double>(s.spec.sw), static_cast<double>(s.spec.kw),
                   static_cast<double>(s.spec.c_in)};
    st.out_width = static_cast<double>(s.spec.out_w());
    st.out_channels = static_cast<double>(s.out_channels);
    st.param_count = static_cast<double>(k.size());
    st.patch_norm_in = max_patch_norm(DataBatch(inputs[i]), PatchGeometry{s.spec.kh, s.spec.kw, s.spec.sh,
                                                                          s.spec.sw, s.spec.padding});
    a.layers.push_back(la);
  }
  {
    const DenseMatrix hm = head_matrix(net);
    const KernelTensor hk = matrix_as_kernel(hm);
    LayerAnalysis la;
    la.fixed = true;
    la.lipschitz_method = to_string(SpectralMethod::dense_svd);
    LayerStats& st = la.stats;
    st.name = "head";
    st.lipschitz = dense_spectral_norm(hm);
    auto l2 = outslice_l2(hk);
    st.sum_l2_out = std::accumulate(l2.begin(), l2.end(), 0.0);
    st.max_l2_out = *std::max_element(l2.begin(), l2.end());
    st.max_l1_out = max_outslice_l1(hk);
    st.fro = frobenius(hk);
    st.geometry = {1.0, 1.0, 1.0, static_cast<double>(hm.cols())};
    st.out_width = 1.0;
    st.out_channels = static_cast<double>(hm.rows());
    st.param_count = static_cast<double>(net.classifier.size());
    double best = 0.0;
    for (const auto& f : inputs[L]) best = std::max(best, std::sqrt(norm2(f)));
    st.patch_norm_in = best;
    a.layers.push_back(la);
  }

  a.capacity = capacity_input(net, n, data.x.norm(), gamma, power);
  a.terms = capacity_terms(a.capacity);
  a.clubs = rademacher_clubs(a.capacity);
  a.spades = rademacher_spades(a.capacity);
  if (delta) {
    a.generalization_clubs = generalization_bound(a.capacity, a.ramp_risk, *delta, RademacherKind::clubs);
    a.generalization_spades = generalization_bound(a.capacity, a.ramp_risk, *delta, RademacherKind::spades);
  }

  ComparisonInput& c = a.comparison;
  for (const auto& la : a.layers) c.layers.push_back(la.stats);
  c.n = n;
  c.gamma = gamma;
  c.classes = static_cast<double>(net.doc.classes);
  c.data_norm = data.x.norm();
  c.max_abs_input = max_abs_entry(data.x);
  const auto shape = data.x.sample_shape();
  double energy = 0.0;
  for (std::size_t idx = 0; idx < shape[0] * shape[1] * shape[2]; ++idx) {
    double e = 0.0;
    for (const auto& x : data.x.samples()) e += x.values()[idx] * x.values()[idx];
    energy = std::max(energy, e);
  }
  c.max_pixel_energy = energy;
  c.input_patch_norm = *a.layers.front().stats.patch_norm_in;
  a.suite = comparison_suite(c);
  return a;
}

std::vector<std::string> analysis_jsonl(const Analysis& a) {
  std::vector<std::string> out;
  for (const auto& la : a.layers) {
    const auto& s = la.stats;
    json j{{"record", "layer"},
           {"name", s.name},
           {"fixed", la.fixed},
           {"lipschitz", s.lipschitz},
           {"lipschitz_method", la.lipschitz_method},
           {"distance_21", s.dist_21},
           {"sum_l2_out", s.sum_l2_out},
           {"sum_l2_out_diff", s.sum_l2_out_diff},
           {"max_l2_out", s.max_l2_out},
           {"max_l1_out", s.max_l1_out},
           {"max_l1_out_diff", s.max_l1_out_diff},
           {"fro", s.fro},
           {"fro_diff", s.fro_diff},
           {"param_count", s.param_count},
           {"patch_norm_in", s.patch_norm_in ? json(*s.patch_norm_in) : json(nullptr)}};
    out.push_back(j.dump());
  }
  for (const auto& t : a.terms)
    out.push_back(json{{"record", "capacity_term"}, {"block", t.block}, {"layer", t.layer}, {"name", t.name},
                       {"c", t.c}, {"c_tilde", t.c_tilde}}
                      .dump());
  auto bound = [&](const std::string& name, double v) {
    out.push_back(json{{"record", "bound"}, {"name", name}, {"present", true}, {"value", finite_or_null(v)},
                       {"log10_value", finite_or_null(log10_or_nan(v))}}
                      .dump());
  };
  bound("clubs", a.clubs);
  bound("spades", a.spades);
  for (const auto& r : a.suite.rows) {
    json j{{"record", "bound"}, {"name", r.name}, {"present", r.present}};
    if (r.present) {
      j["value"] = r.saturated ? json(nullptr) : finite_or_null(r.value);
      j["log10_value"] = finite_or_null(r.log10_value);
      j["saturated"] = r.saturated;
      json br = json::object();
      for (const auto& [k, v] : r.breakdown) br[k] = finite_or_null(v);
      j["breakdown"] = br;
    } else {
      j["absent_reason"] = r.absent_reason;
    }
    out.push_back(j.dump());
  }
  if (a.delta) {
    out.push_back(json{{"record", "generalization"}, {"delta", *a.delta}, {"ramp_risk", a.ramp_risk},
                       {"clubs", finite_or_null(*a.generalization_clubs)},
                       {"spades", finite_or_null(*a.generalization_spades)}}
                      .dump());
  }
  std::vector<double> lips, dists;
  for (const auto& la : a.layers)
    if (!la.fixed) {
      lips.push_back(la.stats.lipschitz);
      dists.push_back(la.stats.dist_21);
    }
  out.push_back(json{{"record", "summary"},
                     {"n", a.capacity.n},
                     {"data_norm", a.capacity.data_norm},
                     {"lipschitz_median", quantile(lips, 0.5)},
                     {"distance_median", quantile(dists, 0.5)},
                     {"margin", a.gamma},
                     {"error", a.error},
                     {"ramp_risk", a.ramp_risk},
                     {"clubs", finite_or_null(a.clubs)},
                     {"clubs_log10", finite_or_null(log10_or_nan(a.clubs))},
                     {"spades", finite_or_null(a.spades)},
                     {"spades_log10", finite_or_null(log10_or_nan(a.spades))}}
                    .dump());
  return out;
}

std::string analysis_text(const Analysis& a) {
  std::ostringstream os;
  os << std::setprecision(4);
  std::vector<double> lips, dists;
  os << "layer            lip         dist_21     method\n";
  for (const auto& la : a.layers) {
    os << std::left << std::setw(16) << la.stats.name << " " << std::setw(11) << la.stats.lipschitz << " "
       << std::setw(11) << la.stats.dist_21 << " " << la.lipschitz_method << "\n";
    if (!la.fixed) {
      lips.push_back(la.stats.lipschitz);
      dists.push_back(la.stats.dist_21);
    }
  }
  os << "\nLip median  Dist median  Mar.        Err.        clubs       spades\n";
  os << std::setw(11) << quantile(lips, 0.5) << " " << std::setw(12) << quantile(dists, 0.5) << " " << std::setw(11)
     << a.gamma << " " << std::setw(11) << a.error << " " << std::setw(11) << a.clubs << " " << a.spades << "\n";
  os << "\nbound               log10\n";
  for (const auto& r : a.suite.rows) {
    os << std::setw(19) << r.name << " ";
    if (r.present) os << r.log10_value << "\n";
    else os << "absent (" << r.absent_reason << ")\n";
  }
  if (a.delta)
    os << "\ngeneralization (delta=" << *a.delta << "): clubs " << *a.generalization_clubs << ", spades "
       << *a.generalization_spades << "\n";
  return os.str();
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw UsageError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return values[lo] * (1 - t) + values[hi] * t;
}

std::vector<LayerSpectrum> layer_spectra(const TinyNet& net, const PowerIterationOptions& power) {
  std::vector<LayerSpectrum> out;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const auto& s = net.shapes.layers[i];
    LayerSpectrum ls;
    ls.name = net.layer_doc(i).name;
    if (!s.spec.fft_eligible()) {
      ls.reason = "exact spectra need circular padding and stride 1";
      out.push_back(ls);
      continue;
    }
    ls.eligible = true;
    auto sp = fft_exact_spectrum(net.weights[i], s.spec);
    ls.count = sp.values.size();
    ls.min = sp.values.back();
    ls.max = sp.max;
    ls.q25 = quantile(sp.values, 0.25);
    ls.median = quantile(sp.values, 0.5);
    ls.q75 = quantile(sp.values, 0.75);
    ls.power_iteration_max = power_iteration(net.weights[i], s.spec, power).value;
    out.push_back(ls);
  }
  return out;
}

std::string spectrum_json(const LayerSpectrum& s) {
  json j{{"record", "spectrum"}, {"name", s.name}, {"eligible", s.eligible}};
  if (!s.eligible) {
    j["reason"] = s.reason;
  } else {
    j["count"] = s.count;
    j["min"] = s.min;
    j["q25"] = s.q25;
    j["median"] = s.median;
    j["q75"] = s.q75;
    j["max"] = s.max;
    j["power_iteration_max"] = s.power_iteration_max;
  }
  return j.dump();
}

}  // namespace capbound
