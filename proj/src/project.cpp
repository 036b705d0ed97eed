#include "capbound/project.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "capbound/errors.hpp"
#include "capbound/lipschitz.hpp"

namespace capbound {

void ConstraintSet::validate() const {
  if (!(distance_bound >= 0) || !(lipschitz_bound >= 0)) throw UsageError("constraint bounds must be >= 0");
  spec.validate();
  if (reference.c_in() != spec.c_in || reference.kh() != spec.kh || reference.kw() != spec.kw)
    throw UsageError("constraint reference does not match the conv spec");
}

std::vector<ConstraintId> parse_projection_order(const std::string& text) {
  std::vector<ConstraintId> order;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "distance" || item == "C1") order.push_back(ConstraintId::distance);
    else if (item == "spectral" || item == "C2") order.push_back(ConstraintId::spectral);
    else if (item == "support" || item == "C3") order.push_back(ConstraintId::support);
    else throw UsageError("unknown constraint '" + item + "' in projection order");
  }
  if (order.empty()) throw UsageError("empty projection order");
  return order;
}

KernelTensor project_l21_ball(const KernelTensor& k, const KernelTensor& center, double b) {
  if (!(b >= 0)) throw UsageError("ball radius must be >= 0");
  if (!k.same_shape(center)) throw UsageError("kernel and center differ in shape");
  KernelTensor d = k - center;
  const std::size_t nf = d.c_out() * d.kh() * d.kw();
  std::vector<double> v(nf, 0.0);
  auto fiber = [&](std::size_t f) {
    std::size_t o = f / (d.kh() * d.kw()), ab = f % (d.kh() * d.kw());
    return std::array<std::size_t, 3>{o, ab / d.kw(), ab % d.kw()};
  };
  for (std::size_t f = 0; f < nf; ++f) {
    auto [o, a, bb] = fiber(f);
    double sq = 0.0;
    for (std::size_t i = 0; i < d.c_in(); ++i) sq += d(o, i, a, bb) * d(o, i, a, bb);
    v[f] = std::sqrt(sq);
  }
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  if (total <= b) return k;
  if (b == 0.0) return center;
  std::vector<double> u = v;
  std::stable_sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, lambda = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    double t = (cum - b) / static_cast<double>(j + 1);
    if (u[j] - t > 0) lambda = t;
  }
  for (std::size_t f = 0; f < nf; ++f) {
    auto [o, a, bb] = fiber(f);
    double scale = v[f] > 0 ? std::max(0.0, 1.0 - lambda / v[f]) : 0.0;
    for (std::size_t i = 0; i < d.c_in(); ++i) d(o, i, a, bb) *= scale;
  }
  return center + d;
}

KernelTensor project_spectral(const KernelTensor& k, const ConvSpec& spec, double s) {
  if (!(s >= 0)) throw UsageError("spectral bound must be >= 0");
  auto mats = frequency_matrices(k, spec);
  KernelTensor grid = embed_in_grid(k, spec.h, spec.w);
  if (std::isinf(s)) return grid;
  double top = 0.0;
  std::vector<Eigen::JacobiSVD<Eigen::MatrixXcd>> svds;
  svds.reserve(mats.size());
  for (const auto& m : mats) {
    svds.emplace_back(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    top = std::max(top, svds.back().singularValues()[0]);
  }
  if (top <= s) return grid;
  for (std::size_t f = 0; f < mats.size(); ++f) {
    const auto& svd = svds[f];
    Eigen::VectorXd sv = svd.singularValues().cwiseMin(s);
    const Eigen::Index r = sv.size();
    mats[f] = svd.matrixU().leftCols(r) * sv.cast<std::complex<double>>().asDiagonal() *
              svd.matrixV().leftCols(r).adjoint();
  }
  return kernel_from_frequency_matrices(mats, spec.h, spec.w);
}

KernelTensor project_support(const KernelTensor& grid, std::size_t kh, std::size_t kw) {
  if (kh > grid.kh() || kw > grid.kw()) throw UsageError("support larger than the grid");
  KernelTensor out = grid;
  const std::size_t a0 = grid_window_start(grid.kh(), kh), b0 = grid_window_start(grid.kw(), kw);
  for (std::size_t o = 0; o < grid.c_out(); ++o)
    for (std::size_t i = 0; i < grid.c_in(); ++i)
      for (std::size_t a = 0; a < grid.kh(); ++a)
        for (std::size_t b = 0; b < grid.kw(); ++b)
          if (a < a0 || a >= a0 + kh || b < b0 || b >= b0 + kw) out(o, i, a, b) = 0.0;
  return out;
}

double Violation::relative() const {
  auto rel = [](double excess, double bound) { return bound > 0 ? excess / bound : excess; };
  return std::max(rel(distance_excess, distance_bound), rel(lipschitz_excess, lipschitz_bound));
}

Violation measure_violation(const KernelTensor& k, const ConstraintSet& c) {
  Violation v;
  v.distance_bound = c.distance_bound;
  v.lipschitz_bound = c.lipschitz_bound;
  if (std::isfinite(c.distance_bound))
    v.distance_excess = std::max(0.0, group_norm_21(k - c.reference) - c.distance_bound);
  if (std::isfinite(c.lipschitz_bound))
    v.lipschitz_excess = std::max(0.0, lipschitz_constant(k, c.spec).value - c.lipschitz_bound);
  return v;
}

namespace {

struct GridProblem {
  ConvSpec grid_spec;
  KernelTensor center;
  const ConstraintSet* c;

  explicit GridProblem(const ConstraintSet& cs) : c(&cs) {
    cs.validate();
    if (!cs.spec.fft_eligible()) throw UsageError("projection needs a circular stride-1 layer");
    grid_spec = cs.spec;
    grid_spec.kh = cs.spec.h;
    grid_spec.kw = cs.spec.w;
    center = embed_in_grid(cs.reference, cs.spec.h, cs.spec.w);
  }

  KernelTensor apply(ConstraintId id, const KernelTensor& g) const {
    switch (id) {
      case ConstraintId::distance: return project_l21_ball(g, center, c->distance_bound);
      case ConstraintId::spectral: return project_spectral(g, grid_spec, c->lipschitz_bound);
      case ConstraintId::support: return project_support(g, c->spec.kh, c->spec.kw);
    }
    return g;
  }

  Violation violation(const KernelTensor& g) const {
    ConstraintSet gc = *c;
    gc.reference = center;
    gc.spec = grid_spec;
    return measure_violation(g, gc);
  }
};

double frob_distance(const KernelTensor& a, const KernelTensor& b) { return frobenius(a - b); }

}  // namespace

ProjectionResult alternating_projections(const KernelTensor& k, const ConstraintSet& c, int rounds) {
  if (rounds < 1) throw UsageError("rounds must be >= 1");
  GridProblem prob(c);
  KernelTensor g = embed_in_grid(k, c.spec.h, c.spec.w);
  ProjectionResult res;
  for (int r = 0; r < rounds; ++r) {
    KernelTensor before = g;
    for (ConstraintId id : c.order) g = prob.apply(id, g);
    res.report.trajectory.push_back(prob.violation(g));
    res.report.step_distance.push_back(frob_distance(g, before));
  }
  res.kernel = crop_from_grid(g, c.spec.kh, c.spec.kw);
  res.report.final = measure_violation(res.kernel, c);
  return res;
}

ProjectionResult dykstra(const KernelTensor& k, const ConstraintSet& c, int iterations) {
  if (iterations < 1) throw UsageError("iterations must be >= 1");
  GridProblem prob(c);
  KernelTensor x = embed_in_grid(k, c.spec.h, c.spec.w);
  std::vector<KernelTensor> p(c.order.size(), KernelTensor(x.c_out(), x.c_in(), x.kh(), x.kw()));
  ProjectionResult res;
  for (int it = 0; it < iterations; ++it) {
    KernelTensor before = x;
    for (std::size_t j = 0; j < c.order.size(); ++j) {
      KernelTensor shifted = x + p[j];
      KernelTensor y = prob.apply(c.order[j], shifted);
      p[j] = shifted - y;
      x = std::move(y);
    }
    res.report.trajectory.push_back(prob.violation(x));
    res.report.step_distance.push_back(frob_distance(x, before));
  }
  res.kernel = crop_from_grid(x, c.spec.kh, c.spec.kw);
  res.report.final = measure_violation(res.kernel, c);
  return res;
}

KernelTensor radial_project(const KernelTensor& k, const KernelTensor& center, double radius, RadialNorm norm,
                            const ConvSpec* spec) {
  if (!(radius >= 0)) throw UsageError("radius must be >= 0");
  KernelTensor d = k - center;
  double n = 0.0;
  if (norm == RadialNorm::l21) {
    n = group_norm_21(d);
  } else {
    if (spec == nullptr) throw UsageError("spectral radial projection needs a conv spec");
    n = lipschitz_constant(d, *spec).value;
  }
  if (n <= radius) return k;
  d *= radius / n;
  return center + d;
}

ProjectionResult radial_joint(const KernelTensor& k, const ConstraintSet& c) {
  c.validate();
  KernelTensor zero(k.c_out(), k.c_in(), k.kh(), k.kw());
  KernelTensor out = k;
  if (std::isfinite(c.lipschitz_bound)) out = radial_project(out, zero, c.lipschitz_bound, RadialNorm::spectral, &c.spec);
  if (std::isfinite(c.distance_bound)) out = radial_project(out, c.reference, c.distance_bound, RadialNorm::l21);
  ProjectionResult res;
  res.kernel = out;
  res.report.final = measure_violation(out, c);
  res.report.trajectory.push_back(res.report.final);
  res.report.step_distance.push_back(frobenius(out - k));
  return res;
}

KernelTensor init_scale_to_feasible(const KernelTensor& k0, const ConvSpec& spec, double s) {
  if (!(s > 0) || std::isinf(s)) throw UsageError("scaling target must be positive and finite");
  double lip = lipschitz_constant(k0, spec).value;
  if (lip == 0.0) throw UsageError("cannot scale an all-zero kernel to a Lipschitz target");
  if (std::abs(lip - s) <= 1e-14 * s) return k0;
  return (s / lip) * k0;
}

}  // namespace capbound
