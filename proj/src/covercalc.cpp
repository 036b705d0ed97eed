#include "capbound/covercalc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "capbound/errors.hpp"

namespace capbound {

ArchNode ArchNode::layer(LayerFamily f) {
  ArchNode n;
  n.kind = NodeKind::layer;
  n.name = f.name;
  n.family = std::move(f);
  return n;
}

ArchNode ArchNode::fixed(std::string name, double lip) {
  ArchNode n;
  n.kind = NodeKind::fixed;
  n.name = std::move(name);
  n.lipschitz = lip;
  return n;
}

namespace {

ArchNode inner_node(NodeKind kind, std::vector<ArchNode> children) {
  ArchNode n;
  n.kind = kind;
  n.children = std::move(children);
  return n;
}

}  // namespace

ArchNode ArchNode::compose(std::vector<ArchNode> children) { return inner_node(NodeKind::compose, std::move(children)); }
ArchNode ArchNode::sum(std::vector<ArchNode> children) { return inner_node(NodeKind::sum, std::move(children)); }
ArchNode ArchNode::concat(std::vector<ArchNode> children) { return inner_node(NodeKind::concat, std::move(children)); }

void ArchNode::validate() const {
  switch (kind) {
    case NodeKind::layer:
      if (!(family.lipschitz >= 0) || !std::isfinite(family.lipschitz))
        throw UsageError("layer '" + name + "' needs a finite Lipschitz bound");
      if (!(family.distance >= 0) || !std::isfinite(family.distance))
        throw UsageError("layer '" + name + "' needs a finite distance bound");
      if (!(family.param_count >= 1)) throw UsageError("layer '" + name + "' needs a parameter count >= 1");
      if (!children.empty()) throw UsageError("layer nodes have no children");
      return;
    case NodeKind::fixed:
      if (!(lipschitz >= 0) || !std::isfinite(lipschitz))
        throw UsageError("fixed map '" + name + "' needs a finite Lipschitz bound");
      if (!children.empty()) throw UsageError("fixed nodes have no children");
      return;
    case NodeKind::compose:
      if (children.empty()) throw UsageError("compose node needs children");
      break;
    case NodeKind::sum:
    case NodeKind::concat:
      if (children.size() < 2) throw UsageError("sum and concat nodes need at least two children");
      break;
  }
  for (const auto& c : children) c.validate();
}

double ArchNode::lipschitz_bound() const {
  switch (kind) {
    case NodeKind::layer: return family.lipschitz;
    case NodeKind::fixed: return lipschitz;
    case NodeKind::compose: {
      double p = 1.0;
      for (const auto& c : children) p *= c.lipschitz_bound();
      return p;
    }
    case NodeKind::sum: {
      double s = 0.0;
      for (const auto& c : children) s += c.lipschitz_bound();
      return s;
    }
    case NodeKind::concat: {
      double s = 0.0;
      for (const auto& c : children) s += c.lipschitz_bound() * c.lipschitz_bound();
      return std::sqrt(s);
    }
  }
  return 0.0;
}

CoverPiece compose_rule(const std::vector<CoverPiece>& children) {
  CoverPiece out;
  out.singleton = true;
  double trailing = 1.0;
  for (std::size_t i = children.size(); i-- > 0;) {
    const auto& c = children[i];
    if (!c.singleton) {
      out.radius += trailing * c.radius;
      out.log_cover += c.log_cover;
      out.singleton = false;
    }
    trailing *= c.lipschitz;
  }
  out.lipschitz = trailing;
  return out;
}

CoverPiece sum_rule(const std::vector<CoverPiece>& children) {
  CoverPiece out;
  out.singleton = true;
  out.lipschitz = 0.0;
  for (const auto& c : children) {
    if (!c.singleton) {
      out.radius += c.radius;
      out.log_cover += c.log_cover;
      out.singleton = false;
    }
    out.lipschitz += c.lipschitz;
  }
  return out;
}

CoverPiece concat_rule(const std::vector<CoverPiece>& children) {
  CoverPiece out;
  out.singleton = true;
  double r2 = 0.0, l2 = 0.0;
  for (const auto& c : children) {
    if (!c.singleton) {
      r2 += c.radius * c.radius;
      out.log_cover += c.log_cover;
      out.singleton = false;
    }
    l2 += c.lipschitz * c.lipschitz;
  }
  out.radius = std::sqrt(r2);
  out.lipschitz = std::sqrt(l2);
  return out;
}

namespace {

void place(const ArchNode& node, double prefix, double trailing, std::vector<LeafPlacement>& out) {
  switch (node.kind) {
    case NodeKind::layer: {
      LeafPlacement p;
      p.name = node.name;
      p.prefix_lip = prefix;
      p.trailing_lip = trailing;
      p.lipschitz = node.family.lipschitz;
      p.distance = node.family.distance;
      p.param_count = node.family.param_count;
      out.push_back(p);
      return;
    }
    case NodeKind::fixed: return;
    case NodeKind::compose: {
      const std::size_t m = node.children.size();
      std::vector<double> lips(m);
      for (std::size_t i = 0; i < m; ++i) lips[i] = node.children[i].lipschitz_bound();
      std::vector<double> after(m + 1, 1.0);
      for (std::size_t i = m; i-- > 0;) after[i] = after[i + 1] * lips[i];
      double before = 1.0;
      for (std::size_t i = 0; i < m; ++i) {
        place(node.children[i], prefix * before, trailing * after[i + 1], out);
        before *= lips[i];
      }
      return;
    }
    case NodeKind::sum:
    case NodeKind::concat:
      for (const auto& c : node.children) place(c, prefix, trailing, out);
      return;
  }
}

// Re-evaluates the tree bottom-up, feeding leaves in depth-first order.
CoverPiece evaluate_pieces(const ArchNode& node, const std::vector<CoverPiece>& leaves, std::size_t& next) {
  switch (node.kind) {
    case NodeKind::layer: return leaves.at(next++);
    case NodeKind::fixed: return CoverPiece{0.0, 0.0, node.lipschitz, true};
    default: break;
  }
  std::vector<CoverPiece> kids;
  for (const auto& c : node.children) kids.push_back(evaluate_pieces(c, leaves, next));
  if (node.kind == NodeKind::compose) return compose_rule(kids);
  if (node.kind == NodeKind::sum) return sum_rule(kids);
  return concat_rule(kids);
}

}  // namespace

std::vector<LeafPlacement> leaf_placements(const ArchNode& tree) {
  tree.validate();
  std::vector<LeafPlacement> out;
  place(tree, 1.0, 1.0, out);
  return out;
}

AllocationScheme parse_allocation_scheme(const std::string& name) {
  if (name == "norm_weighted") return AllocationScheme::norm_weighted;
  if (name == "uniform") return AllocationScheme::uniform;
  throw UsageError("unknown allocation scheme '" + name + "'");
}

CoverBudget allocate_radii(const ArchNode& tree, double eps, AllocationScheme scheme) {
  if (!(eps > 0)) throw UsageError("covering radius must be > 0");
  auto leaves = leaf_placements(tree);
  std::vector<double> alpha(leaves.size(), 0.0);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto& l = leaves[i];
    if (l.distance <= 0) continue;
    if (scheme == AllocationScheme::uniform) alpha[i] = 1.0;
    else alpha[i] = std::pow(l.distance / std::max(l.lipschitz, std::numeric_limits<double>::min()), 2.0 / 3.0);
  }
  const double total = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  CoverBudget budget;
  std::vector<CoverPiece> pieces;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    double r = 0.0;
    if (alpha[i] > 0) {
      if (!(leaves[i].trailing_lip > 0))
        throw UsageError("leaf '" + leaves[i].name + "' is followed by a zero map; its radius is unconstrained");
      r = eps * alpha[i] / (leaves[i].trailing_lip * total);
    }
    budget.names.push_back(leaves[i].name);
    budget.leaf_radius.push_back(r);
    pieces.push_back(CoverPiece{r, 0.0, leaves[i].lipschitz, alpha[i] == 0.0});
  }
  std::size_t next = 0;
  budget.total_radius = evaluate_pieces(tree, pieces, next).radius;
  return budget;
}

TreeBound evaluate_tree(const ArchNode& tree, double eps, const DataSummary& data, CoverVariant variant,
                        AllocationScheme scheme) {
  if (!(eps > 0)) throw UsageError("covering radius must be > 0");
  if (data.n < 1) throw UsageError("sample count must be >= 1");
  auto leaves = leaf_placements(tree);
  CoverBudget budget = allocate_radii(tree, eps, scheme);
  TreeBound out;
  const double scale = data.norm / std::sqrt(static_cast<double>(data.n));
  std::vector<CoverPiece> pieces;
  std::vector<const LayerFamily*> families;
  {
    std::function<void(const ArchNode&)> walk = [&](const ArchNode& n) {
      if (n.kind == NodeKind::layer) families.push_back(&n.family);
      for (const auto& c : n.children) walk(c);
    };
    walk(tree);
  }
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto& l = leaves[i];
    LeafBound lb;
    lb.name = l.name;
    lb.capacity = 2.0 * scale * (l.prefix_lip * l.trailing_lip) * l.distance;
    lb.radius = budget.leaf_radius[i];
    const bool single = lb.radius == 0.0;
    if (!single) {
      const double leaf_norm = data.norm * l.prefix_lip;
      lb.log_cover = families[i]->cover ? families[i]->cover(leaf_norm, lb.radius / 2.0)
                                        : single_layer_cover_bound(l.param_count, leaf_norm, l.distance,
                                                                   lb.radius / 2.0, variant);
    }
    pieces.push_back(CoverPiece{lb.radius, lb.log_cover, l.lipschitz, single});
    out.leaves.push_back(lb);
  }
  std::size_t next = 0;
  CoverPiece whole = evaluate_pieces(tree, pieces, next);
  out.allocated_log_cover = whole.log_cover;
  out.allocated_radius = whole.radius;

  if (leaves.empty()) return out;
  const double radius_factor = std::ceil(static_cast<double>(data.n) / (eps * eps));
  if (variant == CoverVariant::norms) {
    double s = 0.0, wmax = 0.0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const double c = out.leaves[i].capacity;
      s += c <= 0 ? 0.0 : std::ceil(std::pow(c, 2.0 / 3.0));
      wmax = std::max(wmax, leaves[i].param_count);
    }
    out.log_cover = std::log(2.0 * wmax) * s * s * s * radius_factor;
  } else {
    const double lbar = static_cast<double>(leaves.size());
    double s = 0.0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const double c = out.leaves[i].capacity;
      const double w = leaves[i].param_count;
      const double mult = variant == CoverVariant::params ? 2.0 * w : 2.0 * w - 1.0;
      const double x = lbar * lbar * c * c;
      s += mult * std::log1p((x <= 0 ? 0.0 : std::ceil(x)) * radius_factor);
    }
    out.log_cover = s;
  }
  return out;
}

ArchNode residual_tree(const CapacityInput& in) {
  in.validate();
  std::vector<ArchNode> blocks;
  for (std::size_t i = 0; i < in.blocks.size(); ++i) {
    const auto& b = in.blocks[i];
    std::vector<ArchNode> chain;
    for (const auto& l : b.layers) {
      LayerFamily f;
      f.name = l.name;
      f.lipschitz = l.lipschitz;
      f.distance = l.distance;
      f.param_count = l.param_count;
      chain.push_back(ArchNode::layer(f));
      chain.push_back(ArchNode::fixed(l.name + ".act", l.rho));
    }
    ArchNode shortcut = ArchNode::fixed("block" + std::to_string(i) + ".shortcut", b.shortcut_lipschitz());
    ArchNode body = ArchNode::sum({shortcut, ArchNode::compose(std::move(chain))});
    blocks.push_back(ArchNode::compose({body, ArchNode::fixed("block" + std::to_string(i) + ".act", b.rho)}));
  }
  return ArchNode::compose(std::move(blocks));
}

CapacityInput resnet18_input(double s, double b, std::size_t n, double data_norm, double gamma, std::size_t classes) {
  CapacityInput in;
  in.n = n;
  in.data_norm = data_norm;
  in.gamma = gamma;
  auto conv = [&](const std::string& name, double cin, double cout) {
    LayerRecord l;
    l.name = name;
    l.lipschitz = s;
    l.distance = b;
    l.param_count = cin * cout * 9;
    l.geometry = {32, 1, 3, cin};
    return l;
  };
  BlockRecord stem;
  stem.layers.push_back(conv("conv1", 3, 64));
  in.blocks.push_back(stem);
  const double widths[] = {64, 128, 256, 512};
  double cin = 64;
  for (int stage = 0; stage < 4; ++stage) {
    for (int rep = 0; rep < 2; ++rep) {
      BlockRecord blk;
      std::string base = "layer" + std::to_string(stage + 1) + "." + std::to_string(rep);
      blk.layers.push_back(conv(base + ".conv1", cin, widths[stage]));
      blk.layers.push_back(conv(base + ".conv2", widths[stage], widths[stage]));
      if (cin != widths[stage]) {
        blk.shortcut = ShortcutKind::fixed;
        blk.shortcut_lip = std::sqrt(2.0);
      } else {
        blk.shortcut = ShortcutKind::identity;
      }
      in.blocks.push_back(blk);
      cin = widths[stage];
    }
  }
  BlockRecord head;
  LayerRecord fc;
  fc.name = "fc";
  fc.kind = LayerKind::dense;
  fc.lipschitz = s;
  fc.distance = b;
  fc.param_count = 512.0 * static_cast<double>(classes);
  head.layers.push_back(fc);
  in.blocks.push_back(head);
  return in;
}

// Oracles ----------------------------------------------------------------------

namespace {

void exact_set_cover(std::uint32_t uncovered, const std::vector<std::uint32_t>& sets, std::size_t depth,
                     std::size_t& best) {
  if (uncovered == 0) {
    best = std::min(best, depth);
    return;
  }
  if (depth + 1 >= best) return;
  const int p = std::countr_zero(uncovered);
  const std::uint32_t bit = 1u << p;
  for (std::uint32_t s : sets)
    if (s & bit) exact_set_cover(uncovered & ~s, sets, depth + 1, best);
}

}  // namespace

CoverCounts brute_force_cover(const std::vector<Eigen::VectorXd>& points, double eps,
                              const std::vector<Eigen::VectorXd>& candidates) {
  if (!(eps > 0)) throw UsageError("covering radius must be > 0");
  const std::size_t n = points.size();
  if (n == 0) throw UsageError("need at least one point");
  if (n > 20) throw ResourceError("exact covers are limited to 20 points");
  auto ball = [&](const Eigen::VectorXd& c) {
    std::uint32_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if ((points[j] - c).norm() <= eps) m |= 1u << j;
    return m;
  };
  const std::uint32_t full = n == 32 ? ~0u : (1u << n) - 1u;
  std::vector<std::uint32_t> balls(n);
  for (std::size_t i = 0; i < n; ++i) balls[i] = ball(points[i]);
  CoverCounts out;
  out.internal = n;
  exact_set_cover(full, balls, 0, out.internal);
  if (!candidates.empty()) {
    std::vector<std::uint32_t> sets;
    for (const auto& c : candidates) {
      std::uint32_t m = ball(c);
      if (m != 0) sets.push_back(m);
    }
    std::sort(sets.begin(), sets.end(), [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) > std::popcount(b); });
    sets.erase(std::unique(sets.begin(), sets.end()), sets.end());
    std::uint32_t reach = 0;
    for (auto s : sets) reach |= s;
    if (reach != full) throw UsageError("candidate centers cannot cover every point");
    out.external = sets.size() + 1;
    exact_set_cover(full, sets, 0, out.external);
  }
  return out;
}

bool MaureyReport::cardinality_ok() const {
  return cardinality == closed_form && cardinality <= bound_pow_2w && cardinality <= bound_pow_m;
}

namespace {

Eigen::VectorXd evaluate_on_batch(const KernelTensor& k, const ConvSpec& spec, const DataBatch& x) {
  std::vector<double> all;
  for (const auto& s : x.samples()) {
    Sample y = conv_forward(k, spec, s);
    all.insert(all.end(), y.values().begin(), y.values().end());
  }
  return Eigen::Map<Eigen::VectorXd>(all.data(), static_cast<Eigen::Index>(all.size()));
}

unsigned __int128 pow_u128(std::uint64_t base, std::uint64_t e) {
  unsigned __int128 r = 1;
  for (std::uint64_t i = 0; i < e; ++i) {
    unsigned __int128 next;
    if (__builtin_mul_overflow(r, static_cast<unsigned __int128>(base), &next))
      throw ResourceError("cardinality bound overflows 128 bits");
    r = next;
  }
  return r;
}

}  // namespace

MaureyReport maurey_cover_oracle(const ConvSpec& spec, std::size_t c_out, double b, const DataBatch& x, double eps,
                                 std::size_t kernels, std::uint64_t seed) {
  spec.validate();
  if (!(eps > 0) || !(b >= 0)) throw UsageError("need eps > 0 and b >= 0");
  if (x.sample_shape() != std::array<std::size_t, 3>{spec.c_in, spec.h, spec.w})
    throw UsageError("data shape does not match the conv spec");
  const std::size_t w = c_out * spec.c_in * spec.kh * spec.kw;
  MaureyReport rep;
  rep.eps = eps;
  rep.basis_size = 2 * w;
  const double xn = x.norm();
  const double mreal = std::ceil(b * b * xn * xn / (eps * eps));
  if (mreal > 64) throw ResourceError("Maurey cover too large to enumerate");
  rep.m = static_cast<std::size_t>(mreal);
  rep.closed_form = binomial(rep.m + 2 * w - 1, 2 * w - 1);
  rep.bound_pow_2w = pow_u128(2 * w, rep.m);
  rep.bound_pow_m = pow_u128(1 + rep.m, 2 * w - 1);
  if (rep.closed_form > 2'000'000) throw ResourceError("Maurey cover too large to enumerate");

  // Per-channel data norms across the whole batch.
  std::vector<double> chan(spec.c_in, 0.0);
  for (const auto& s : x.samples())
    for (std::size_t r = 0; r < spec.c_in; ++r)
      for (std::size_t p = 0; p < spec.h; ++p)
        for (std::size_t q = 0; q < spec.w; ++q) chan[r] += s(r, p, q) * s(r, p, q);
  for (double& c : chan) c = std::sqrt(c);

  std::vector<Eigen::VectorXd> basis;
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t r = 0; r < spec.c_in; ++r)
      for (std::size_t a = 0; a < spec.kh; ++a)
        for (std::size_t bb = 0; bb < spec.kw; ++bb) {
          KernelTensor e(c_out, spec.c_in, spec.kh, spec.kw);
          e(o, r, a, bb) = chan[r] > 0 ? xn * b / chan[r] : 0.0;
          Eigen::VectorXd v = evaluate_on_batch(e, spec, x);
          basis.push_back(v);
          basis.push_back(-v);
        }
  const Eigen::Index dim = basis.front().size();

  std::vector<Eigen::VectorXd> cover;
  if (rep.m == 0) {
    cover.push_back(Eigen::VectorXd::Zero(dim));
  } else {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
    const double inv_m = 1.0 / static_cast<double>(rep.m);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t idx, std::size_t left) {
      if (idx + 1 == basis.size()) {
        cover.push_back((acc + static_cast<double>(left) * basis[idx]) * inv_m);
        return;
      }
      for (std::size_t take = 0; take <= left; ++take) {
        rec(idx + 1, left - take);
        acc += basis[idx];
      }
      acc -= static_cast<double>(left + 1) * basis[idx];
    };
    rec(0, rep.m);
  }
  rep.cardinality = cover.size();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  rep.all_within = true;
  for (std::size_t t = 0; t < kernels; ++t) {
    KernelTensor k(c_out, spec.c_in, spec.kh, spec.kw);
    for (double& v : k.values()) v = nd(rng);
    const double g = group_norm_21(k);
    const double target = b * (t % 4 == 0 ? 1.0 : ud(rng));
    if (g > 0) k *= target / g;
    Eigen::VectorXd f = evaluate_on_batch(k, spec, x);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : cover) best = std::min(best, (f - c).norm());
    rep.worst_distance = std::max(rep.worst_distance, best);
    if (best > eps * (1 + 1e-12)) rep.all_within = false;
  }
  rep.kernels_checked = kernels;
  return rep;
}

RademacherEstimate sampled_rademacher(const Eigen::MatrixXd& values, std::size_t trials, std::uint64_t seed) {
  if (values.rows() == 0 || values.cols() == 0) throw UsageError("family must be nonempty");
  if (trials == 0) throw UsageError("need at least one trial");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  const double n = static_cast<double>(values.cols());
  Eigen::VectorXd sigma(values.cols());
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (Eigen::Index i = 0; i < sigma.size(); ++i) sigma[i] = coin(rng) ? 1.0 : -1.0;
    const double v = (values * sigma).maxCoeff() / n;
    sum += v;
    sumsq += v * v;
  }
  const double tr = static_cast<double>(trials);
  RademacherEstimate e;
  e.mean = sum / tr;
  const double var = trials > 1 ? std::max(0.0, (sumsq - tr * e.mean * e.mean) / (tr - 1.0)) : 0.0;
  e.std_error = std::sqrt(var / tr);
  return e;
}

}  // namespace capbound
