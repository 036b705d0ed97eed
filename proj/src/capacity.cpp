#include "capbound/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "capbound/errors.hpp"

namespace capbound {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_positive_eps(double eps) {
  if (!(eps > 0)) throw UsageError("covering radius must be > 0");
}

double ceil_nonneg(double x) { return x <= 0 ? 0.0 : std::ceil(x); }

}  // namespace

double BlockRecord::shortcut_lipschitz() const {
  switch (shortcut) {
    case ShortcutKind::zero: return 0.0;
    case ShortcutKind::identity: return 1.0;
    case ShortcutKind::fixed: return shortcut_lip;
  }
  return 0.0;
}

double BlockRecord::lipschitz() const {
  double p = 1.0;
  for (const auto& l : layers) p *= l.lipschitz * l.rho;
  return shortcut_lipschitz() + p;
}

void CapacityInput::validate() const {
  if (n < 1) throw UsageError("sample count must be >= 1");
  if (!(gamma > 0)) throw UsageError("margin gamma must be > 0");
  if (!(data_norm >= 0)) throw UsageError("data norm must be >= 0");
  if (blocks.empty()) throw UsageError("capacity input needs at least one block");
  for (const auto& b : blocks) {
    if (b.layers.empty()) throw UsageError("every block needs at least one layer");
    if (!(b.rho > 0)) throw UsageError("block nonlinearity Lipschitz constant must be > 0");
    if (b.shortcut == ShortcutKind::fixed && !(b.shortcut_lip >= 0))
      throw UsageError("shortcut Lipschitz constant must be >= 0");
    for (const auto& l : b.layers) {
      if (!(l.lipschitz > 0)) throw UsageError("layer '" + l.name + "': Lipschitz constraint must be > 0");
      if (!(l.rho > 0)) throw UsageError("layer '" + l.name + "': nonlinearity Lipschitz constant must be > 0");
      if (!(l.distance >= 0)) throw UsageError("layer '" + l.name + "': distance constraint must be >= 0");
      if (!(l.param_count >= 1)) throw UsageError("layer '" + l.name + "': parameter count must be >= 1");
    }
  }
}

std::size_t CapacityInput::total_layers() const {
  std::size_t t = 0;
  for (const auto& b : blocks) t += b.layers.size();
  return t;
}

double CapacityInput::max_params() const {
  double w = 0;
  for (const auto& b : blocks)
    for (const auto& l : b.layers) w = std::max(w, l.param_count);
  return w;
}

std::vector<CapacityTerm> capacity_terms(const CapacityInput& in) {
  in.validate();
  const double scale = in.data_norm / std::sqrt(static_cast<double>(in.n));
  std::vector<CapacityTerm> out;
  for (std::size_t i = 0; i < in.blocks.size(); ++i) {
    const auto& blk = in.blocks[i];
    // (prod_l s_l rho_l) / s_i collapses to the other blocks' factors times rho_i.
    double others = 1.0;
    for (std::size_t l = 0; l < in.blocks.size(); ++l)
      if (l != i) others *= in.blocks[l].lipschitz() * in.blocks[l].rho;
    double inner = 1.0;
    for (const auto& l : blk.layers) inner *= l.lipschitz * l.rho;
    for (std::size_t j = 0; j < blk.layers.size(); ++j) {
      const auto& l = blk.layers[j];
      CapacityTerm t;
      t.block = i;
      t.layer = j;
      t.name = l.name;
      t.c = 2.0 * scale * (others * blk.rho * inner) * (l.distance / l.lipschitz);
      t.c_tilde = 2.0 * t.c / in.gamma;
      out.push_back(t);
    }
  }
  return out;
}

CoverVariant parse_cover_variant(const std::string& name) {
  if (name == "norms") return CoverVariant::norms;
  if (name == "params") return CoverVariant::params;
  if (name == "params_appendix") return CoverVariant::params_appendix;
  throw UsageError("unknown cover variant '" + name + "'");
}

double single_layer_cover_bound(double param_count, double data_norm, double b, double eps, CoverVariant v) {
  require_positive_eps(eps);
  if (!(param_count >= 1)) throw UsageError("parameter count must be >= 1");
  const double m = ceil_nonneg(data_norm * data_norm * b * b / (eps * eps));
  switch (v) {
    case CoverVariant::norms: return m * std::log(2.0 * param_count);
    case CoverVariant::params: return 2.0 * param_count * std::log1p(m);
    case CoverVariant::params_appendix: return (2.0 * param_count - 1.0) * std::log1p(m);
  }
  return 0.0;
}

namespace {

double cover_from_terms(const std::vector<double>& c, const std::vector<double>& w, double total_layers, std::size_t n,
                        double eps, CoverVariant v) {
  require_positive_eps(eps);
  const double radius_factor = std::ceil(static_cast<double>(n) / (eps * eps));
  if (v == CoverVariant::norms) {
    double s = 0.0;
    for (double ci : c) s += ceil_nonneg(std::pow(ci, 2.0 / 3.0));
    const double wmax = *std::max_element(w.begin(), w.end());
    return std::log(2.0 * wmax) * s * s * s * radius_factor;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double mult = v == CoverVariant::params ? 2.0 * w[i] : 2.0 * w[i] - 1.0;
    s += mult * std::log1p(ceil_nonneg(total_layers * total_layers * c[i] * c[i]) * radius_factor);
  }
  return s;
}

}  // namespace

double whole_network_cover_bound(const CapacityInput& in, double eps, CoverVariant v) {
  require_positive_eps(eps);
  auto terms = capacity_terms(in);
  std::vector<double> c, w;
  for (const auto& t : terms) {
    c.push_back(t.c);
    w.push_back(in.blocks[t.block].layers[t.layer].param_count);
  }
  return cover_from_terms(c, w, static_cast<double>(in.total_layers()), in.n, eps, v);
}

double feedforward_cover_bound(const std::vector<LayerRecord>& layers, std::size_t n, double data_norm, double eps,
                               CoverVariant v) {
  require_positive_eps(eps);
  if (layers.empty()) throw UsageError("network needs at least one layer");
  if (n < 1) throw UsageError("sample count must be >= 1");
  double prod = 1.0;
  for (const auto& l : layers) {
    if (!(l.lipschitz > 0)) throw UsageError("layer '" + l.name + "': Lipschitz constraint must be > 0");
    prod *= l.lipschitz * l.rho;
  }
  const double scale = data_norm / std::sqrt(static_cast<double>(n));
  std::vector<double> c, w;
  for (const auto& l : layers) {
    c.push_back(2.0 * scale * prod * (l.distance / l.lipschitz));
    w.push_back(l.param_count);
  }
  return cover_from_terms(c, w, static_cast<double>(layers.size()), n, eps, v);
}

double harmonic_number(std::uint64_t m) {
  double s = 0.0;
  for (std::uint64_t k = m; k >= 1; --k) s += 1.0 / static_cast<double>(k);
  return s;
}

double hurwitz_zeta(double s, double q, double tol) {
  if (!(s > 1)) throw UsageError("Hurwitz zeta needs s > 1");
  if (!(q > 0)) throw UsageError("Hurwitz zeta needs q > 0");
  if (!(tol > 0)) throw UsageError("Hurwitz zeta needs tol > 0");
  // Tail past N: integral plus half the first term, with the convex trapezoid
  // error at most s (q+N)^{-s-1} / 8; take the midpoint of that interval.
  double n_min = std::pow(s / (8.0 * tol), 1.0 / (s + 1.0)) - q;
  const auto n_terms = static_cast<std::uint64_t>(std::max(1.0, std::ceil(n_min)));
  double sum = 0.0;
  for (std::uint64_t k = n_terms; k-- > 0;) sum += std::pow(q + static_cast<double>(k), -s);
  const double x = q + static_cast<double>(n_terms);
  const double tail = std::pow(x, 1.0 - s) / (s - 1.0) + 0.5 * std::pow(x, -s) + s * std::pow(x, -s - 1.0) / 16.0;
  return sum + tail;
}

double psi(double x) {
  if (!(x >= 0)) throw UsageError("psi needs x >= 0");
  if (x == 0) return 0.0;
  static const double zeta_one = hurwitz_zeta(1.5, 1.0);
  return std::cbrt(zeta_one) * std::pow(hurwitz_zeta(1.5, 1.0 + 1.0 / x), 2.0 / 3.0);
}

RademacherKind parse_rademacher_kind(const std::string& name) {
  if (name == "clubs" || name == "norms") return RademacherKind::clubs;
  if (name == "spades" || name == "params") return RademacherKind::spades;
  throw UsageError("unknown Rademacher bound '" + name + "'");
}

double rademacher_clubs(const CapacityInput& in) {
  if (in.n < 2) throw UsageError("the norm-driven bound needs n >= 2");
  auto terms = capacity_terms(in);
  double s = 0.0;
  for (const auto& t : terms) s += ceil_nonneg(std::pow(t.c_tilde, 2.0 / 3.0));
  const double n = static_cast<double>(in.n);
  return 4.0 / n + (12.0 * harmonic_number(in.n - 1) / std::sqrt(n)) * std::sqrt(std::log(2.0 * in.max_params())) *
                       std::pow(s, 1.5);
}

double rademacher_spades(const CapacityInput& in, bool appendix_constant) {
  auto terms = capacity_terms(in);
  const double lbar = static_cast<double>(in.total_layers());
  double s = 0.0;
  for (const auto& t : terms) {
    const double w = in.blocks[t.block].layers[t.layer].param_count;
    const double x = ceil_nonneg(lbar * lbar * t.c_tilde * t.c_tilde);
    s += (appendix_constant ? 2.0 * w - 1.0 : 2.0 * w) * (std::log1p(x) + psi(x));
  }
  return 12.0 / std::sqrt(static_cast<double>(in.n)) * std::sqrt(s);
}

double generalization_bound(const CapacityInput& in, double ramp_risk, double delta, RademacherKind kind) {
  if (!(delta > 0 && delta < 1)) throw UsageError("delta must lie in (0, 1)");
  if (!(ramp_risk >= 0 && ramp_risk <= 1)) throw UsageError("ramp risk must lie in [0, 1]");
  const double r = kind == RademacherKind::clubs ? rademacher_clubs(in) : rademacher_spades(in);
  return ramp_risk + 2.0 * r + 3.0 * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(in.n)));
}

bool BinomialCheck::holds() const { return exact <= bound_k1_pow_n && exact <= bound_n1_pow_k; }

std::string to_string_u128(unsigned __int128 v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  std::reverse(s.begin(), s.end());
  return s;
}

namespace {

unsigned __int128 checked_mul(unsigned __int128 a, unsigned __int128 b) {
  unsigned __int128 r;
  if (__builtin_mul_overflow(a, b, &r)) throw ResourceError("integer overflow in exact binomial arithmetic");
  return r;
}

unsigned __int128 checked_pow(std::uint64_t base, std::uint64_t e) {
  unsigned __int128 r = 1;
  for (std::uint64_t i = 0; i < e; ++i) r = checked_mul(r, base);
  return r;
}

}  // namespace

unsigned __int128 binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    // r * (n - k + i) is divisible by i; split through the gcd to delay overflow.
    std::uint64_t num = n - k + i;
    std::uint64_t g = std::gcd(num, i);
    std::uint64_t num_r = num / g, den = i / g;
    r = checked_mul(r / den, num_r);
  }
  return r;
}

BinomialCheck binomial_bound_check(std::uint64_t n, std::uint64_t k) {
  BinomialCheck c;
  c.exact = binomial(n + k, k);
  c.bound_k1_pow_n = checked_pow(k + 1, n);
  c.bound_n1_pow_k = checked_pow(n + 1, k);
  return c;
}

// Comparison suite -----------------------------------------------------------

namespace {

// Positive reals carried as natural logs; zero is -inf.
struct LogReal {
  double ln = -kInf;

  static LogReal of(double x) {
    if (x < 0) throw NumericalError("negative quantity in a log-domain bound");
    return {x > 0 ? std::log(x) : -kInf};
  }
  bool is_zero() const { return ln == -kInf; }
  LogReal operator*(LogReal o) const { return {is_zero() || o.is_zero() ? -kInf : ln + o.ln}; }
  LogReal operator/(LogReal o) const {
    if (o.is_zero()) throw NumericalError("division by zero in a log-domain bound");
    return {is_zero() ? -kInf : ln - o.ln};
  }
  LogReal operator+(LogReal o) const {
    if (is_zero()) return o;
    if (o.is_zero()) return *this;
    double m = std::max(ln, o.ln);
    return {m + std::log1p(std::exp(std::min(ln, o.ln) - m))};
  }
  LogReal pow(double p) const { return {is_zero() ? -kInf : ln * p}; }
  // ceil(exp(ln)); beyond double integer range the ceiling is immaterial.
  // Values within log-domain round-off of an integer snap to it first.
  LogReal ceil() const {
    if (is_zero()) return *this;
    if (ln < 600) {
      const double v = std::exp(ln), r = std::round(v);
      return of(std::abs(v - r) <= 1e-12 * std::max(1.0, v) ? r : std::ceil(v));
    }
    return *this;
  }
};

BoundEntry entry(const std::string& name, LogReal v) {
  BoundEntry e;
  e.name = name;
  e.log10_value = v.ln / std::log(10.0);
  if (v.ln > std::log(std::numeric_limits<double>::max())) {
    e.value = kInf;
    e.saturated = true;
  } else {
    e.value = v.is_zero() ? 0.0 : std::exp(v.ln);
  }
  return e;
}

BoundEntry absent(const std::string& name, const std::string& why) {
  BoundEntry e;
  e.name = name;
  e.present = false;
  e.absent_reason = why;
  e.value = std::numeric_limits<double>::quiet_NaN();
  e.log10_value = std::numeric_limits<double>::quiet_NaN();
  return e;
}

struct SuiteContext {
  const ComparisonInput& in;
  double n, L;
  LogReal inv_sqrt_n, x_scale, prod_s, four_over_n;

  explicit SuiteContext(const ComparisonInput& c) : in(c) {
    n = static_cast<double>(c.n);
    L = static_cast<double>(c.layers.size());
    inv_sqrt_n = LogReal::of(1.0 / std::sqrt(n));
    x_scale = LogReal::of(c.data_norm / std::sqrt(n));
    prod_s = LogReal::of(1.0);
    for (const auto& l : c.layers) prod_s = prod_s * LogReal::of(l.lipschitz);
    four_over_n = LogReal::of(4.0 / n);
  }

  LogReal ours_ctilde(const LayerStats& l) const {
    return LogReal::of(4.0 / in.gamma) * x_scale * prod_s * LogReal::of(l.dist_21) / LogReal::of(l.lipschitz);
  }
  double max_params() const {
    double w = 0;
    for (const auto& l : in.layers) w = std::max(w, l.param_count);
    return w;
  }
};

BoundEntry row_ours_clubs(const SuiteContext& c) {
  LogReal sum;
  std::vector<std::pair<std::string, double>> parts;
  for (const auto& l : c.in.layers) {
    LogReal ct = c.ours_ctilde(l);
    parts.emplace_back(l.name, ct.is_zero() ? 0.0 : ct.ln / std::log(10.0));
    sum = sum + ct.pow(2.0 / 3.0).ceil();
  }
  LogReal v = c.four_over_n + LogReal::of(12.0 * harmonic_number(c.in.n - 1)) * c.inv_sqrt_n *
                                  LogReal::of(std::sqrt(std::log(2.0 * c.max_params()))) * sum.pow(1.5);
  auto e = entry("ours_clubs", v);
  e.breakdown = std::move(parts);
  return e;
}

BoundEntry row_ours_spades(const SuiteContext& c) {
  LogReal sum;
  for (const auto& l : c.in.layers) {
    LogReal x = (LogReal::of(c.L * c.L) * c.ours_ctilde(l).pow(2.0)).ceil();
    double lg = x.is_zero() ? 0.0 : (x.ln < 600 ? std::log1p(std::exp(x.ln)) : x.ln);
    double ps = x.is_zero() ? 0.0 : psi(std::exp(std::min(x.ln, 600.0)));
    sum = sum + LogReal::of(2.0 * l.param_count * (lg + ps));
  }
  return entry("ours_spades", LogReal::of(12.0) * sum.pow(0.5) * c.inv_sqrt_n);
}

BoundEntry row_bartlett(const SuiteContext& c) {
  LogReal sum;
  std::vector<std::pair<std::string, double>> parts;
  for (const auto& l : c.in.layers) {
    const auto& g = l.geometry;
    double lg = std::log(2.0 * l.param_count * g.d * g.d / (g.t * g.t * g.k * g.k));
    LogReal term = LogReal::of(std::max(0.0, lg)) * LogReal::of(g.d / g.t).pow(4.0) *
                   (LogReal::of(l.sum_l2_out_diff) / LogReal::of(l.lipschitz)).pow(2.0);
    term = term.pow(1.0 / 3.0);
    parts.emplace_back(l.name, term.is_zero() ? 0.0 : term.ln / std::log(10.0));
    sum = sum + term;
  }
  LogReal v = c.four_over_n + LogReal::of(48.0 / c.in.gamma) * c.x_scale * c.prod_s * sum.pow(1.5) *
                                  LogReal::of(std::log(c.n)) * c.inv_sqrt_n;
  auto e = entry("bartlett", v);
  e.breakdown = std::move(parts);
  return e;
}

BoundEntry ledent_from_r(const std::string& name, const SuiteContext& c, const std::vector<LogReal>& r, bool add_4n) {
  LogReal rsum, gamma_max, wbar;
  std::vector<std::pair<std::string, double>> parts;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto& l = c.in.layers[i];
    rsum = rsum + r[i].pow(2.0 / 3.0);
    LogReal g = r[i] * LogReal::of(l.out_width * l.out_width * l.out_channels);
    if (g.ln > gamma_max.ln) gamma_max = g;
    LogReal w = LogReal::of(l.geometry.d * l.geometry.d * l.geometry.c);
    if (w.ln > wbar.ln) wbar = w;
    parts.emplace_back(l.name, r[i].is_zero() ? 0.0 : r[i].ln / std::log(10.0));
  }
  LogReal big_r = rsum.pow(1.5);
  LogReal inside = LogReal::of(32.0) * gamma_max * LogReal::of(c.n * c.n) + LogReal::of(7.0 * c.n) * wbar;
  LogReal log2_term = LogReal::of(inside.ln / std::log(2.0));
  LogReal v = LogReal::of(768.0) * big_r * log2_term.pow(0.5) * LogReal::of(std::log(c.n)) * c.inv_sqrt_n;
  if (add_4n) v = c.four_over_n + v;
  auto e = entry(name, v);
  e.breakdown = std::move(parts);
  return e;
}

BoundEntry row_ledent_main(const SuiteContext& c) {
  const auto& ls = c.in.layers;
  const std::size_t L = ls.size();
  for (const auto& l : ls)
    if (!l.patch_norm_in) return absent("ledent_main", "per-layer patch norms need a forward pass over the data");
  // B_U for U = 1..L-1 is the patch norm of the input to layer U+1; B_L stands in as gamma.
  auto b_of = [&](std::size_t u) { return u < L ? *ls[u].patch_norm_in : c.in.gamma; };
  std::vector<LogReal> r(L);
  for (std::size_t i = 1; i <= L; ++i) {
    const auto& l = ls[i - 1];
    LogReal best;
    for (std::size_t u = i; u <= L; ++u) {
      double bu = b_of(u);
      if (!(bu > 0)) return absent("ledent_main", "zero patch norm at layer " + std::to_string(u + 1));
      LogReal p = LogReal::of(1.0);
      for (std::size_t v = i + 1; v <= u; ++v) p = p * LogReal::of(ls[v - 1].lipschitz);
      LogReal q = p / LogReal::of(bu);
      if (q.ln > best.ln) best = q;
    }
    LogReal rho_plus = i == L ? LogReal::of(1.0 / c.in.gamma) : LogReal::of(l.out_width) * best;
    LogReal a = LogReal::of(i == L ? l.fro_diff : l.sum_l2_out_diff);
    r[i - 1] = a * LogReal::of(*l.patch_norm_in) * rho_plus;
  }
  return ledent_from_r("ledent_main", c, r, false);
}

BoundEntry row_ledent_simple(const SuiteContext& c) {
  const auto& ls = c.in.layers;
  LogReal head = LogReal::of(c.in.input_patch_norm / c.in.gamma) * LogReal::of(ls.back().max_l2_out);
  for (std::size_t j = 0; j + 1 < ls.size(); ++j) head = head * LogReal::of(ls[j].lipschitz);
  std::vector<LogReal> r;
  for (const auto& l : ls)
    r.push_back(head * LogReal::of(l.out_width) * LogReal::of(l.sum_l2_out_diff) / LogReal::of(l.lipschitz));
  return ledent_from_r("ledent_simple", c, r, true);
}

BoundEntry row_lin(const SuiteContext& c) {
  LogReal sum;
  for (const auto& l : c.in.layers)
    sum = sum + LogReal::of(l.param_count * l.param_count * l.geometry.d / l.geometry.t) * LogReal::of(l.fro) /
                    LogReal::of(l.lipschitz);
  LogReal inner = LogReal::of(2.0 / c.in.gamma) * c.x_scale * LogReal::of(c.L * c.L) * c.prod_s * sum;
  return entry("lin", LogReal::of(16.0) * inner.pow(0.25) * c.inv_sqrt_n);
}

LogReal prod_max_l1(const SuiteContext& c) {
  LogReal p = LogReal::of(1.0);
  for (const auto& l : c.in.layers) p = p * LogReal::of(l.max_l1_out);
  return p;
}

LogReal prod_l2_scaled(const SuiteContext& c) {
  LogReal p = LogReal::of(1.0);
  for (const auto& l : c.in.layers) p = p * LogReal::of(l.geometry.d / l.geometry.t * l.fro);
  return p;
}

BoundEntry row_neyshabur_l1inf(const SuiteContext& c) {
  const auto& g = c.in.layers.front().geometry;
  LogReal v = LogReal::of(std::pow(2.0, c.L) * c.in.classes) * prod_max_l1(c) *
              LogReal::of(std::log(2.0 * g.c * g.d * g.d)) * LogReal::of(c.in.max_abs_input) * c.inv_sqrt_n;
  return entry("neyshabur_l1inf", v);
}

BoundEntry row_golowich_l1inf(const SuiteContext& c) {
  const auto& g = c.in.layers.front().geometry;
  LogReal v = LogReal::of(2.0 * c.in.classes * std::sqrt(c.L + 1.0 + std::log(g.c * g.d * g.d))) * prod_max_l1(c) *
              LogReal::of(std::sqrt(c.in.max_pixel_energy / c.n)) * c.inv_sqrt_n;
  return entry("golowich_l1inf", v);
}

BoundEntry row_gouk_l1inf(const SuiteContext& c) {
  const auto& g = c.in.layers.front().geometry;
  LogReal sum;
  for (const auto& l : c.in.layers) {
    if (!(l.max_l1_out > 0)) return absent("gouk_l1inf", "layer '" + l.name + "' is identically zero");
    sum = sum + LogReal::of(l.max_l1_out_diff / l.max_l1_out);
  }
  LogReal v = LogReal::of(std::pow(2.0, c.L + 1.0) * c.in.classes * std::sqrt(std::log(2.0 * g.c * g.d * g.d))) *
              prod_max_l1(c) * sum * LogReal::of(c.in.max_abs_input) * c.inv_sqrt_n;
  return entry("gouk_l1inf", v);
}

BoundEntry row_neyshabur_l2(const SuiteContext& c) {
  LogReal v = LogReal::of(std::pow(2.0, c.L - 1.0) * c.in.classes) * c.x_scale * prod_l2_scaled(c) * c.inv_sqrt_n;
  return entry("neyshabur_l2", v);
}

BoundEntry row_golowich_l2(const SuiteContext& c) {
  LogReal v = LogReal::of(c.in.classes) * c.x_scale * prod_l2_scaled(c) *
              LogReal::of(std::sqrt(2.0 * std::log(2.0) * c.L) + 1.0) * c.inv_sqrt_n;
  return entry("golowich_l2", v);
}

BoundEntry row_gouk_l2(const SuiteContext& c) {
  LogReal prod = LogReal::of(1.0), sum, running = LogReal::of(1.0);
  for (const auto& l : c.in.layers) {
    const auto& g = l.geometry;
    if (!(l.fro > 0)) return absent("gouk_l2", "layer '" + l.name + "' is identically zero");
    prod = prod * LogReal::of(g.d * g.d / g.t * std::sqrt(g.c) * l.fro);
    running = running * LogReal::of(g.d * std::sqrt(g.c));
    sum = sum + LogReal::of(l.fro_diff) / (LogReal::of(l.fro) * running);
  }
  LogReal v = LogReal::of(std::pow(2.0, c.L) * std::sqrt(2.0) * c.in.classes) * c.x_scale * prod * sum * c.inv_sqrt_n;
  return entry("gouk_l2", v);
}

}  // namespace

const BoundEntry* BoundReport::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

BoundReport comparison_suite(const ComparisonInput& in) {
  if (in.layers.empty()) throw UsageError("comparison suite needs at least one layer");
  if (in.n < 2) throw UsageError("comparison suite needs n >= 2");
  if (!(in.gamma > 0)) throw UsageError("margin gamma must be > 0");
  for (const auto& l : in.layers)
    if (!(l.lipschitz > 0)) throw UsageError("layer '" + l.name + "': Lipschitz constant must be > 0");
  SuiteContext c(in);
  BoundReport rep;
  using RowFn = BoundEntry (*)(const SuiteContext&);
  const std::pair<const char*, RowFn> rows[] = {
      {"ours_clubs", row_ours_clubs},         {"bartlett", row_bartlett},
      {"ledent_main", row_ledent_main},       {"ledent_simple", row_ledent_simple},
      {"ours_spades", row_ours_spades},       {"lin", row_lin},
      {"neyshabur_l1inf", row_neyshabur_l1inf}, {"golowich_l1inf", row_golowich_l1inf},
      {"gouk_l1inf", row_gouk_l1inf},         {"neyshabur_l2", row_neyshabur_l2},
      {"golowich_l2", row_golowich_l2},       {"gouk_l2", row_gouk_l2}};
  for (const auto& [name, f] : rows) {
    try {
      rep.rows.push_back(f(c));
    } catch (const NumericalError& e) {
      rep.rows.push_back(absent(name, e.what()));
    }
  }
  return rep;
}

// Margins ----------------------------------------------------------------------

double margin_operator(const std::vector<double>& logits, std::size_t label) {
  if (logits.size() < 2) throw UsageError("margin needs at least two classes");
  if (label >= logits.size()) throw UsageError("label out of range");
  double other = -kInf;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != label) other = std::max(other, logits[i]);
  return logits[label] - other;
}

double ramp_loss(double r, double gamma) {
  if (!(gamma > 0)) throw UsageError("ramp loss needs gamma > 0");
  if (r > 0) return 1.0;
  if (r >= -gamma) return 1.0 + r / gamma;
  return 0.0;
}

std::vector<double> margins(const std::vector<double>& logits, const std::vector<std::size_t>& labels,
                            std::size_t classes) {
  if (classes < 2) throw UsageError("need at least two classes");
  if (logits.size() != labels.size() * classes) throw UsageError("logit count does not match labels");
  std::vector<double> m(labels.size());
  std::vector<double> row(classes);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    std::copy(logits.begin() + static_cast<long>(k * classes), logits.begin() + static_cast<long>((k + 1) * classes),
              row.begin());
    m[k] = margin_operator(row, labels[k]);
  }
  return m;
}

namespace {

double risk_from_margins(const std::vector<double>& m, double gamma) {
  double s = 0.0;
  for (double v : m) s += ramp_loss(-v, gamma);
  return s / static_cast<double>(m.size());
}

}  // namespace

double ramp_risk(const std::vector<double>& logits, const std::vector<std::size_t>& labels, std::size_t classes,
                 double gamma) {
  auto m = margins(logits, labels, classes);
  if (m.empty()) throw UsageError("ramp risk needs at least one sample");
  return risk_from_margins(m, gamma);
}

std::optional<double> margin_for_equal_ramp_loss(const std::vector<double>& logits_ref,
                                                 const std::vector<std::size_t>& labels_ref,
                                                 const std::vector<double>& logits_new,
                                                 const std::vector<std::size_t>& labels_new, std::size_t classes,
                                                 double gamma_ref, double gamma_max, double tol) {
  const double target = ramp_risk(logits_ref, labels_ref, classes, gamma_ref);
  auto m = margins(logits_new, labels_new, classes);
  if (m.empty()) throw UsageError("ramp risk needs at least one sample");
  // Risk is continuous and nondecreasing in gamma; take the largest gamma not exceeding the target.
  double floor_risk = 0.0;
  for (double v : m) floor_risk += v <= 0 ? 1.0 : 0.0;
  floor_risk /= static_cast<double>(m.size());
  if (floor_risk > target + tol) return std::nullopt;
  const double top = risk_from_margins(m, gamma_max);
  if (top <= target) return std::abs(top - target) <= tol ? std::optional<double>(gamma_max) : std::nullopt;
  double lo = 0.0, hi = gamma_max;
  for (int it = 0; it < 300 && hi - lo > 1e-15 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    if (risk_from_margins(m, mid) <= target) lo = mid;
    else hi = mid;
  }
  if (lo == 0.0) return std::nullopt;
  if (std::abs(risk_from_margins(m, lo) - target) > tol) return std::nullopt;
  return lo;
}

}  // namespace capbound
