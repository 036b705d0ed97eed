#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace capbound {

enum class LayerKind { conv, dense };
enum class ShortcutKind { zero, identity, fixed };

struct LayerGeometry {
  double d = 1;  // input spatial width
  double t = 1;  // stride
  double k = 1;  // kernel size
  double c = 1;  // input channels
};

struct LayerRecord {
  std::string name;
  LayerKind kind = LayerKind::conv;
  double lipschitz = 1.0;  // s_ij
  double distance = 0.0;   // b_ij
  double rho = 1.0;        // Lipschitz constant of the nonlinearity after the layer
  double param_count = 1;  // W_ij
  LayerGeometry geometry;
};

struct BlockRecord {
  std::vector<LayerRecord> layers;
  ShortcutKind shortcut = ShortcutKind::zero;
  double shortcut_lip = 0.0;  // used when shortcut == fixed
  double rho = 1.0;           // block nonlinearity

  double shortcut_lipschitz() const;
  /// s_i = Lip(g_i) + prod_j rho_ij s_ij
  double lipschitz() const;
};

struct CapacityInput {
  std::vector<BlockRecord> blocks;
  std::size_t n = 1;
  double data_norm = 0.0;
  double gamma = 1.0;

  void validate() const;
  std::size_t total_layers() const;
  double max_params() const;
};

struct CapacityTerm {
  std::size_t block = 0, layer = 0;
  std::string name;
  double c = 0.0;        // C_ij
  double c_tilde = 0.0;  // 2 C_ij / gamma
};

std::vector<CapacityTerm> capacity_terms(const CapacityInput& in);

enum class CoverVariant { norms, params, params_appendix };
CoverVariant parse_cover_variant(const std::string& name);

double single_layer_cover_bound(double param_count, double data_norm, double b, double eps, CoverVariant v);
double whole_network_cover_bound(const CapacityInput& in, double eps, CoverVariant v);

/// Plain chain sigma_L o f_L o ... o sigma_1 o f_1 with C_i = 2 |X|/sqrt(n) prod(rho_l s_l) b_i / s_i.
double feedforward_cover_bound(const std::vector<LayerRecord>& layers, std::size_t n, double data_norm, double eps,
                               CoverVariant v);

double harmonic_number(std::uint64_t m);
double hurwitz_zeta(double s, double q, double tol = 1e-12);
/// psi(x) = zeta(3/2,1)^{1/3} zeta(3/2, 1+1/x)^{2/3}, psi(0) = 0.
double psi(double x);

enum class RademacherKind { clubs, spades };
RademacherKind parse_rademacher_kind(const std::string& name);

double rademacher_clubs(const CapacityInput& in);
/// `appendix_constant` swaps 2W_ij for 2W_ij - 1.
double rademacher_spades(const CapacityInput& in, bool appendix_constant = false);
double generalization_bound(const CapacityInput& in, double ramp_risk, double delta, RademacherKind kind);

struct BinomialCheck {
  unsigned __int128 exact = 0;
  unsigned __int128 bound_k1_pow_n = 0;  // (k+1)^n
  unsigned __int128 bound_n1_pow_k = 0;  // (n+1)^k
  bool holds() const;
};

std::string to_string_u128(unsigned __int128 v);
BinomialCheck binomial_bound_check(std::uint64_t n, std::uint64_t k);
/// Exact C(n, k); throws ResourceError on overflow.
unsigned __int128 binomial(std::uint64_t n, std::uint64_t k);

// Comparison suite -----------------------------------------------------------

struct LayerStats {
  std::string name;
  double lipschitz = 1.0;       // s_i
  double dist_21 = 0.0;         // ||K - K0||_{2,1}
  double sum_l2_out = 0.0;      // sum_o ||K_o||_2
  double sum_l2_out_diff = 0.0; // sum_o ||(K - K0)_o||_2
  double max_l2_out = 0.0;      // max_o ||K_o||_2
  double max_l1_out = 0.0;      // max_o ||K_o||_1
  double max_l1_out_diff = 0.0; // max_o ||(K - K0)_o||_1
  double fro = 0.0;             // ||K||_2
  double fro_diff = 0.0;        // ||K - K0||_2
  LayerGeometry geometry;
  double out_width = 1;         // d_{i+1}
  double out_channels = 1;      // c_{i+1}
  double param_count = 1;       // W_i
  std::optional<double> patch_norm_in;  // B_{i-1}(X)
};

struct ComparisonInput {
  std::vector<LayerStats> layers;
  std::size_t n = 1;
  double gamma = 1.0;
  double classes = 2;
  double data_norm = 0.0;        // ||X||
  double max_abs_input = 0.0;    // max_k ||x_k||_inf
  double max_pixel_energy = 0.0; // max_abc sum_k x_k[abc]^2
  double input_patch_norm = 0.0; // B_0(X)
};

struct BoundEntry {
  std::string name;
  bool present = true;
  std::string absent_reason;
  double value = 0.0;
  double log10_value = 0.0;
  bool saturated = false;  // value overflowed; only log10_value is meaningful
  std::vector<std::pair<std::string, double>> breakdown;
};

struct BoundReport {
  std::vector<BoundEntry> rows;
  const BoundEntry* find(const std::string& name) const;
};

BoundReport comparison_suite(const ComparisonInput& in);

// Margins ----------------------------------------------------------------------

double margin_operator(const std::vector<double>& logits, std::size_t label);
double ramp_loss(double r, double gamma);
/// logits stored row-major, one row of `classes` entries per sample.
double ramp_risk(const std::vector<double>& logits, const std::vector<std::size_t>& labels, std::size_t classes,
                 double gamma);
std::vector<double> margins(const std::vector<double>& logits, const std::vector<std::size_t>& labels,
                            std::size_t classes);

/// Largest gamma in (0, gamma_max] whose ramp risk on the new model matches the reference risk.
std::optional<double> margin_for_equal_ramp_loss(const std::vector<double>& logits_ref,
                                                 const std::vector<std::size_t>& labels_ref,
                                                 const std::vector<double>& logits_new,
                                                 const std::vector<std::size_t>& labels_new, std::size_t classes,
                                                 double gamma_ref, double gamma_max = 1e6, double tol = 1e-6);

}  // namespace capbound
