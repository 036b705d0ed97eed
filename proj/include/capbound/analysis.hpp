#pragma once

#include <optional>
#include <string>
#include <vector>

#include "capbound/capacity.hpp"
#include "capbound/lipschitz.hpp"
#include "capbound/train.hpp"

namespace capbound {

struct LayerAnalysis {
  LayerStats stats;
  std::string lipschitz_method;
  bool fixed = false;  // the simplex head
};

struct Analysis {
  std::vector<LayerAnalysis> layers;  // conv layers then the head
  CapacityInput capacity;
  ComparisonInput comparison;
  std::vector<CapacityTerm> terms;
  double clubs = 0.0;
  double spades = 0.0;
  double gamma = 1.0;
  double error = 0.0;
  double ramp_risk = 0.0;
  std::optional<double> delta;
  std::optional<double> generalization_clubs, generalization_spades;
  BoundReport suite;
  std::vector<double> logits;
};

/// Capacity input for `net` with measured per-layer Lipschitz constants and distances.
CapacityInput capacity_input(const TinyNet& net, std::size_t n, double data_norm, double gamma,
                             const PowerIterationOptions& power = {});

Analysis analyze_model(const TinyNet& net, const LabeledData& data, double gamma,
                       std::optional<double> delta = std::nullopt, const PowerIterationOptions& power = {});

/// One JSON object per line: layers, capacity terms, bounds and a summary.
std::vector<std::string> analysis_jsonl(const Analysis& a);
std::string analysis_text(const Analysis& a);

struct LayerSpectrum {
  std::string name;
  bool eligible = false;
  std::string reason;
  std::size_t count = 0;
  double min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
  double power_iteration_max = 0;
};

std::vector<LayerSpectrum> layer_spectra(const TinyNet& net, const PowerIterationOptions& power = {});
std::string spectrum_json(const LayerSpectrum& s);

/// Linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

}  // namespace capbound
