#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capbound/archdoc.hpp"
#include "capbound/project.hpp"
#include "capbound/tensors.hpp"

namespace capbound {

/// Conv network described by an ArchDoc, with per-layer weights and reference weights.
struct TinyNet {
  ArchDoc doc;
  ArchShapes shapes;
  std::vector<KernelTensor> weights;    // one per layer in forward order
  std::vector<KernelTensor> reference;  // K0 for the distance constraint
  DenseMatrix classifier;               // classes x final channels

  /// He-normal weights; the reference is a copy of the weights.
  static TinyNet init(const ArchDoc& doc, std::uint64_t seed);
  /// Takes ownership of given weights; throws UsageError on shape mismatch.
  static TinyNet from_weights(const ArchDoc& doc, std::vector<KernelTensor> weights,
                              std::vector<KernelTensor> reference);

  std::size_t layer_count() const { return weights.size(); }
  const LayerDoc& layer_doc(std::size_t i) const;
  std::size_t param_count() const;
};

/// Logits for one sample.
std::vector<double> forward(const TinyNet& net, const Sample& x);
/// Row-major logits, one row of `classes` entries per sample.
std::vector<double> forward(const TinyNet& net, const DataBatch& batch);

/// Per-layer inputs recorded during a forward pass (index = layer; last entry is the head input).
std::vector<Sample> layer_inputs(const TinyNet& net, const Sample& x);

struct Gradients {
  double loss = 0.0;  // mean cross-entropy
  std::vector<KernelTensor> weights;
};

/// Mean softmax cross-entropy over the given samples and its gradient.
Gradients backward(const TinyNet& net, const std::vector<const Sample*>& batch,
                   const std::vector<std::size_t>& labels);
Gradients backward(const TinyNet& net, const DataBatch& batch, const std::vector<std::size_t>& labels);

/// Gradient of <weights, logits(x)> with respect to the parameters for a fixed logit weighting.
Gradients logit_gradient(const TinyNet& net, const Sample& x, const std::vector<double>& logit_weights);

/// Plain chain of `conv_layers` 3x3 circular convs of `width` channels on 1 x 8 x 8 inputs, two classes. The first
/// layer pools; the last has no ReLU so the head sees signed features.
ArchDoc demo_arch(std::size_t conv_layers, std::size_t width);

// Synthetic tasks --------------------------------------------------------------

enum class SynthTask { blobs, rings };
SynthTask parse_synth_task(const std::string& name);
std::string to_string(SynthTask t);

struct LabeledData {
  DataBatch x;
  std::vector<std::size_t> labels;
};

/// 1 x 8 x 8 two-class images with alternating labels.
LabeledData synth_data(SynthTask task, std::size_t n, std::uint64_t seed);
/// Pixel-mean threshold classifier: predicts class 1 when the mean exceeds `threshold`.
double pixel_mean_threshold_error(const LabeledData& d, double threshold);

// Training ---------------------------------------------------------------------

struct TrainConfig {
  double lr = 0.05;
  std::vector<std::size_t> lr_decay_epochs;  // lr is multiplied by lr_decay at each listed epoch
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::size_t cadence = 15;          // SGD steps between alternating projection cycles
  std::size_t post_cycles = 15;      // cycles after training
  std::size_t extra_cycles = 200;    // further cycles if the post-training ones leave a violation
  double ramp_gamma = 0.1;           // margin used for the logged ramp risk
  std::uint64_t seed = 0;

  void validate() const;
};

struct LayerTrace {
  std::string name;
  double lipschitz = 0.0;
  double distance = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_error = 0.0;
  double test_error = 0.0;
  double ramp_risk = 0.0;
  std::vector<LayerTrace> layers;
};

struct TrainResult {
  TinyNet net;
  std::vector<EpochRecord> trajectory;
  bool diverged = false;
  std::string failure;
  std::size_t projection_cycles_after = 0;
  double final_violation = 0.0;  // max relative violation over layers
  bool feasible = true;
};

/// Constraints come from the LayerDoc entries of `net.doc`. Layers with a finite Lipschitz bound are rescaled
/// to that bound before training and the reference is reset to the starting weights.
TrainResult train_projected(TinyNet net, const LabeledData& train, const LabeledData& test,
                            const TrainConfig& config);

/// Constraint set of layer i on its own input grid.
ConstraintSet layer_constraints(const TinyNet& net, std::size_t i);

double classification_error(const std::vector<double>& logits, const std::vector<std::size_t>& labels,
                            std::size_t classes);

std::string epoch_record_json(const EpochRecord& r);

}  // namespace capbound
