#include "capbound/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "capbound/errors.hpp"
#include "capbound/lipschitz.hpp"

namespace capbound {

namespace {

void check_layer_shapes(const ArchShapes& shapes, const std::vector<KernelTensor>& ks, const char* what) {
  if (ks.size() != shapes.layers.size())
    throw UsageError(std::string(what) + ": expected " + std::to_string(shapes.layers.size()) + " tensors, got " +
                     std::to_string(ks.size()));
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i].shape() != shapes.layers[i].kernel_shape())
      throw UsageError(std::string(what) + ": tensor " + std::to_string(i) + " has the wrong shape");
}

}  // namespace

TinyNet TinyNet::init(const ArchDoc& doc, std::uint64_t seed) {
  TinyNet net;
  net.doc = doc;
  net.shapes = resolve_shapes(doc);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (const auto& s : net.shapes.layers) {
    KernelTensor k(s.kernel_shape()[0], s.kernel_shape()[1], s.kernel_shape()[2], s.kernel_shape()[3]);
    const double sd = std::sqrt(2.0 / static_cast<double>(s.spec.c_in * s.spec.kh * s.spec.kw));
    for (double& v : k.values()) v = sd * nd(rng);
    net.weights.push_back(k);
  }
  net.reference = net.weights;
  net.classifier = simplex_classifier(doc.classes, net.shapes.feature_shape[0]);
  return net;
}

TinyNet TinyNet::from_weights(const ArchDoc& doc, std::vector<KernelTensor> weights,
                              std::vector<KernelTensor> reference) {
  TinyNet net;
  net.doc = doc;
  net.shapes = resolve_shapes(doc);
  check_layer_shapes(net.shapes, weights, "weights");
  check_layer_shapes(net.shapes, reference, "reference");
  net.weights = std::move(weights);
  net.reference = std::move(reference);
  net.classifier = simplex_classifier(doc.classes, net.shapes.feature_shape[0]);
  return net;
}

const LayerDoc& TinyNet::layer_doc(std::size_t i) const {
  const auto& s = shapes.layers.at(i);
  return doc.blocks[s.block].layers[s.index];
}

std::size_t TinyNet::param_count() const {
  std::size_t n = 0;
  for (const auto& k : weights) n += k.size();
  return n;
}

namespace {

Sample max_pool(const Sample& r, std::vector<std::size_t>& arg) {
  const std::size_t c = r.channels(), h = r.height(), w = r.width();
  const std::size_t ph = pooled_size(h), pw = pooled_size(w);
  Sample out(c, ph, pw);
  arg.assign(c * ph * pw, 0);
  std::size_t j = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < ph; ++p)
      for (std::size_t q = 0; q < pw; ++q, ++j) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t where = 0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long y = 2 * static_cast<long>(p) + dy, x = 2 * static_cast<long>(q) + dx;
            if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
            const double v = r(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            if (v > best) {
              best = v;
              where = (ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x);
            }
          }
        out.values()[j] = best;
        arg[j] = where;
      }
  return out;
}

/// Channels [0, c) pool 2x2 windows at even offsets, channels [c, 2c) the windows shifted by one pixel.
Sample shifted_pool(const Sample& x, std::vector<std::size_t>& arg) {
  const std::size_t c = x.channels(), h = x.height(), w = x.width();
  Sample out(2 * c, h / 2, w / 2);
  arg.assign(out.size(), 0);
  std::size_t j = 0;
  for (std::size_t shift = 0; shift < 2; ++shift)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h / 2; ++p)
        for (std::size_t q = 0; q < w / 2; ++q, ++j) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t where = 0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t y = (2 * p + shift + dy) % h, xx = (2 * q + shift + dx) % w;
              const double v = x(ch, y, xx);
              if (v > best) {
                best = v;
                where = (ch * h + y) * w + xx;
              }
            }
          out.values()[j] = best;
          arg[j] = where;
        }
  return out;
}

void add_into(Sample& a, const Sample& b) {
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

struct Trace {
  std::vector<Sample> layer_in;
  std::vector<Sample> pre_act;
  std::vector<std::vector<std::size_t>> pool_arg;
  std::vector<std::vector<std::size_t>> shortcut_arg;
  Sample features;
  std::vector<double> logits;
};

void run(const TinyNet& net, const Sample& x, Trace& t) {
  if (x.shape() != std::array<std::size_t, 3>{net.doc.in_channels, net.doc.height, net.doc.width})
    throw UsageError("input sample shape does not match the architecture");
  const std::size_t L = net.layer_count();
  t.layer_in.resize(L);
  t.pre_act.resize(L);
  t.pool_arg.assign(L, {});
  t.shortcut_arg.assign(net.doc.blocks.size(), {});
  Sample cur = x;
  std::size_t li = 0;
  for (std::size_t bi = 0; bi < net.doc.blocks.size(); ++bi) {
    const auto& b = net.doc.blocks[bi];
    Sample block_in = cur;
    for (std::size_t j = 0; j < b.layers.size(); ++j, ++li) {
      const auto& s = net.shapes.layers[li];
      t.layer_in[li] = cur;
      Sample z = conv_forward(net.weights[li], s.spec, cur);
      Sample r = z;
      if (b.layers[j].relu)
        for (double& v : r.values()) v = std::max(v, 0.0);
      t.pre_act[li] = std::move(z);
      cur = b.layers[j].pool ? max_pool(r, t.pool_arg[li]) : std::move(r);
    }
    if (b.shortcut == BlockShortcut::identity) {
      add_into(cur, block_in);
    } else if (b.shortcut == BlockShortcut::shifted_pool) {
      add_into(cur, shifted_pool(block_in, t.shortcut_arg[bi]));
    }
  }
  t.features = cur;
  const std::size_t c = cur.channels(), hw = cur.height() * cur.width();
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c));
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t k = 0; k < hw; ++k) s += cur.values()[ch * hw + k];
    pooled[static_cast<Eigen::Index>(ch)] = s / static_cast<double>(hw);
  }
  Eigen::VectorXd v = net.classifier * pooled;
  t.logits.assign(v.data(), v.data() + v.size());
}

/// Accumulates d<dlogits, logits>/dK into grads.
void backprop(const TinyNet& net, const Trace& t, const std::vector<double>& dlogits,
              std::vector<KernelTensor>& grads) {
  Eigen::Map<const Eigen::VectorXd> dl(dlogits.data(), static_cast<Eigen::Index>(dlogits.size()));
  Eigen::VectorXd dpooled = net.classifier.transpose() * dl;
  const auto& f = t.features;
  const std::size_t hw = f.height() * f.width();
  Sample d(f.channels(), f.height(), f.width());
  for (std::size_t ch = 0; ch < f.channels(); ++ch)
    for (std::size_t k = 0; k < hw; ++k)
      d.values()[ch * hw + k] = dpooled[static_cast<Eigen::Index>(ch)] / static_cast<double>(hw);

  std::size_t li = net.layer_count();
  for (std::size_t bi = net.doc.blocks.size(); bi-- > 0;) {
    const auto& b = net.doc.blocks[bi];
    const std::size_t first = li - b.layers.size();
    const Sample& block_in = t.layer_in[first];
    Sample d_short(block_in.channels(), block_in.height(), block_in.width());
    if (b.shortcut == BlockShortcut::identity) {
      d_short = d;
    } else if (b.shortcut == BlockShortcut::shifted_pool) {
      const auto& arg = t.shortcut_arg[bi];
      for (std::size_t j = 0; j < arg.size(); ++j) d_short.values()[arg[j]] += d.values()[j];
    }
    for (std::size_t j = b.layers.size(); j-- > 0;) {
      --li;
      const auto& s = net.shapes.layers[li];
      const Sample& z = t.pre_act[li];
      Sample dz(z.channels(), z.height(), z.width());
      if (b.layers[j].pool) {
        const auto& arg = t.pool_arg[li];
        for (std::size_t k = 0; k < arg.size(); ++k) dz.values()[arg[k]] += d.values()[k];
      } else {
        dz = d;
      }
      if (b.layers[j].relu)
        for (std::size_t k = 0; k < dz.size(); ++k)
          if (!(z.values()[k] > 0)) dz.values()[k] = 0.0;
      grads[li] += conv_weight_grad(net.weights[li], s.spec, t.layer_in[li], dz);
      d = conv_adjoint(net.weights[li], s.spec, dz);
    }
    add_into(d, d_short);
  }
}

std::vector<KernelTensor> zero_like(const std::vector<KernelTensor>& ks) {
  std::vector<KernelTensor> out;
  for (const auto& k : ks) out.emplace_back(k.c_out(), k.c_in(), k.kh(), k.kw());
  return out;
}

}  // namespace

std::vector<double> forward(const TinyNet& net, const Sample& x) {
  Trace t;
  run(net, x, t);
  return t.logits;
}

std::vector<double> forward(const TinyNet& net, const DataBatch& batch) {
  std::vector<double> out;
  out.reserve(batch.size() * net.doc.classes);
  Trace t;
  for (const auto& s : batch.samples()) {
    run(net, s, t);
    out.insert(out.end(), t.logits.begin(), t.logits.end());
  }
  return out;
}

std::vector<Sample> layer_inputs(const TinyNet& net, const Sample& x) {
  Trace t;
  run(net, x, t);
  std::vector<Sample> out = t.layer_in;
  out.push_back(t.features);
  return out;
}

Gradients backward(const TinyNet& net, const std::vector<const Sample*>& batch,
                   const std::vector<std::size_t>& labels) {
  if (batch.size() != labels.size()) throw UsageError("batch and label counts differ");
  if (batch.empty()) throw UsageError("empty batch");
  Gradients g;
  g.weights = zero_like(net.weights);
  const std::size_t kappa = net.doc.classes;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Trace t;
  std::vector<double> dl(kappa);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (labels[i] >= kappa) throw UsageError("label out of range");
    run(net, *batch[i], t);
    const double mx = *std::max_element(t.logits.begin(), t.logits.end());
    double z = 0.0;
    for (double v : t.logits) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    g.loss += (lse - t.logits[labels[i]]) * inv_b;
    for (std::size_t c = 0; c < kappa; ++c)
      dl[c] = (std::exp(t.logits[c] - lse) - (c == labels[i] ? 1.0 : 0.0)) * inv_b;
    backprop(net, t, dl, g.weights);
  }
  return g;
}

Gradients backward(const TinyNet& net, const DataBatch& batch, const std::vector<std::size_t>& labels) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch.samples()) ptrs.push_back(&s);
  return backward(net, ptrs, labels);
}

Gradients logit_gradient(const TinyNet& net, const Sample& x, const std::vector<double>& logit_weights) {
  if (logit_weights.size() != net.doc.classes) throw UsageError("logit weighting has the wrong length");
  Trace t;
  run(net, x, t);
  Gradients g;
  g.weights = zero_like(net.weights);
  for (std::size_t c = 0; c < t.logits.size(); ++c) g.loss += logit_weights[c] * t.logits[c];
  backprop(net, t, logit_weights, g.weights);
  return g;
}

ArchDoc demo_arch(std::size_t conv_layers, std::size_t width) {
  if (conv_layers < 1 || width < 1) throw UsageError("need at least one layer of width >= 1");
  ArchDoc doc;
  for (std::size_t i = 0; i < conv_layers; ++i) {
    LayerDoc l;
    l.name = "conv" + std::to_string(i + 1);
    l.out_channels = width;
    l.pool = i == 0;
    l.relu = i + 1 < conv_layers;
    doc.blocks.push_back(BlockDoc{{l}, BlockShortcut::none});
  }
  return doc;
}

// Synthetic tasks --------------------------------------------------------------

SynthTask parse_synth_task(const std::string& name) {
  if (name == "blobs") return SynthTask::blobs;
  if (name == "rings") return SynthTask::rings;
  throw UsageError("unknown task '" + name + "'");
}

std::string to_string(SynthTask t) { return t == SynthTask::blobs ? "blobs" : "rings"; }

LabeledData synth_data(SynthTask task, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw UsageError("need at least two samples");
  constexpr std::size_t side = 8;
  std::mt19937_64 rng(seed ^ (task == SynthTask::blobs ? 0x9e3779b97f4a7c15ULL : 0xc2b2ae3d27d4eb4fULL));
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  std::vector<Sample> samples;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    Sample s(1, side, side);
    const double cy = 2.0 + 3.0 * ud(rng), cx = 2.0 + 3.0 * ud(rng);
    if (task == SynthTask::blobs) {
      // Bright blob for class 1, dark for class 0; zero-mean noise keeps the pixel mean's sign.
      const double amp = (y == 1 ? 1.0 : -1.0) * (0.5 + 0.5 * ud(rng));
      std::vector<double> noise(side * side);
      for (double& v : noise) v = 0.3 * nd(rng);
      const double mean = std::accumulate(noise.begin(), noise.end(), 0.0) / static_cast<double>(noise.size());
      for (std::size_t p = 0; p < side; ++p)
        for (std::size_t q = 0; q < side; ++q) {
          const double r2 = (p - cy) * (p - cy) + (q - cx) * (q - cx);
          s(0, p, q) = amp * std::exp(-r2 / (2.0 * 1.5 * 1.5)) + noise[p * side + q] - mean;
        }
    } else {
      // Thin ring of radius 1.5 (class 0) or 2.75 (class 1); each image is centered to zero mean.
      const double radius = y == 1 ? 2.75 : 1.5;
      const double amp = 0.7 + 0.3 * ud(rng);
      const double ry = 3.0 + ud(rng), rx = 3.0 + ud(rng);
      for (std::size_t p = 0; p < side; ++p)
        for (std::size_t q = 0; q < side; ++q) {
          const double r = std::hypot(p - ry, q - rx);
          s(0, p, q) = amp * std::exp(-(r - radius) * (r - radius) / (2.0 * 0.5 * 0.5)) + 0.2 * nd(rng);
        }
      double mean = 0.0;
      for (double v : s.values()) mean += v;
      mean /= static_cast<double>(s.size());
      for (double& v : s.values()) v -= mean;
    }
    samples.push_back(std::move(s));
    labels.push_back(y);
  }
  return LabeledData{DataBatch(std::move(samples)), std::move(labels)};
}

double pixel_mean_threshold_error(const LabeledData& d, double threshold) {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    const auto v = d.x[i].values();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const std::size_t pred = mean > threshold ? 1 : 0;
    if (pred != d.labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(d.x.size());
}

// Training ---------------------------------------------------------------------

void TrainConfig::validate() const {
  if (cadence < 1) throw UsageError("projection cadence must be >= 1");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw UsageError("learning rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw UsageError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw UsageError("weight decay must be >= 0");
  if (!(ramp_gamma > 0)) throw UsageError("ramp gamma must be > 0");
}

ConstraintSet layer_constraints(const TinyNet& net, std::size_t i) {
  const auto& l = net.layer_doc(i);
  ConstraintSet c;
  c.reference = net.reference.at(i);
  c.distance_bound = l.distance_constraint;
  c.lipschitz_bound = l.lipschitz_constraint;
  c.spec = net.shapes.layers.at(i).spec;
  return c;
}

double classification_error(const std::vector<double>& logits, const std::vector<std::size_t>& labels,
                            std::size_t classes) {
  if (labels.empty() || logits.size() != labels.size() * classes) throw UsageError("logits and labels disagree");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = logits.data() + i * classes;
    const std::size_t pred = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
    if (pred != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

namespace {

bool layer_constrained(const LayerDoc& l) {
  return std::isfinite(l.lipschitz_constraint) || std::isfinite(l.distance_constraint);
}

/// One projection cycle on layer i (or several when `rounds` > 1).
void project_layer(TinyNet& net, std::size_t i, int rounds) {
  const auto& l = net.layer_doc(i);
  if (!layer_constrained(l)) return;
  if (!std::isfinite(l.lipschitz_constraint)) {
    net.weights[i] = project_l21_ball(net.weights[i], net.reference[i], l.distance_constraint);
    return;
  }
  net.weights[i] = alternating_projections(net.weights[i], layer_constraints(net, i), rounds).kernel;
}

double layer_violation(const TinyNet& net, std::size_t i) {
  const auto& l = net.layer_doc(i);
  if (!layer_constrained(l)) return 0.0;
  const double dist = group_norm_21(net.weights[i] - net.reference[i]);
  double v = 0.0;
  if (std::isfinite(l.distance_constraint)) {
    const double excess = std::max(0.0, dist - l.distance_constraint);
    v = l.distance_constraint > 0 ? excess / l.distance_constraint : (excess > 0 ? excess : 0.0);
  }
  if (std::isfinite(l.lipschitz_constraint)) {
    const double lip = lipschitz_constant(net.weights[i], net.shapes.layers[i].spec).value;
    v = std::max(v, std::max(0.0, lip - l.lipschitz_constraint) / l.lipschitz_constraint);
  }
  return v;
}

EpochRecord measure(const TinyNet& net, const LabeledData& train, const LabeledData& test, double loss,
                    std::size_t epoch, double lr, double ramp_gamma) {
  EpochRecord r;
  r.epoch = epoch;
  r.lr = lr;
  r.train_loss = loss;
  const auto tl = forward(net, train.x);
  r.train_error = classification_error(tl, train.labels, net.doc.classes);
  r.ramp_risk = ramp_risk(tl, train.labels, net.doc.classes, ramp_gamma);
  r.test_error = classification_error(forward(net, test.x), test.labels, net.doc.classes);
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    LayerTrace lt;
    lt.name = net.layer_doc(i).name;
    lt.lipschitz = lipschitz_constant(net.weights[i], net.shapes.layers[i].spec).value;
    lt.distance = group_norm_21(net.weights[i] - net.reference[i]);
    r.layers.push_back(lt);
  }
  return r;
}

}  // namespace

TrainResult train_projected(TinyNet net, const LabeledData& train, const LabeledData& test,
                            const TrainConfig& config) {
  config.validate();
  if (train.x.size() != train.labels.size() || test.x.size() != test.labels.size())
    throw UsageError("data and label counts differ");
  const std::size_t L = net.layer_count();
  bool any_constrained = false;
  for (std::size_t i = 0; i < L; ++i) {
    const auto& l = net.layer_doc(i);
    if (std::isfinite(l.lipschitz_constraint)) {
      if (!net.shapes.layers[i].spec.fft_eligible())
        throw UsageError("layer '" + l.name + "' needs circular stride-1 convolution for a Lipschitz constraint");
      net.weights[i] = init_scale_to_feasible(net.weights[i], net.shapes.layers[i].spec, l.lipschitz_constraint);
    }
    any_constrained = any_constrained || layer_constrained(l);
  }
  net.reference = net.weights;

  TrainResult res;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.x.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<KernelTensor> velocity = zero_like(net.weights);
  double lr = config.lr;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (std::find(config.lr_decay_epochs.begin(), config.lr_decay_epochs.end(), epoch) !=
        config.lr_decay_epochs.end())
      lr *= config.lr_decay;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const Sample*> xs;
      std::vector<std::size_t> ys;
      for (std::size_t j = start; j < end; ++j) {
        xs.push_back(&train.x[order[j]]);
        ys.push_back(train.labels[order[j]]);
      }
      Gradients g = backward(net, xs, ys);
      if (!std::isfinite(g.loss)) {
        res.diverged = true;
        res.failure = "loss became non-finite at epoch " + std::to_string(epoch);
        res.net = std::move(net);
        return res;
      }
      loss_sum += g.loss;
      ++batches;
      for (std::size_t i = 0; i < L; ++i) {
        auto v = velocity[i].values();
        auto gw = g.weights[i].values();
        auto w = net.weights[i].values();
        for (std::size_t k = 0; k < v.size(); ++k) {
          v[k] = config.momentum * v[k] + gw[k] + config.weight_decay * w[k];
          w[k] -= lr * v[k];
        }
      }
      ++step;
      if (any_constrained && step % config.cadence == 0)
        for (std::size_t i = 0; i < L; ++i) project_layer(net, i, 1);
    }
    res.trajectory.push_back(
        measure(net, train, test, loss_sum / static_cast<double>(batches), epoch, lr, config.ramp_gamma));
  }

  if (any_constrained) {
    for (std::size_t i = 0; i < L; ++i) project_layer(net, i, static_cast<int>(config.post_cycles));
    res.projection_cycles_after = config.post_cycles;
    auto worst = [&] {
      double v = 0.0;
      for (std::size_t i = 0; i < L; ++i) v = std::max(v, layer_violation(net, i));
      return v;
    };
    double v = worst();
    for (std::size_t extra = 0; v > 1e-3 && extra < config.extra_cycles; ++extra) {
      for (std::size_t i = 0; i < L; ++i)
        if (layer_violation(net, i) > 1e-3) project_layer(net, i, 1);
      ++res.projection_cycles_after;
      v = worst();
    }
    res.final_violation = v;
    res.feasible = v <= 1e-3;
    res.trajectory.push_back(measure(net, train, test, std::numeric_limits<double>::quiet_NaN(), config.epochs, lr,
                                     config.ramp_gamma));
  }
  res.net = std::move(net);
  return res;
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train_loss"] = std::isfinite(r.train_loss) ? nlohmann::json(r.train_loss) : nlohmann::json(nullptr);
  j["train_error"] = r.train_error;
  j["test_error"] = r.test_error;
  j["ramp_risk"] = r.ramp_risk;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) layers.push_back({{"name", l.name}, {"lipschitz", l.lipschitz}, {"distance", l.distance}});
  j["layers"] = layers;
  return j.dump();
}

}  // namespace capbound
