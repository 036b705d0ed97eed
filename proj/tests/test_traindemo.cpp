#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "capbound/errors.hpp"
#include "capbound/lipschitz.hpp"
#include "capbound/train.hpp"
#include "oracles.hpp"

using namespace capbound;

namespace {

double mean_ce(const TinyNet& net, const DataBatch& x, const std::vector<std::size_t>& y) {
  auto lg = forward(net, x);
  const std::size_t c = net.doc.classes;
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double* r = lg.data() + i * c;
    double m = *std::max_element(r, r + c), z = 0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(r[k] - m);
    s += m + std::log(z) - r[y[i]];
  }
  return s / static_cast<double>(y.size());
}

}  // namespace

TEST_CASE("simplex classifier") {
  for (std::size_t k : {2, 3, 5}) {
    auto m = simplex_classifier(k, 6);
    REQUIRE(m.rows() == static_cast<long>(k));
    for (long i = 0; i < m.rows(); ++i) {
      CHECK(m.row(i).norm() == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(m.row(i).tail(6 - (k - 1)).norm() == 0.0);
      for (long j = i + 1; j < m.rows(); ++j)
        CHECK(m.row(i).dot(m.row(j)) == doctest::Approx(-1.0 / double(k - 1)).epsilon(1e-13));
    }
    CHECK(oracle::singular_values(m)(0) == doctest::Approx(std::sqrt(double(k) / double(k - 1))).epsilon(1e-13));
  }
  CHECK_THROWS_AS(simplex_classifier(3, 1), UsageError);
}

TEST_CASE("forward pass basics") {
  auto doc = demo_arch(2, 3);
  auto net = TinyNet::init(doc, 1);
  for (auto& w : net.weights) w *= 0.0;
  std::mt19937_64 rng(60);
  auto x = oracle::random_sample(rng, 1, 8, 8);
  for (double v : forward(net, x)) CHECK(v == 0.0);
  CHECK(net.param_count() == 3 * 9 + 9 * 9);
  CHECK(net.shapes.feature_shape == std::array<std::size_t, 3>{3, 4, 4});
}

TEST_CASE("gradients match central differences") {
  for (std::size_t layers : {1, 3}) {
    auto net = TinyNet::init(demo_arch(layers, 3), 2);
    auto d = synth_data(SynthTask::rings, 6, 3);
    auto g = backward(net, d.x, d.labels);
    CHECK(g.loss == doctest::Approx(mean_ce(net, d.x, d.labels)).epsilon(1e-12));
    std::mt19937_64 rng(61);
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(0, net.weights[i].size() - 1);
      for (int t = 0; t < 8; ++t) {
        const std::size_t k = pick(rng);
        const double h = 1e-6, w0 = net.weights[i].values()[k];
        net.weights[i].values()[k] = w0 + h;
        const double up = mean_ce(net, d.x, d.labels);
        net.weights[i].values()[k] = w0 - h;
        const double dn = mean_ce(net, d.x, d.labels);
        net.weights[i].values()[k] = w0;
        const double fd = (up - dn) / (2 * h), an = g.weights[i].values()[k];
        CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(an)));
      }
    }
  }
}

TEST_CASE("synthetic tasks") {
  auto a = synth_data(SynthTask::blobs, 40, 5), b = synth_data(SynthTask::blobs, 40, 5);
  CHECK(a.x.norm() == b.x.norm());
  CHECK(a.labels == b.labels);
  CHECK(synth_data(SynthTask::blobs, 40, 6).x.norm() != a.x.norm());
  CHECK(pixel_mean_threshold_error(synth_data(SynthTask::blobs, 400, 7), 0.0) == 0.0);
  CHECK(pixel_mean_threshold_error(synth_data(SynthTask::rings, 400, 7), 0.0) >= 0.4);
  CHECK_THROWS_AS(synth_data(SynthTask::rings, 1, 0), UsageError);
  CHECK(parse_synth_task("rings") == SynthTask::rings);
  CHECK_THROWS_AS(parse_synth_task("moons"), UsageError);
}

TEST_CASE("unconstrained training is plain momentum SGD") {
  auto doc = demo_arch(2, 2);
  auto net0 = TinyNet::init(doc, 4);
  auto tr = synth_data(SynthTask::blobs, 20, 8), te = synth_data(SynthTask::blobs, 10, 9);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 11;
  cfg.lr_decay_epochs = {1};
  auto res = train_projected(net0, tr, te, cfg);
  CHECK(res.trajectory.size() == 2);
  CHECK(res.projection_cycles_after == 0);

  auto net = net0;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(20);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> vel;
  for (const auto& w : net.weights) vel.emplace_back(w.size(), 0.0);
  double lr = cfg.lr;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    if (e == 1) lr *= cfg.lr_decay;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < 20; s += 8) {
      std::vector<const Sample*> xs;
      std::vector<std::size_t> ys;
      for (std::size_t j = s; j < std::min<std::size_t>(20, s + 8); ++j) {
        xs.push_back(&tr.x[order[j]]);
        ys.push_back(tr.labels[order[j]]);
      }
      auto g = backward(net, xs, ys);
      for (std::size_t i = 0; i < net.layer_count(); ++i)
        for (std::size_t k = 0; k < vel[i].size(); ++k) {
          double& w = net.weights[i].values()[k];
          vel[i][k] = cfg.momentum * vel[i][k] + g.weights[i].values()[k] + cfg.weight_decay * w;
          w -= lr * vel[i][k];
        }
    }
  }
  for (std::size_t i = 0; i < net.layer_count(); ++i) CHECK(oracle::frob_dist(net.weights[i], res.net.weights[i]) == 0.0);
}

TEST_CASE("constrained training on blobs") {
  auto doc = demo_arch(2, 4);
  for (auto& b : doc.blocks)
    for (auto& l : b.layers) {
      l.lipschitz_constraint = 2.0;
      l.distance_constraint = 4.0;
    }
  auto tr = synth_data(SynthTask::blobs, 100, 12), te = synth_data(SynthTask::blobs, 50, 13);
  TrainConfig cfg;
  cfg.epochs = 8;
  auto res = train_projected(TinyNet::init(doc, 5), tr, te, cfg);
  REQUIRE_FALSE(res.diverged);
  CHECK(res.feasible);
  CHECK(res.final_violation <= 1e-3);
  CHECK(res.trajectory.back().train_error <= 0.05);
  for (std::size_t i = 0; i < res.net.layer_count(); ++i) {
    CHECK(lipschitz_constant(res.net.weights[i], res.net.shapes.layers[i].spec).value <= 2.0 * (1 + 1e-3));
    CHECK(group_norm_21(res.net.weights[i] - res.net.reference[i]) <= 4.0 * (1 + 1e-3));
  }
}

TEST_CASE("zero distance budget pins the network to its reference") {
  auto doc = demo_arch(2, 3);
  for (auto& b : doc.blocks) b.layers[0].distance_constraint = 0.0;
  auto tr = synth_data(SynthTask::blobs, 40, 14), te = synth_data(SynthTask::blobs, 20, 15);
  TrainConfig cfg;
  cfg.epochs = 3;
  auto start = TinyNet::init(doc, 6);
  auto res = train_projected(start, tr, te, cfg);
  for (std::size_t i = 0; i < res.net.layer_count(); ++i)
    CHECK(oracle::frob_dist(res.net.weights[i], start.weights[i]) == 0.0);
  CHECK(res.trajectory.back().train_error == classification_error(forward(start, tr.x), tr.labels, 2));
}

TEST_CASE("training configuration validation") {
  TrainConfig c;
  c.cadence = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = {};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  CHECK_THROWS_AS(demo_arch(0, 2), UsageError);
}

TEST_CASE("epoch record serialization") {
  EpochRecord r;
  r.epoch = 3;
  r.train_loss = std::nan("");
  r.layers.push_back({"conv1", 1.5, 0.25});
  auto j = nlohmann::json::parse(epoch_record_json(r));
  CHECK(j["epoch"] == 3);
  CHECK(j["train_loss"].is_null());
  CHECK(j["layers"][0]["lipschitz"] == 1.5);
}
