#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "capbound/archdoc.hpp"
#include "capbound/checkpoint.hpp"
#include "capbound/cli.hpp"
#include "capbound/errors.hpp"
#include "capbound/lipschitz.hpp"
#include "oracles.hpp"

using namespace capbound;
using nlohmann::json;

namespace {

std::string tmp_dir() {
  const char* env = std::getenv("CAPBOUND_TMP");
  std::string d = env ? env : (std::filesystem::temp_directory_path() / "capbound_cli_test").string();
  std::filesystem::create_directories(d);
  return d;
}

std::string path(const std::string& name) { return tmp_dir() + "/" + name; }

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "capbound");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<json> lines(const std::string& text) {
  std::vector<json> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) v.push_back(json::parse(l));
  return v;
}

std::string read_file(const std::string& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(70);
  Checkpoint c;
  TensorEntry w{"w", TensorRole::weight, {2, 1, 3, 3}, DType::f64, {}, "w0"};
  TensorEntry w0{"w0", TensorRole::reference, {2, 1, 3, 3}, DType::f64, {}, ""};
  std::normal_distribution<double> nd;
  for (int i = 0; i < 18; ++i) {
    w.values.push_back(nd(rng));
    w0.values.push_back(nd(rng));
  }
  TensorEntry f{"f", TensorRole::weight, {1, 1, 1, 1}, DType::f32, {0.25}, "zero"};
  c.tensors = {w, w0, f};
  c.attributes["note"] = "x";
  auto back = parse_checkpoint(serialize_checkpoint(c));
  REQUIRE(back.tensors.size() == 3);
  CHECK(back.find("w")->values == w.values);
  CHECK(back.find("w")->reference == "w0");
  CHECK(back.find("f")->values == std::vector<double>{0.25});
  CHECK(back.find("f")->dtype == DType::f32);
  CHECK(back.attributes["note"] == "x");

  write_checkpoint(path("rt.ckpt"), c);
  CHECK(read_checkpoint(path("rt.ckpt")).find("w0")->values == w0.values);

  CHECK_THROWS_AS(parse_checkpoint("garbage"), UsageError);
  auto bad = c;
  bad.tensors[0].reference = "missing";
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = c;
  bad.tensors[1].values.pop_back();
  CHECK_THROWS_AS(serialize_checkpoint(bad), UsageError);
}

TEST_CASE("ArchDoc round trip") {
  auto doc = demo_arch(3, 4);
  doc.blocks[1].layers[0].lipschitz_constraint = 1.5;
  doc.blocks[2].layers[0].distance_constraint = 0.75;
  auto back = archdoc_from_json(archdoc_to_json(doc));
  CHECK(archdoc_to_json(back) == archdoc_to_json(doc));
  CHECK(back.blocks[1].layers[0].lipschitz_constraint == 1.5);
  CHECK(std::isinf(back.blocks[0].layers[0].distance_constraint));
  CHECK_THROWS_AS(archdoc_from_json("{"), UsageError);
}

TEST_CASE("exit codes") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"spectra", "--checkpoint", path("nope.ckpt"), "--arch", path("nope.json")}).code == 1);

  save_archdoc(demo_arch(2, 2), path("arch2.json"));
  auto net = TinyNet::init(demo_arch(2, 2), 3);
  auto c = checkpoint_from_net(net, DType::f64);
  for (auto& t : c.tensors)
    if (t.role == TensorRole::weight) t.values[0] = std::nan("");
  write_checkpoint(path("nan.ckpt"), c);
  auto r = run({"spectra", "--checkpoint", path("nan.ckpt"), "--arch", path("arch2.json")});
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("analyze at the reference") {
  auto doc = demo_arch(2, 3);
  save_archdoc(doc, path("arch3.json"));
  CHECK(run({"init", "--arch", path("arch3.json"), "--seed", "4", "--output", path("init3.ckpt")}).code == 0);
  CHECK(run({"synth-data", "--task", "blobs", "--n", "50", "--seed", "2", "--output", path("blobs.ckpt")}).code == 0);
  auto r = run({"analyze", "--checkpoint", path("init3.ckpt"), "--arch", path("arch3.json"), "--data", path("blobs.ckpt"),
                "--gamma", "0.5", "--delta", "0.1", "--epsilon", "1.0", "--save-logits", path("logits.ckpt")});
  REQUIRE(r.code == 0);
  double clubs = -1, spades = -1;
  bool saw_cover = false, saw_gen = false;
  for (const auto& j : lines(r.out)) {
    if (j["record"] == "bound" && j["name"] == "clubs") clubs = j["value"].get<double>();
    if (j["record"] == "bound" && j["name"] == "spades") spades = j["value"].get<double>();
    if (j["record"] == "cover") saw_cover = true;
    if (j["record"] == "generalization") saw_gen = true;
  }
  CHECK(clubs == doctest::Approx(4.0 / 50));
  CHECK(spades == 0.0);
  CHECK(saw_cover);
  CHECK(saw_gen);

  // The saved logits reproduce the margin when used as their own reference.
  auto eq = run({"analyze", "--checkpoint", path("init3.ckpt"), "--arch", path("arch3.json"), "--data",
                 path("blobs.ckpt"), "--equal-ramp-to", path("logits.ckpt")});
  REQUIRE(eq.code == 0);
  for (const auto& j : lines(eq.out))
    if (j["record"] == "summary") CHECK(j["margin"].get<double>() >= 0.5 * (1 - 1e-6));

  auto txt = run({"analyze", "--checkpoint", path("init3.ckpt"), "--arch", path("arch3.json"), "--data",
                  path("blobs.ckpt"), "--gamma", "0.5", "--format", "text"});
  CHECK(txt.code == 0);
  CHECK_FALSE(txt.out.empty());
  CHECK(run({"analyze", "--checkpoint", path("init3.ckpt"), "--arch", path("arch3.json"), "--data", path("blobs.ckpt")})
            .code == 1);
}

TEST_CASE("project command") {
  auto doc = demo_arch(2, 3);
  save_archdoc(doc, path("arch_p.json"));
  auto net = TinyNet::init(doc, 8);
  for (std::size_t i = 0; i < net.layer_count(); ++i) net.reference[i] = 0.3 * net.weights[i];
  write_checkpoint(path("p.ckpt"), checkpoint_from_net(net, DType::f64));

  // Generous bounds leave every tensor untouched.
  auto loose = run({"project", "--checkpoint", path("p.ckpt"), "--arch", path("arch_p.json"), "--lipschitz", "1e6",
                    "--distance", "1e6", "--output", path("p_loose.ckpt")});
  REQUIRE(loose.code == 0);
  auto lc = read_checkpoint(path("p_loose.ckpt"));
  auto orig = read_checkpoint(path("p.ckpt"));
  for (const auto& t : orig.tensors) CHECK(lc.find(t.name)->values == t.values);

  // Each layer's bounds at half its current Lipschitz constant and distance.
  auto tight_doc = doc;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    auto& l = tight_doc.blocks[i].layers[0];
    l.lipschitz_constraint = 0.5 * lipschitz_constant(net.weights[i], net.shapes.layers[i].spec).value;
    l.distance_constraint = 0.5 * group_norm_21(net.weights[i] - net.reference[i]);
  }
  save_archdoc(tight_doc, path("arch_t.json"));
  std::vector<double> moved[2];
  int si = 0;
  // The single-channel pooled layer converges slowly; the default budgets leave a few 1e-3 here.
  for (std::string scheme : {"alternating", "dykstra"}) {
    auto tight = run({"project", "--checkpoint", path("p.ckpt"), "--arch", path("arch_t.json"), "--scheme", scheme,
                      "--rounds", scheme == "dykstra" ? "1000" : "60", "--output", path("p_" + scheme + ".ckpt")});
    REQUIRE(tight.code == 0);
    for (const auto& j : lines(tight.out)) {
      CHECK(j["relative_violation"].get<double>() <= 1e-3);
      CHECK(j["status"] == "ok");
      moved[si].push_back(j["moved"].get<double>());
    }
    ++si;
  }
  for (std::size_t i = 0; i < moved[0].size(); ++i) CHECK(moved[1][i] <= moved[0][i] + 1e-6);
  CHECK(run({"project", "--checkpoint", path("p.ckpt"), "--arch", path("arch_p.json"), "--scheme", "bogus"}).code == 1);

  // Bounds far below the reference's own Lipschitz constant leave an empty intersection: reported, not thrown.
  auto empty = run({"project", "--checkpoint", path("p.ckpt"), "--arch", path("arch_p.json"), "--lipschitz", "0.01",
                    "--distance", "0.01"});
  CHECK(empty.code == 0);
  for (const auto& j : lines(empty.out)) {
    CHECK(j["status"] == "not_converged");
    CHECK(j["relative_violation"].get<double>() > 1e-3);
  }
  CHECK(empty.err.find("relative violation") != std::string::npos);

  // A stride-2 layer cannot take a spectral constraint: per-layer error, exit 1.
  auto sdoc = demo_arch(1, 2);
  sdoc.blocks[0].layers[0].stride = 2;
  save_archdoc(sdoc, path("arch_s.json"));
  write_checkpoint(path("s.ckpt"), checkpoint_from_net(TinyNet::init(sdoc, 1)));
  auto s = run({"project", "--checkpoint", path("s.ckpt"), "--arch", path("arch_s.json"), "--lipschitz", "1"});
  CHECK(s.code == 1);
  CHECK(lines(s.out).at(0)["status"] == "error");
}

TEST_CASE("spectra command") {
  ArchDoc doc;
  LayerDoc l;
  l.name = "c";
  l.out_channels = 2;
  l.relu = false;
  doc.in_channels = 2;
  doc.height = doc.width = 4;
  doc.blocks = {BlockDoc{{l}, BlockShortcut::none}};
  save_archdoc(doc, path("arch_id.json"));
  auto net = TinyNet::init(doc, 0);
  net.weights[0] *= 0.0;
  net.weights[0](0, 0, 1, 1) = net.weights[0](1, 1, 1, 1) = 1.0;
  write_checkpoint(path("id.ckpt"), checkpoint_from_net(net, DType::f64));
  auto r = run({"spectra", "--checkpoint", path("id.ckpt"), "--arch", path("arch_id.json")});
  REQUIRE(r.code == 0);
  auto j = lines(r.out).at(0);
  CHECK(j["eligible"] == true);
  CHECK(j["count"] == 32);
  CHECK(j["min"].get<double>() == doctest::Approx(1.0));
  CHECK(j["max"].get<double>() == doctest::Approx(1.0));
  CHECK(j["power_iteration_max"].get<double>() == doctest::Approx(1.0).epsilon(1e-6));

  net.weights[0] *= 0.0;
  write_checkpoint(path("zero.ckpt"), checkpoint_from_net(net, DType::f64));
  auto z = lines(run({"spectra", "--checkpoint", path("zero.ckpt"), "--arch", path("arch_id.json")}).out).at(0);
  CHECK(z["max"].get<double>() == 0.0);
}

TEST_CASE("train-demo command") {
  const std::string dir = path("grid1");
  auto r = run({"train-demo", "--task", "blobs", "--layers", "2", "--width", "3", "--epochs", "2", "--n-train", "40",
                "--n-test", "20", "--lipschitz-grid", "1", "--distance-grid", "2", "--out-dir", dir});
  REQUIRE(r.code == 0);
  auto cells = lines(r.out);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0]["feasible"] == true);
  auto traj = lines(read_file(dir + "/cell0_trajectory.jsonl"));
  CHECK(traj.size() == 3);
  auto doc = load_archdoc(dir + "/cell0_arch.json");
  auto net = net_from_checkpoint(doc, read_checkpoint(dir + "/cell0.ckpt"));
  for (std::size_t i = 0; i < net.layer_count(); ++i)
    CHECK(lipschitz_constant(net.weights[i], net.shapes.layers[i].spec).value <= 1.0 * (1 + 1e-3));

  // 3 x 3 grid on blobs: the tightest cell is no more accurate than the loosest.
  auto g = run({"train-demo", "--task", "blobs", "--layers", "2", "--width", "4", "--epochs", "6", "--n-train", "100",
                "--n-test", "100", "--lipschitz-grid", "0.05,0.5,inf", "--distance-grid", "0.05,0.5,inf", "--summary",
                path("summary.jsonl")});
  REQUIRE(g.code == 0);
  auto rows = lines(read_file(path("summary.jsonl")));
  REQUIRE(rows.size() == 9);
  CHECK(rows[0]["lipschitz"] == 0.05);
  CHECK(rows[8]["distance"].is_null());
  CHECK(1.0 - rows[0]["test_error"].get<double>() <= 1.0 - rows[8]["test_error"].get<double>());
  CHECK(g.out.find("test accuracy") != std::string::npos);

  CHECK(run({"train-demo", "--lipschitz-grid", "abc"}).code == 1);
}
