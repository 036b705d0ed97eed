#include "capbound/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "capbound/analysis.hpp"
#include "capbound/checkpoint.hpp"
#include "capbound/covercalc.hpp"
#include "capbound/errors.hpp"
#include "capbound/project.hpp"
#include "capbound/train.hpp"

namespace capbound {

using nlohmann::json;

namespace {

/// Relative violation above which a projection is reported as not converged.
constexpr double kFeasibleTol = 1e-3;

constexpr double inf = std::numeric_limits<double>::infinity();

double parse_bound(const std::string& s) {
  if (s == "inf" || s == "none") return inf;
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("cannot parse constraint value '" + s + "'");
  }
}

json bound_json(double v) { return std::isinf(v) ? json(nullptr) : json(v); }

/// Writes to the named file, or to `fallback` when the name is empty.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw UsageError("cannot write '" + path + "'");
      out_ = &file_;
    }
  }
  std::ostream& operator*() { return *out_; }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

void apply_uniform_constraints(ArchDoc& doc, double s, double b) {
  for (auto& blk : doc.blocks)
    for (auto& l : blk.layers) {
      l.lipschitz_constraint = s;
      l.distance_constraint = b;
    }
}

struct PowerFlags {
  double tol = 1e-6;
  int max_iters = 1000;
  std::uint64_t seed = 0;
  PowerIterationOptions options() const { return {tol, max_iters, seed}; }
};

void add_power_flags(CLI::App* cmd, PowerFlags& p) {
  cmd->add_option("--tol", p.tol, "Power iteration relative tolerance");
  cmd->add_option("--max-iters", p.max_iters, "Power iteration iteration cap");
  cmd->add_option("--seed", p.seed, "Power iteration start seed");
}

// analyze ----------------------------------------------------------------------

struct AnalyzeArgs {
  std::string checkpoint, arch, data, equal_ramp_to, format = "jsonl", output, save_logits;
  std::optional<double> gamma, ref_gamma, delta, epsilon;
  PowerFlags power;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const ArchDoc doc = load_archdoc(a.arch);
  const TinyNet net = net_from_checkpoint(doc, read_checkpoint(a.checkpoint));
  const LabeledData data = data_from_checkpoint(read_checkpoint(a.data));
  double gamma = 0.0;
  if (!a.equal_ramp_to.empty()) {
    const Checkpoint ref = read_checkpoint(a.equal_ramp_to);
    std::size_t classes = 0;
    const auto ref_logits = logits_from_checkpoint(ref, classes);
    if (classes != doc.classes) throw UsageError("reference logits have a different class count");
    const auto* lab = ref.find_role(TensorRole::labels);
    if (!lab) throw UsageError("reference file has no labels tensor");
    std::vector<std::size_t> ref_labels;
    for (double v : lab->values) ref_labels.push_back(static_cast<std::size_t>(v));
    double g_ref = 0.0;
    if (a.ref_gamma) g_ref = *a.ref_gamma;
    else if (ref.attributes.contains("gamma")) g_ref = ref.attributes.at("gamma").get<double>();
    else throw UsageError("reference margin unknown: pass --ref-gamma or store a 'gamma' attribute");
    const auto logits = forward(net, data.x);
    auto g = margin_for_equal_ramp_loss(ref_logits, ref_labels, logits, data.labels, doc.classes, g_ref);
    if (!g) throw NumericalError("no margin gives the model the reference ramp risk");
    gamma = *g;
  } else if (a.gamma) {
    gamma = *a.gamma;
  } else {
    throw UsageError("pass --gamma or --equal-ramp-to");
  }
  const Analysis an = analyze_model(net, data, gamma, a.delta, a.power.options());
  Sink sink(a.output, out);
  if (a.format == "text") {
    *sink << analysis_text(an);
  } else if (a.format == "jsonl") {
    for (const auto& line : analysis_jsonl(an)) *sink << line << "\n";
    if (a.epsilon) {
      const double eps = *a.epsilon;
      const ArchNode tree = residual_tree(an.capacity);
      json j{{"record", "cover"}, {"epsilon", eps}};
      for (auto v : {CoverVariant::norms, CoverVariant::params}) {
        const std::string name = v == CoverVariant::norms ? "norms" : "params";
        j[name] = whole_network_cover_bound(an.capacity, eps, v);
        j[name + "_tree_allocated"] =
            evaluate_tree(tree, eps, DataSummary{an.capacity.n, an.capacity.data_norm}, v,
                          AllocationScheme::norm_weighted)
                .allocated_log_cover;
      }
      *sink << j.dump() << "\n";
    }
  } else {
    throw UsageError("unknown format '" + a.format + "'");
  }
  if (!a.save_logits.empty()) {
    Checkpoint c = checkpoint_from_data(data);
    c.tensors.erase(c.tensors.begin());  // keep labels only
    add_logits(c, an.logits, doc.classes, "logits");
    c.attributes["gamma"] = gamma;
    write_checkpoint(a.save_logits, c);
  }
  return 0;
}

// project ----------------------------------------------------------------------

struct ProjectArgs {
  std::string checkpoint, arch, scheme = "alternating", output, report;
  std::optional<int> rounds;
  std::optional<std::string> lipschitz, distance;
};

int cmd_project(const ProjectArgs& a, std::ostream& out, std::ostream& err) {
  ArchDoc doc = load_archdoc(a.arch);
  for (auto& blk : doc.blocks)
    for (auto& l : blk.layers) {
      if (a.lipschitz) l.lipschitz_constraint = parse_bound(*a.lipschitz);
      if (a.distance) l.distance_constraint = parse_bound(*a.distance);
    }
  const Checkpoint in = read_checkpoint(a.checkpoint);
  TinyNet net = net_from_checkpoint(doc, in);
  if (a.scheme != "alternating" && a.scheme != "dykstra" && a.scheme != "radial")
    throw UsageError("unknown scheme '" + a.scheme + "'");
  const int rounds = a.rounds.value_or(a.scheme == "dykstra" ? 100 : 15);
  if (rounds < 1) throw UsageError("rounds must be >= 1");
  Sink sink(a.report, out);
  bool failures = false;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const auto& l = net.layer_doc(i);
    json j{{"record", "projection"}, {"name", l.name}, {"scheme", a.scheme},
           {"lipschitz_bound", bound_json(l.lipschitz_constraint)},
           {"distance_bound", bound_json(l.distance_constraint)}};
    const KernelTensor before = net.weights[i];
    const auto& spec = net.shapes.layers[i].spec;
    try {
      if (std::isinf(l.lipschitz_constraint) && std::isinf(l.distance_constraint)) {
        j["status"] = "unconstrained";
      } else if (std::isinf(l.lipschitz_constraint)) {
        net.weights[i] = project_l21_ball(before, net.reference[i], l.distance_constraint);
        j["status"] = "ok";
      } else {
        if (!spec.fft_eligible())
          throw UsageError("spectral projection needs circular padding and stride 1");
        const ConstraintSet cs = layer_constraints(net, i);
        if (measure_violation(before, cs).relative() == 0.0) {
          j["status"] = "already_feasible";
        } else {
          ProjectionResult r = a.scheme == "alternating" ? alternating_projections(before, cs, rounds)
                               : a.scheme == "dykstra"   ? dykstra(before, cs, rounds)
                                                         : radial_joint(before, cs);
          net.weights[i] = r.kernel;
          j["status"] = "ok";
        }
      }
      const KernelTensor diff = net.weights[i] - net.reference[i];
      j["distance"] = group_norm_21(diff);
      if (spec.fft_eligible()) j["lipschitz"] = lipschitz_constant(net.weights[i], spec).value;
      j["moved"] = frobenius(net.weights[i] - before);
      if (!(std::isinf(l.lipschitz_constraint) && std::isinf(l.distance_constraint)) &&
          (spec.fft_eligible() || std::isinf(l.lipschitz_constraint))) {
        ConstraintSet cs = layer_constraints(net, i);
        j["relative_violation"] = std::isinf(l.lipschitz_constraint)
                                      ? std::max(0.0, group_norm_21(diff) - l.distance_constraint) /
                                            std::max(l.distance_constraint, std::numeric_limits<double>::min())
                                      : measure_violation(net.weights[i], cs).relative();
        if (j["status"] == "ok" && j["relative_violation"].get<double>() > kFeasibleTol) {
          j["status"] = "not_converged";
          err << "layer '" << l.name << "': relative violation " << j["relative_violation"].get<double>()
              << " after projection\n";
        }
      }
    } catch (const UsageError& e) {
      failures = true;
      net.weights[i] = before;
      j["status"] = "error";
      j["error"] = e.what();
      err << "layer '" << l.name << "': " << e.what() << "\n";
    }
    *sink << j.dump() << "\n";
  }
  if (!a.output.empty()) {
    const auto* first = in.find_role(TensorRole::weight);
    Checkpoint c = checkpoint_from_net(net, first ? first->dtype : DType::f32);
    c.attributes = in.attributes;
    write_checkpoint(a.output, c);
  }
  return failures ? 1 : 0;
}

// train-demo -------------------------------------------------------------------

struct TrainArgs {
  std::string task = "blobs", arch, out_dir, summary;
  std::size_t layers = 2, width = 8, n_train = 512, n_test = 512;
  std::uint64_t data_seed = 1;
  std::vector<std::string> lipschitz_grid{"inf"}, distance_grid{"inf"};
  TrainConfig config;
};

int cmd_train_demo(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const SynthTask task = parse_synth_task(a.task);
  const ArchDoc base = a.arch.empty() ? demo_arch(a.layers, a.width) : load_archdoc(a.arch);
  std::vector<double> ss, bs;
  for (const auto& s : a.lipschitz_grid) ss.push_back(parse_bound(s));
  for (const auto& b : a.distance_grid) bs.push_back(parse_bound(b));
  a.config.validate();
  const LabeledData train = synth_data(task, a.n_train, a.data_seed);
  const LabeledData test = synth_data(task, a.n_test, a.data_seed + 1000);
  if (!a.out_dir.empty()) std::filesystem::create_directories(a.out_dir);
  Sink sink(a.summary, out);
  std::vector<std::vector<double>> acc(ss.size(), std::vector<double>(bs.size(), NAN));
  std::size_t cell = 0;
  for (std::size_t si = 0; si < ss.size(); ++si)
    for (std::size_t bi = 0; bi < bs.size(); ++bi, ++cell) {
      ArchDoc doc = base;
      apply_uniform_constraints(doc, ss[si], bs[bi]);
      TrainResult r = train_projected(TinyNet::init(doc, a.config.seed), train, test, a.config);
      json j{{"record", "cell"}, {"task", a.task}, {"cell", cell}, {"lipschitz", bound_json(ss[si])},
             {"distance", bound_json(bs[bi])}, {"diverged", r.diverged}, {"feasible", r.feasible},
             {"final_violation", r.final_violation}};
      if (r.diverged) {
        j["failure"] = r.failure;
        err << "cell " << cell << " diverged: " << r.failure << "\n";
      }
      if (!r.trajectory.empty()) {
        j["train_error"] = r.trajectory.back().train_error;
        j["test_error"] = r.trajectory.back().test_error;
        if (!r.diverged) acc[si][bi] = 1.0 - r.trajectory.back().test_error;
      }
      if (!a.out_dir.empty()) {
        const std::string stem = a.out_dir + "/cell" + std::to_string(cell);
        std::ofstream tf(stem + "_trajectory.jsonl");
        for (const auto& e : r.trajectory) tf << epoch_record_json(e) << "\n";
        Checkpoint c = checkpoint_from_net(r.net);
        c.attributes = {{"task", a.task}, {"lipschitz", bound_json(ss[si])}, {"distance", bound_json(bs[bi])}};
        write_checkpoint(stem + ".ckpt", c);
        save_archdoc(doc, stem + "_arch.json");
      }
      *sink << j.dump() << "\n";
    }
  if (!a.summary.empty()) {
    out << "test accuracy (rows: lipschitz, columns: distance)\n" << std::setw(10) << "";
    for (double b : bs) out << std::setw(10) << b;
    out << "\n";
    for (std::size_t si = 0; si < ss.size(); ++si) {
      out << std::setw(10) << ss[si];
      for (std::size_t bi = 0; bi < bs.size(); ++bi) out << std::setw(10) << std::setprecision(4) << acc[si][bi];
      out << "\n";
    }
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Capacity bounds and constrained training for small convolutional networks"};
  app.require_subcommand(1);

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Per-layer statistics and bounds for a checkpoint");
  analyze->add_option("--checkpoint", an.checkpoint)->required();
  analyze->add_option("--arch", an.arch)->required();
  analyze->add_option("--data", an.data, "Data container with 'data' and 'labels' tensors")->required();
  analyze->add_option("--gamma", an.gamma, "Margin");
  analyze->add_option("--equal-ramp-to", an.equal_ramp_to, "Reference logits; picks the margin with equal ramp risk");
  analyze->add_option("--ref-gamma", an.ref_gamma, "Margin of the reference logits");
  analyze->add_option("--delta", an.delta, "Confidence for the generalization bound");
  analyze->add_option("--epsilon", an.epsilon, "Also report whole-network covering bounds at this radius");
  analyze->add_option("--format", an.format, "jsonl or text");
  analyze->add_option("--output", an.output);
  analyze->add_option("--save-logits", an.save_logits, "Write logits, labels and margin for later --equal-ramp-to");
  add_power_flags(analyze, an.power);

  ProjectArgs pr;
  auto* project = app.add_subcommand("project", "Project checkpoint weights onto their constraint sets");
  project->add_option("--checkpoint", pr.checkpoint)->required();
  project->add_option("--arch", pr.arch)->required();
  project->add_option("--scheme", pr.scheme, "alternating, dykstra or radial");
  project->add_option("--rounds", pr.rounds);
  project->add_option("--lipschitz", pr.lipschitz, "Override every layer's Lipschitz bound");
  project->add_option("--distance", pr.distance, "Override every layer's distance bound");
  project->add_option("--output", pr.output, "Projected checkpoint");
  project->add_option("--report", pr.report);

  TrainArgs tr;
  auto* train = app.add_subcommand("train-demo", "Projected SGD over a grid of constraints on a synthetic task");
  train->add_option("--task", tr.task, "blobs or rings");
  train->add_option("--arch", tr.arch);
  train->add_option("--layers", tr.layers);
  train->add_option("--width", tr.width);
  train->add_option("--lipschitz-grid", tr.lipschitz_grid)->delimiter(',');
  train->add_option("--distance-grid", tr.distance_grid)->delimiter(',');
  train->add_option("--epochs", tr.config.epochs);
  train->add_option("--lr", tr.config.lr);
  train->add_option("--momentum", tr.config.momentum);
  train->add_option("--weight-decay", tr.config.weight_decay);
  train->add_option("--batch-size", tr.config.batch_size);
  train->add_option("--cadence", tr.config.cadence);
  train->add_option("--post-cycles", tr.config.post_cycles);
  train->add_option("--seed", tr.config.seed);
  train->add_option("--data-seed", tr.data_seed);
  train->add_option("--n-train", tr.n_train);
  train->add_option("--n-test", tr.n_test);
  train->add_option("--out-dir", tr.out_dir, "Trajectories and checkpoints per cell");
  train->add_option("--summary", tr.summary, "Summary grid file; a text table then goes to stdout");

  std::string sp_ckpt, sp_arch, sp_out;
  PowerFlags sp_power;
  auto* spectra = app.add_subcommand("spectra", "Exact singular value summaries per layer");
  spectra->add_option("--checkpoint", sp_ckpt)->required();
  spectra->add_option("--arch", sp_arch)->required();
  spectra->add_option("--output", sp_out);
  add_power_flags(spectra, sp_power);

  std::string sd_task = "blobs", sd_out;
  std::size_t sd_n = 512;
  std::uint64_t sd_seed = 1;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic data container");
  synth->add_option("--task", sd_task);
  synth->add_option("--n", sd_n);
  synth->add_option("--seed", sd_seed);
  synth->add_option("--output", sd_out)->required();

  std::string in_arch, in_out, in_dtype = "f32";
  std::uint64_t in_seed = 0;
  auto* init = app.add_subcommand("init", "Write a randomly initialized checkpoint");
  init->add_option("--arch", in_arch)->required();
  init->add_option("--seed", in_seed);
  init->add_option("--dtype", in_dtype);
  init->add_option("--output", in_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (*analyze) return cmd_analyze(an, out);
    if (*project) return cmd_project(pr, out, err);
    if (*train) return cmd_train_demo(tr, out, err);
    if (*spectra) {
      const TinyNet net = net_from_checkpoint(load_archdoc(sp_arch), read_checkpoint(sp_ckpt));
      Sink sink(sp_out, out);
      for (const auto& s : layer_spectra(net, sp_power.options())) {
        if (!s.eligible) err << "layer '" << s.name << "' skipped: " << s.reason << "\n";
        *sink << spectrum_json(s) << "\n";
      }
      return 0;
    }
    if (*synth) {
      write_checkpoint(sd_out, checkpoint_from_data(synth_data(parse_synth_task(sd_task), sd_n, sd_seed)));
      return 0;
    }
    if (*init) {
      write_checkpoint(in_out, checkpoint_from_net(TinyNet::init(load_archdoc(in_arch), in_seed), parse_dtype(in_dtype)));
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const ResourceError& e) {
    err << "resource limit: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace capbound
