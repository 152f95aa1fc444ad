// ufcmil command-line front end: generate | train | eval | gradcheck.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ufcmil/bagio.hpp"
#include "ufcmil/calibrate.hpp"
#include "ufcmil/config.hpp"
#include "ufcmil/kernels.hpp"
#include "ufcmil/metrics.hpp"
#include "ufcmil/model_gradcheck.hpp"
#include "ufcmil/synth.hpp"
#include "ufcmil/trainer.hpp"

namespace fs = std::filesystem;
using namespace ufcmil;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto w = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const auto h = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
    return {w, h};
  } catch (const std::exception&) {
    throw ConfigError("grid must look like WxH, got '" + s + "'");
  }
}

/// UFCMIL_THREADS caps whatever the command asked for.
void configure_threads(int requested) {
  int n = requested;
  if (const char* env = std::getenv("UFCMIL_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = n > 0 ? std::min(n, cap) : cap;
  }
  kernels::set_num_threads(n);
}

struct GenerateArgs {
  std::string out;
  std::string grid = "4x4";
  SynthConfig synth;
};

struct TrainArgs {
  std::string data, out, config, split = "train";
  std::size_t epochs = 0, hidden = 0, accumulation = 0, record_epoch = 0;
  double lr = 0, alpha = 0, delta = 0;
  std::uint64_t seed = 0;
  int threads = 0;
  bool srls = false;
};

struct EvalArgs {
  std::string data, checkpoint, config, split = "test", out_json, out_csv;
  std::size_t bins = 15;
  std::size_t hidden = 0;
  bool temperature = false;
  int threads = 0;
};

struct GradcheckArgs {
  double h = 1e-4;
  double tol = 1e-3;
  std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs& a) {
  SynthConfig cfg = a.synth;
  std::tie(cfg.grid_w, cfg.grid_h) = parse_grid(a.grid);
  cfg.validate();
  synth_generate(cfg, a.out);
  std::cout << "wrote " << cfg.samples << " bags (" << cfg.levels << " levels, coarse grid "
            << cfg.grid_w << "x" << cfg.grid_h << ", d=" << cfg.dim << ") to " << a.out << "\n";
  return kOk;
}

int run_train(const TrainArgs& a, const CLI::App& cmd) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_run_config(a.config);
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  if (given("--epochs")) cfg.train.epochs = a.epochs;
  if (given("--lr")) cfg.train.lr = a.lr;
  if (given("--seed")) cfg.train.seed = a.seed;
  if (given("--srls")) cfg.train.srls = a.srls;
  if (given("--record-epoch")) cfg.train.record_epoch = a.record_epoch;
  if (given("--alpha")) cfg.train.alpha = a.alpha;
  if (given("--delta")) cfg.train.delta = a.delta;
  if (given("--hidden")) cfg.model.hidden = a.hidden;
  if (given("--accum")) cfg.train.accumulation = a.accumulation;
  if (given("--threads")) cfg.train.threads = a.threads;
  configure_threads(cfg.train.threads);

  const Dataset ds = load_dataset(a.data);
  cfg.model.dim = ds.manifest.feature_dim;
  cfg.model.levels = ds.manifest.levels;
  cfg.model.validate();
  cfg.train.validate();
  auto bags = ds.split(a.split);
  if (bags.empty()) throw DataError("split '" + a.split + "' has no bags");

  Trainer trainer(cfg.model, cfg.train, std::move(bags), init_params(cfg.model, cfg.train.seed));
  std::ostringstream log;
  log << "epoch,lr,loss,accuracy,phase\n";
  log.precision(9);
  while (!trainer.done()) {
    trainer.run_epoch();
    const auto& e = trainer.log().back();
    log << e.epoch << ',' << e.lr << ',' << e.loss << ',' << e.accuracy << ',' << e.phase << '\n';
    std::cout << "epoch " << std::setw(3) << e.epoch << "  lr " << std::scientific
              << std::setprecision(3) << e.lr << std::defaultfloat << "  loss "
              << std::setprecision(6) << e.loss << "  acc " << e.accuracy << "  [" << e.phase
              << "]\n";
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  save_checkpoint(trainer.params(), out / "checkpoint.ufcm");
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
  write_text(out / "train_log.csv", log.str());
  if (trainer.srls_stats()) {
    write_text(out / "srls_stats.csv", trainer.srls_stats()->to_csv());
    std::cout << "srls snapshot: " << trainer.snapshot_passes() << " forward passes over "
              << trainer.log().size() << " epochs\n";
  }
  std::cout << "checkpoint written to " << (out / "checkpoint.ufcm").string() << "\n";
  return kOk;
}

int run_eval(const EvalArgs& a, const CLI::App& cmd) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_run_config(a.config);
  if (cmd.count("--hidden")) cfg.model.hidden = a.hidden;
  configure_threads(cmd.count("--threads") ? a.threads : cfg.train.threads);

  const Dataset ds = load_dataset(a.data);
  cfg.model.dim = ds.manifest.feature_dim;
  cfg.model.levels = ds.manifest.levels;
  cfg.model.validate();
  const Params params = load_checkpoint(a.checkpoint);
  try {
    check_params(params, cfg.model);
  } catch (const ConfigError& ex) {
    throw DataError(std::string("checkpoint does not match model config: ") + ex.what());
  }
  const auto bags = ds.split(a.split);
  if (bags.empty()) throw DataError("split '" + a.split + "' has no bags");

  Evaluation ev = evaluate(params, cfg.model, bags);
  if (a.temperature) {
    const auto val = ds.split("val");
    if (val.empty()) throw DataError("temperature scaling needs a non-empty val split");
    const Evaluation vev = evaluate(params, cfg.model, val);
    std::vector<std::vector<double>> logits;
    std::vector<int> labels;
    auto log_probs = [](const Prediction& p) {
      return std::vector<double>{std::log(std::max(p.probs[0], 1e-12)),
                                 std::log(std::max(p.probs[1], 1e-12))};
    };
    for (const auto& p : vev.predictions) {
      logits.push_back(log_probs(p));
      labels.push_back(p.label);
    }
    const double t = temperature_fit(logits, labels);
    std::cerr << "fitted temperature " << t << "\n";
    for (auto& p : ev.predictions) {
      const auto q = apply_temperature(log_probs(p), t);
      p.probs = {q[0], q[1]};
    }
  }
  const EvalReport report = build_report(ev.predictions, pooled_entropy(ev.outputs), a.bins);
  const std::string json = report_json(report);
  if (a.out_json.empty()) std::cout << json;
  else write_text(a.out_json, json);
  if (!a.out_csv.empty()) write_text(a.out_csv, reliability_csv(report));
  return kOk;
}

int run_gradcheck(const GradcheckArgs& a) {
  const ModelGradCheck r = model_gradcheck(a.seed, a.h);
  std::cout << std::setprecision(6) << "parameters: " << r.parameters
            << " (toy configuration redraws: " << r.redraws << ")\n";
  for (const auto& [group, err] : r.per_group)
    std::cout << "  " << std::left << std::setw(6) << group << " max rel error " << std::setw(12)
              << err << " max |grad| " << r.group_grad_max.at(group) << "\n";
  std::cout << "max relative error: " << r.max_rel_error << " (" << r.worst_param << "["
            << r.worst_index << "] analytic " << r.worst_analytic << " numeric "
            << r.worst_numeric << ")\n";
  const bool ok = r.max_rel_error < a.tol;
  std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << a.tol << ")\n";
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-focused multi-resolution MIL: data, training, evaluation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic multi-resolution dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--samples", gen.synth.samples, "number of bags")->capture_default_str();
  g->add_option("--levels", gen.synth.levels, "resolution levels")->capture_default_str();
  g->add_option("--grid", gen.grid, "coarse grid WxH")->capture_default_str();
  g->add_option("--dim", gen.synth.dim, "feature dimension")->capture_default_str();
  g->add_option("--seed", gen.synth.seed, "random seed")->capture_default_str();
  g->add_option("--pos-frac", gen.synth.pos_fraction, "fraction of positive bags")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  g->add_option("--lesion-size", gen.synth.lesion_size, "max lesion side (coarse patches)")
      ->capture_default_str();
  g->add_option("--noise", gen.synth.noise_sigma, "coarse patch noise sigma")->capture_default_str();
  g->add_option("--refine-noise", gen.synth.refine_sigma, "per-level child noise sigma")
      ->capture_default_str();
  g->add_option("--signal-min", gen.synth.signal_min, "min lesion signal")->capture_default_str();
  g->add_option("--signal-max", gen.synth.signal_max, "max lesion signal")->capture_default_str();
  g->add_option("--train-frac", gen.synth.train_fraction, "train split fraction")
      ->capture_default_str();
  g->add_option("--val-frac", gen.synth.val_fraction, "val split fraction")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model (optionally with SRLS calibration)");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--config", tr.config, "JSON config; flags override it");
  t->add_option("--split", tr.split, "split to train on")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "training epochs");
  t->add_option("--lr", tr.lr, "base learning rate");
  t->add_option("--seed", tr.seed, "random seed");
  t->add_flag("--srls", tr.srls, "enable SRLS calibration phase");
  t->add_option("--record-epoch", tr.record_epoch, "SRLS entropy snapshot epoch");
  t->add_option("--alpha", tr.alpha, "SRLS alpha");
  t->add_option("--delta", tr.delta, "PW loss margin");
  t->add_option("--hidden", tr.hidden, "reduction head width");
  t->add_option("--accum", tr.accumulation, "bags per optimizer step");
  t->add_option("--threads", tr.threads, "worker threads");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint and write calibration reports");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--config", ev.config, "JSON config used for training");
  e->add_option("--split", ev.split, "split to evaluate")->capture_default_str();
  e->add_option("--bins", ev.bins, "ECE bin count")->check(CLI::PositiveNumber)->capture_default_str();
  e->add_option("--hidden", ev.hidden, "reduction head width");
  e->add_option("--out-json", ev.out_json, "report JSON path (stdout when omitted)");
  e->add_option("--out-csv", ev.out_csv, "reliability diagram CSV path");
  e->add_flag("--temperature", ev.temperature, "apply temperature scaling fitted on val split");
  e->add_option("--threads", ev.threads, "worker threads");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "finite-difference check of the joint loss gradient");
  c->set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
  c->add_option("--h", gc.h, "central difference step")->capture_default_str();
  c->add_option("--tol", gc.tol, "pass threshold on max relative error")->capture_default_str();
  c->add_option("--seed", gc.seed, "random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr, *t);
    if (*e) return run_eval(ev, *e);
    if (*c) {
      configure_threads(0);
      return run_gradcheck(gc);
    }
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const ShapeError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const NumericError& ex) {
    std::cerr << "numerical failure: " << ex.what() << "\n";
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  }
  return kUsage;
}
