// tge: command-line front end.
//
// Exit codes: 0 success, 1 runtime error, 2 input load failure, 3 metric
// failure, 4 checkpoint fingerprint mismatch, 64 usage error.

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "tge/checkpoint.hpp"
#include "tge/error.hpp"
#include "tge/manifest.hpp"
#include "tge/mesh.hpp"
#include "tge/metrics.hpp"
#include "tge/model.hpp"
#include "tge/primitives.hpp"
#include "tge/rng.hpp"
#include "tge/service.hpp"
#include "tge/stats.hpp"
#include "tge/training.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitRuntime = 1;
constexpr int kExitLoad = 2;
constexpr int kExitMetric = 3;
constexpr int kExitFingerprint = 4;
constexpr int kExitUsage = 64;

constexpr double kReferenceGflops = 14.7;

struct LoadFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MetricFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

tge::ColoredMesh load_or_fail(const fs::path& p) {
  try {
    return tge::load_mesh(p);
  } catch (const std::exception& e) {
    throw LoadFailure("cannot load mesh " + p.string() + ": " + e.what());
  }
}

tge::Manifest manifest_or_fail(const fs::path& p) {
  try {
    return tge::Manifest::load(p);
  } catch (const std::exception& e) {
    throw LoadFailure("cannot load manifest " + p.string() + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Writes `j` to stdout ("-") or a file. Output is a pure function of the inputs.
void emit_json(const std::string& target, const json& j) {
  const std::string text = j.dump(2) + "\n";
  if (target == "-") {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream out(target, std::ios::binary | std::ios::trunc);
  if (!out) throw tge::IoError("cannot write " + target);
  out << text;
}

// Adds the shared --json option. Given without a value it means stdout.
CLI::Option* add_json_option(CLI::App* app, std::string& target) {
  return app->add_option("--json", target, "Write machine-readable JSON to FILE, or stdout when no FILE is given")
      ->expected(0, 1);
}

std::string json_target(const CLI::Option* opt, const std::string& value) {
  if (opt->count() == 0) return "";
  return value.empty() ? "-" : value;
}

void log_resolved(const CLI::App* sub) {
  std::cerr << "[tge] " << sub->get_name() << " resolved config:\n" << sub->config_to_str(true, false);
}

void log_seed(const std::string& what, std::uint64_t seed) {
  std::cerr << "[tge] seed " << what << " = " << seed << "\n";
}

tge::TgeConfig resolve_model(const std::string& spec, std::size_t n_points) {
  tge::TgeConfig cfg;
  if (spec == "toy") {
    cfg = tge::TgeConfig::toy_config(n_points == 0 ? 128 : n_points);
  } else if (spec == "default") {
    cfg = tge::TgeConfig::default_config();
    if (n_points != 0) cfg.n_points = n_points;
  } else {
    std::ifstream in(spec);
    if (!in) throw LoadFailure("cannot open model config " + spec);
    try {
      cfg = tge::TgeConfig::from_json(json::parse(in));
    } catch (const std::exception& e) {
      throw LoadFailure("invalid model config " + spec + ": " + e.what());
    }
    if (n_points != 0) cfg.n_points = n_points;
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- metric

struct MetricArgs {
  std::string input, reference, metrics, json;
  std::size_t points = 4096;
  std::uint64_t seed = 0;
  int iou_resolution = 64;
  double fscore_fraction = 0.01;
  CLI::Option* json_opt = nullptr;
};

int run_metric(const MetricArgs& a, const CLI::App* sub) {
  log_resolved(sub);
  log_seed("sampling", a.seed);
  const auto input = load_or_fail(a.input);
  const auto reference = load_or_fail(a.reference);
  tge::MetricConfig cfg;
  cfg.points = a.points;
  cfg.seed = a.seed;
  cfg.iou_resolution = a.iou_resolution;
  cfg.fscore_fraction = a.fscore_fraction;
  cfg.metrics = split_list(a.metrics);
  std::vector<tge::MetricResult> results;
  try {
    results = tge::run_all(input, reference, cfg);
  } catch (const std::exception& e) {
    throw MetricFailure(std::string("metric evaluation failed: ") + e.what());
  }
  const auto target = json_target(a.json_opt, a.json);
  if (!target.empty()) {
    json j = {{"input", a.input}, {"reference", a.reference}, {"results", json::array()}};
    for (const auto& r : results) j["results"].push_back(r.to_json());
    emit_json(target, j);
  }
  if (target != "-") {
    for (const auto& r : results) std::cout << r.name << "\t" << r.value << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
  std::string input, reference, checkpoint, model, manifest, json;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* json_opt = nullptr;
};

tge::TgeParams load_checkpoint_for(const std::string& checkpoint, const std::string& model) {
  try {
    if (model.empty()) return tge::load_model(checkpoint);
    return tge::load_model(checkpoint, resolve_model(model, 0));
  } catch (const tge::FingerprintError&) {
    throw;
  } catch (const LoadFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw LoadFailure("cannot load checkpoint " + checkpoint + ": " + e.what());
  }
}

int run_score(const ScoreArgs& a, const CLI::App* sub) {
  log_resolved(sub);
  tge::TgeParams params = load_checkpoint_for(a.checkpoint, a.model);
  if (a.seed_opt->count() > 0) params.config.seed = a.seed;
  log_seed("sampling/fps", params.config.seed);
  log_seed("init (from checkpoint)", params.init_seed);

  json rows = json::array();
  if (!a.manifest.empty()) {
    const auto manifest = manifest_or_fail(a.manifest);
    for (const auto& g : manifest.objects) {
      const auto ref = load_or_fail(g.reference);
      for (const auto& d : g.distorted) {
        const double s = tge::predict(load_or_fail(d.path), ref, params);
        rows.push_back({{"object", g.id}, {"id", d.id}, {"score", s}});
      }
    }
  } else {
    if (a.input.empty() || a.reference.empty()) throw CLI::ValidationError("score: INPUT and REFERENCE are required");
    const double s = tge::predict(load_or_fail(a.input), load_or_fail(a.reference), params);
    rows.push_back({{"input", a.input}, {"reference", a.reference}, {"score", s}});
  }
  const auto target = json_target(a.json_opt, a.json);
  if (!target.empty()) emit_json(target, {{"fingerprint", params.fingerprint()}, {"scores", rows}});
  if (target != "-") {
    for (const auto& r : rows) {
      if (r.contains("id")) std::cout << r["object"].get<std::string>() << "\t" << r["id"].get<std::string>() << "\t";
      std::cout << r["score"].get<double>() << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest, out, model = "toy", log, json, checkpoint_dir;
  std::size_t n_points = 0;
  tge::TrainConfig cfg;
  double target_srocc = -2.0;
  CLI::Option* json_opt = nullptr;
};

void add_train_options(CLI::App* app, TrainArgs& a) {
  app->add_option("--model", a.model, "Model architecture: toy, default, or a JSON config file")
      ->capture_default_str()
      ->envname("TGE_MODEL");
  app->add_option("--n-points", a.n_points, "Points sampled per mesh (0 keeps the architecture's value)");
  app->add_option("--epochs", a.cfg.epochs, "Maximum epochs")->capture_default_str();
  app->add_option("--batch-size", a.cfg.batch_size, "Mini-batch size")->capture_default_str();
  app->add_option("--lr", a.cfg.lr, "AdamW learning rate")->capture_default_str();
  app->add_option("--weight-decay", a.cfg.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
  app->add_option("--w-smooth", a.cfg.weights.smooth, "Smooth L1 weight")->capture_default_str();
  app->add_option("--w-plcc", a.cfg.weights.plcc, "PLCC loss weight")->capture_default_str();
  app->add_option("--w-srocc", a.cfg.weights.srocc, "SROCC loss weight")->capture_default_str();
  app->add_option("--temperature", a.cfg.temperature, "Initial soft-rank temperature")->capture_default_str();
  app->add_option("--temperature-halving", a.cfg.temperature_halving_epochs, "Halve the temperature every N epochs")
      ->capture_default_str();
  app->add_option("--accumulate", a.cfg.accumulation_window, "Correlation window in batches")->capture_default_str();
  app->add_option("--target-srocc", a.target_srocc, "Stop once train-set SROCC reaches this value");
  app->add_option("--patience", a.cfg.plateau_patience, "Plateau patience in epochs (0 disables)")
      ->capture_default_str();
}

tge::TrainConfig finish_train_config(TrainArgs& a) {
  tge::TrainConfig cfg = a.cfg;
  if (a.target_srocc > -2.0) cfg.target_srocc = a.target_srocc;
  cfg.validate();
  return cfg;
}

int run_train(TrainArgs& a, const CLI::App* sub) {
  log_resolved(sub);
  const auto manifest = manifest_or_fail(a.manifest);
  const auto model = resolve_model(a.model, a.n_points);
  auto cfg = finish_train_config(a);
  cfg.checkpoint_dir = a.checkpoint_dir;
  if (!a.checkpoint_dir.empty() && cfg.checkpoint_every == 0) cfg.checkpoint_every = 50;
  log_seed("init/shuffle", cfg.seed);
  log_seed("sampling/fps", model.seed);
  std::cerr << "[tge] model config: " << model.to_json().dump() << "\n";
  std::cerr << "[tge] train config: " << cfg.to_json().dump() << "\n";

  std::vector<tge::TrainPair> pairs;
  try {
    pairs = tge::prepare_pairs(manifest, model);
  } catch (const std::exception& e) {
    throw LoadFailure(std::string("cannot prepare training pairs: ") + e.what());
  }
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::trunc);
    if (!log) throw tge::IoError("cannot write training log " + a.log);
  }
  const auto result = tge::train(pairs, cfg, model, [&](const tge::EpochLog& e) {
    if (log.is_open()) log << e.to_json().dump() << "\n" << std::flush;
    if (e.epoch % 10 == 0 || e.epoch == 1) {
      std::cerr << "[tge] epoch " << e.epoch << " loss " << e.loss;
      if (e.train_srocc) std::cerr << " train_srocc " << *e.train_srocc;
      std::cerr << "\n";
    }
  });
  tge::save_model(a.out, result.params);

  const auto& last = result.log.back();
  json summary = {{"checkpoint", a.out},
                  {"fingerprint", result.params.fingerprint()},
                  {"pairs", pairs.size()},
                  {"epochs_run", result.log.size()},
                  {"stop_reason", result.stop_reason},
                  {"final_loss", last.loss},
                  {"train_plcc", last.train_plcc ? json(*last.train_plcc) : json(nullptr)},
                  {"train_srocc", last.train_srocc ? json(*last.train_srocc) : json(nullptr)}};
  const auto target = json_target(a.json_opt, a.json);
  if (!target.empty()) emit_json(target, summary);
  if (target != "-") {
    std::cout << "saved " << a.out << " after " << result.log.size() << " epochs (" << result.stop_reason << ")\n";
  }
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string manifest, metric, checkpoint, model_cfg, folds = "object", json, csv;
  bool train = false;
  std::size_t points = 4096;
  std::uint64_t seed = 0;
  bool no_negate = false;
  TrainArgs train_args;
  CLI::Option* json_opt = nullptr;
};

int run_eval(EvalArgs& a, const CLI::App* sub) {
  log_resolved(sub);
  if (a.folds != "object") throw CLI::ValidationError("--folds: only object-level folds are supported");
  const auto manifest = manifest_or_fail(a.manifest);
  const int modes = !a.metric.empty() + !a.checkpoint.empty() + a.train;
  if (modes != 1) throw CLI::ValidationError("eval: give exactly one of --metric, --checkpoint, --train");

  tge::EvalReport report;
  tge::CrossValidationOptions opts;
  opts.negate_lower_better = !a.no_negate;
  std::optional<tge::TgeParams> params;
  try {
    if (!a.metric.empty()) {
      tge::MetricConfig mc;
      mc.points = a.points;
      mc.seed = a.seed;
      log_seed("sampling", a.seed);
      opts.orientation = tge::metric_orientation(a.metric);
      report = tge::cross_validate(manifest, a.metric, tge::metric_scorer(a.metric, mc), opts);
    } else if (!a.checkpoint.empty()) {
      params = load_checkpoint_for(a.checkpoint, a.model_cfg);
      log_seed("sampling/fps", params->config.seed);
      report = tge::cross_validate(manifest, "tge", tge::model_scorer(*params), opts);
    } else {
      const auto model = resolve_model(a.train_args.model, a.train_args.n_points);
      auto cfg = finish_train_config(a.train_args);
      cfg.seed = a.seed;
      log_seed("init/shuffle", cfg.seed);
      log_seed("sampling/fps", model.seed);
      report = tge::cross_validate(manifest, "tge", tge::training_scorer(cfg, model), opts);
    }
  } catch (const tge::FingerprintError&) {
    throw;
  } catch (const LoadFailure&) {
    throw;
  } catch (const tge::IoError& e) {
    throw LoadFailure(e.what());
  } catch (const tge::FormatError& e) {
    throw LoadFailure(e.what());
  } catch (const CLI::Error&) {
    throw;
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception& e) {
    throw MetricFailure(std::string("evaluation failed: ") + e.what());
  }

  if (!a.csv.empty()) {
    std::ofstream out(a.csv, std::ios::trunc);
    const std::vector<tge::EvalReport> one{report};
    for (const char* which : {"plcc", "srocc", "krocc"}) {
      out << "# " << which << "\n" << tge::correlation_table(one, which);
    }
  }
  const auto target = json_target(a.json_opt, a.json);
  if (!target.empty()) emit_json(target, report.to_json());
  if (target != "-") {
    for (const auto& f : report.folds) {
      std::cout << f.object << "\tn=" << f.n << "\tplcc=" << f.corr.plcc << "\tsrocc=" << f.corr.srocc
                << "\tkrocc=" << f.corr.krocc << "\n";
    }
    for (const auto& s : report.skipped) std::cout << s.object << "\tskipped: " << s.reason << "\n";
    std::cout << "mean\tplcc=" << report.mean.plcc << "\tsrocc=" << report.mean.srocc << "\tkrocc=" << report.mean.krocc
              << "\n";
    std::cout << "std\tplcc=" << report.std.plcc << "\tsrocc=" << report.std.srocc << "\tkrocc=" << report.std.krocc
              << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out_dir, references = "sphere,torus,box,cylinder,cone", levels = "0,0.333333,0.666667,1", json;
  int resolution = 24;
  std::uint64_t seed = 0;
  CLI::Option* json_opt = nullptr;
};

int run_synth(const SynthArgs& a, const CLI::App* sub) {
  log_resolved(sub);
  log_seed("distortion", a.seed);
  std::vector<tge::ColoredMesh> refs;
  std::size_t k = 0;
  for (const auto& r : split_list(a.references)) {
    tge::ColoredMesh m;
    if (fs::exists(r)) {
      m = load_or_fail(r);
      m.name = fs::path(r).stem().string();
    } else {
      try {
        m = tge::make_primitive(tge::primitive_from_name(r), a.resolution, tge::derive_seed(a.seed, 100 + k));
      } catch (const std::exception& e) {
        throw LoadFailure("reference '" + r + "' is neither a file nor a primitive: " + e.what());
      }
      m.name = r;
    }
    refs.push_back(std::move(m));
    ++k;
  }
  std::vector<double> levels;
  for (const auto& s : split_list(a.levels)) levels.push_back(std::stod(s));
  const auto manifest = tge::make_synthetic_dataset(refs, levels, a.seed, a.out_dir);
  const auto target = json_target(a.json_opt, a.json);
  if (!target.empty()) {
    emit_json(target, {{"manifest", (fs::path(a.out_dir) / "manifest.json").generic_string()},
                       {"objects", manifest.objects.size()},
                       {"entries", manifest.scored_pairs()},
                       {"content", manifest.to_json()}});
  }
  if (target != "-") std::cout << (fs::path(a.out_dir) / "manifest.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- dataset-stats

struct StatsArgs {
  std::string store, json;
  CLI::Option* json_opt = nullptr;
};

int run_dataset_stats(const StatsArgs& a, const CLI::App* sub) {
  log_resolved(sub);
  fs::path events = a.store;
  if (fs::is_directory(events)) events /= "events.jsonl";
  std::vector<tge::Session> sessions;
  try {
    sessions = tge::replay_events(events);
  } catch (const std::exception& e) {
    throw LoadFailure("cannot read annotation store " + events.string() + ": " + e.what());
  }
  const json stats = tge::dataset_statistics(sessions);
  const auto target = json_target(a.json_opt, a.json);
  if (!target.empty()) emit_json(target, stats);
  if (target != "-") {
    for (const auto& g : stats["groups"]) {
      std::cout << g["group"].get<std::string>() << "\tmeshes=" << g["meshes"].size()
                << "\tci_before=" << g["mean_ci_before"].dump() << "\tci_after=" << g["mean_ci_after"].dump()
                << "\tremoved=" << g["removal_fraction"].get<double>() * 100.0 << "%\n";
    }
    if (!stats["overall"].is_null()) {
      const auto& o = stats["overall"];
      std::cout << "overall\tci_before=" << o["mean_ci_before"].dump() << "\tci_after=" << o["mean_ci_after"].dump()
                << "\tremoved=" << o["removal_fraction"].get<double>() * 100.0 << "%\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string root, store, addr = "127.0.0.1:8080", json;
  std::size_t rounds = 6;
  std::uint64_t seed = 0;
  CLI::Option* json_opt = nullptr;
};

volatile std::sig_atomic_t g_stop = 0;

void handle_signal(int) { g_stop = 1; }

int run_serve(const ServeArgs& a, const CLI::App* sub) {
  log_resolved(sub);
  const auto manifest = manifest_or_fail(fs::path(a.root) / "manifest.json");
  const fs::path store = a.store.empty() ? fs::path(a.root) / "annotations" : fs::path(a.store);
  tge::SessionManager manager(manifest, store, a.rounds);
  tge::ServerConfig sc;
  const auto colon = a.addr.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--addr must be HOST:PORT");
  sc.host = a.addr.substr(0, colon);
  sc.port = std::stoi(a.addr.substr(colon + 1));
  tge::AnnotationServer server(manager);
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  const int port = server.start(sc);
  std::cerr << "[tge] serving " << manifest.objects.size() << " groups on http://" << sc.host << ":" << port
            << " (store " << store.string() << ")\n";
  // The startup descriptor lets scripts discover the bound port when --addr uses port 0.
  const auto target = json_target(a.json_opt, a.json);
  if (!target.empty()) {
    emit_json(target, {{"host", sc.host},
                       {"port", port},
                       {"groups", manifest.objects.size()},
                       {"store", store.string()},
                       {"rounds", a.rounds},
                       {"seed", a.seed}});
    std::cout.flush();
  }
  while (g_stop == 0) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  manager.write_snapshot();
  return 0;
}

// ---------------------------------------------------------------- flops

struct FlopsArgs {
  std::string model = "default", json;
  std::size_t n_points = 10000;
  CLI::Option* json_opt = nullptr;
};

int run_flops(const FlopsArgs& a, const CLI::App* sub) {
  log_resolved(sub);
  const auto model = resolve_model(a.model, 0);
  const auto f = tge::estimate_flops(model, a.n_points);
  json j = f.to_json();
  j["n_points"] = a.n_points;
  j["model"] = a.model;
  j["reference_gflops"] = kReferenceGflops;
  const auto target = json_target(a.json_opt, a.json);
  if (!target.empty()) emit_json(target, j);
  if (target != "-") {
    std::cout << "estimated " << f.total() / 1e9 << " GFLOPs per prediction at " << a.n_points
              << " points (reference figure " << kReferenceGflops << " GFLOPs)\n";
    std::cout << "  grouped " << f.grouped / 1e9 << "\n  level " << f.level / 1e9 << "\n  attention "
              << f.attention / 1e9 << "\n  final_sa " << f.final_sa / 1e9 << "\n  head " << f.head / 1e9 << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fidelity evaluation toolkit for colored triangle meshes"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file with default option values (flags and env take precedence)");
  app.set_version_flag("--version", "tge 1.0.0");

  MetricArgs metric;
  auto* m = app.add_subcommand("metric", "Baseline geometric metrics between an input and a reference mesh");
  m->add_option("input", metric.input, "Input (distorted) mesh")->required();
  m->add_option("reference", metric.reference, "Reference mesh")->required();
  m->add_option("--metrics", metric.metrics, "Comma-separated subset of cd,iou,fscore,p2s,nd,uhd");
  m->add_option("--points", metric.points, "Surface samples per mesh")->capture_default_str()->envname("TGE_POINTS");
  m->add_option("--seed", metric.seed, "Sampling seed")->capture_default_str()->envname("TGE_SEED");
  m->add_option("--iou-resolution", metric.iou_resolution, "Voxel grid resolution for IoU")->capture_default_str();
  m->add_option("--fscore-fraction", metric.fscore_fraction, "F-score threshold as a fraction of the bbox diagonal")
      ->capture_default_str();
  metric.json_opt = add_json_option(m, metric.json);

  ScoreArgs score;
  auto* s = app.add_subcommand("score", "Learned fidelity score of an input against a reference");
  s->add_option("input", score.input, "Input (distorted) mesh");
  s->add_option("reference", score.reference, "Reference mesh");
  s->add_option("--checkpoint", score.checkpoint, "Model checkpoint")->required()->envname("TGE_CHECKPOINT");
  s->add_option("--model", score.model, "Expected architecture (toy, default or JSON); mismatches exit with 4");
  s->add_option("--manifest", score.manifest, "Score every distorted entry of a manifest instead");
  score.seed_opt = s->add_option("--seed", score.seed, "Override the sampling/FPS seed")->envname("TGE_SEED");
  score.json_opt = add_json_option(s, score.json);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the learned metric on a scored manifest");
  t->add_option("manifest", train.manifest, "Dataset manifest")->required();
  t->add_option("--out", train.out, "Checkpoint to write")->required();
  t->add_option("--seed", train.cfg.seed, "Initialization and shuffling seed")->capture_default_str()->envname("TGE_SEED");
  t->add_option("--log", train.log, "Per-epoch JSON-lines log file");
  t->add_option("--checkpoint-dir", train.checkpoint_dir, "Directory for periodic checkpoints");
  t->add_option("--checkpoint-every", train.cfg.checkpoint_every, "Periodic checkpoint cadence in epochs");
  add_train_options(t, train);
  train.json_opt = add_json_option(t, train.json);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Leave-one-object-out correlation report");
  e->add_option("manifest", eval.manifest, "Scored dataset manifest")->required();
  e->add_option("--metric", eval.metric, "Baseline metric to evaluate");
  e->add_option("--checkpoint", eval.checkpoint, "Evaluate a trained checkpoint");
  e->add_option("--model-config", eval.model_cfg, "Expected architecture for --checkpoint");
  e->add_flag("--train", eval.train, "Train a fresh model per fold");
  e->add_option("--folds", eval.folds, "Fold policy (object)")->capture_default_str();
  e->add_option("--points", eval.points, "Surface samples per mesh for baselines")->capture_default_str();
  e->add_option("--seed", eval.seed, "Sampling / training seed")->capture_default_str()->envname("TGE_SEED");
  e->add_flag("--no-negate", eval.no_negate, "Keep lower-better metrics un-negated");
  e->add_option("--csv", eval.csv, "Write PLCC/SROCC/KROCC tables as CSV");
  add_train_options(e, eval.train_args);
  eval.json_opt = add_json_option(e, eval.json);

  SynthArgs synth;
  auto* y = app.add_subcommand("synth", "Generate a synthetic graded-distortion dataset");
  y->add_option("out_dir", synth.out_dir, "Output directory")->required();
  y->add_option("--references", synth.references, "Comma-separated primitive names or mesh files")
      ->capture_default_str();
  y->add_option("--levels", synth.levels, "Comma-separated distortion levels in [0,1]")->capture_default_str();
  y->add_option("--resolution", synth.resolution, "Primitive tessellation")->capture_default_str();
  y->add_option("--seed", synth.seed, "Distortion seed")->capture_default_str()->envname("TGE_SEED");
  synth.json_opt = add_json_option(y, synth.json);

  StatsArgs stats;
  auto* d = app.add_subcommand("dataset-stats", "Score aggregation and confidence intervals of an annotation store");
  d->add_option("store", stats.store, "Annotation store directory or events.jsonl")->required();
  std::uint64_t unused_seed = 0;
  d->add_option("--seed", unused_seed, "Accepted for uniformity; aggregation is deterministic");
  stats.json_opt = add_json_option(d, stats.json);

  ServeArgs serve;
  auto* v = app.add_subcommand("serve", "Run the annotation HTTP service");
  v->add_option("root", serve.root, "Dataset root containing manifest.json")->required()->envname("TGE_DATASET_ROOT");
  v->add_option("--store", serve.store, "Annotation store directory (default ROOT/annotations)");
  v->add_option("--addr", serve.addr, "Listen address HOST:PORT")->capture_default_str()->envname("TGE_ADDR");
  v->add_option("--rounds", serve.rounds, "Rounds per tournament")->capture_default_str()->envname("TGE_ROUNDS");
  v->add_option("--seed", serve.seed, "Accepted for interface uniformity; serving draws no random numbers")
      ->capture_default_str();
  serve.json_opt = v->add_option("--json", serve.json, "Write the startup descriptor as JSON (stdout when no file)")
                       ->expected(0, 1);

  FlopsArgs flops;
  auto* f = app.add_subcommand("flops", "Analytic FLOP estimate of one prediction");
  f->add_option("--model", flops.model, "Architecture: toy, default, or a JSON config")->capture_default_str();
  f->add_option("--n-points", flops.n_points, "Points per mesh")->capture_default_str();
  std::uint64_t unused_flops_seed = 0;
  f->add_option("--seed", unused_flops_seed, "Accepted for uniformity; the estimate is analytic");
  flops.json_opt = add_json_option(f, flops.json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (m->parsed()) return run_metric(metric, m);
    if (s->parsed()) return run_score(score, s);
    if (t->parsed()) return run_train(train, t);
    if (e->parsed()) return run_eval(eval, e);
    if (y->parsed()) return run_synth(synth, y);
    if (d->parsed()) return run_dataset_stats(stats, d);
    if (v->parsed()) return run_serve(serve, v);
    if (f->parsed()) return run_flops(flops, f);
  } catch (const CLI::Error& err) {
    std::cerr << "tge: " << err.what() << "\n";
    return kExitUsage;
  } catch (const LoadFailure& err) {
    std::cerr << "tge: " << err.what() << "\n";
    return kExitLoad;
  } catch (const MetricFailure& err) {
    std::cerr << "tge: " << err.what() << "\n";
    return kExitMetric;
  } catch (const tge::FingerprintError& err) {
    std::cerr << "tge: fingerprint mismatch: " << err.what() << "\n";
    return kExitFingerprint;
  } catch (const std::exception& err) {
    std::cerr << "tge: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
