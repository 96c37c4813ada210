#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"

#include "tide/errors.hpp"
#include "tide/experiment.hpp"
#include "tide/gradsuite.hpp"
#include "tide/shift_bench.hpp"
#include "tide/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tide;

namespace {

// Bad flags, unreadable or malformed inputs: exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
  if (!out) throw UsageError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
}

graph::Graph read_bundle(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("no such file: " + path);
  try {
    return graph::load_bundle(path);
  } catch (const ParseError& e) {
    throw UsageError(path + ": " + e.what());
  } catch (const IndexError& e) {
    throw UsageError(path + ": " + e.what());
  } catch (const ShapeError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

TideConfig read_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path + " is not valid JSON: " + e.what());
  }
  try {
    return TideConfig::from_json(j);
  } catch (const std::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError("invalid number '" + text + "' in " + what);
  }
}

// Training-time flag overrides, applied over the config file.
struct Overrides {
  std::optional<std::string> objective;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<double> beta;
  std::optional<double> alpha;
  std::optional<double> lambda_cind;
  std::optional<double> prop_alpha;
  std::optional<int> prop_k;

  void attach(CLI::App* cmd) {
    cmd->add_option("--objective", objective, "sl | ib | ib_cind | tide");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--lr", lr);
    cmd->add_option("--seed", seed);
    cmd->add_option("--beta", beta, "sets beta_z, beta_v and beta_q");
    cmd->add_option("--alpha", alpha, "sets alpha1, alpha2 and alpha3");
    cmd->add_option("--lambda-cind", lambda_cind);
    cmd->add_option("--prop-alpha", prop_alpha);
    cmd->add_option("--prop-k", prop_k);
  }

  void apply(TideConfig& c) const {
    try {
      if (objective) c.objective_mode = objective_mode_from_string(*objective);
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    if (epochs) c.epochs = *epochs;
    if (lr) c.lr = *lr;
    if (seed) c.seed = *seed;
    if (beta) c.beta_z = c.beta_v = c.beta_q = *beta;
    if (alpha) c.alpha1 = c.alpha2 = c.alpha3 = *alpha;
    if (lambda_cind) c.lambda_cind = *lambda_cind;
    if (prop_alpha) c.prop_alpha = *prop_alpha;
    if (prop_k) c.prop_k = *prop_k;
    try {
      c.validate();
    } catch (const ContractError& e) {
      throw UsageError(std::string("invalid configuration: ") + e.what());
    }
  }
};

// ---- generate ----

struct GenerateArgs {
  std::string kind = "csbm";
  bench::CsbmParams csbm;
  std::vector<std::string> shifts;
  double exposure_fraction = 0.0;
  std::uint64_t shift_seed = 1;
  std::string out = ".";
};

std::string shift_file_name(const std::string& spec) {
  std::string name = spec;
  for (char& c : name) {
    if (c == ':' || c == '+' || c == ',') c = '_';
  }
  return name + ".json";
}

int cmd_generate(const GenerateArgs& a) {
  if (a.kind != "csbm") throw UsageError("unknown generator kind '" + a.kind + "' (expected csbm)");
  graph::Graph g;
  try {
    g = bench::gen_csbm(a.csbm);
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid generator parameters: ") + e.what());
  }
  ensure_dir(a.out);
  const fs::path id_path = fs::path(a.out) / "id.json";
  graph::save_bundle(g, id_path);
  std::cout << "id: n=" << g.num_nodes() << " edges=" << g.edges.size() << " C=" << g.num_classes
            << " d=" << g.feature_dim() << " -> " << id_path.string() << "\n";

  std::uint64_t seed = a.shift_seed;
  for (const std::string& spec : a.shifts) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw UsageError("shift '" + spec + "' is not kind:value");
    const std::string kind = spec.substr(0, colon);
    const std::string arg = spec.substr(colon + 1);
    graph::Graph out;
    try {
      if (kind == "label") {
        if (arg == "all") throw UsageError("label shift cannot hold out every class");
        std::vector<int> held;
        for (const auto& c : split(arg, '+')) held.push_back(static_cast<int>(parse_number(c, spec)));
        if (held.empty()) throw UsageError("label shift needs held-out classes, e.g. label:2+3");
        out = bench::label_leave_out_split(g, held, seed, a.exposure_fraction).graph;
      } else {
        const double intensity = parse_number(arg, spec);
        if (!(intensity >= 0.0 && intensity <= 1.0)) throw UsageError("shift intensity outside [0, 1]: " + spec);
        bench::ShiftSpec s;
        s.intensity = intensity;
        s.seed = seed;
        if (kind == "structure") {
          s.kind = bench::ShiftKind::kStructure;
          out = bench::apply_structure_shift(g, s);
        } else if (kind == "feature") {
          s.kind = bench::ShiftKind::kFeature;
          out = bench::apply_feature_shift(g, s);
        } else if (kind == "joint") {
          s.kind = bench::ShiftKind::kFeature;
          out = bench::apply_feature_shift(g, s);
          s.kind = bench::ShiftKind::kStructure;
          s.seed = seed + 1000;
          out = bench::apply_structure_shift(out, s);
        } else {
          throw UsageError("unknown shift kind '" + kind + "' (structure|feature|joint|label)");
        }
        out = bench::as_ood_graph(out);
      }
    } catch (const UsageError&) {
      throw;
    } catch (const ContractError& e) {
      throw UsageError("shift " + spec + ": " + e.what());
    } catch (const IndexError& e) {
      throw UsageError("shift " + spec + ": " + e.what());
    }
    const fs::path path = fs::path(a.out) / shift_file_name(spec);
    graph::save_bundle(out, path);
    std::cout << kind << ": n=" << out.num_nodes() << " edges=" << out.edges.size()
              << " C=" << out.num_classes << " test_ood=" << out.splits.test_ood.size() << " -> "
              << path.string() << "\n";
    ++seed;
  }
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string config;
  std::string exposure;
  std::string out;
  Overrides overrides;
};

int cmd_train(const TrainArgs& a) {
  TideConfig cfg = read_config(a.config);
  if (!a.exposure.empty()) cfg.exposure_enabled = true;
  a.overrides.apply(cfg);
  const graph::Graph g = read_bundle(a.data);
  std::optional<graph::Graph> exposure;
  if (cfg.exposure_enabled) {
    if (a.exposure.empty()) throw UsageError("exposure_enabled needs --exposure <bundle>");
    exposure = read_bundle(a.exposure);
  }
  ensure_dir(a.out);
  const fs::path dir(a.out);
  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw UsageError("cannot write " + (dir / "train_log.jsonl").string());
  auto on_epoch = [&](const train::EpochRecord& r) { log << r.to_json().dump() << "\n"; };

  const train::TrainResult result = cfg.objective_mode == ObjectiveMode::kSl
                                        ? train::train_sl_baseline(g, cfg, on_epoch)
                                        : train::train_tide(g, exposure ? &*exposure : nullptr, cfg, on_epoch);
  model::save_checkpoint(result.model, dir / "model.ckpt", cfg.seed, cfg.hash());
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
  std::cout << "trained " << to_string(cfg.objective_mode) << " for " << cfg.epochs
            << " epochs; best epoch " << result.best_epoch << " val acc " << result.best_val_accuracy
            << " -> " << (dir / "model.ckpt").string() << "\n";
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string model;
  std::string data;
  std::string ood;
  std::string config;
  std::string out;
  Overrides overrides;
};

int cmd_eval(const EvalArgs& a) {
  std::string config_path = a.config;
  const fs::path sibling = fs::path(a.model).parent_path() / "config.json";
  if (config_path.empty() && fs::exists(sibling)) config_path = sibling.string();
  TideConfig cfg = read_config(config_path);
  a.overrides.apply(cfg);
  if (!fs::exists(a.model)) throw UsageError("no such checkpoint: " + a.model);
  const model::TideModel m = model::load_checkpoint(a.model);
  const graph::Graph id = read_bundle(a.data);
  const graph::Graph ood = read_bundle(a.ood.empty() ? a.data : a.ood);

  const experiment::DetectionRun run = experiment::evaluate_model(m, id, ood, cfg);
  ensure_dir(a.out);
  const fs::path dir(a.out);
  write_text(dir / "report.json", run.report_json().dump(2) + "\n");
  detect::write_scores_csv(dir / "scores.csv", run.rows);
  const json hist = {{"energy", run.energy_hist.to_json()}, {"confidence", run.confidence_hist.to_json()}};
  write_text(dir / "hist.json", hist.dump(2) + "\n");
  std::cout << std::fixed << std::setprecision(4) << "auroc " << run.raw.auroc << " aupr "
            << run.raw.aupr << " fpr95 " << run.raw.fpr95 << " | propagated auroc "
            << run.propagated.auroc << " aupr " << run.propagated.aupr << " fpr95 "
            << run.propagated.fpr95 << " | id acc " << run.raw.id_accuracy << "\n";
  return kExitOk;
}

// ---- compare ----

struct CompareArgs {
  std::string data;
  std::string ood;
  std::string config;
  std::string exposure;
  std::string modes = "sl,ib,ib_cind,tide";
  std::string seeds = "0,1,2,3,4";
  std::string out;
  Overrides overrides;
};

int cmd_compare(const CompareArgs& a) {
  TideConfig cfg = read_config(a.config);
  if (!a.exposure.empty()) cfg.exposure_enabled = true;
  a.overrides.apply(cfg);
  std::vector<ObjectiveMode> modes;
  for (const auto& m : split(a.modes, ',')) {
    try {
      modes.push_back(objective_mode_from_string(m));
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split(a.seeds, ',')) {
    const double v = parse_number(s, "--seeds");
    if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
      throw UsageError("seeds must be non-negative integers");
    }
    seeds.push_back(static_cast<std::uint64_t>(v));
  }
  if (modes.empty()) throw UsageError("--modes lists no objective mode");
  if (seeds.empty()) throw UsageError("--seeds lists no seed");
  const graph::Graph id = read_bundle(a.data);
  const graph::Graph ood = read_bundle(a.ood.empty() ? a.data : a.ood);
  std::optional<graph::Graph> exposure;
  if (cfg.exposure_enabled) {
    if (a.exposure.empty()) throw UsageError("exposure_enabled needs --exposure <bundle>");
    exposure = read_bundle(a.exposure);
  }

  const auto runs = experiment::run_comparison(id, ood, cfg, modes, seeds, exposure ? &*exposure : nullptr);
  ensure_dir(a.out);
  const fs::path dir(a.out);
  const std::string md = experiment::comparison_markdown(runs, modes);
  write_text(dir / "compare.json", experiment::comparison_json(runs, modes).dump(2) + "\n");
  write_text(dir / "compare.csv", experiment::comparison_csv(runs, modes));
  write_text(dir / "compare.md", md);
  std::cout << md;
  return kExitOk;
}

// ---- check-grad ----

int cmd_check_grad(const gradsuite::Options& o) {
  bool ok = true;
  std::cout << std::scientific << std::setprecision(3);
  for (const auto& e : gradsuite::run(o)) {
    ok = ok && e.passed;
    std::cout << (e.passed ? "ok   " : "FAIL ") << std::left << std::setw(20) << e.name
              << " max_rel_err=" << e.result.max_relative_error << " entries=" << e.result.entries_checked
              << "\n";
  }
  return ok ? kExitOk : kExitNumeric;
}

void apply_thread_env() {
  const char* env = std::getenv("TIDE_THREADS");
  int n = 1;
  if (env != nullptr && *env != '\0') {
    n = static_cast<int>(parse_number(env, "TIDE_THREADS"));
    if (n < 1) throw UsageError("TIDE_THREADS must be >= 1");
  }
  Eigen::setNbThreads(n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TIDE graph OOD detection experiments"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a cSBM bundle and shifted copies");
  g->add_option("--kind", gen.kind);
  g->add_option("--n", gen.csbm.num_nodes);
  g->add_option("--classes", gen.csbm.num_classes);
  g->add_option("--dim", gen.csbm.feature_dim);
  g->add_option("--p-in", gen.csbm.p_in);
  g->add_option("--p-out", gen.csbm.p_out);
  g->add_option("--separation", gen.csbm.mean_separation);
  g->add_option("--noise", gen.csbm.noise_scale);
  g->add_option("--train-fraction", gen.csbm.train_fraction);
  g->add_option("--val-fraction", gen.csbm.val_fraction);
  g->add_option("--seed", gen.csbm.seed);
  g->add_option("--shift", gen.shifts, "kind:value, e.g. feature:0.5, structure:0.3, joint:0.5, label:2+3");
  g->add_option("--shift-seed", gen.shift_seed);
  g->add_option("--exposure-fraction", gen.exposure_fraction);
  g->add_option("--out", gen.out);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on a bundle");
  t->add_option("--data", tr.data)->required();
  t->add_option("--config", tr.config);
  t->add_option("--exposure", tr.exposure, "bundle with train_ood nodes; enables exposure");
  t->add_option("--out", tr.out)->required();
  tr.overrides.attach(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score ID and OOD nodes with a checkpoint");
  e->add_option("--model", ev.model)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--ood", ev.ood);
  e->add_option("--config", ev.config);
  e->add_option("--out", ev.out)->required();
  ev.overrides.attach(e);

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "train and evaluate objective modes over seeds");
  c->add_option("--data", cmp.data)->required();
  c->add_option("--ood", cmp.ood);
  c->add_option("--config", cmp.config);
  c->add_option("--exposure", cmp.exposure);
  c->add_option("--modes", cmp.modes);
  c->add_option("--seeds", cmp.seeds);
  c->add_option("--out", cmp.out)->required();
  cmp.overrides.attach(c);

  gradsuite::Options gs;
  auto* k = app.add_subcommand("check-grad", "finite-difference check of every loss");
  k->add_option("--seed", gs.seed);
  k->add_option("--nodes", gs.num_nodes);
  k->add_option("--tolerance", gs.tolerance);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    apply_thread_env();
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_compare(cmp);
    if (*k) return cmd_check_grad(gs);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const train::TrainingAborted& err) {
    std::cerr << "error: " << err.what() << " (component " << err.component() << ")\n";
    return kExitNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
