#include "tide/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <sstream>

#include "tide/errors.hpp"

namespace tide::experiment {
namespace {

using json = nlohmann::json;

struct MetricDef {
  const char* name;
  double (*get)(const RunRecord&);
};

const std::vector<MetricDef>& metric_defs() {
  static const std::vector<MetricDef> defs = {
      {"auroc", [](const RunRecord& r) { return r.detection.raw.auroc; }},
      {"aupr", [](const RunRecord& r) { return r.detection.raw.aupr; }},
      {"fpr95", [](const RunRecord& r) { return r.detection.raw.fpr95; }},
      {"auroc_prop", [](const RunRecord& r) { return r.detection.propagated.auroc; }},
      {"aupr_prop", [](const RunRecord& r) { return r.detection.propagated.aupr; }},
      {"fpr95_prop", [](const RunRecord& r) { return r.detection.propagated.fpr95; }},
      {"auroc_msp", [](const RunRecord& r) { return r.detection.msp.auroc; }},
      {"id_accuracy", [](const RunRecord& r) { return r.detection.raw.id_accuracy; }},
      {"id_entropy", [](const RunRecord& r) { return r.detection.id_entropy; }},
      {"entropy_gap",
       [](const RunRecord& r) { return r.detection.ood_entropy - r.detection.id_entropy; }},
  };
  return defs;
}

double mean_of(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i : idx) s += v[i];
  return s / static_cast<double>(idx.size());
}

}  // namespace

json DetectionRun::report_json() const {
  return {{"energy", raw.to_json()},
          {"energy_propagated", propagated.to_json()},
          {"msp", msp.to_json()},
          {"id_entropy", id_entropy},
          {"ood_entropy", ood_entropy}};
}

DetectionRun evaluate_model(const model::TideModel& model, const graph::Graph& id_graph,
                            const graph::Graph& ood_graph, const TideConfig& cfg) {
  const auto& id_nodes = id_graph.splits.test_id;
  const auto& ood_nodes = ood_graph.splits.test_ood;
  if (id_nodes.empty()) throw ContractError("evaluation needs test_id nodes in the ID graph");
  if (ood_nodes.empty()) throw ContractError("evaluation needs test_ood nodes in the OOD graph");

  const train::Inference id_inf = train::infer(model, id_graph, cfg);
  const train::Inference ood_inf = train::infer(model, ood_graph, cfg);
  const std::vector<double> id_msp = detect::msp_score(id_inf.logits);
  const std::vector<double> ood_msp = detect::msp_score(ood_inf.logits);
  const std::vector<double> id_ent = detect::predictive_entropy(id_inf.logits);
  const std::vector<double> ood_ent = detect::predictive_entropy(ood_inf.logits);

  const std::size_t total = id_nodes.size() + ood_nodes.size();
  std::vector<double> raw, prop, msp;
  std::vector<bool> is_ood;
  std::vector<int> predictions, labels;
  raw.reserve(total);
  DetectionRun run;
  auto append = [&](const train::Inference& inf, const std::vector<double>& msp_scores,
                    const graph::Graph& g, const std::vector<std::size_t>& nodes, bool ood) {
    for (std::size_t i : nodes) {
      raw.push_back(inf.raw_energy.e[i]);
      prop.push_back(inf.energy.e[i]);
      msp.push_back(msp_scores[i]);
      is_ood.push_back(ood);
      predictions.push_back(inf.predictions[i]);
      labels.push_back(g.labels[i]);
      run.rows.push_back({i, inf.energy.e[i], ood, inf.predictions[i], g.labels[i], -msp_scores[i]});
    }
  };
  append(id_inf, id_msp, id_graph, id_nodes, false);
  append(ood_inf, ood_msp, ood_graph, ood_nodes, true);

  // span<const bool> cannot view a vector<bool>
  const auto flags = std::make_unique<bool[]>(is_ood.size());
  std::copy(is_ood.begin(), is_ood.end(), flags.get());
  const std::span<const bool> ood_view(flags.get(), is_ood.size());

  std::vector<std::size_t> id_positions(id_nodes.size());
  for (std::size_t k = 0; k < id_positions.size(); ++k) id_positions[k] = k;

  run.raw = detect::evaluate(raw, ood_view, predictions, labels, id_positions);
  run.propagated = detect::evaluate(prop, ood_view, predictions, labels, id_positions);
  run.msp = detect::evaluate(msp, ood_view, predictions, labels, id_positions);
  run.id_entropy = mean_of(id_ent, id_nodes);
  run.ood_entropy = mean_of(ood_ent, ood_nodes);

  std::vector<double> id_e, ood_e, id_conf, ood_conf;
  for (const auto& r : run.rows) {
    (r.is_ood ? ood_e : id_e).push_back(r.score);
    (r.is_ood ? ood_conf : id_conf).push_back(r.confidence);
  }
  run.energy_hist = detect::histogram(id_e, ood_e, 64);
  run.confidence_hist = detect::histogram(id_conf, ood_conf, 64);
  return run;
}

std::vector<RunRecord> run_comparison(const graph::Graph& id_graph, const graph::Graph& ood_graph,
                                      const TideConfig& base, const std::vector<ObjectiveMode>& modes,
                                      const std::vector<std::uint64_t>& seeds,
                                      const graph::Graph* exposure) {
  if (modes.empty()) throw ContractError("comparison needs at least one objective mode");
  if (seeds.empty()) throw ContractError("comparison needs at least one seed");
  std::vector<RunRecord> runs;
  for (ObjectiveMode mode : modes) {
    for (std::uint64_t seed : seeds) {
      TideConfig cfg = base;
      cfg.seed = seed;
      cfg.objective_mode = mode;
      train::TrainResult trained = mode == ObjectiveMode::kSl
                                       ? train::train_sl_baseline(id_graph, cfg)
                                       : train::train_tide(id_graph, exposure, cfg);
      RunRecord rec;
      rec.mode = mode;
      rec.seed = seed;
      rec.best_epoch = trained.best_epoch;
      rec.best_val_accuracy = trained.best_val_accuracy;
      rec.detection = evaluate_model(trained.model, id_graph, ood_graph, cfg);
      runs.push_back(std::move(rec));
    }
  }
  return runs;
}

MetricSummary summarize(const std::vector<RunRecord>& runs, ObjectiveMode mode,
                        double (*metric)(const RunRecord&)) {
  std::vector<double> vals;
  for (const auto& r : runs) {
    if (r.mode == mode) vals.push_back(metric(r));
  }
  MetricSummary s;
  if (vals.empty()) return s;
  for (double v : vals) s.mean += v;
  s.mean /= static_cast<double>(vals.size());
  if (vals.size() > 1) {
    double ss = 0.0;
    for (double v : vals) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(vals.size() - 1));
  }
  return s;
}

json comparison_json(const std::vector<RunRecord>& runs, const std::vector<ObjectiveMode>& modes) {
  json out = json::object();
  json per_mode = json::object();
  for (ObjectiveMode mode : modes) {
    json m = json::object();
    for (const auto& def : metric_defs()) {
      const MetricSummary s = summarize(runs, mode, def.get);
      m[def.name] = {{"mean", s.mean}, {"std", s.std}};
    }
    per_mode[to_string(mode)] = std::move(m);
  }
  json per_run = json::array();
  for (const auto& r : runs) {
    per_run.push_back({{"mode", to_string(r.mode)},
                       {"seed", r.seed},
                       {"best_epoch", r.best_epoch},
                       {"best_val_accuracy", r.best_val_accuracy},
                       {"report", r.detection.report_json()}});
  }
  out["summary"] = std::move(per_mode);
  out["runs"] = std::move(per_run);
  return out;
}

std::string comparison_csv(const std::vector<RunRecord>& runs, const std::vector<ObjectiveMode>& modes) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "mode";
  for (const auto& def : metric_defs()) os << ',' << def.name << "_mean," << def.name << "_std";
  os << '\n';
  for (ObjectiveMode mode : modes) {
    os << to_string(mode);
    for (const auto& def : metric_defs()) {
      const MetricSummary s = summarize(runs, mode, def.get);
      os << ',' << s.mean << ',' << s.std;
    }
    os << '\n';
  }
  return os.str();
}

std::string comparison_markdown(const std::vector<RunRecord>& runs,
                                const std::vector<ObjectiveMode>& modes) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| mode | AUROC | AUPR | FPR95 | AUROC (prop) | AUPR (prop) | FPR95 (prop) | ID ACC |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (ObjectiveMode mode : modes) {
    os << "| " << to_string(mode);
    for (const char* name : {"auroc", "aupr", "fpr95", "auroc_prop", "aupr_prop", "fpr95_prop",
                             "id_accuracy"}) {
      const auto& defs = metric_defs();
      auto it = std::find_if(defs.begin(), defs.end(),
                             [&](const MetricDef& d) { return std::string(d.name) == name; });
      const MetricSummary s = summarize(runs, mode, it->get);
      os << " | " << 100.0 * s.mean << " ± " << 100.0 * s.std;
    }
    os << " |\n";
  }
  return os.str();
}

}  // namespace tide::experiment
