#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "tide/config.hpp"
#include "tide/detection.hpp"
#include "tide/trainer.hpp"

namespace tide::experiment {

// Detection of one trained model on an (ID graph, OOD graph) pair. ID nodes
// are the ID graph's test_id nodes, OOD nodes the OOD graph's test_ood nodes;
// each graph is scored on its own structure.
struct DetectionRun {
  detect::DetectionReport raw;         // energy without propagation
  detect::DetectionReport propagated;  // energy after config.prop_k rounds
  detect::DetectionReport msp;         // max-softmax baseline score
  double id_entropy = 0.0;             // mean predictive entropy over ID nodes
  double ood_entropy = 0.0;            // mean predictive entropy over OOD nodes
  std::vector<detect::ScoreRow> rows;  // propagated energies, ID rows first
  detect::Histogram energy_hist;
  detect::Histogram confidence_hist;

  nlohmann::json report_json() const;
};

DetectionRun evaluate_model(const model::TideModel& model, const graph::Graph& id_graph,
                            const graph::Graph& ood_graph, const TideConfig& config);

struct RunRecord {
  ObjectiveMode mode = ObjectiveMode::kSl;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  DetectionRun detection;
};

// Trains every (mode, seed) combination from `base` and evaluates it. SL runs
// go through train_sl_baseline. Throws ContractError when modes or seeds are
// empty.
std::vector<RunRecord> run_comparison(const graph::Graph& id_graph, const graph::Graph& ood_graph,
                                      const TideConfig& base, const std::vector<ObjectiveMode>& modes,
                                      const std::vector<std::uint64_t>& seeds,
                                      const graph::Graph* exposure = nullptr);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for one run
};

// Summary of one metric extracted from each run.
MetricSummary summarize(const std::vector<RunRecord>& runs, ObjectiveMode mode,
                        double (*metric)(const RunRecord&));

// Per-mode mean/std of every metric, as JSON, CSV and a markdown table.
nlohmann::json comparison_json(const std::vector<RunRecord>& runs,
                               const std::vector<ObjectiveMode>& modes);
std::string comparison_csv(const std::vector<RunRecord>& runs, const std::vector<ObjectiveMode>& modes);
std::string comparison_markdown(const std::vector<RunRecord>& runs,
                                const std::vector<ObjectiveMode>& modes);

}  // namespace tide::experiment
