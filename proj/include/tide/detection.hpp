#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "tide/graph.hpp"

namespace tide::detect {

using tide::Matrix;

// Per-node OOD scores; higher means more OOD.
struct EnergyScores {
  std::vector<double> e;
  bool propagated = false;
  int k = 0;
  double alpha = 1.0;
};

struct DetectionReport {
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
  double id_accuracy = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;

  nlohmann::json to_json() const;
};

// e_i = -log sum_c exp(logit_ic), stabilized.
EnergyScores energy_score(const Matrix& logits);

// k rounds of e <- alpha * e + (1 - alpha) * D^{-1} A e. Nodes without
// neighbours mix with themselves, i.e. keep their value.
EnergyScores propagate_energy(const EnergyScores& scores, const graph::Graph& g, double alpha, int k);

// -max_c softmax(logits)_ic
std::vector<double> msp_score(const Matrix& logits);

// Row-wise softmax and its per-row entropy (nats).
Matrix softmax(const Matrix& logits);
std::vector<double> predictive_entropy(const Matrix& logits);
std::vector<int> argmax_rows(const Matrix& logits);

// OOD iff score >= tau.
std::vector<bool> classify_ood(std::span<const double> scores, double tau);

// OOD is the positive class. Each throws ContractError when either class is empty.
// AUROC counts tied ID/OOD pairs as 1/2.
double auroc(std::span<const double> scores, std::span<const bool> is_ood);
// Step-wise average precision: sum over distinct thresholds (descending) of
// (recall_k - recall_{k-1}) * precision_k, ties grouped into one step.
double aupr(std::span<const double> scores, std::span<const bool> is_ood);
// Fraction of ID scores >= t*, where t* is the highest threshold whose
// true-positive rate reaches 0.95.
double fpr_at_95_tpr(std::span<const double> scores, std::span<const bool> is_ood);

// id_accuracy: fraction of id_mask nodes whose prediction equals the label.
DetectionReport evaluate(std::span<const double> scores, std::span<const bool> is_ood,
                         std::span<const int> predictions, std::span<const int> labels,
                         std::span<const std::size_t> id_mask);

// One row of the per-node score dump.
struct ScoreRow {
  std::size_t node_id;
  double score;
  bool is_ood;
  int predicted;
  int label;
  double confidence;  // max softmax probability
};

// CSV with header node_id,score,is_ood,predicted,label.
void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows);

// Equal-width histogram over [min, max] of the pooled values.
struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> id_counts;
  std::vector<std::size_t> ood_counts;

  nlohmann::json to_json() const;
};

Histogram histogram(std::span<const double> id_values, std::span<const double> ood_values,
                    std::size_t bins = 64);

}  // namespace tide::detect
