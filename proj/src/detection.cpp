#include "tide/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "tide/errors.hpp"

namespace tide::detect {
namespace {

struct Counts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

Counts count_classes(std::span<const double> scores, std::span<const bool> is_ood) {
  if (scores.size() != is_ood.size()) {
    throw ShapeError("scores and labels differ in length: " + std::to_string(scores.size()) +
                     " vs " + std::to_string(is_ood.size()));
  }
  Counts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("non-finite score at index " + std::to_string(i));
    is_ood[i] ? ++c.pos : ++c.neg;
  }
  return c;
}

void require_both(const Counts& c, const char* metric) {
  if (c.pos == 0) throw ContractError(std::string(metric) + ": no OOD samples");
  if (c.neg == 0) throw ContractError(std::string(metric) + ": no ID samples");
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

nlohmann::json DetectionReport::to_json() const {
  return {{"auroc", auroc}, {"aupr", aupr}, {"fpr95", fpr95},
          {"id_accuracy", id_accuracy}, {"n_id", n_id}, {"n_ood", n_ood}};
}

EnergyScores energy_score(const Matrix& logits) {
  if (logits.cols() < 1) throw ShapeError("energy_score: logits need at least one column");
  EnergyScores out;
  out.e.resize(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.e[static_cast<std::size_t>(i)] = -(m + std::log((logits.row(i).array() - m).exp().sum()));
  }
  return out;
}

EnergyScores propagate_energy(const EnergyScores& scores, const graph::Graph& g, double alpha, int k) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("propagate_energy: alpha outside [0, 1]");
  if (k < 0) throw ContractError("propagate_energy: k must be >= 0");
  if (scores.e.size() != g.num_nodes()) {
    throw ShapeError("propagate_energy: " + std::to_string(scores.e.size()) + " scores for " +
                     std::to_string(g.num_nodes()) + " nodes");
  }
  const SparseMatrix op = graph::row_stochastic_adjacency(g);
  const std::vector<std::size_t> deg = g.degrees();
  Matrix e = Eigen::Map<const Eigen::VectorXd>(scores.e.data(), static_cast<Eigen::Index>(scores.e.size()));
  for (int step = 0; step < k; ++step) {
    Matrix neighbour = op.multiply(e);
    for (std::size_t i = 0; i < deg.size(); ++i) {
      if (deg[i] == 0) neighbour(static_cast<Eigen::Index>(i), 0) = e(static_cast<Eigen::Index>(i), 0);
    }
    e = alpha * e + (1.0 - alpha) * neighbour;
  }
  EnergyScores out;
  out.e.assign(e.data(), e.data() + e.size());
  out.propagated = k > 0;
  out.k = k;
  out.alpha = alpha;
  return out;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

std::vector<double> msp_score(const Matrix& logits) {
  const Matrix p = softmax(logits);
  std::vector<double> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = -p.row(i).maxCoeff();
  return out;
}

std::vector<double> predictive_entropy(const Matrix& logits) {
  const Matrix p = softmax(logits);
  std::vector<double> out(static_cast<std::size_t>(p.rows()), 0.0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double h = 0.0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double q = p(i, c);
      if (q > 0.0) h -= q * std::log(q);
    }
    out[static_cast<std::size_t>(i)] = h;
  }
  return out;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<bool> classify_ood(std::span<const double> scores, double tau) {
  std::vector<bool> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= tau;
  return out;
}

double auroc(std::span<const double> scores, std::span<const bool> is_ood) {
  const Counts c = count_classes(scores, is_ood);
  require_both(c, "auroc");
  // Mann-Whitney U from midranks over ascending scores.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (is_ood[order[t]]) rank_sum += midrank;
    }
    i = j;
  }
  const auto np = static_cast<double>(c.pos);
  const auto nn = static_cast<double>(c.neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double aupr(std::span<const double> scores, std::span<const bool> is_ood) {
  const Counts c = count_classes(scores, is_ood);
  require_both(c, "aupr");
  const std::vector<std::size_t> order = descending(scores);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      is_ood[order[j]] ? ++tp : ++fp;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(c.pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double fpr_at_95_tpr(std::span<const double> scores, std::span<const bool> is_ood) {
  const Counts c = count_classes(scores, is_ood);
  require_both(c, "fpr95");
  const std::vector<std::size_t> order = descending(scores);
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      is_ood[order[j]] ? ++tp : ++fp;
      ++j;
    }
    if (static_cast<double>(tp) >= 0.95 * static_cast<double>(c.pos)) {
      return static_cast<double>(fp) / static_cast<double>(c.neg);
    }
    i = j;
  }
  return 1.0;
}

DetectionReport evaluate(std::span<const double> scores, std::span<const bool> is_ood,
                         std::span<const int> predictions, std::span<const int> labels,
                         std::span<const std::size_t> id_mask) {
  DetectionReport r;
  const Counts c = count_classes(scores, is_ood);
  r.n_id = c.neg;
  r.n_ood = c.pos;
  r.auroc = auroc(scores, is_ood);
  r.aupr = aupr(scores, is_ood);
  r.fpr95 = fpr_at_95_tpr(scores, is_ood);
  if (predictions.size() != labels.size()) {
    throw ShapeError("evaluate: predictions and labels differ in length");
  }
  if (!id_mask.empty()) {
    std::size_t correct = 0;
    for (std::size_t i : id_mask) {
      if (i >= labels.size()) throw IndexError("evaluate: id_mask index out of range");
      if (predictions[i] == labels[i]) ++correct;
    }
    r.id_accuracy = static_cast<double>(correct) / static_cast<double>(id_mask.size());
  }
  return r;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "node_id,score,is_ood,predicted,label\n";
  for (const ScoreRow& r : rows) {
    out << r.node_id << ',' << r.score << ',' << (r.is_ood ? 1 : 0) << ',' << r.predicted << ','
        << r.label << '\n';
  }
}

nlohmann::json Histogram::to_json() const {
  return {{"lo", lo}, {"hi", hi}, {"bins", id_counts.size()}, {"id", id_counts}, {"ood", ood_counts}};
}

Histogram histogram(std::span<const double> id_values, std::span<const double> ood_values,
                    std::size_t bins) {
  if (bins == 0) throw ContractError("histogram: bins must be > 0");
  Histogram h;
  h.id_counts.assign(bins, 0);
  h.ood_counts.assign(bins, 0);
  if (id_values.empty() && ood_values.empty()) return h;
  h.lo = std::numeric_limits<double>::infinity();
  h.hi = -std::numeric_limits<double>::infinity();
  for (auto vals : {id_values, ood_values}) {
    for (double v : vals) {
      h.lo = std::min(h.lo, v);
      h.hi = std::max(h.hi, v);
    }
  }
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  auto bin_of = [&](double v) {
    if (width <= 0.0) return std::size_t{0};
    const auto b = static_cast<std::size_t>((v - h.lo) / width);
    return std::min(b, bins - 1);
  };
  for (double v : id_values) ++h.id_counts[bin_of(v)];
  for (double v : ood_values) ++h.ood_counts[bin_of(v)];
  return h;
}

}  // namespace tide::detect
