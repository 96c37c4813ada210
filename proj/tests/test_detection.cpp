#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <random>

#include "test_util.hpp"
#include "tide/detection.hpp"
#include "tide/errors.hpp"

using namespace tide;
using namespace tide::detect;

namespace {

// bool storage viewable as span<const bool>.
struct Flags {
  std::unique_ptr<bool[]> data;
  std::size_t n;
  explicit Flags(std::vector<int> v) : data(new bool[v.size()]), n(v.size()) {
    for (std::size_t i = 0; i < n; ++i) data[i] = v[i] != 0;
  }
  operator std::span<const bool>() const { return {data.get(), n}; }
};

double brute_auroc(const std::vector<double>& s, std::span<const bool> ood) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!ood[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (ood[j]) continue;
      pairs += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / pairs;
}

double brute_aupr(const std::vector<double>& s, std::span<const bool> ood) {
  std::vector<double> thresholds(s.begin(), s.end());
  std::sort(thresholds.rbegin(), thresholds.rend());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double pos = 0;
  for (bool b : ood) pos += b;
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (ood[i] ? tp : fp) += 1;
    }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

TEST(Energy, Examples) {
  EXPECT_NEAR(energy_score(Matrix::Zero(3, 7)).e[1], -std::log(7.0), 1e-15);
  EXPECT_EQ(energy_score(Matrix::Constant(1, 1, 5.0)).e[0], -5.0);
  Matrix l(1, 3);
  l << 1, 2, 3;
  EXPECT_NEAR(energy_score(l).e[0], -(3 + std::log(1 + std::exp(-1.0) + std::exp(-2.0))), 1e-15);
  EXPECT_NEAR(energy_score(l).e[0], -3.40761, 1e-5);
}

TEST(Energy, ShiftByConstant) {
  std::mt19937_64 rng(1);
  const Matrix l = tide::testing::random_matrix(5, 4, rng, 3.0);
  const auto base = energy_score(l).e;
  const auto shifted = energy_score((l.array() + 2.5).matrix()).e;
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(shifted[i], base[i] - 2.5, 1e-12);
}

TEST(Energy, StableForLargeLogits) {
  Matrix l(1, 2);
  l << 1000, 1000;
  EXPECT_NEAR(energy_score(l).e[0], -1000 - std::log(2.0), 1e-9);
}

TEST(Propagate, TwoCliqueExample) {
  const graph::Graph g = tide::testing::path_graph(2);
  const auto out = propagate_energy({{0.0, 1.0}, false, 0, 0}, g, 0.5, 1);
  EXPECT_EQ(out.e, (std::vector<double>{0.5, 0.5}));
  EXPECT_TRUE(out.propagated);
}

TEST(Propagate, IdentityCases) {
  std::mt19937_64 rng(2);
  const graph::Graph g = tide::testing::random_graph(10, 1, 2, 0.3, rng);
  EnergyScores s;
  for (int i = 0; i < 10; ++i) s.e.push_back(i * 0.3 - 1);
  EXPECT_EQ(propagate_energy(s, g, 1.0, 5).e, s.e);
  EXPECT_EQ(propagate_energy(s, g, 0.3, 0).e, s.e);
}

TEST(Propagate, IsolatedNodeKeepsValue) {
  graph::Graph g = tide::testing::path_graph(3);
  g.edges = {{0, 1}};
  const auto out = propagate_energy({{0.0, 1.0, 7.0}, false, 0, 0}, g, 0.2, 3);
  EXPECT_DOUBLE_EQ(out.e[2], 7.0);
}

TEST(Propagate, ConvexHullPerStep) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> a(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const graph::Graph g = tide::testing::random_graph(12, 1, 2, 0.25, rng);
    EnergyScores s;
    for (int i = 0; i < 12; ++i) s.e.push_back(tide::testing::random_matrix(1, 1, rng)(0, 0));
    const double alpha = a(rng);
    for (int step = 0; step < 3; ++step) {
      const auto next = propagate_energy(s, g, alpha, 1);
      const auto [lo, hi] = std::minmax_element(s.e.begin(), s.e.end());
      for (double v : next.e) {
        EXPECT_GE(v, *lo - 1e-12);
        EXPECT_LE(v, *hi + 1e-12);
      }
      s = next;
    }
  }
}

TEST(Propagate, InvalidArguments) {
  const graph::Graph g = tide::testing::path_graph(2);
  EXPECT_THROW(propagate_energy({{0.0, 1.0}, false, 0, 0}, g, 1.5, 1), ContractError);
  EXPECT_THROW(propagate_energy({{0.0, 1.0}, false, 0, 0}, g, 0.5, -1), ContractError);
  EXPECT_THROW(propagate_energy({{0.0}, false, 0, 0}, g, 0.5, 1), ShapeError);
}

TEST(Msp, Examples) {
  EXPECT_NEAR(msp_score(Matrix::Zero(1, 4))[0], -0.25, 1e-15);
  Matrix dom(1, 3);
  dom << 50, 0, 0;
  EXPECT_NEAR(msp_score(dom)[0], -1.0, 1e-15);
  Matrix l(1, 3);
  l << 0.5, -1, 2;
  const double z = std::exp(0.5) + std::exp(-1.0) + std::exp(2.0);
  EXPECT_NEAR(msp_score(l)[0], -std::exp(2.0) / z, 1e-15);
}

TEST(Entropy, UniformAndPeaked) {
  EXPECT_NEAR(predictive_entropy(Matrix::Zero(1, 4))[0], std::log(4.0), 1e-15);
  Matrix p(1, 2);
  p << 100, -100;
  EXPECT_LT(predictive_entropy(p)[0], 1e-60);
}

TEST(Classify, ThresholdRule) {
  const std::vector<double> s = {1, 2, 3};
  EXPECT_EQ(classify_ood(s, 2.0), (std::vector<bool>{false, true, true}));
  EXPECT_EQ(classify_ood(s, -std::numeric_limits<double>::infinity()), (std::vector<bool>{true, true, true}));
  EXPECT_EQ(classify_ood(s, 4.0), (std::vector<bool>{false, false, false}));
}

TEST(Metrics, PerfectSeparation) {
  const std::vector<double> s = {0, 1, 2, 3};
  const Flags f({0, 0, 1, 1});
  EXPECT_EQ(auroc(s, f), 1.0);
  EXPECT_EQ(aupr(s, f), 1.0);
  EXPECT_EQ(fpr_at_95_tpr(s, f), 0.0);
}

TEST(Metrics, AurocThreeOfFour) {
  const std::vector<double> s = {0, 1, 0.5, 2};
  EXPECT_DOUBLE_EQ(auroc(s, Flags({0, 0, 1, 1})), 0.75);
}

TEST(Metrics, Fpr95Example) {
  const std::vector<double> s = {0, 1, 2, 3, 2.5, 3.5, 4, 5};
  EXPECT_DOUBLE_EQ(fpr_at_95_tpr(s, Flags({0, 0, 0, 0, 1, 1, 1, 1})), 0.25);
}

TEST(Metrics, TiesCountHalf) {
  const std::vector<double> s = {1, 1};
  EXPECT_DOUBLE_EQ(auroc(s, Flags({0, 1})), 0.5);
}

TEST(Metrics, MatchBruteForceOracles) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> size(2, 200);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    std::vector<double> s(n);
    std::vector<int> lab(n);
    std::uniform_int_distribution<int> coarse(0, 9);
    for (int i = 0; i < n; ++i) {
      s[i] = trial % 2 ? coarse(rng) * 0.5 : tide::testing::random_matrix(1, 1, rng)(0, 0);
      lab[i] = coarse(rng) < 4;
    }
    lab[0] = 0;
    lab[1] = 1;
    const Flags f(lab);
    EXPECT_NEAR(auroc(s, f), brute_auroc(s, f), 1e-12);
    EXPECT_NEAR(aupr(s, f), brute_aupr(s, f), 1e-12);
  }
}

TEST(Metrics, AurocRankInvariant) {
  std::mt19937_64 rng(5);
  std::vector<double> s(50), t(50);
  std::vector<int> lab(50);
  for (int i = 0; i < 50; ++i) {
    s[i] = tide::testing::random_matrix(1, 1, rng)(0, 0);
    t[i] = std::exp(3 * s[i]) + 7;
    lab[i] = i % 3 == 0;
  }
  const Flags f(lab);
  EXPECT_DOUBLE_EQ(auroc(s, f), auroc(t, f));
}

TEST(Metrics, EmptyClassesRejected) {
  const std::vector<double> s = {1, 2};
  EXPECT_THROW(auroc(s, Flags({0, 0})), ContractError);
  EXPECT_THROW(aupr(s, Flags({1, 1})), ContractError);
  EXPECT_THROW(fpr_at_95_tpr(s, Flags({0, 0})), ContractError);
  EXPECT_THROW(auroc(s, Flags({0})), ShapeError);
}

TEST(Evaluate, ReportFieldsAndAccuracy) {
  const std::vector<double> s = {0, 1, 2, 3};
  const std::vector<int> pred = {1, 0, 2, 2};
  const std::vector<int> labels = {1, 1, -1, -1};
  const std::vector<std::size_t> id = {0, 1};
  const DetectionReport r = evaluate(s, Flags({0, 0, 1, 1}), pred, labels, id);
  EXPECT_EQ(r.auroc, 1.0);
  EXPECT_EQ(r.id_accuracy, 0.5);
  EXPECT_EQ(r.n_id, 2u);
  EXPECT_EQ(r.n_ood, 2u);
  const auto j = r.to_json();
  for (const char* k : {"auroc", "aupr", "fpr95", "id_accuracy"}) {
    ASSERT_TRUE(j.contains(k));
    EXPECT_GE(j[k].get<double>(), 0.0);
    EXPECT_LE(j[k].get<double>(), 1.0);
  }
}

TEST(ScoresCsv, HeaderAndRows) {
  const auto dir = tide::testing::temp_dir("scores_csv");
  const std::vector<ScoreRow> rows = {{0, -1.5, false, 1, 1, 0.9}, {3, 0.25, true, 0, -1, 0.4}};
  write_scores_csv(dir / "s.csv", rows);
  std::ifstream in(dir / "s.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "node_id,score,is_ood,predicted,label");
  std::getline(in, line);
  EXPECT_EQ(line, "0,-1.5,0,1,1");
  std::getline(in, line);
  EXPECT_EQ(line, "3,0.25,1,0,-1");
}

TEST(Histogram, CountsConserved) {
  std::mt19937_64 rng(6);
  std::vector<double> id(37), ood(23);
  for (auto& v : id) v = tide::testing::random_matrix(1, 1, rng)(0, 0);
  for (auto& v : ood) v = 2 + tide::testing::random_matrix(1, 1, rng)(0, 0);
  const Histogram h = histogram(id, ood, 64);
  ASSERT_EQ(h.id_counts.size(), 64u);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 64; ++i) total += h.id_counts[i] + h.ood_counts[i];
  EXPECT_EQ(total, 60u);
  EXPECT_EQ(h.lo, std::min(*std::min_element(id.begin(), id.end()), *std::min_element(ood.begin(), ood.end())));
}

TEST(Histogram, ConstantValuesGoToFirstBin) {
  const std::vector<double> id = {1, 1}, ood = {1};
  const Histogram h = histogram(id, ood, 8);
  EXPECT_EQ(h.id_counts[0], 2u);
  EXPECT_EQ(h.ood_counts[0], 1u);
}
