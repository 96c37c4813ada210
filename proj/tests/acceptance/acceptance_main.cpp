// One PASS/FAIL/SKIP line per acceptance criterion; exit status 1 if any fail.
#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tide/autodiff.hpp"
#include "tide/detection.hpp"
#include "tide/experiment.hpp"
#include "tide/gradsuite.hpp"
#include "tide/objectives.hpp"
#include "tide/shift_bench.hpp"
#include "tide/trainer.hpp"

namespace fs = std::filesystem;
using namespace tide;

namespace {

int failures = 0;

void report(int id, const char* status, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", status, id, detail.c_str());
  std::fflush(stdout);
  if (std::string(status) == "FAIL") ++failures;
}

void verdict(int id, bool ok, const std::string& detail) { report(id, ok ? "PASS" : "FAIL", detail); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

struct Flags {
  std::unique_ptr<bool[]> data;
  std::size_t n;
  explicit Flags(const std::vector<bool>& v) : data(new bool[v.size()]), n(v.size()) {
    for (std::size_t i = 0; i < n; ++i) data[i] = v[i];
  }
  std::span<const bool> view() const { return {data.get(), n}; }
};

// ---- 1 ----
void gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = gradsuite::run({});
  const double secs = seconds_since(t0);
  bool ok = secs < 30.0;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : entries) {
    ok = ok && e.passed && e.result.max_relative_error < 1e-3;
    if (e.result.max_relative_error >= worst) {
      worst = e.result.max_relative_error;
      worst_name = e.name;
    }
  }
  verdict(1, ok,
          std::to_string(entries.size()) + " loss terms, worst " + worst_name +
              fmt(" rel err %.2e, %.2f s", worst, secs));
}

// ---- 2 ----
double brute_auroc(const std::vector<double>& s, const std::vector<bool>& ood) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!ood[i] || ood[j]) continue;
      pairs += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / pairs;
}

double brute_aupr(const std::vector<double>& s, const std::vector<bool>& ood) {
  std::vector<double> th = s;
  std::sort(th.rbegin(), th.rend());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double pos = 0;
  for (bool b : ood) pos += b;
  double ap = 0, prev = 0;
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (ood[i] ? tp : fp) += 1;
    }
    ap += (tp / pos - prev) * tp / (tp + fp);
    prev = tp / pos;
  }
  return ap;
}

void metrics() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(2, 200), coarse(0, 9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    std::vector<double> s(n);
    std::vector<bool> ood(n);
    for (int i = 0; i < n; ++i) {
      s[i] = trial % 2 ? coarse(rng) * 0.25 : gaussian(1, 1, rng)(0, 0);
      ood[i] = coarse(rng) < 4;
    }
    ood[0] = false;
    ood[1] = true;
    const Flags f(ood);
    worst = std::max(worst, std::abs(detect::auroc(s, f.view()) - brute_auroc(s, ood)));
    worst = std::max(worst, std::abs(detect::aupr(s, f.view()) - brute_aupr(s, ood)));
  }
  const std::vector<double> s = {0, 1, 2, 3, 2.5, 3.5, 4, 5};
  const Flags f({false, false, false, false, true, true, true, true});
  const double fpr = detect::fpr_at_95_tpr(s, f.view());
  verdict(2, worst <= 1e-12 && fpr == 0.25,
          fmt("max |metric - oracle| %.1e over 100 vectors; FPR95 example %.4f (want 0.25)", worst, fpr));
}

// ---- 3 ----
void energy() {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix l = 10.0 * gaussian(7, 1 + trial % 9, rng);
    const auto e = detect::energy_score(l).e;
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      long double m = l.row(i).maxCoeff(), acc = 0;
      for (Eigen::Index c = 0; c < l.cols(); ++c) acc += std::exp(static_cast<long double>(l(i, c)) - m);
      worst = std::max(worst, static_cast<double>(std::abs(e[i] + (m + std::log(acc)))));
    }
  }

  graph::Graph clique;
  clique.features = Matrix::Ones(2, 1);
  clique.edges = {{0, 1}};
  clique.labels = {0, 0};
  clique.num_classes = 1;
  const auto two = detect::propagate_energy({{0.0, 1.0}, false, 0, 1.0}, clique, 0.5, 1).e;
  const bool clique_ok = two[0] == 0.5 && two[1] == 0.5;

  bool identity_ok = true, hull_ok = true;
  std::bernoulli_distribution coin(0.3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    graph::Graph g;
    const std::size_t n = 15;
    g.features = Matrix::Ones(n, 1);
    g.labels.assign(n, 0);
    g.num_classes = 1;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        if (coin(rng)) g.edges.push_back({u, v});
      }
    }
    detect::EnergyScores s;
    for (std::size_t i = 0; i < n; ++i) s.e.push_back(5 * gaussian(1, 1, rng)(0, 0));
    identity_ok = identity_ok && detect::propagate_energy(s, g, 1.0, 3).e == s.e;
    const double alpha = unit(rng);
    for (int step = 0; step < 4; ++step) {
      const auto next = detect::propagate_energy(s, g, alpha, 1);
      const auto [lo, hi] = std::minmax_element(s.e.begin(), s.e.end());
      for (double v : next.e) hull_ok = hull_ok && v >= *lo - 1e-12 && v <= *hi + 1e-12;
      s = next;
    }
  }
  verdict(3, worst <= 1e-12 && clique_ok && identity_ok && hull_ok,
          fmt("energy max err %.1e; clique (%.3f, %.3f)", worst, two[0], two[1]) +
              "; alpha=1 identity " + (identity_ok ? "ok" : "broken") + "; convex hull " +
              (hull_ok ? "ok" : "violated"));
}

// ---- 4 ----
void kl_closed_form() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> mu_d(-2.0, 2.0), sig_d(0.2, 3.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  int agree = 0;
  double worst_z = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double mu = mu_d(rng), sigma = sig_d(rng);
    ad::Tape t;
    const double analytic =
        objectives::kl_standard_normal({t.constant(Matrix::Constant(1, 1, mu)), t.constant(Matrix::Constant(1, 1, sigma))})
            .item();
    const int samples = 100000;
    double sum = 0, sum_sq = 0;
    for (int i = 0; i < samples; ++i) {
      const double eps = n01(rng);
      const double z = mu + sigma * eps;
      // log q(z) - log p(z)
      const double d = -std::log(sigma) - 0.5 * eps * eps + 0.5 * z * z;
      sum += d;
      sum_sq += d * d;
    }
    const double mean = sum / samples;
    const double se = std::sqrt((sum_sq / samples - mean * mean) / samples);
    const double zscore = std::abs(mean - analytic) / se;
    worst_z = std::max(worst_z, zscore);
    agree += zscore <= 3.0;
  }
  verdict(4, agree == 20, fmt("%.0f/20 within 3 SE, worst %.2f SE", agree, worst_z));
}

// ---- 5 ----
double trained_club(double rho, std::uint64_t seed) {
  const int n = 512;
  const Eigen::Index k = 2;
  std::mt19937_64 rng(seed);
  auto draw = [&](Matrix& a, Matrix& b) {
    a = gaussian(n, k, rng);
    b = rho * a + std::sqrt(1 - rho * rho) * gaussian(n, k, rng);
  };
  std::mt19937_64 init(seed + 100);
  model::TideModel::ClubHead h{ad::Parameter("a", 0.1 * gaussian(k, k, init)),
                               ad::Parameter("b", 0.1 * gaussian(k, k, init))};
  train::AdamState st;
  std::vector<ad::Parameter*> ps = {&h.proj_a, &h.proj_b};
  for (int step = 0; step < 200; ++step) {
    Matrix a, b;
    draw(a, b);
    for (auto* p : ps) p->zero_grad();
    ad::Tape t;
    t.backward(objectives::club_head_fit_loss(t.constant(a), t.constant(b), h));
    train::adam_step(ps, st, 0.05);
  }
  Matrix a, b;
  draw(a, b);
  ad::Tape t;
  return objectives::club_estimate(t.constant(a), t.constant(b), h).item();
}

void club() {
  int monotone = 0;
  double mean[3] = {0, 0, 0};
  const double rhos[3] = {0.0, 0.5, 0.9};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    double v[3];
    for (int r = 0; r < 3; ++r) {
      v[r] = trained_club(rhos[r], seed);
      mean[r] += v[r] / 10;
    }
    monotone += v[0] < v[1] && v[1] < v[2];
  }
  verdict(5, monotone == 10,
          fmt("strictly increasing in %.0f/10 seeds; mean estimate %.3f / %.3f / %.3f", monotone, mean[0],
              mean[1], mean[2]) +
              fmt(" (true MI 0 / %.3f / %.3f per dim)", -0.5 * std::log(0.75), -0.5 * std::log(1 - 0.81)));
}

// ---- 6-8, 10 ----
constexpr int kSeeds = 5;

bench::CsbmParams fixture_params(int s) {
  bench::CsbmParams p;
  p.num_nodes = 500;
  p.num_classes = 4;
  p.feature_dim = 64;
  p.mean_separation = 1.0;
  p.p_in = 0.05;
  p.p_out = 0.005;
  p.seed = 100 + static_cast<std::uint64_t>(s);
  return p;
}

graph::Graph shifted(const graph::Graph& id, int s, bool joint) {
  bench::ShiftSpec f;
  f.kind = bench::ShiftKind::kFeature;
  f.intensity = 0.5;  // lambda_mix = 0.5
  f.seed = 200 + static_cast<std::uint64_t>(s);
  graph::Graph out = bench::apply_feature_shift(id, f);
  if (joint) {
    bench::ShiftSpec st;
    st.kind = bench::ShiftKind::kStructure;
    st.intensity = 0.5;
    st.seed = 300 + static_cast<std::uint64_t>(s);
    out = bench::apply_structure_shift(out, st);
  }
  return bench::as_ood_graph(out);
}

std::vector<experiment::RunRecord> fixture_runs(bool joint, const std::vector<ObjectiveMode>& modes) {
  TideConfig cfg;  // beta = 1e-3, 200 epochs, lr 1e-2, prop k=2 alpha=0.5
  std::vector<experiment::RunRecord> all;
  for (int s = 0; s < kSeeds; ++s) {
    const graph::Graph id = bench::gen_csbm(fixture_params(s));
    const graph::Graph ood = shifted(id, s, joint);
    auto runs = experiment::run_comparison(id, ood, cfg, modes, {static_cast<std::uint64_t>(s)});
    for (auto& r : runs) all.push_back(std::move(r));
  }
  return all;
}

std::string report_text(const std::vector<experiment::RunRecord>& runs, const std::vector<ObjectiveMode>& modes) {
  return experiment::comparison_json(runs, modes).dump(2) + "\n";
}

const std::vector<ObjectiveMode> kFeatureModes = {ObjectiveMode::kSl, ObjectiveMode::kIb};
const std::vector<ObjectiveMode> kAblationModes = {ObjectiveMode::kSl, ObjectiveMode::kIb,
                                                   ObjectiveMode::kIbCind, ObjectiveMode::kTide};

using experiment::summarize;

double auroc_raw(const experiment::RunRecord& r) { return r.detection.raw.auroc; }
double auroc_prop(const experiment::RunRecord& r) { return r.detection.propagated.auroc; }
double fpr_raw(const experiment::RunRecord& r) { return r.detection.raw.fpr95; }

void ib_over_sl(const std::vector<experiment::RunRecord>& runs, double secs) {
  const auto sl = summarize(runs, ObjectiveMode::kSl, auroc_raw);
  const auto ib = summarize(runs, ObjectiveMode::kIb, auroc_raw);
  const auto sl_p = summarize(runs, ObjectiveMode::kSl, auroc_prop);
  const auto ib_p = summarize(runs, ObjectiveMode::kIb, auroc_prop);
  const double gain = 100 * (ib.mean - sl.mean);
  const bool ok = gain >= 2.0 && sl_p.mean > sl.mean && ib_p.mean > ib.mean && secs < 300.0;
  verdict(6, ok,
          fmt("AUROC SL %.2f IB %.2f (gain %.2f pts); ", 100 * sl.mean, 100 * ib.mean, gain) +
              fmt("propagated SL %.2f IB %.2f; %.0f s", 100 * sl_p.mean, 100 * ib_p.mean, secs));
}

void ablation(const std::vector<experiment::RunRecord>& runs) {
  // Expected order, best (lowest FPR95) first.
  const ObjectiveMode order[4] = {ObjectiveMode::kTide, ObjectiveMode::kIbCind, ObjectiveMode::kIb,
                                  ObjectiveMode::kSl};
  experiment::MetricSummary s[4];
  for (int i = 0; i < 4; ++i) s[i] = summarize(runs, order[i], fpr_raw);
  bool ok = true;
  std::string detail = "FPR95";
  for (int i = 0; i < 4; ++i) {
    detail += " " + to_string(order[i]) + fmt(" %.2f±%.2f", 100 * s[i].mean, 100 * s[i].std);
  }
  for (int i = 0; i < 3; ++i) {
    const double pooled = std::sqrt(0.5 * (s[i].std * s[i].std + s[i + 1].std * s[i + 1].std));
    if (s[i].mean > s[i + 1].mean + pooled) {
      ok = false;
      detail += "; " + to_string(order[i]) + " > " + to_string(order[i + 1]) + " beyond pooled std";
    }
  }
  verdict(7, ok, detail);
}

void entropy(const std::vector<experiment::RunRecord>& runs) {
  int lower_id = 0, larger_gap = 0;
  std::string detail;
  for (int s = 0; s < kSeeds; ++s) {
    const experiment::DetectionRun *sl = nullptr, *ib = nullptr;
    for (const auto& r : runs) {
      if (r.seed != static_cast<std::uint64_t>(s)) continue;
      (r.mode == ObjectiveMode::kSl ? sl : ib) = &r.detection;
    }
    lower_id += ib->id_entropy < sl->id_entropy;
    larger_gap += (ib->ood_entropy - ib->id_entropy) > (sl->ood_entropy - sl->id_entropy);
    detail += fmt(" [seed %.0f: H_id %.3f vs %.3f,", s, ib->id_entropy, sl->id_entropy) +
              fmt(" gap %.3f vs %.3f]", ib->ood_entropy - ib->id_entropy, sl->ood_entropy - sl->id_entropy);
  }
  verdict(8, lower_id >= 4 && larger_gap >= 4,
          fmt("IB lower ID entropy in %.0f/5 seeds, larger OOD-ID gap in %.0f/5 seeds (IB vs SL):", lower_id,
              larger_gap) +
              detail);
}

// ---- 9 ----
void cora() {
  const char* env = std::getenv("TIDE_CORA_BUNDLE");
  const fs::path path = env ? fs::path(env) : fs::path("data/cora/cora.json");
  if (!fs::exists(path)) {
    report(9, "SKIP", "no Cora bundle at " + path.string() + " (set TIDE_CORA_BUNDLE)");
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const graph::Graph id = graph::load_bundle(path);
  double auroc = 0, fpr = 0;
  for (int s = 0; s < 3; ++s) {
    bench::ShiftSpec st;
    st.kind = bench::ShiftKind::kStructure;
    st.intensity = 0.5;
    st.seed = 300 + static_cast<std::uint64_t>(s);
    const graph::Graph ood = bench::as_ood_graph(bench::apply_structure_shift(id, st));
    auto runs = experiment::run_comparison(id, ood, TideConfig{}, {ObjectiveMode::kTide},
                                           {static_cast<std::uint64_t>(s)});
    auroc += 100 * runs[0].detection.propagated.auroc / 3;
    fpr += 100 * runs[0].detection.propagated.fpr95 / 3;
  }
  const double secs = seconds_since(t0);
  verdict(9, std::abs(auroc - 95.15) <= 3.0 && std::abs(fpr - 23.31) <= 8.0 && secs < 600,
          fmt("TIDE AUROC %.2f (target 95.15 ± 3), FPR95 %.2f (target 23.31 ± 8), %.0f s", auroc, fpr, secs));
}

}  // namespace

int main() {
  setenv("TIDE_THREADS", "1", 1);
  Eigen::setNbThreads(1);

  gradients();
  metrics();
  energy();
  kl_closed_form();
  club();

  auto t0 = std::chrono::steady_clock::now();
  const auto feature_runs = fixture_runs(false, kFeatureModes);
  ib_over_sl(feature_runs, seconds_since(t0));
  const auto joint_runs = fixture_runs(true, kAblationModes);
  ablation(joint_runs);
  entropy(feature_runs);
  cora();

  // Both invocations write their report files; the bytes on disk are compared.
  const fs::path dir = fs::temp_directory_path() / "tide_acceptance_determinism";
  fs::create_directories(dir);
  auto write_reports = [&](const std::string& tag, const std::vector<experiment::RunRecord>& feature,
                           const std::vector<experiment::RunRecord>& joint) {
    std::ofstream(dir / (tag + "_feature.json"), std::ios::binary) << report_text(feature, kFeatureModes);
    std::ofstream(dir / (tag + "_joint.json"), std::ios::binary) << report_text(joint, kAblationModes);
  };
  auto slurp = [&](const std::string& name) {
    std::ifstream in(dir / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  write_reports("first", feature_runs, joint_runs);
  write_reports("second", fixture_runs(false, kFeatureModes), fixture_runs(true, kAblationModes));
  bool same = true;
  std::size_t bytes = 0;
  for (const char* part : {"_feature.json", "_joint.json"}) {
    const std::string a = slurp(std::string("first") + part), b = slurp(std::string("second") + part);
    same = same && !a.empty() && a == b;
    bytes += a.size();
  }
  verdict(10, same,
          "rerun of the criteria 6-8 report files is " + std::string(same ? "byte-identical" : "different") +
              " (" + std::to_string(bytes) + " bytes)");

  std::printf("%s\n", failures == 0 ? "all criteria passed" : (std::to_string(failures) + " criteria failed").c_str());
  return failures == 0 ? 0 : 1;
}
