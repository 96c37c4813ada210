#include "tide/gradsuite.hpp"

#include <chrono>
#include <functional>
#include <random>

#include "tide/objectives.hpp"
#include "tide/shift_bench.hpp"
#include "tide/trainer.hpp"

namespace tide::gradsuite {
namespace {

using ad::Parameter;
using ad::Tape;
using ad::Var;

std::vector<Parameter*> join(std::initializer_list<std::vector<Parameter*>> groups) {
  std::vector<Parameter*> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

}  // namespace

std::vector<Entry> run(const Options& o) {
  bench::CsbmParams p;
  p.num_nodes = o.num_nodes;
  p.num_classes = o.num_classes;
  p.feature_dim = o.feature_dim;
  p.p_in = 0.5;
  p.p_out = 0.1;
  p.mean_separation = 1.0;
  p.train_fraction = 0.5;
  p.val_fraction = 0.2;
  p.seed = o.seed;
  const graph::Graph g = bench::gen_csbm(p);
  bench::ShiftSpec shift;
  shift.kind = bench::ShiftKind::kFeature;
  shift.intensity = 0.5;
  shift.seed = o.seed + 1;
  const graph::Graph exposure = bench::as_ood_graph(bench::apply_feature_shift(g, shift));

  const model::GraphInputs in(g);
  const model::GraphInputs ex_in(exposure);
  model::TideModel m = model::init_model({o.feature_dim, o.hidden, o.latent, o.num_classes}, o.seed);
  std::mt19937_64 rng(o.seed + 2);
  const train::ForwardNoise noise = train::draw_noise(g.num_nodes(), o.latent, rng);

  auto z_sample = [&](Tape& t) { return model::reparameterize(model::encode_joint(t, in, m), noise.z); };
  auto v_sample = [&](Tape& t) {
    return model::reparameterize(model::encode_feature(t, in.features, m), noise.v);
  };

  std::vector<Entry> out;
  auto add = [&](const std::string& name, const std::function<ad::GradCheckResult()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Entry e;
    e.name = name;
    e.result = check();
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    e.passed = e.result.max_relative_error < o.tolerance;
    out.push_back(e);
  };
  auto param_check = [&](const std::string& name, std::vector<Parameter*> params,
                         const ad::ParameterLossFn& fn) {
    add(name, [&] { return ad::check_parameter_gradients(fn, params, o.h); });
  };

  param_check("ce", m.joint_parameters(), [&](Tape& t) {
    Var logits = model::predict_logits(t, z_sample(t), in.a_norm, m.joint_pred);
    return objectives::cross_entropy(logits, g.labels, g.splits.train);
  });
  param_check("kl", m.joint_parameters(), [&](Tape& t) {
    return objectives::kl_standard_normal(model::encode_joint(t, in, m));
  });
  param_check("vib", m.structure_parameters(), [&](Tape& t) {
    auto dist = model::encode_structure(t, in.a_norm, m);
    Var logits = model::predict_logits(t, model::reparameterize(dist, noise.q), in.a_norm, m.structure_pred);
    return objectives::vib_loss(logits, g.labels, g.splits.train, dist, 0.1).total;
  });
  param_check("club", join({m.joint_parameters(), m.feature_parameters(), {&m.club_zv.proj_a, &m.club_zv.proj_b}}),
              [&](Tape& t) { return objectives::club_estimate(z_sample(t), v_sample(t), m.club_zv); });
  param_check("club_fit", {&m.club_zv.proj_a, &m.club_zv.proj_b}, [&](Tape& t) {
    return objectives::club_head_fit_loss(ad::detach(z_sample(t)), ad::detach(v_sample(t)), m.club_zv);
  });
  param_check("recon", join({m.joint_parameters(), m.recon_parameters()}),
              [&](Tape& t) { return objectives::recon_cind_loss(t, z_sample(t), in.features, m); });

  // Hinges on free energies spread over [-9, 0]; rows 0-3 ID, 4-7 OOD.
  Matrix energies(8, 1);
  std::uniform_real_distribution<double> unif(-9.0, 0.0);
  for (Eigen::Index i = 0; i < energies.rows(); ++i) energies(i, 0) = unif(rng);
  static constexpr std::size_t kIdRows[] = {0, 1, 2, 3};
  static constexpr std::size_t kOodRows[] = {4, 5, 6, 7};
  for (bool flip : {false, true}) {
    add(flip ? "energy_reg_flipped" : "energy_reg", [&] {
      return ad::check_gradients(
          [&](Tape&, Var e) {
            return objectives::energy_reg_loss(ad::gather_rows(e, kIdRows),
                                               ad::gather_rows(e, kOodRows), -5.0, -1.0, flip);
          },
          energies, o.h);
    });
  }

  TideConfig cfg;
  cfg.objective_mode = ObjectiveMode::kTide;
  cfg.hidden = o.hidden;
  cfg.latent = o.latent;
  cfg.beta_z = cfg.beta_v = cfg.beta_q = 0.1;
  cfg.alpha1 = cfg.alpha2 = cfg.alpha3 = 0.1;
  cfg.lambda_cind = 0.1;
  // Both hinges active at initialization (energies near -log C).
  cfg.exposure_enabled = true;
  cfg.exposure_sign_flip = true;
  cfg.t_id = -2.0;
  cfg.t_ood = 0.0;

  auto routed = [&](Tape& t) {
    return train::build_objective(t, in, g, &ex_in, &exposure, m, cfg, noise).routed;
  };
  param_check("energy_reg_network", m.joint_parameters(), [&](Tape& t) {
    auto pass = train::build_objective(t, in, g, &ex_in, &exposure, m, cfg, noise);
    return *pass.parts.energy_reg;
  });
  param_check("routed_z", m.joint_parameters(), [&](Tape& t) { return *routed(t).z; });
  param_check("routed_v", m.feature_parameters(), [&](Tape& t) { return *routed(t).v; });
  param_check("routed_q", m.structure_parameters(), [&](Tape& t) { return *routed(t).q; });
  param_check("tide_total", m.all_parameters(), [&](Tape& t) { return routed(t).joint; });
  return out;
}

}  // namespace tide::gradsuite
