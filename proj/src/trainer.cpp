#include "tide/trainer.hpp"

#include <chrono>
#include <cmath>

#include "tide/errors.hpp"

namespace tide::train {
namespace {

using ad::Tape;
using ad::Var;
using objectives::LossComponents;

// Tags numeric failures with the loss component being built.
class ComponentFailure : public std::runtime_error {
 public:
  ComponentFailure(std::string component, const std::string& detail)
      : std::runtime_error(detail), component(std::move(component)) {}
  std::string component;
};

template <typename Fn>
auto guarded(const char* component, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw ComponentFailure(component, e.what());
  } catch (const DomainError& e) {
    throw ComponentFailure(component, e.what());
  }
}

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

bool uses_side_networks(ObjectiveMode mode) { return mode != ObjectiveMode::kSl; }

double accuracy(const std::vector<int>& pred, const std::vector<int>& labels,
                const std::vector<std::size_t>& mask) {
  if (mask.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i : mask) correct += (pred[i] == labels[i]) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

constexpr std::uint64_t kNoiseStream = 0x9E3779B97F4A7C15ULL;

}  // namespace

void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const ad::Parameter* p : params) {
      state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Parameter& p = *params[k];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw ShapeError("adam_step: gradient shape differs for " + p.name);
    }
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseProduct(p.grad);
    const Matrix m_hat = m / bc1;
    const Matrix v_hat = v / bc2;
    p.value.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
  }
}

TrainingAborted::TrainingAborted(int epoch, std::string component, const std::string& detail)
    : std::runtime_error("training aborted at epoch " + std::to_string(epoch) + " in " + component +
                         ": " + detail),
      epoch_(epoch),
      component_(std::move(component)) {}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"losses", losses.to_json()},
          {"val_accuracy", val_accuracy},
          {"wall_seconds", wall_seconds}};
}

ForwardNoise draw_noise(std::size_t n, std::size_t latent, std::mt19937_64& rng) {
  ForwardNoise noise;
  noise.z = gaussian(n, latent, rng);
  noise.v = gaussian(n, latent, rng);
  noise.q = gaussian(n, latent, rng);
  return noise;
}

ForwardPass build_objective(Tape& tape, const model::GraphInputs& in, const graph::Graph& g,
                            const model::GraphInputs* exposure_in, const graph::Graph* exposure,
                            TideModel& model, const TideConfig& cfg, const ForwardNoise& noise) {
  const ObjectiveMode mode = cfg.objective_mode;
  const bool stochastic = mode != ObjectiveMode::kSl;
  const auto& train = g.splits.train;
  if (train.empty()) throw ContractError("training requires a non-empty train mask");

  ForwardPass out;
  LossComponents& parts = out.parts;

  // Joint network.
  auto z_dist = guarded("encode_z", [&] { return model::encode_joint(tape, in, model); });
  Var z = stochastic ? guarded("sample_z", [&] { return model::reparameterize(z_dist, noise.z); })
                     : z_dist.mu;
  Var logits_z = guarded("logits_z", [&] {
    return model::predict_logits(tape, z, in.a_norm, model.joint_pred);
  });
  parts.vib_z = guarded("vib_z", [&] {
    return objectives::vib_loss(logits_z, g.labels, train, z_dist, stochastic ? cfg.beta_z : 0.0);
  });

  std::optional<Var> v;
  std::optional<Var> q;
  if (uses_side_networks(mode)) {
    auto v_dist = guarded("encode_v", [&] { return model::encode_feature(tape, in.features, model); });
    v = guarded("sample_v", [&] { return model::reparameterize(v_dist, noise.v); });
    Var logits_v = guarded("logits_v", [&] {
      return model::predict_logits(tape, *v, in.a_norm, model.feature_pred);
    });
    parts.vib_v = guarded("vib_v", [&] {
      return objectives::vib_loss(logits_v, g.labels, train, v_dist, cfg.beta_v);
    });

    auto q_dist = guarded("encode_q", [&] { return model::encode_structure(tape, in.a_norm, model); });
    q = guarded("sample_q", [&] { return model::reparameterize(q_dist, noise.q); });
    Var logits_q = guarded("logits_q", [&] {
      return model::predict_logits(tape, *q, in.a_norm, model.structure_pred);
    });
    parts.vib_q = guarded("vib_q", [&] {
      return objectives::vib_loss(logits_q, g.labels, train, q_dist, cfg.beta_q);
    });
  }

  if (mode == ObjectiveMode::kIbCind || mode == ObjectiveMode::kTide) {
    parts.cind = guarded("cind", [&] {
      return objectives::recon_cind_loss(tape, z, in.features, model);
    });
  }

  if (mode == ObjectiveMode::kTide) {
    parts.pmi_zv = guarded("pmi_zv", [&] { return objectives::club_estimate(z, *v, model.club_zv); });
    parts.pmi_zq = guarded("pmi_zq", [&] { return objectives::club_estimate(z, *q, model.club_zq); });
    parts.pmi_vq = guarded("pmi_vq", [&] { return objectives::club_estimate(*v, *q, model.club_vq); });
    out.club_fit = guarded("club_fit", [&] {
      Var zd = ad::detach(z);
      Var vd = ad::detach(*v);
      Var qd = ad::detach(*q);
      return ad::add(ad::add(objectives::club_head_fit_loss(zd, vd, model.club_zv),
                             objectives::club_head_fit_loss(zd, qd, model.club_zq)),
                     objectives::club_head_fit_loss(vd, qd, model.club_vq));
    });
  }

  if (cfg.exposure_enabled) {
    if (exposure == nullptr || exposure_in == nullptr) {
      throw ContractError("exposure enabled but no exposure graph given");
    }
    if (exposure->splits.train_ood.empty()) {
      throw ContractError("exposure graph has no train_ood nodes");
    }
    parts.energy_reg = guarded("energy_reg", [&] {
      Var e_id = ad::neg(ad::logsumexp_rows(ad::gather_rows(logits_z, train)));
      auto ood_dist = model::encode_joint(tape, *exposure_in, model);
      Var ood_logits = model::predict_logits(tape, ood_dist.mu, exposure_in->a_norm, model.joint_pred);
      Var e_ood = ad::neg(ad::logsumexp_rows(ad::gather_rows(ood_logits, exposure->splits.train_ood)));
      return objectives::energy_reg_loss(e_id, e_ood, cfg.t_id, cfg.t_ood, cfg.exposure_sign_flip);
    });
  }

  out.routed = guarded("total", [&] { return objectives::tide_total(parts, cfg); });
  return out;
}

TrainResult train_tide(const graph::Graph& g, const graph::Graph* exposure, const TideConfig& cfg,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  graph::validate(g);
  if (g.splits.train.empty()) throw ContractError("training requires a non-empty train mask");
  if (cfg.exposure_enabled && exposure == nullptr) {
    throw ContractError("exposure_enabled requires an exposure graph");
  }
  if (exposure != nullptr && exposure->feature_dim() != g.feature_dim()) {
    throw ShapeError("exposure graph feature dim differs from the training graph");
  }

  const model::ModelDims dims{g.feature_dim(), cfg.hidden, cfg.latent, g.num_classes};
  TrainResult result;
  result.model = model::init_model(dims, cfg.seed);
  TideModel& model = result.model;
  TideModel best = model;

  const model::GraphInputs in(g);
  std::optional<model::GraphInputs> exposure_in;
  if (cfg.exposure_enabled) exposure_in.emplace(*exposure);

  std::mt19937_64 noise_rng(cfg.seed ^ kNoiseStream);
  AdamState adam;
  const std::vector<ad::Parameter*> params = model.all_parameters();
  const std::vector<ad::Parameter*> club = model.club_parameters();

  double best_acc = -1.0;
  int best_epoch = 0;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const ForwardNoise noise = draw_noise(g.num_nodes(), cfg.latent, noise_rng);
    for (ad::Parameter* p : params) p->zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    try {
      Tape tape;
      ForwardPass pass = build_objective(tape, in, g, exposure_in ? &*exposure_in : nullptr,
                                         exposure, model, cfg, noise);
      rec.losses = pass.routed.breakdown;
      guarded("backward", [&] {
        tape.backward(pass.routed.joint);
        return 0;
      });
      if (pass.club_fit) {
        // The estimator heads follow their own likelihood objective, not the
        // encoders' minimization of the estimate.
        for (ad::Parameter* p : club) p->zero_grad();
        guarded("club_fit", [&] {
          tape.backward(*pass.club_fit);
          return 0;
        });
      }
    } catch (const ComponentFailure& f) {
      throw TrainingAborted(epoch, f.component, f.what());
    }
    for (const ad::Parameter* p : params) {
      if (!p->grad.allFinite()) throw TrainingAborted(epoch, "gradient:" + p->name, "non-finite gradient");
    }
    adam_step(params, adam, cfg.lr);

    const auto pred = detect::argmax_rows(model::joint_logits(in, model));
    rec.val_accuracy = accuracy(pred, g.labels, g.splits.val);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (g.splits.val.empty() || rec.val_accuracy >= best_acc) {
      best_acc = rec.val_accuracy;
      best_epoch = epoch;
      best = model;
    }
    if (on_epoch) on_epoch(rec);
    result.log.push_back(rec);
  }

  if (cfg.epochs > 0) model = best;
  result.best_epoch = best_epoch;
  result.best_val_accuracy = std::max(best_acc, 0.0);
  for (ad::Parameter* p : model.all_parameters()) p->zero_grad();
  return result;
}

TrainResult train_sl_baseline(const graph::Graph& g, const TideConfig& config,
                              const EpochCallback& on_epoch) {
  TideConfig sl = config;
  sl.objective_mode = ObjectiveMode::kSl;
  sl.beta_z = 0.0;
  return train_tide(g, nullptr, sl, on_epoch);
}

Inference infer(const TideModel& model, const graph::Graph& g, const TideConfig& cfg) {
  if (g.feature_dim() != model.dims.input_dim) {
    throw ShapeError("infer: model expects feature dim " + std::to_string(model.dims.input_dim) +
                     ", graph has " + std::to_string(g.feature_dim()));
  }
  const model::GraphInputs in(g);
  Inference out;
  out.logits = model::joint_logits(in, model);
  out.predictions = detect::argmax_rows(out.logits);
  out.raw_energy = detect::energy_score(out.logits);
  out.energy = detect::propagate_energy(out.raw_energy, g, cfg.prop_alpha, cfg.prop_k);
  return out;
}

}  // namespace tide::train
