#include "tide/objectives.hpp"

#include <cmath>

#include "tide/errors.hpp"

namespace tide::objectives {
namespace {

Var similarity_logits(Var s1, Var s2, model::TideModel::ClubHead& head) {
  if (s1.rows() != s2.rows()) {
    throw ShapeError("club: sample sets have " + std::to_string(s1.rows()) + " and " +
                     std::to_string(s2.rows()) + " rows");
  }
  if (s1.rows() == 0) throw ContractError("club: empty sample set");
  Tape& tape = s1.tape();
  Var u = ad::matmul(s1, tape.leaf(head.proj_a));
  Var v = ad::matmul(s2, tape.leaf(head.proj_b));
  return ad::scale(ad::matmul_nt(u, v), 1.0 / std::sqrt(static_cast<double>(u.cols())));
}

double value_or_zero(const std::optional<Var>& v) { return v ? v->item() : 0.0; }

}  // namespace

Var kl_standard_normal(const LatentDistribution& dist) {
  Var mu_sq = ad::square(dist.mu);
  Var sigma_sq = ad::square(dist.sigma);
  Var log_sigma_sq = ad::scale(ad::log(dist.sigma), 2.0);
  // 1 + log sigma^2 - mu^2 - sigma^2
  Var inner = ad::add_scalar(ad::sub(ad::sub(log_sigma_sq, mu_sq), sigma_sq), 1.0);
  const double rows = static_cast<double>(dist.mu.rows());
  if (rows == 0) throw ContractError("kl_standard_normal: empty distribution");
  return ad::scale(ad::sum(inner), -0.5 / rows);
}

Var cross_entropy(Var logits, std::span<const int> labels, std::span<const std::size_t> mask) {
  if (mask.empty()) throw ContractError("cross_entropy: empty mask");
  std::vector<int> targets;
  targets.reserve(mask.size());
  for (std::size_t i : mask) {
    if (i >= labels.size()) throw IndexError("cross_entropy: mask index out of range");
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) {
      throw IndexError("cross_entropy: node " + std::to_string(i) + " has label " +
                       std::to_string(y) + " outside [0, " + std::to_string(logits.cols()) + ")");
    }
    targets.push_back(y);
  }
  Var logp = ad::log_softmax_rows(ad::gather_rows(logits, mask));
  return ad::neg(ad::mean(ad::pick(logp, targets)));
}

VibTerms vib_loss(Var logits, std::span<const int> labels, std::span<const std::size_t> mask,
                  const LatentDistribution& dist, double beta) {
  if (beta < 0.0) throw ContractError("vib_loss: beta must be >= 0");
  VibTerms out{cross_entropy(logits, labels, mask), std::nullopt, Var()};
  if (beta == 0.0) {
    out.total = out.ce;
    return out;
  }
  LatentDistribution masked{ad::gather_rows(dist.mu, mask), ad::gather_rows(dist.sigma, mask)};
  out.kl = kl_standard_normal(masked);
  out.total = ad::add(out.ce, ad::scale(*out.kl, beta));
  return out;
}

Var club_estimate(Var s1, Var s2, model::TideModel::ClubHead& head) {
  Var logits = similarity_logits(s1, s2, head);
  return ad::sub(ad::mean(ad::diagonal(logits)), ad::mean(logits));
}

Var club_head_fit_loss(Var s1, Var s2, model::TideModel::ClubHead& head) {
  Var logits = similarity_logits(s1, s2, head);
  return ad::neg(ad::mean(ad::sub(ad::diagonal(logits), ad::logsumexp_rows(logits))));
}

Var recon_cind_loss(Tape& tape, Var z_sample, const Matrix& features, model::TideModel& model) {
  return ad::squared_error_mean(model::reconstruct(tape, z_sample, model), features);
}

Var energy_reg_loss(Var e_id, Var e_ood, double t_id, double t_ood, bool sign_flip) {
  if (t_id > t_ood) {
    throw ContractError("energy_reg_loss: t_id=" + std::to_string(t_id) + " > t_ood=" +
                        std::to_string(t_ood));
  }
  Var id_violation = sign_flip ? ad::add_scalar(e_id, -t_id) : ad::add_scalar(ad::neg(e_id), t_id);
  Var ood_violation =
      sign_flip ? ad::add_scalar(ad::neg(e_ood), t_ood) : ad::add_scalar(e_ood, -t_ood);
  return ad::add(ad::mean(ad::square(ad::relu(id_violation))),
                 ad::mean(ad::square(ad::relu(ood_violation))));
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"ce_z", ce_z},     {"ce_v", ce_v},       {"ce_q", ce_q},       {"kl_z", kl_z},
          {"kl_v", kl_v},     {"kl_q", kl_q},       {"vib_z", vib_z},     {"vib_v", vib_v},
          {"vib_q", vib_q},   {"cind", cind},       {"pmi_zv", pmi_zv},   {"pmi_zq", pmi_zq},
          {"pmi_vq", pmi_vq}, {"energy_reg", energy_reg}, {"total_z", total_z},
          {"total_v", total_v}, {"total_q", total_q}};
}

RoutedLoss tide_total(const LossComponents& parts, const TideConfig& cfg) {
  if (!parts.vib_z) throw ContractError("tide_total: the joint network's VIB term is required");

  auto weighted = [](std::optional<Var> acc, const std::optional<Var>& term, double w) {
    if (!term || w == 0.0) return acc;
    Var t = ad::scale(*term, w);
    return acc ? std::optional<Var>(ad::add(*acc, t)) : std::optional<Var>(t);
  };

  RoutedLoss out;
  std::optional<Var> z = parts.vib_z->total;
  z = weighted(z, parts.cind, cfg.lambda_cind);
  z = weighted(z, parts.pmi_zv, cfg.alpha1);
  z = weighted(z, parts.pmi_zq, cfg.alpha2);
  if (cfg.exposure_enabled) z = weighted(z, parts.energy_reg, cfg.lambda_oe);
  out.z = z;

  if (parts.vib_v) {
    std::optional<Var> v = parts.vib_v->total;
    v = weighted(v, parts.pmi_zv, cfg.alpha1);
    v = weighted(v, parts.pmi_vq, cfg.alpha3);
    out.v = v;
  }
  if (parts.vib_q) {
    std::optional<Var> q = parts.vib_q->total;
    q = weighted(q, parts.pmi_zq, cfg.alpha2);
    q = weighted(q, parts.pmi_vq, cfg.alpha3);
    out.q = q;
  }

  std::optional<Var> joint = parts.vib_z->total;
  if (parts.vib_v) joint = weighted(joint, parts.vib_v->total, 1.0);
  if (parts.vib_q) joint = weighted(joint, parts.vib_q->total, 1.0);
  joint = weighted(joint, parts.cind, cfg.lambda_cind);
  joint = weighted(joint, parts.pmi_zv, cfg.alpha1);
  joint = weighted(joint, parts.pmi_zq, cfg.alpha2);
  joint = weighted(joint, parts.pmi_vq, cfg.alpha3);
  if (cfg.exposure_enabled) joint = weighted(joint, parts.energy_reg, cfg.lambda_oe);
  out.joint = *joint;

  LossBreakdown& b = out.breakdown;
  b.ce_z = parts.vib_z->ce.item();
  b.kl_z = value_or_zero(parts.vib_z->kl);
  b.vib_z = parts.vib_z->total.item();
  if (parts.vib_v) {
    b.ce_v = parts.vib_v->ce.item();
    b.kl_v = value_or_zero(parts.vib_v->kl);
    b.vib_v = parts.vib_v->total.item();
  }
  if (parts.vib_q) {
    b.ce_q = parts.vib_q->ce.item();
    b.kl_q = value_or_zero(parts.vib_q->kl);
    b.vib_q = parts.vib_q->total.item();
  }
  b.cind = value_or_zero(parts.cind);
  b.pmi_zv = value_or_zero(parts.pmi_zv);
  b.pmi_zq = value_or_zero(parts.pmi_zq);
  b.pmi_vq = value_or_zero(parts.pmi_vq);
  b.energy_reg = value_or_zero(parts.energy_reg);
  b.total_z = value_or_zero(out.z);
  b.total_v = value_or_zero(out.v);
  b.total_q = value_or_zero(out.q);
  return out;
}

}  // namespace tide::objectives
