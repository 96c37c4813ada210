#pragma once

#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "tide/config.hpp"
#include "tide/encoders.hpp"

namespace tide::objectives {

using ad::Tape;
using ad::Var;
using model::LatentDistribution;

// KL(N(mu, sigma^2) || N(0, I)) summed over latent dims, averaged over rows:
//   -1/2 * mean_i sum_k (1 + log sigma_ik^2 - mu_ik^2 - sigma_ik^2)
Var kl_standard_normal(const LatentDistribution& dist);

// Mean negative log-softmax of the true class over the rows in `mask`.
Var cross_entropy(Var logits, std::span<const int> labels, std::span<const std::size_t> mask);

struct VibTerms {
  Var ce;
  std::optional<Var> kl;  // absent when beta == 0
  Var total;              // ce + beta * kl
};

// Minimization form of the variational IB bound: CE on the masked rows plus
// beta times the KL of those same rows.
VibTerms vib_loss(Var logits, std::span<const int> labels, std::span<const std::size_t> mask,
                  const LatentDistribution& dist, double beta);

// Similarity-form CLUB estimate between paired sample sets (row i of s1 pairs
// with row i of s2). With u = s1 A, v = s2 B and log s(i, j) = u_i . v_j / sqrt(k):
//   mean_i log s(i, i) - mean_i mean_j log s(i, j)
Var club_estimate(Var s1, Var s2, model::TideModel::ClubHead& head);

// Negative in-batch log-likelihood of the true partner under the same
// similarity, used to fit the head's projections. Pass detached samples so
// only the head receives gradient.
Var club_head_fit_loss(Var s1, Var s2, model::TideModel::ClubHead& head);

// Mean squared reconstruction error ||X - recon(Z)||^2 / (n d).
Var recon_cind_loss(Tape& tape, Var z_sample, const Matrix& features, model::TideModel& model);

// Squared-hinge energy margin loss on n x 1 energy columns:
//   mean(max(0, t_id - e_id))^2 + mean(max(0, e_ood - t_ood))^2
// sign_flip swaps both hinge directions. Throws ContractError if t_id > t_ood.
Var energy_reg_loss(Var e_id, Var e_ood, double t_id, double t_ood, bool sign_flip = false);

// Per-epoch loss values. Absent terms are reported as 0.
struct LossBreakdown {
  double ce_z = 0, ce_v = 0, ce_q = 0;
  double kl_z = 0, kl_v = 0, kl_q = 0;
  double vib_z = 0, vib_v = 0, vib_q = 0;
  double cind = 0;
  double pmi_zv = 0, pmi_zq = 0, pmi_vq = 0;
  double energy_reg = 0;
  double total_z = 0, total_v = 0, total_q = 0;

  nlohmann::json to_json() const;
};

// Every term of one forward pass. Terms the objective mode does not use are
// left empty.
struct LossComponents {
  std::optional<VibTerms> vib_z, vib_v, vib_q;
  std::optional<Var> cind;
  std::optional<Var> pmi_zv, pmi_zq, pmi_vq;
  std::optional<Var> energy_reg;
};

// Routed totals for each network:
//   Z: vib_z + lambda_cind*cind + alpha1*pmi_zv + alpha2*pmi_zq (+ lambda_oe*energy_reg)
//   V: vib_v + alpha1*pmi_zv + alpha3*pmi_vq
//   Q: vib_q + alpha2*pmi_zq + alpha3*pmi_vq
// `joint` is the sum of every distinct weighted term once; its gradient with
// respect to each network's parameters equals that network's routed total.
struct RoutedLoss {
  std::optional<Var> z, v, q;
  Var joint;
  LossBreakdown breakdown;
};

RoutedLoss tide_total(const LossComponents& parts, const TideConfig& config);

}  // namespace tide::objectives
