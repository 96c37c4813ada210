#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace tide {

// sl:      joint network only, deterministic (sample = mu), cross-entropy only.
// ib:      three independent VIB objectives.
// ib_cind: ib plus the reconstruction (conditional independence) term on Z.
// tide:    ib_cind plus the three pairwise CLUB penalties.
enum class ObjectiveMode { kSl, kIb, kIbCind, kTide };

std::string to_string(ObjectiveMode mode);
ObjectiveMode objective_mode_from_string(const std::string& name);

struct TideConfig {
  // Information-bottleneck trade-offs per network.
  double beta_z = 1e-3;
  double beta_v = 1e-3;
  double beta_q = 1e-3;
  // Pairwise mutual-information weights: (Z,V), (Z,Q), (V,Q).
  double alpha1 = 1e-2;
  double alpha2 = 1e-2;
  double alpha3 = 1e-2;
  double lambda_cind = 1e-2;

  // Energy exposure.
  bool exposure_enabled = false;
  double lambda_oe = 1.0;
  double t_id = -5.0;
  double t_ood = -1.0;
  // Flips both hinge directions (ID pulled below t_id, OOD pushed above t_ood).
  bool exposure_sign_flip = false;

  // Energy propagation at inference.
  double prop_alpha = 0.5;
  int prop_k = 2;

  double lr = 1e-2;
  int epochs = 200;
  std::size_t hidden = 64;
  std::size_t latent = 64;
  std::uint64_t seed = 0;
  ObjectiveMode objective_mode = ObjectiveMode::kTide;

  // Throws ContractError naming the first violated field. Trade-off weights
  // must lie on the grid {0, 1e-4, 1e-3, 1e-2, 1e-1, 1}; margins on the
  // integer grid [-9, 0] with t_id < t_ood when exposure is enabled.
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TideConfig from_json(const nlohmann::json& j);
  // Merges the keys present in `j` over this config.
  void merge_json(const nlohmann::json& j);

  // FNV-1a over the canonical JSON dump, as 16 hex digits.
  std::string hash() const;
};

}  // namespace tide
