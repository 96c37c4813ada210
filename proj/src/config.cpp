#include "tide/config.hpp"

#include <array>
#include <cmath>
#include <cstdio>

#include "tide/errors.hpp"

namespace tide {
namespace {

using json = nlohmann::json;

constexpr std::array<double, 6> kWeightGrid = {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};

void check_grid(const char* name, double v) {
  for (double g : kWeightGrid) {
    if (std::abs(v - g) <= 1e-12 * std::max(1.0, g)) return;
  }
  throw ContractError(std::string(name) + "=" + std::to_string(v) +
                      " is not on the grid {0, 1e-4, 1e-3, 1e-2, 1e-1, 1}");
}

void check_margin(const char* name, double v) {
  if (v < -9.0 || v > 0.0 || v != std::round(v)) {
    throw ContractError(std::string(name) + "=" + std::to_string(v) +
                        " is not an integer in [-9, 0]");
  }
}

}  // namespace

std::string to_string(ObjectiveMode mode) {
  switch (mode) {
    case ObjectiveMode::kSl:
      return "sl";
    case ObjectiveMode::kIb:
      return "ib";
    case ObjectiveMode::kIbCind:
      return "ib_cind";
    case ObjectiveMode::kTide:
      return "tide";
  }
  return "unknown";
}

ObjectiveMode objective_mode_from_string(const std::string& name) {
  if (name == "sl") return ObjectiveMode::kSl;
  if (name == "ib") return ObjectiveMode::kIb;
  if (name == "ib_cind") return ObjectiveMode::kIbCind;
  if (name == "tide") return ObjectiveMode::kTide;
  throw ContractError("unknown objective mode '" + name + "' (expected sl|ib|ib_cind|tide)");
}

void TideConfig::validate() const {
  check_grid("beta_z", beta_z);
  check_grid("beta_v", beta_v);
  check_grid("beta_q", beta_q);
  check_grid("alpha1", alpha1);
  check_grid("alpha2", alpha2);
  check_grid("alpha3", alpha3);
  check_grid("lambda_cind", lambda_cind);
  if (!(lambda_oe >= 0.0)) throw ContractError("lambda_oe must be >= 0");
  if (exposure_enabled) {
    check_margin("t_id", t_id);
    check_margin("t_ood", t_ood);
    if (!(t_id < t_ood)) throw ContractError("t_id must be < t_ood");
  }
  if (!(prop_alpha >= 0.0 && prop_alpha <= 1.0)) throw ContractError("prop_alpha outside [0, 1]");
  if (prop_k < 0) throw ContractError("prop_k must be >= 0");
  if (!(lr > 0.0)) throw ContractError("lr must be > 0");
  if (epochs < 0) throw ContractError("epochs must be >= 0");
  if (hidden == 0 || latent == 0) throw ContractError("hidden and latent must be > 0");
}

json TideConfig::to_json() const {
  return {{"beta_z", beta_z},
          {"beta_v", beta_v},
          {"beta_q", beta_q},
          {"alpha1", alpha1},
          {"alpha2", alpha2},
          {"alpha3", alpha3},
          {"lambda_cind", lambda_cind},
          {"exposure_enabled", exposure_enabled},
          {"lambda_oe", lambda_oe},
          {"t_id", t_id},
          {"t_ood", t_ood},
          {"exposure_sign_flip", exposure_sign_flip},
          {"prop_alpha", prop_alpha},
          {"prop_k", prop_k},
          {"lr", lr},
          {"epochs", epochs},
          {"hidden", hidden},
          {"latent", latent},
          {"seed", seed},
          {"objective_mode", to_string(objective_mode)}};
}

void TideConfig::merge_json(const json& j) {
  if (!j.is_object()) throw ContractError("config must be a JSON object");
  const json known = to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ContractError("unknown config key '" + key + "'");
  }
  try {
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    read("beta_z", beta_z);
    read("beta_v", beta_v);
    read("beta_q", beta_q);
    read("alpha1", alpha1);
    read("alpha2", alpha2);
    read("alpha3", alpha3);
    read("lambda_cind", lambda_cind);
    read("exposure_enabled", exposure_enabled);
    read("lambda_oe", lambda_oe);
    read("t_id", t_id);
    read("t_ood", t_ood);
    read("exposure_sign_flip", exposure_sign_flip);
    read("prop_alpha", prop_alpha);
    read("prop_k", prop_k);
    read("lr", lr);
    read("epochs", epochs);
    read("hidden", hidden);
    read("latent", latent);
    read("seed", seed);
    if (j.contains("objective_mode")) {
      objective_mode = objective_mode_from_string(j.at("objective_mode").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
}

TideConfig TideConfig::from_json(const json& j) {
  TideConfig c;
  c.merge_json(j);
  return c;
}

std::string TideConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tide
