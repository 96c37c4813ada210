#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "tide/config.hpp"
#include "tide/detection.hpp"
#include "tide/encoders.hpp"
#include "tide/objectives.hpp"

namespace tide::train {

using model::TideModel;

// Adam with bias correction, one state per parameter tensor.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// Applies one update to every parameter from its .grad; advances state.step.
void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr);

// A NaN/Inf in some loss component during training.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(int epoch, std::string component, const std::string& detail);
  int epoch() const { return epoch_; }
  const std::string& component() const { return component_; }

 private:
  int epoch_;
  std::string component_;
};

struct EpochRecord {
  int epoch = 0;
  objectives::LossBreakdown losses;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  TideModel model;  // weights from the best-validation epoch
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
};

// Per-epoch hook, e.g. for streaming the JSON-lines log.
using EpochCallback = std::function<void(const EpochRecord&)>;

// Full-graph training of all networks the objective mode uses. Every epoch
// draws one noise sample per encoder, builds the routed loss, differentiates
// it once and applies Adam. The CLUB heads are fitted separately by
// maximizing the in-batch likelihood of true pairs on detached samples.
// Returns the weights with the best validation accuracy (later epochs win
// ties); with no validation nodes the final weights are returned.
// exposure is required iff config.exposure_enabled and must carry train_ood.
TrainResult train_tide(const graph::Graph& g, const graph::Graph* exposure, const TideConfig& config,
                       const EpochCallback& on_epoch = {});

// Cross-entropy-only training of the joint network with deterministic
// latents (beta = 0).
TrainResult train_sl_baseline(const graph::Graph& g, const TideConfig& config,
                              const EpochCallback& on_epoch = {});

struct Inference {
  Matrix logits;
  std::vector<int> predictions;
  detect::EnergyScores raw_energy;
  detect::EnergyScores energy;  // propagated with config.prop_alpha / prop_k
};

// Joint network at mu_Z; the feature and structure networks are not used.
Inference infer(const TideModel& model, const graph::Graph& g, const TideConfig& config);

// Builds the objective for one forward pass with fixed noise. Exposed for
// gradient checking and routing tests; train_tide uses the same code path.
struct ForwardNoise {
  Matrix z, v, q;
};
// Standard-normal draws for Z, V and Q, always in that order.
ForwardNoise draw_noise(std::size_t n, std::size_t latent, std::mt19937_64& rng);

struct ForwardPass {
  objectives::LossComponents parts;
  objectives::RoutedLoss routed;
  std::optional<ad::Var> club_fit;  // head-fitting loss, tide mode only
};

// Exposure energies are taken from the joint network at mu on the exposure
// graph's train_ood nodes; in-distribution energies from the training logits
// on g's train nodes.
ForwardPass build_objective(ad::Tape& tape, const model::GraphInputs& in, const graph::Graph& g,
                            const model::GraphInputs* exposure_in, const graph::Graph* exposure,
                            TideModel& model, const TideConfig& config, const ForwardNoise& noise);

}  // namespace tide::train
