#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tide/autodiff.hpp"
#include "tide/graph.hpp"

namespace tide::model {

using ad::Parameter;
using ad::Tape;
using ad::Var;

// Lower bound on every sigma produced by a variational head.
inline constexpr double kSigmaFloor = 1e-6;

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Var apply(Tape& tape, Var x);
};

struct VariationalHeads {
  Linear mu;
  Linear sigma;
};

// Per-node diagonal Gaussian; sigma >= kSigmaFloor.
struct LatentDistribution {
  Var mu;
  Var sigma;
};

enum class HeadKind { kGnn, kMlp };

struct PredictionHead {
  HeadKind kind = HeadKind::kMlp;
  Linear layer;  // latent x C
};

struct ModelDims {
  std::size_t input_dim = 0;
  std::size_t hidden = 64;
  std::size_t latent = 64;
  int num_classes = 0;

  bool operator==(const ModelDims&) const = default;
};

// Weights of all three networks plus their auxiliary heads.
//   joint     (Z): GCN(X) -> GCN -> mu/sigma, prediction head GCN(Z)
//   feature   (V): MLP(X) -> MLP -> mu/sigma, prediction head linear(V)
//   structure (Q): GCN(1) -> GCN -> mu/sigma, prediction head GCN(Q)
// recon maps Z back to X; the club heads project sample pairs for the
// similarity-form mutual-information estimate.
struct TideModel {
  ModelDims dims;

  Linear joint_l1, joint_l2;
  VariationalHeads joint_heads;
  PredictionHead joint_pred;

  Linear feature_l1, feature_l2;
  VariationalHeads feature_heads;
  PredictionHead feature_pred;

  Linear structure_l1, structure_l2;
  VariationalHeads structure_heads;
  PredictionHead structure_pred;

  Linear recon_l1, recon_l2;

  struct ClubHead {
    Parameter proj_a;  // latent x latent, applied to the first sample set
    Parameter proj_b;  // latent x latent, applied to the second sample set
  };
  ClubHead club_zv, club_zq, club_vq;

  // Parameter groups by owning network. Pointers refer into this object.
  std::vector<Parameter*> joint_parameters();
  std::vector<Parameter*> feature_parameters();
  std::vector<Parameter*> structure_parameters();
  std::vector<Parameter*> recon_parameters();
  std::vector<Parameter*> club_parameters();
  // Every parameter in checkpoint order: joint, feature, structure, recon, club.
  std::vector<Parameter*> all_parameters();
  std::vector<const Parameter*> all_parameters() const;
};

// Glorot-uniform weights, zero biases, seeded.
TideModel init_model(const ModelDims& dims, std::uint64_t seed);

// Sets every weight and bias to zero.
void zero_model(TideModel& model);

// A_norm * H * W, ReLU iff activate.
Var gcn_layer(Var h, const SparseMatrix& a_norm, Var w, bool activate);

// Graph-conditioned inputs shared by one forward pass.
struct GraphInputs {
  Matrix features;
  SparseMatrix a_norm;
  explicit GraphInputs(const graph::Graph& g);
};

LatentDistribution encode_joint(Tape& tape, const GraphInputs& in, TideModel& model);
LatentDistribution encode_feature(Tape& tape, const Matrix& features, TideModel& model);
// Input is the all-ones n x 1 column; output depends on the adjacency only.
LatentDistribution encode_structure(Tape& tape, const SparseMatrix& a_norm, TideModel& model);

// mu + sigma .* noise
Var reparameterize(const LatentDistribution& dist, const Matrix& noise);

// Raw logits (no softmax). kMlp heads ignore a_norm.
Var predict_logits(Tape& tape, Var sample, const SparseMatrix& a_norm, PredictionHead& head);

// Row-wise MLP decode Z -> X_hat.
Var reconstruct(Tape& tape, Var sample, TideModel& model);

// Logits of the joint classifier evaluated at mu_Z, without a tape the caller
// needs to keep. This is the only network used at inference.
Matrix joint_logits(const GraphInputs& in, const TideModel& model);

// Binary checkpoint: flat little-endian float64 values of all_parameters() in
// order, next to a JSON manifest (<path>.json) recording dims, seed, config
// hash and the name/shape of every parameter.
void save_checkpoint(const TideModel& model, const std::filesystem::path& path, std::uint64_t seed,
                     const std::string& config_hash);
TideModel load_checkpoint(const std::filesystem::path& path);

}  // namespace tide::model
