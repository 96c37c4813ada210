#include "tide/encoders.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "json.hpp"

#include "tide/errors.hpp"

namespace tide::model {
namespace {

using json = nlohmann::json;

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return Linear{Parameter(name + ".weight", std::move(w)),
                Parameter(name + ".bias", Matrix::Zero(1, static_cast<Eigen::Index>(out)))};
}

Parameter make_square(const std::string& name, std::size_t dim, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(2 * dim));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return Parameter(name, std::move(w));
}

void push(std::vector<Parameter*>& out, Linear& l) {
  out.push_back(&l.weight);
  out.push_back(&l.bias);
}

LatentDistribution heads(Tape& tape, Var h, VariationalHeads& vh) {
  Var mu = vh.mu.apply(tape, h);
  Var sigma = ad::positive_scale(vh.sigma.apply(tape, h), kSigmaFloor);
  return {mu, sigma};
}

void require_input_dim(const Matrix& x, const TideModel& model) {
  if (static_cast<std::size_t>(x.cols()) != model.dims.input_dim) {
    throw ShapeError("model expects feature dim " + std::to_string(model.dims.input_dim) +
                     ", graph has " + std::to_string(x.cols()));
  }
}

}  // namespace

Var Linear::apply(Tape& tape, Var x) {
  return ad::add_row(ad::matmul(x, tape.leaf(weight)), tape.leaf(bias));
}

std::vector<Parameter*> TideModel::joint_parameters() {
  std::vector<Parameter*> out;
  push(out, joint_l1);
  push(out, joint_l2);
  push(out, joint_heads.mu);
  push(out, joint_heads.sigma);
  push(out, joint_pred.layer);
  return out;
}

std::vector<Parameter*> TideModel::feature_parameters() {
  std::vector<Parameter*> out;
  push(out, feature_l1);
  push(out, feature_l2);
  push(out, feature_heads.mu);
  push(out, feature_heads.sigma);
  push(out, feature_pred.layer);
  return out;
}

std::vector<Parameter*> TideModel::structure_parameters() {
  std::vector<Parameter*> out;
  push(out, structure_l1);
  push(out, structure_l2);
  push(out, structure_heads.mu);
  push(out, structure_heads.sigma);
  push(out, structure_pred.layer);
  return out;
}

std::vector<Parameter*> TideModel::recon_parameters() {
  std::vector<Parameter*> out;
  push(out, recon_l1);
  push(out, recon_l2);
  return out;
}

std::vector<Parameter*> TideModel::club_parameters() {
  return {&club_zv.proj_a, &club_zv.proj_b, &club_zq.proj_a,
          &club_zq.proj_b, &club_vq.proj_a, &club_vq.proj_b};
}

std::vector<Parameter*> TideModel::all_parameters() {
  std::vector<Parameter*> out;
  for (auto group : {joint_parameters(), feature_parameters(), structure_parameters(),
                     recon_parameters(), club_parameters()}) {
    out.insert(out.end(), group.begin(), group.end());
  }
  return out;
}

std::vector<const Parameter*> TideModel::all_parameters() const {
  auto params = const_cast<TideModel*>(this)->all_parameters();
  return {params.begin(), params.end()};
}

TideModel init_model(const ModelDims& dims, std::uint64_t seed) {
  if (dims.input_dim == 0 || dims.hidden == 0 || dims.latent == 0 || dims.num_classes < 1) {
    throw ContractError("init_model: all dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  const auto C = static_cast<std::size_t>(dims.num_classes);
  const std::size_t d = dims.input_dim;
  const std::size_t h = dims.hidden;
  const std::size_t k = dims.latent;

  TideModel m;
  m.dims = dims;
  m.joint_l1 = make_linear("joint.gcn1", d, h, rng);
  m.joint_l2 = make_linear("joint.gcn2", h, h, rng);
  m.joint_heads = {make_linear("joint.mu", h, k, rng), make_linear("joint.sigma", h, k, rng)};
  m.joint_pred = {HeadKind::kGnn, make_linear("joint.pred", k, C, rng)};

  m.feature_l1 = make_linear("feature.fc1", d, h, rng);
  m.feature_l2 = make_linear("feature.fc2", h, h, rng);
  m.feature_heads = {make_linear("feature.mu", h, k, rng), make_linear("feature.sigma", h, k, rng)};
  m.feature_pred = {HeadKind::kMlp, make_linear("feature.pred", k, C, rng)};

  m.structure_l1 = make_linear("structure.gcn1", 1, h, rng);
  m.structure_l2 = make_linear("structure.gcn2", h, h, rng);
  m.structure_heads = {make_linear("structure.mu", h, k, rng),
                       make_linear("structure.sigma", h, k, rng)};
  m.structure_pred = {HeadKind::kGnn, make_linear("structure.pred", k, C, rng)};

  m.recon_l1 = make_linear("recon.fc1", k, h, rng);
  m.recon_l2 = make_linear("recon.fc2", h, d, rng);

  m.club_zv = {make_square("club_zv.a", k, rng), make_square("club_zv.b", k, rng)};
  m.club_zq = {make_square("club_zq.a", k, rng), make_square("club_zq.b", k, rng)};
  m.club_vq = {make_square("club_vq.a", k, rng), make_square("club_vq.b", k, rng)};
  return m;
}

void zero_model(TideModel& model) {
  for (Parameter* p : model.all_parameters()) p->value.setZero();
}

Var gcn_layer(Var h, const SparseMatrix& a_norm, Var w, bool activate) {
  Var out = ad::spmm(a_norm, ad::matmul(h, w));
  return activate ? ad::relu(out) : out;
}

GraphInputs::GraphInputs(const graph::Graph& g)
    : features(g.features), a_norm(graph::sym_normalized_adjacency(g)) {}

LatentDistribution encode_joint(Tape& tape, const GraphInputs& in, TideModel& model) {
  require_input_dim(in.features, model);
  Var x = tape.constant(in.features);
  Var h1 = ad::relu(ad::add_row(gcn_layer(x, in.a_norm, tape.leaf(model.joint_l1.weight), false),
                                tape.leaf(model.joint_l1.bias)));
  Var h2 = ad::relu(ad::add_row(gcn_layer(h1, in.a_norm, tape.leaf(model.joint_l2.weight), false),
                                tape.leaf(model.joint_l2.bias)));
  return heads(tape, h2, model.joint_heads);
}

LatentDistribution encode_feature(Tape& tape, const Matrix& features, TideModel& model) {
  require_input_dim(features, model);
  Var x = tape.constant(features);
  Var h1 = ad::relu(model.feature_l1.apply(tape, x));
  Var h2 = ad::relu(model.feature_l2.apply(tape, h1));
  return heads(tape, h2, model.feature_heads);
}

LatentDistribution encode_structure(Tape& tape, const SparseMatrix& a_norm, TideModel& model) {
  Var ones = tape.constant(Matrix::Ones(static_cast<Eigen::Index>(a_norm.size()), 1));
  Var h1 = ad::relu(ad::add_row(gcn_layer(ones, a_norm, tape.leaf(model.structure_l1.weight), false),
                                tape.leaf(model.structure_l1.bias)));
  Var h2 = ad::relu(ad::add_row(gcn_layer(h1, a_norm, tape.leaf(model.structure_l2.weight), false),
                                tape.leaf(model.structure_l2.bias)));
  return heads(tape, h2, model.structure_heads);
}

Var reparameterize(const LatentDistribution& dist, const Matrix& noise) {
  return ad::reparameterize(dist.mu, dist.sigma, noise);
}

Var predict_logits(Tape& tape, Var sample, const SparseMatrix& a_norm, PredictionHead& head) {
  if (head.kind == HeadKind::kMlp) return head.layer.apply(tape, sample);
  return ad::add_row(gcn_layer(sample, a_norm, tape.leaf(head.layer.weight), false),
                     tape.leaf(head.layer.bias));
}

Var reconstruct(Tape& tape, Var sample, TideModel& model) {
  Var h = ad::relu(model.recon_l1.apply(tape, sample));
  return model.recon_l2.apply(tape, h);
}

Matrix joint_logits(const GraphInputs& in, const TideModel& model) {
  // Forward-only pass on a scratch copy; no gradients are taken.
  TideModel scratch = model;
  Tape tape;
  LatentDistribution z = encode_joint(tape, in, scratch);
  return predict_logits(tape, z.mu, in.a_norm, scratch.joint_pred).value();
}

void save_checkpoint(const TideModel& model, const std::filesystem::path& path, std::uint64_t seed,
                     const std::string& config_hash) {
  json params = json::array();
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw ParseError("cannot write " + path.string());
  for (const Parameter* p : model.all_parameters()) {
    params.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
    // Row-major storage; the build targets little-endian hosts.
    bin.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  }
  json manifest = {{"format", "tide-checkpoint"},
                   {"version", 1},
                   {"dtype", "float64-le"},
                   {"layout", "row-major"},
                   {"input_dim", model.dims.input_dim},
                   {"hidden", model.dims.hidden},
                   {"latent", model.dims.latent},
                   {"num_classes", model.dims.num_classes},
                   {"seed", seed},
                   {"config_hash", config_hash},
                   {"parameters", params}};
  std::ofstream man(path.string() + ".json");
  if (!man) throw ParseError("cannot write " + path.string() + ".json");
  man << manifest.dump(2) << '\n';
}

TideModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream man(path.string() + ".json");
  if (!man) throw ParseError("cannot open " + path.string() + ".json");
  json manifest;
  try {
    manifest = json::parse(man);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ".json: " + e.what());
  }
  ModelDims dims;
  dims.input_dim = manifest.at("input_dim").get<std::size_t>();
  dims.hidden = manifest.at("hidden").get<std::size_t>();
  dims.latent = manifest.at("latent").get<std::size_t>();
  dims.num_classes = manifest.at("num_classes").get<int>();
  TideModel model = init_model(dims, 0);

  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw ParseError("cannot open " + path.string());
  const json& listed = manifest.at("parameters");
  auto params = model.all_parameters();
  if (listed.size() != params.size()) {
    throw ParseError("checkpoint lists " + std::to_string(listed.size()) + " parameters, expected " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (listed[i].at("name").get<std::string>() != p.name ||
        listed[i].at("rows").get<Eigen::Index>() != p.value.rows() ||
        listed[i].at("cols").get<Eigen::Index>() != p.value.cols()) {
      throw ParseError("checkpoint parameter " + std::to_string(i) + " does not match " + p.name);
    }
    bin.read(reinterpret_cast<char*>(p.value.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
    if (!bin) throw ParseError("checkpoint truncated at " + p.name);
    if (!p.value.allFinite()) throw NumericError("checkpoint holds non-finite " + p.name);
    p.zero_grad();
  }
  return model;
}

}  // namespace tide::model
