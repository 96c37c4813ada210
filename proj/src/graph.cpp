#include "tide/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "tide/errors.hpp"

namespace tide::graph {
namespace {

using json = nlohmann::json;

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  return out;
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

json splits_to_json(const Splits& s) {
  json j = {{"train", s.train}, {"val", s.val}, {"test_id", s.test_id}, {"test_ood", s.test_ood}};
  if (!s.train_ood.empty()) j["train_ood"] = s.train_ood;
  return j;
}

Splits splits_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("splits: expected a JSON object");
  Splits s;
  auto read = [&](const char* key, std::vector<std::size_t>& out) {
    if (!j.contains(key)) return;
    const json& arr = j.at(key);
    if (!arr.is_array()) throw ParseError(std::string("splits: '") + key + "' is not an array");
    for (const json& v : arr) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ParseError(std::string("splits: '") + key + "' holds a non-index value");
      }
      out.push_back(v.get<std::size_t>());
    }
  };
  read("train", s.train);
  read("val", s.val);
  read("test_id", s.test_id);
  read("test_ood", s.test_ood);
  read("train_ood", s.train_ood);
  return s;
}

int infer_num_classes(const std::vector<int>& labels) {
  int c = 0;
  for (int y : labels) c = std::max(c, y + 1);
  return c;
}

void check_mask(const std::vector<std::size_t>& mask, std::size_t n, const char* name) {
  for (std::size_t i : mask) {
    if (i >= n) {
      throw IndexError(std::string("mask '") + name + "' index " + std::to_string(i) +
                       " out of range for n=" + std::to_string(n));
    }
  }
}

bool intersects(std::vector<std::size_t> a, std::vector<std::size_t> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return !common.empty();
}

}  // namespace

std::vector<Edge> Graph::directed_edges() const {
  std::vector<Edge> out;
  out.reserve(edges.size() * 2);
  for (const auto& [u, v] : edges) {
    out.emplace_back(u, v);
    out.emplace_back(v, u);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> Graph::degrees() const {
  std::vector<std::size_t> deg(num_nodes(), 0);
  for (const auto& [u, v] : edges) {
    ++deg[u];
    ++deg[v];
  }
  return deg;
}

bool Graph::operator==(const Graph& other) const {
  return features.rows() == other.features.rows() && features.cols() == other.features.cols() &&
         features == other.features && edges == other.edges && labels == other.labels &&
         num_classes == other.num_classes && splits == other.splits;
}

std::vector<Edge> canonical_edges(std::vector<Edge> edges) {
  std::vector<Edge> out;
  out.reserve(edges.size());
  for (auto [u, v] : edges) {
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    out.emplace_back(u, v);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void validate(const Graph& g) {
  const std::size_t n = g.num_nodes();
  if (g.labels.size() != n) {
    throw ContractError("labels hold " + std::to_string(g.labels.size()) + " entries for n=" +
                        std::to_string(n));
  }
  if (!g.features.allFinite()) throw NumericError("features contain non-finite values");
  for (const auto& [u, v] : g.edges) {
    if (u >= n || v >= n) {
      throw IndexError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                       ") out of range for n=" + std::to_string(n));
    }
    if (u >= v) throw ContractError("edge list is not canonical (u < v)");
  }
  if (!std::is_sorted(g.edges.begin(), g.edges.end()) ||
      std::adjacent_find(g.edges.begin(), g.edges.end()) != g.edges.end()) {
    throw ContractError("edge list is not sorted and unique");
  }
  for (int y : g.labels) {
    if (y < -1 || y >= g.num_classes) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(g.num_classes) + ")");
    }
  }
  check_mask(g.splits.train, n, "train");
  check_mask(g.splits.val, n, "val");
  check_mask(g.splits.test_id, n, "test_id");
  check_mask(g.splits.test_ood, n, "test_ood");
  check_mask(g.splits.train_ood, n, "train_ood");
  for (const auto* id_mask : {&g.splits.train, &g.splits.val, &g.splits.test_id}) {
    if (intersects(*id_mask, g.splits.test_ood)) {
      throw ContractError("in-distribution mask overlaps test_ood");
    }
  }
  if (intersects(g.splits.train_ood, g.splits.test_ood)) {
    throw ContractError("train_ood overlaps test_ood");
  }
  for (std::size_t i : g.splits.train) {
    if (g.labels[i] < 0) throw ContractError("train node " + std::to_string(i) + " is unlabeled");
  }
}

Graph load_graph(const std::filesystem::path& features_path,
                 const std::filesystem::path& edges_path,
                 const std::filesystem::path& labels_path,
                 const std::filesystem::path& splits_path) {
  std::vector<std::vector<double>> rows;
  {
    auto in = open_in(features_path);
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (blank(line)) continue;
      std::istringstream ss(line);
      std::vector<double> row;
      std::string tok;
      while (ss >> tok) {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(tok, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != tok.size() || !std::isfinite(v)) {
          throw ParseError(features_path.string() + ": bad feature value '" + tok + "'", lineno);
        }
        row.push_back(v);
      }
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw ParseError(features_path.string() + ": expected " +
                             std::to_string(rows.front().size()) + " values, got " +
                             std::to_string(row.size()),
                         lineno);
      }
      rows.push_back(std::move(row));
    }
  }
  const std::size_t n = rows.size();
  const std::size_t d = n == 0 ? 0 : rows.front().size();

  Graph g;
  g.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      g.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }

  {
    auto in = open_in(edges_path);
    std::string line;
    long lineno = 0;
    std::vector<Edge> edges;
    while (std::getline(in, line)) {
      ++lineno;
      if (blank(line)) continue;
      std::istringstream ss(line);
      long long u = 0;
      long long v = 0;
      std::string extra;
      if (!(ss >> u >> v) || (ss >> extra)) {
        throw ParseError(edges_path.string() + ": expected 'u v'", lineno);
      }
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
        throw IndexError(edges_path.string() + ": edge (" + std::to_string(u) + ", " +
                         std::to_string(v) + ") out of range for n=" + std::to_string(n) +
                         " (line " + std::to_string(lineno) + ")");
      }
      edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
    }
    g.edges = canonical_edges(std::move(edges));
  }

  {
    auto in = open_in(labels_path);
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (blank(line)) continue;
      std::istringstream ss(line);
      long long y = 0;
      std::string extra;
      if (!(ss >> y) || (ss >> extra) || y < -1) {
        throw ParseError(labels_path.string() + ": expected one label >= -1", lineno);
      }
      g.labels.push_back(static_cast<int>(y));
    }
    if (g.labels.size() != n) {
      throw ParseError(labels_path.string() + ": " + std::to_string(g.labels.size()) +
                       " labels but features define n=" + std::to_string(n));
    }
  }
  g.num_classes = infer_num_classes(g.labels);

  {
    auto in = open_in(splits_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(splits_path.string() + ": " + e.what());
    }
    g.splits = splits_from_json(j);
  }
  validate(g);
  return g;
}

void save_graph(const Graph& g, const std::filesystem::path& features_path,
                const std::filesystem::path& edges_path, const std::filesystem::path& labels_path,
                const std::filesystem::path& splits_path) {
  {
    auto out = open_out(features_path);
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (Eigen::Index i = 0; i < g.features.rows(); ++i) {
      for (Eigen::Index j = 0; j < g.features.cols(); ++j) {
        if (j > 0) out << ' ';
        out << g.features(i, j);
      }
      out << '\n';
    }
  }
  {
    auto out = open_out(edges_path);
    for (const auto& [u, v] : g.edges) out << u << ' ' << v << '\n';
  }
  {
    auto out = open_out(labels_path);
    for (int y : g.labels) out << y << '\n';
  }
  {
    auto out = open_out(splits_path);
    out << splits_to_json(g.splits).dump() << '\n';
  }
}

std::string to_bundle_json(const Graph& g) {
  json features = json::array();
  for (Eigen::Index i = 0; i < g.features.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < g.features.cols(); ++j) row.push_back(g.features(i, j));
    features.push_back(std::move(row));
  }
  json edges = json::array();
  for (const auto& [u, v] : g.edges) edges.push_back({u, v});
  json doc = {{"format", "tide-graph-bundle"},
              {"version", 1},
              {"num_nodes", g.num_nodes()},
              {"feature_dim", g.feature_dim()},
              {"num_classes", g.num_classes},
              {"features", std::move(features)},
              {"edges", std::move(edges)},
              {"labels", g.labels},
              {"splits", splits_to_json(g.splits)}};
  return doc.dump();
}

Graph from_bundle_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("bundle: ") + e.what());
  }
  try {
    Graph g;
    const auto n = doc.at("num_nodes").get<std::size_t>();
    const auto d = doc.at("feature_dim").get<std::size_t>();
    const json& feats = doc.at("features");
    if (feats.size() != n) {
      throw ParseError("bundle: " + std::to_string(feats.size()) + " feature rows for n=" +
                       std::to_string(n));
    }
    g.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
      if (feats[i].size() != d) {
        throw ParseError("bundle: feature row " + std::to_string(i) + " has " +
                         std::to_string(feats[i].size()) + " values, expected " +
                         std::to_string(d));
      }
      for (std::size_t j = 0; j < d; ++j) {
        g.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            feats[i][j].get<double>();
      }
    }
    std::vector<Edge> edges;
    for (const json& e : doc.at("edges")) {
      const auto u = e.at(0).get<long long>();
      const auto v = e.at(1).get<long long>();
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
        throw IndexError("bundle: edge (" + std::to_string(u) + ", " + std::to_string(v) +
                         ") out of range for n=" + std::to_string(n));
      }
      edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
    }
    g.edges = canonical_edges(std::move(edges));
    g.labels = doc.at("labels").get<std::vector<int>>();
    if (g.labels.size() != n) {
      throw ParseError("bundle: " + std::to_string(g.labels.size()) + " labels for n=" +
                       std::to_string(n));
    }
    g.num_classes = doc.contains("num_classes") ? doc.at("num_classes").get<int>()
                                                : infer_num_classes(g.labels);
    g.splits = splits_from_json(doc.at("splits"));
    validate(g);
    return g;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bundle: ") + e.what());
  }
}

void save_bundle(const Graph& g, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << to_bundle_json(g) << '\n';
}

Graph load_bundle(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_bundle_json(ss.str());
}

SparseMatrix sym_normalized_adjacency(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<double> deg(n, 1.0);  // self-loop
  for (const auto& [u, v] : g.edges) {
    deg[u] += 1.0;
    deg[v] += 1.0;
  }
  std::vector<SparseEntry> entries;
  entries.reserve(n + 2 * g.edges.size());
  for (std::size_t i = 0; i < n; ++i) entries.push_back({i, i, 1.0 / deg[i]});
  for (const auto& [u, v] : g.edges) {
    const double w = 1.0 / std::sqrt(deg[u] * deg[v]);
    entries.push_back({u, v, w});
    entries.push_back({v, u, w});
  }
  return SparseMatrix(n, std::move(entries));
}

SparseMatrix row_stochastic_adjacency(const Graph& g) {
  const std::size_t n = g.num_nodes();
  const std::vector<std::size_t> deg = g.degrees();
  std::vector<SparseEntry> entries;
  entries.reserve(2 * g.edges.size());
  for (const auto& [u, v] : g.edges) {
    entries.push_back({u, v, 1.0 / static_cast<double>(deg[u])});
    entries.push_back({v, u, 1.0 / static_cast<double>(deg[v])});
  }
  return SparseMatrix(n, std::move(entries));
}

}  // namespace tide::graph
