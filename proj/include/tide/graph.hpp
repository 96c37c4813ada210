#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tide/sparse.hpp"

namespace tide::graph {

using tide::Matrix;
using tide::SparseMatrix;

using Edge = std::pair<std::size_t, std::size_t>;

// Named node index sets. train/val/test_id index in-distribution nodes;
// test_ood and train_ood (exposure) index out-of-distribution nodes.
struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test_id;
  std::vector<std::size_t> test_ood;
  std::vector<std::size_t> train_ood;

  bool operator==(const Splits&) const = default;
};

struct Graph {
  Matrix features;           // n x d
  std::vector<Edge> edges;   // undirected, canonical u < v, sorted, unique
  std::vector<int> labels;   // -1 = unlabeled
  int num_classes = 0;
  Splits splits;

  std::size_t num_nodes() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }

  // Both orientations of every edge.
  std::vector<Edge> directed_edges() const;
  std::vector<std::size_t> degrees() const;

  bool operator==(const Graph& other) const;
};

// Sorts, deduplicates and orients edges as u < v; drops self-loops.
std::vector<Edge> canonical_edges(std::vector<Edge> edges);

// Throws ContractError / ShapeError on any broken invariant: endpoint range,
// label range, mask range, train/val/test_id disjoint from test_ood.
void validate(const Graph& g);

// Four-file text format. Features: d floats per line. Edges: "u v" per line.
// Labels: one integer per line (-1 unlabeled). Splits: JSON object of index
// arrays. Parse errors carry the 1-based line number.
Graph load_graph(const std::filesystem::path& features_path,
                 const std::filesystem::path& edges_path,
                 const std::filesystem::path& labels_path,
                 const std::filesystem::path& splits_path);

void save_graph(const Graph& g, const std::filesystem::path& features_path,
                const std::filesystem::path& edges_path, const std::filesystem::path& labels_path,
                const std::filesystem::path& splits_path);

// Single JSON document holding all four parts.
std::string to_bundle_json(const Graph& g);
Graph from_bundle_json(const std::string& text);
void save_bundle(const Graph& g, const std::filesystem::path& path);
Graph load_bundle(const std::filesystem::path& path);

// D^{-1/2} (A + I) D^{-1/2}, degrees taken over A + I.
SparseMatrix sym_normalized_adjacency(const Graph& g);

// D^{-1} A without self-loops; zero-degree rows stay empty.
SparseMatrix row_stochastic_adjacency(const Graph& g);

}  // namespace tide::graph
