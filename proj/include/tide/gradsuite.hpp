#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tide/gradcheck.hpp"

namespace tide::gradsuite {

struct Options {
  std::size_t num_nodes = 10;
  std::size_t feature_dim = 5;
  int num_classes = 3;
  std::size_t hidden = 8;
  std::size_t latent = 4;
  std::uint64_t seed = 0;
  double h = 1e-5;
  double tolerance = 1e-3;
};

struct Entry {
  std::string name;
  ad::GradCheckResult result;
  double seconds = 0.0;
  bool passed = false;
};

// Central-difference checks of every loss component and of the routed TIDE
// objective (tide mode with exposure) on a small random graph. Each entry
// differentiates with respect to every parameter the term touches.
std::vector<Entry> run(const Options& options);

}  // namespace tide::gradsuite
