#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "dflow/discretize.hpp"

/// Numerical self-checks that can run against an installed build.
namespace dflow::selftest {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;  // worst observed error or first failure
  double seconds = 0.0;
};

/// Sphere/simplex identities over `pairs` random simplex pairs for each of
/// D = 2, 5, 100.
SuiteResult geometry_suite(std::uint64_t seed, int pairs = 1000);

/// Torus exp/log round trip, mean removal and translation equivariance.
SuiteResult torus_suite(std::uint64_t seed, int trials = 1000);

struct GradientCheckOptions {
  int hidden_dim = 16;
  int num_layers = 2;
  int num_sites = 4;
  int vocab_size = 5;
  int order = 2;
  int graphs = 2;
  double step = 1e-5;
  double tolerance = 1e-4;
};

/// Analytic gradient of the full training objective against central finite
/// differences for every parameter entry of a small randomized model.
SuiteResult gradient_suite(std::uint64_t seed, const GradientCheckOptions& options = {});

/// Straight-line reference for the two-stage voting rule, written without
/// the library helpers so that the two can be compared.
std::vector<int> reference_selection(const Eigen::VectorXd& p,
                                     const discretize::DiscretizeConfig& config);

/// Library selection against reference_selection on `vectors` random inputs
/// per D = 2, 5, 100, mixing flat, peaked and sparse vectors.
SuiteResult discretization_suite(std::uint64_t seed, int vectors = 10000);

std::vector<SuiteResult> run_all(std::uint64_t seed);

}  // namespace dflow::selftest
