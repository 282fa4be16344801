#pragma once

#include <filesystem>
#include <vector>

#include "dflow/geometry.hpp"
#include "dflow/training.hpp"
#include "dflow/velocity_net.hpp"

namespace dflow {

/// Everything needed to sample from a trained model.
struct Checkpoint {
  VelocityNet net;
  Task task = Task::DNG;
  geometry::LengthPrior length_prior;
  /// Atom counts of the training structures, for DNG size sampling.
  std::vector<int> atom_counts;
};

/// JSON with exact (round-trip) doubles.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws DataError for unreadable files, version mismatches and parameter
/// shape mismatches.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dflow
