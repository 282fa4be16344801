#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/crystal.hpp"

/// A small subset of CIF: one data block, cell parameters, an optional
/// explicit list of symmetry operations, and the atom-site loop with
/// occupancies and disorder assembly/group tags.
namespace dflow::cif {

struct CifOptions {
  int min_atoms = 3;
  int max_atoms = 50;
  int order = 2;
  int vocab_size = kDefaultVocabSize;
  /// Rows closer than this (fractional, per axis) share one site.
  double coincidence_tol = 1e-4;
  /// Largest distance (Angstrom) between alternatives of a labeled assembly.
  double assembly_cutoff = 2.0;
  /// Largest distance (Angstrom) between unlabeled same-element alternatives.
  double unlabeled_cutoff = 1.0;
};

/// Raw contents of the first data block.
struct Block {
  std::string name;
  std::map<std::string, std::string> items;  // lower-case tag -> value
  struct Loop {
    std::vector<std::string> tags;           // lower-case
    std::vector<std::vector<std::string>> rows;
    int column(std::string_view tag) const;  // -1 when absent
  };
  std::vector<Loop> loops;
};

/// Tokenizes and groups the first data block. Throws DataError on malformed
/// input (for example a loop whose value count is not a multiple of its tags).
Block read_block(std::string_view text);

/// Numeric CIF value with any standard uncertainty "(n)" removed. Returns
/// false for "?" and ".".
bool parse_number(std::string_view token, double& value);

/// Parses and merges rows into sites; throws DataError with a reason for
/// malformed input and for structures outside the configured limits.
DisorderedCrystal parse_cif(std::string_view text, const CifOptions& options = {});

/// P1 CIF with one atom-site row per (position, element) pair. Alternative
/// positions of one site share a disorder assembly and get distinct groups.
std::string write_cif(const DisorderedCrystal& crystal, std::string_view name = "structure");

}  // namespace dflow::cif
