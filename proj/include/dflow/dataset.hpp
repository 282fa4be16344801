#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dflow/crystal.hpp"

namespace dflow::data {

enum class Split { None, Train, Val, Test };

std::string_view to_string(Split split);
/// Accepts "train", "val", "test" and "none"; throws DataError otherwise.
Split parse_split(std::string_view text);

struct Entry {
  DisorderedCrystal crystal;
  Split split = Split::None;
  nlohmann::json meta = nlohmann::json::object();
};

struct Dataset {
  std::vector<Entry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t count(Split split) const;
  std::vector<DisorderedCrystal> crystals() const;
  std::vector<DisorderedCrystal> crystals(Split split) const;
  /// Largest positional order over all entries.
  int max_order() const;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  /// Parses "0.8,0.1,0.1"; throws UsageError on malformed input.
  static SplitFractions parse(std::string_view text);
};

/// Shuffles indices under `seed` and labels every entry. Train and validation
/// counts are rounded to nearest; the test split takes the remainder.
Dataset split_dataset(Dataset dataset, std::uint64_t seed, const SplitFractions& fractions = {});

/// Appends ordered structures (converted to the unified form at the dataset's
/// order) to the train or validation split. Test entries are never touched.
Dataset augment_ordered(Dataset dataset, std::span<const DisorderedCrystal> ordered,
                        Split target = Split::Train);

/// A small cell whose copies make up the toy benchmark.
struct ToyTemplate {
  LatticeParams lattice;
  std::vector<Site> sites;
  int vocab_size = kDefaultVocabSize;

  /// Cu3Au-type cubic cell (a = 3.75) whose corner site is Au/Ag 50:50.
  /// With `with_pd` one face-centre Cu is split over two nearby positions.
  static ToyTemplate cubic_alloy(bool with_pd = false, int order = 2);
  DisorderedCrystal crystal() const;
};

/// n copies with wrapped-Normal(0, noise) jitter on every occupied position and
/// uniform +-2% jitter on each cell length (both skipped when noise is 0).
/// Occupancies stay at their template values.
Dataset make_toy_dataset(const ToyTemplate& templ, int n, double noise, std::mt19937_64& rng);

}  // namespace dflow::data
