#include "dflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dflow/error.hpp"

namespace dflow::data {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::None: break;
  }
  return "none";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  if (text == "none") return Split::None;
  throw DataError("unknown split label '" + std::string(text) + "'");
}

std::size_t Dataset::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [split](const Entry& e) { return e.split == split; }));
}

std::vector<DisorderedCrystal> Dataset::crystals() const {
  std::vector<DisorderedCrystal> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.crystal);
  return out;
}

std::vector<DisorderedCrystal> Dataset::crystals(Split split) const {
  std::vector<DisorderedCrystal> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e.crystal);
  }
  return out;
}

int Dataset::max_order() const {
  int order = 0;
  for (const auto& e : entries) order = std::max(order, e.crystal.order());
  return order;
}

SplitFractions SplitFractions::parse(std::string_view text) {
  std::vector<double> values;
  std::stringstream in{std::string(text)};
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("split fractions: cannot parse '" + item + "'");
    }
  }
  if (values.size() != 3) throw UsageError("split fractions: expected three values");
  return {values[0], values[1], values[2]};
}

Dataset split_dataset(Dataset dataset, std::uint64_t seed, const SplitFractions& fractions) {
  if (dataset.entries.empty()) throw DataError("split: empty dataset");
  const double sum = fractions.train + fractions.val + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9 || fractions.train < 0 || fractions.val < 0 || fractions.test < 0) {
    throw UsageError("split: fractions must be nonnegative and sum to 1");
  }
  const auto n = dataset.entries.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(fractions.train * n)));
  const auto n_val =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions.val * n)));
  for (std::size_t r = 0; r < n; ++r) {
    Split split = Split::Test;
    if (r < n_train) {
      split = Split::Train;
    } else if (r < n_train + n_val) {
      split = Split::Val;
    }
    dataset.entries[order[r]].split = split;
  }
  return dataset;
}

Dataset augment_ordered(Dataset dataset, std::span<const DisorderedCrystal> ordered, Split target) {
  if (target != Split::Train && target != Split::Val) {
    throw UsageError("augment: ordered data may only join the train or val split");
  }
  const int order = std::max(dataset.max_order(), 1);
  const int vocab = dataset.entries.empty() ? kDefaultVocabSize
                                            : dataset.entries.front().crystal.vocab_size();
  for (const auto& crystal : ordered) {
    if (crystal.vocab_size() != vocab) {
      throw DataError("augment: vocabulary size " + std::to_string(crystal.vocab_size()) +
                      " differs from dataset vocabulary " + std::to_string(vocab));
    }
    if (!crystal.is_ordered()) throw DataError("augment: input structure is disordered");
    Entry entry;
    entry.crystal = pad_to_order(crystal, order);
    entry.split = target;
    entry.meta["source"] = "ordered";
    dataset.entries.push_back(std::move(entry));
  }
  return dataset;
}

ToyTemplate ToyTemplate::cubic_alloy(bool with_pd, int order) {
  if (order < (with_pd ? 2 : 1)) throw UsageError("toy template: order too small");
  ToyTemplate t;
  t.lattice = {3.75, 3.75, 3.75, 90.0, 90.0, 90.0};
  const int au = 79, ag = 47, cu = 29;
  auto make_site = [&](std::initializer_list<std::pair<int, double>> species,
                       std::initializer_list<Eigen::RowVector3d> positions,
                       std::initializer_list<double> weights) {
    Site site;
    site.s = Eigen::VectorXd::Zero(t.vocab_size);
    for (const auto& [z, p] : species) site.s[z - 1] = p;
    site.positions = Eigen::MatrixX3d::Zero(order, 3);
    site.pos_weights = Eigen::VectorXd::Zero(order);
    int l = 0;
    for (const auto& r : positions) site.positions.row(l++) = r;
    l = 0;
    for (double w : weights) site.pos_weights[l++] = w;
    return site;
  };
  t.sites.push_back(make_site({{au, 0.5}, {ag, 0.5}}, {{0.0, 0.0, 0.0}}, {1.0}));
  if (with_pd) {
    t.sites.push_back(
        make_site({{cu, 1.0}}, {{0.5, 0.5, 0.0}, {0.5, 0.45, 0.05}}, {0.6, 0.4}));
  } else {
    t.sites.push_back(make_site({{cu, 1.0}}, {{0.5, 0.5, 0.0}}, {1.0}));
  }
  t.sites.push_back(make_site({{cu, 1.0}}, {{0.5, 0.0, 0.5}}, {1.0}));
  t.sites.push_back(make_site({{cu, 1.0}}, {{0.0, 0.5, 0.5}}, {1.0}));
  return t;
}

DisorderedCrystal ToyTemplate::crystal() const {
  return DisorderedCrystal::create(lattice, sites, vocab_size);
}

Dataset make_toy_dataset(const ToyTemplate& templ, int n, double noise, std::mt19937_64& rng) {
  if (n < 0) throw UsageError("toy dataset: negative size");
  if (noise < 0) throw UsageError("toy dataset: negative noise");
  Dataset out;
  std::normal_distribution<double> jitter(0.0, noise > 0 ? noise : 1.0);
  std::uniform_real_distribution<double> stretch(-0.02, 0.02);
  for (int i = 0; i < n; ++i) {
    LatticeParams lattice = templ.lattice;
    std::vector<Site> sites = templ.sites;
    if (noise > 0) {
      lattice.a *= 1.0 + stretch(rng);
      lattice.b *= 1.0 + stretch(rng);
      lattice.c *= 1.0 + stretch(rng);
      for (Site& site : sites) {
        for (int l = 0; l < site.order(); ++l) {
          if (site.pos_weights[l] <= 0.0) continue;
          for (int k = 0; k < 3; ++k) site.positions(l, k) = wrap_unit(site.positions(l, k) + jitter(rng));
        }
      }
    }
    Entry entry;
    entry.crystal = DisorderedCrystal::create(lattice, std::move(sites), templ.vocab_size);
    entry.meta["source"] = "toy";
    entry.meta["index"] = i;
    out.entries.push_back(std::move(entry));
  }
  return out;
}

}  // namespace dflow::data
