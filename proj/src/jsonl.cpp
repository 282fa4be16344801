#include "dflow/jsonl.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "dflow/error.hpp"

namespace dflow::data {
namespace {

using nlohmann::json;

double number_at(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw DataError(std::string("missing numeric field '") + key + "'");
  }
  return j.at(key).get<double>();
}

const json& array_at(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw DataError(std::string("missing array field '") + key + "'");
  }
  return j.at(key);
}

template <typename T>
json optional_value(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

json crystal_to_json(const DisorderedCrystal& crystal) {
  const LatticeParams& l = crystal.lattice();
  json sites = json::array();
  for (const Site& site : crystal.sites()) {
    json s = json::array();
    for (Eigen::Index k = 0; k < site.s.size(); ++k) {
      if (site.s[k] != 0.0) {
        s.push_back({{"z", DisorderedCrystal::atomic_number(static_cast<int>(k))}, {"p", site.s[k]}});
      }
    }
    json positions = json::array();
    json weights = json::array();
    for (int p = 0; p < site.order(); ++p) {
      positions.push_back({site.positions(p, 0), site.positions(p, 1), site.positions(p, 2)});
      weights.push_back(site.pos_weights[p]);
    }
    sites.push_back({{"s", std::move(s)}, {"positions", std::move(positions)}, {"pos_weights", std::move(weights)}});
  }
  return {{"lattice",
           {{"a", l.a}, {"b", l.b}, {"c", l.c}, {"alpha", l.alpha}, {"beta", l.beta}, {"gamma", l.gamma}}},
          {"sites", std::move(sites)}};
}

DisorderedCrystal crystal_from_json(const json& j, int min_order, int vocab_size) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  if (!j.contains("lattice") || !j.at("lattice").is_object()) throw DataError("missing object field 'lattice'");
  const json& lj = j.at("lattice");
  const LatticeParams lattice{number_at(lj, "a"),     number_at(lj, "b"),    number_at(lj, "c"),
                              number_at(lj, "alpha"), number_at(lj, "beta"), number_at(lj, "gamma")};
  const json& sites_j = array_at(j, "sites");
  int order = 0;
  for (const json& sj : sites_j) {
    if (!sj.is_object()) throw DataError("site is not an object");
    order = std::max(order, static_cast<int>(array_at(sj, "pos_weights").size()));
  }
  order = std::max(order, min_order);

  std::vector<Site> sites;
  for (std::size_t i = 0; i < sites_j.size(); ++i) {
    const json& sj = sites_j[i];
    const std::string where = "site " + std::to_string(i) + ": ";
    Site site;
    site.s = Eigen::VectorXd::Zero(vocab_size);
    for (const json& e : array_at(sj, "s")) {
      if (!e.is_object() || !e.contains("z") || !e.at("z").is_number_integer()) {
        throw DataError(where + "element entry needs an integer 'z'");
      }
      const int z = e.at("z").get<int>();
      if (z < 1 || z > vocab_size) throw DataError(where + "atomic number " + std::to_string(z) + " out of range");
      site.s[z - 1] += number_at(e, "p");
    }
    const json& pos = array_at(sj, "positions");
    const json& wts = array_at(sj, "pos_weights");
    if (pos.size() != wts.size()) throw DataError(where + "positions and pos_weights differ in length");
    site.positions = Eigen::MatrixX3d::Zero(order, 3);
    site.pos_weights = Eigen::VectorXd::Zero(order);
    for (std::size_t p = 0; p < pos.size(); ++p) {
      if (!pos[p].is_array() || pos[p].size() != 3) throw DataError(where + "position is not a 3-vector");
      for (int k = 0; k < 3; ++k) {
        if (!pos[p][static_cast<std::size_t>(k)].is_number()) throw DataError(where + "non-numeric coordinate");
        site.positions(static_cast<Eigen::Index>(p), k) = pos[p][static_cast<std::size_t>(k)].get<double>();
      }
      if (!wts[p].is_number()) throw DataError(where + "non-numeric position weight");
      site.pos_weights[static_cast<Eigen::Index>(p)] = wts[p].get<double>();
    }
    sites.push_back(std::move(site));
  }
  return DisorderedCrystal::create(lattice, std::move(sites), vocab_size,
                                   std::max<int>(kDefaultMaxSites, static_cast<int>(sites_j.size())));
}

json entry_to_json(const Entry& entry) {
  json j = crystal_to_json(entry.crystal);
  json meta = entry.meta.is_object() ? entry.meta : json::object();
  if (entry.split != Split::None) {
    meta["split"] = std::string(to_string(entry.split));
  } else {
    meta.erase("split");
  }
  j["meta"] = std::move(meta);
  return j;
}

Entry entry_from_json(const json& j, int min_order) {
  Entry entry;
  entry.crystal = crystal_from_json(j, min_order);
  if (j.contains("meta")) {
    if (!j.at("meta").is_object()) throw DataError("'meta' is not an object");
    entry.meta = j.at("meta");
    if (entry.meta.contains("split")) {
      if (!entry.meta.at("split").is_string()) throw DataError("'split' is not a string");
      entry.split = parse_split(entry.meta.at("split").get<std::string>());
      entry.meta.erase("split");
    }
  }
  return entry;
}

void write_jsonl(const Dataset& dataset, std::ostream& out) {
  for (const Entry& e : dataset.entries) out << entry_to_json(e).dump() << "\n";
  if (!out) throw DataError("write failed");
}

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_jsonl(dataset, out);
}

Dataset read_jsonl(std::istream& in, int min_order) {
  Dataset dataset;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      dataset.entries.push_back(entry_from_json(json::parse(line), min_order));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  const int order = std::max(dataset.max_order(), min_order);
  for (Entry& e : dataset.entries) {
    if (e.crystal.order() < order) e.crystal = pad_to_order(e.crystal, order);
  }
  return dataset;
}

Dataset read_jsonl(const std::filesystem::path& path, int min_order) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_jsonl(in, min_order);
}

json report_to_json(const metrics::EvalReport& r) {
  return {{"task", r.task},
          {"num_pred", r.num_pred},
          {"num_ref", r.num_ref},
          {"match_rate", optional_value(r.match_rate)},
          {"rmse", optional_value(r.rmse)},
          {"structural_validity", optional_value(r.structural_validity)},
          {"compositional_validity", optional_value(r.compositional_validity)},
          {"coverage_recall", optional_value(r.coverage_recall)},
          {"coverage_precision", optional_value(r.coverage_precision)},
          {"wdist_density", optional_value(r.wdist_density)},
          {"wdist_n_el", optional_value(r.wdist_n_el)}};
}

}  // namespace dflow::data
