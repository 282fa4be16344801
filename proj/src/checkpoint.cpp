#include "dflow/checkpoint.hpp"

#include <fstream>
#include <map>

#include <json.hpp>

#include "dflow/error.hpp"

namespace dflow {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "dflow-checkpoint";
constexpr int kVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const NetConfig& c = checkpoint.net.config();
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["task"] = std::string(to_string(checkpoint.task));
  j["net"] = {{"vocab_size", c.vocab_size}, {"order", c.order},       {"hidden_dim", c.hidden_dim},
              {"num_layers", c.num_layers}, {"n_freq", c.n_freq},     {"time_dim", c.time_dim},
              {"max_sites", c.max_sites}};
  j["length_prior"] = {{"loc", checkpoint.length_prior.loc}, {"scale", checkpoint.length_prior.scale}};
  std::map<int, int> histogram;
  for (int n : checkpoint.atom_counts) ++histogram[n];
  json sizes = json::array();
  for (const auto& [n, count] : histogram) sizes.push_back({n, count});
  j["atom_counts"] = std::move(sizes);

  const ad::ParameterSet& params = checkpoint.net.params();
  json pj = json::array();
  for (int i = 0; i < params.size(); ++i) {
    const ad::Matrix& m = params.value(i);
    std::vector<double> data(m.data(), m.data() + m.size());  // column-major
    pj.push_back({{"name", params.name(i)}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}});
  }
  j["parameters"] = std::move(pj);

  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump() << "\n";
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  try {
    const json j = json::parse(in);
    if (j.value("format", "") != kFormat) throw DataError("not a checkpoint file: " + path.string());
    if (j.at("version").get<int>() != kVersion) {
      throw DataError("unsupported checkpoint version " + j.at("version").dump());
    }
    const json& nj = j.at("net");
    NetConfig config;
    config.vocab_size = nj.at("vocab_size").get<int>();
    config.order = nj.at("order").get<int>();
    config.hidden_dim = nj.at("hidden_dim").get<int>();
    config.num_layers = nj.at("num_layers").get<int>();
    config.n_freq = nj.at("n_freq").get<int>();
    config.time_dim = nj.at("time_dim").get<int>();
    config.max_sites = nj.at("max_sites").get<int>();

    Checkpoint cp{VelocityNet(config), parse_task(j.at("task").get<std::string>()), {}, {}};
    cp.length_prior.loc = j.at("length_prior").at("loc").get<std::array<double, 3>>();
    cp.length_prior.scale = j.at("length_prior").at("scale").get<std::array<double, 3>>();
    for (const json& e : j.at("atom_counts")) {
      const int n = e.at(0).get<int>();
      cp.atom_counts.insert(cp.atom_counts.end(), static_cast<std::size_t>(e.at(1).get<int>()), n);
    }

    ad::ParameterSet& params = cp.net.params();
    const json& pj = j.at("parameters");
    if (static_cast<int>(pj.size()) != params.size()) {
      throw DataError("checkpoint holds " + std::to_string(pj.size()) + " parameters, model expects " +
                      std::to_string(params.size()));
    }
    for (const json& p : pj) {
      const std::string name = p.at("name").get<std::string>();
      const auto index = params.find(name);
      if (!index) throw DataError("checkpoint parameter '" + name + "' unknown to the model");
      ad::Matrix& m = params.value(*index);
      const auto data = p.at("data").get<std::vector<double>>();
      if (p.at("rows").get<Eigen::Index>() != m.rows() || p.at("cols").get<Eigen::Index>() != m.cols() ||
          static_cast<Eigen::Index>(data.size()) != m.size()) {
        throw DataError("checkpoint parameter '" + name + "' has the wrong shape");
      }
      std::copy(data.begin(), data.end(), m.data());
    }
    return cp;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace dflow
