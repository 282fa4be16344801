#include "dflow/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "dflow/error.hpp"
#include "dflow/parallel.hpp"

namespace dflow {
namespace {

constexpr double kMinLength = 1e-3;

bool finite(const FlowState& s) {
  return s.lattice.allFinite() && s.coords.allFinite() && s.s.allFinite() && s.w.allFinite();
}

void check_shapes(const FlowState& state, const VelocityBundle& v) {
  if (v.coords.rows() != state.coords.rows() || v.coords.cols() != state.coords.cols() ||
      v.s.rows() != state.s.rows() || v.s.cols() != state.s.cols() ||
      v.w.rows() != state.w.rows() || v.w.cols() != state.w.cols()) {
    throw UsageError("velocity field returned a bundle of the wrong shape");
  }
}

// One exponential-map step per row of a sphere-state matrix.
void sphere_step(Eigen::MatrixXd& x, const Eigen::MatrixXd& v, double dt) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd xi = x.row(i).transpose();
    const Eigen::VectorXd u = geometry::project_tangent(xi, v.row(i).transpose());
    Eigen::VectorXd next = geometry::sphere_exp(xi, dt * u);
    next /= next.norm();
    x.row(i) = next.transpose();
  }
}

void integrate_chunk(std::span<Chain> chains, const VelocityField& field,
                     const SamplerConfig& config) {
  const double dt = 1.0 / config.steps;
  std::vector<FlowState> states;
  std::vector<Eigen::MatrixXd> xs, xw;
  for (const Chain& c : chains) {
    states.push_back(c.state);
    xs.push_back(c.state.s.cwiseMax(0.0).cwiseSqrt());
    xw.push_back(c.state.w.cwiseMax(0.0).cwiseSqrt());
  }
  for (int k = 0; k < config.steps; ++k) {
    const double t = k * dt;
    const std::vector<VelocityBundle> v = field(states, t);
    if (v.size() != states.size()) throw UsageError("velocity field returned a wrong batch size");
    const double coord_scale = (1.0 + config.slope * t) * dt;
    for (std::size_t c = 0; c < states.size(); ++c) {
      FlowState& st = states[c];
      const Chain& chain = chains[c];
      check_shapes(st, v[c]);
      st.lattice += dt * v[c].lattice;
      for (Eigen::Index i = 0; i < st.coords.rows(); ++i) {
        for (Eigen::Index l = 0; l < st.order(); ++l) {
          if (chain.channel_mask(i, l) == 0.0) continue;
          for (Eigen::Index a = 0; a < 3; ++a) {
            const Eigen::Index col = 3 * l + a;
            st.coords(i, col) = wrap_unit(st.coords(i, col) + coord_scale * v[c].coords(i, col));
          }
        }
      }
      if (!chain.fixed_weights) {
        sphere_step(xs[c], v[c].s, dt);
        sphere_step(xw[c], v[c].w, dt);
        st.s = xs[c].array().square();
        st.w = xw[c].array().square();
      }
      if (!finite(st)) {
        throw NumericalError("non-finite sampler state at step " + std::to_string(k));
      }
    }
  }
  for (std::size_t c = 0; c < states.size(); ++c) chains[c].state = std::move(states[c]);
}

std::string format_double(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

}  // namespace

VelocityField network_field(const VelocityNet& net) {
  return [&net](std::span<const FlowState> states, double t) {
    const std::vector<double> times(states.size(), t);
    return net.evaluate(states, times);
  };
}

std::vector<FlowState> integrate(std::vector<Chain> chains, const VelocityField& field,
                                 const SamplerConfig& config) {
  if (config.steps < 1) throw UsageError("sampler: steps must be >= 1");
  if (config.slope < 0.0) throw UsageError("sampler: slope must be >= 0");
  const int chunk = std::max(config.chunk_size, 1);
  const int n = static_cast<int>(chains.size());
  const int chunks = (n + chunk - 1) / chunk;
  std::span<Chain> all(chains);
  parallel_for(chunks, config.threads, [&](int c) {
    const int begin = c * chunk;
    const int count = std::min(chunk, n - begin);
    integrate_chunk(all.subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(count)),
                    field, config);
  });
  std::vector<FlowState> out;
  out.reserve(chains.size());
  for (auto& c : chains) out.push_back(std::move(c.state));
  return out;
}

SampleResult finalize_state(const FlowState& state, int vocab_size) {
  SampleResult result;
  result.state = state;
  LatticeParams lattice = geometry::unconstrained_to_lattice(state.lattice);
  const char* length_names[] = {"a", "b", "c"};
  double* lengths[] = {&lattice.a, &lattice.b, &lattice.c};
  for (int k = 0; k < 3; ++k) {
    if (!(*lengths[k] > 0.0)) {
      result.warnings.push_back(std::string("length ") + length_names[k] + "=" +
                                format_double(*lengths[k]) + " clamped to " +
                                format_double(kMinLength));
      *lengths[k] = kMinLength;
    }
  }
  const char* angle_names[] = {"alpha", "beta", "gamma"};
  double* angles[] = {&lattice.alpha, &lattice.beta, &lattice.gamma};
  for (int k = 0; k < 3; ++k) {
    const double clamped = std::clamp(*angles[k], 60.0, 120.0);
    if (clamped != *angles[k]) {
      result.warnings.push_back(std::string("angle ") + angle_names[k] + "=" +
                                format_double(*angles[k]) + " clamped to " +
                                format_double(clamped));
      *angles[k] = clamped;
    }
  }
  std::vector<Site> sites(static_cast<std::size_t>(state.num_sites()));
  for (int i = 0; i < state.num_sites(); ++i) {
    Site& site = sites[static_cast<std::size_t>(i)];
    site.s = state.s.row(i).transpose();
    site.pos_weights = state.w.row(i).transpose();
    site.positions.resize(state.order(), 3);
    for (int l = 0; l < state.order(); ++l) {
      site.positions.row(l) = state.coords.block(i, 3 * l, 1, 3);
    }
  }
  result.crystal = DisorderedCrystal::create(lattice, std::move(sites), vocab_size,
                                             std::max(kDefaultMaxSites, state.num_sites()));
  return result;
}

std::mt19937_64 chain_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<SampleResult> sample_dng(const VelocityField& field,
                                     const geometry::LengthPrior& length_prior,
                                     std::span<const int> num_sites, int vocab_size, int order,
                                     const SamplerConfig& config) {
  std::vector<Chain> chains;
  chains.reserve(num_sites.size());
  for (std::size_t i = 0; i < num_sites.size(); ++i) {
    std::mt19937_64 rng = chain_rng(config.seed, i);
    Chain chain;
    chain.state = geometry::sample_priors(num_sites[i], vocab_size, order, rng, length_prior);
    chain.channel_mask = Eigen::MatrixXd::Ones(num_sites[i], order);
    chains.push_back(std::move(chain));
  }
  const std::vector<FlowState> finals = integrate(std::move(chains), field, config);
  std::vector<SampleResult> out;
  out.reserve(finals.size());
  for (const auto& f : finals) out.push_back(finalize_state(f, vocab_size));
  return out;
}

std::vector<SampleResult> sample_csp(const VelocityField& field,
                                     const geometry::LengthPrior& length_prior,
                                     std::span<const DisorderedCrystal> conditions,
                                     const SamplerConfig& config) {
  std::vector<Chain> chains;
  chains.reserve(conditions.size());
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    const DisorderedCrystal& cond = conditions[i];
    std::mt19937_64 rng = chain_rng(config.seed, i);
    Chain chain;
    chain.state = geometry::sample_priors(cond.num_sites(), cond.vocab_size(), cond.order(), rng,
                                          length_prior);
    chain.channel_mask = Eigen::MatrixXd::Zero(cond.num_sites(), cond.order());
    for (int s = 0; s < cond.num_sites(); ++s) {
      const Site& site = cond.site(s);
      chain.state.s.row(s) = site.s.transpose();
      chain.state.w.row(s) = site.pos_weights.transpose();
      chain.channel_mask(s, 0) = 1.0;
      for (int l = 1; l < cond.order(); ++l) {
        chain.channel_mask(s, l) = site.pos_weights[l] > 0.0 ? 1.0 : 0.0;
      }
    }
    chain.fixed_weights = true;
    chains.push_back(std::move(chain));
  }
  const std::vector<FlowState> finals = integrate(std::move(chains), field, config);
  std::vector<SampleResult> out;
  out.reserve(finals.size());
  for (std::size_t i = 0; i < finals.size(); ++i) {
    SampleResult r = finalize_state(finals[i], conditions[i].vocab_size());
    out.push_back(std::move(r));
  }
  return out;
}

SizeSampler::SizeSampler(std::span<const int> counts) {
  if (counts.empty()) throw DataError("size sampler: no atom counts");
  std::map<int, int> freq;
  for (int n : counts) {
    if (n < 1) throw DataError("size sampler: atom count must be positive");
    ++freq[n];
  }
  for (const auto& [n, k] : freq) {
    histogram_.emplace_back(n, static_cast<double>(k) / static_cast<double>(counts.size()));
  }
}

int SizeSampler::draw(std::mt19937_64& rng) const {
  std::vector<double> weights;
  weights.reserve(histogram_.size());
  for (const auto& [n, p] : histogram_) weights.push_back(p);
  return histogram_[static_cast<std::size_t>(sample_categorical(weights, rng))].first;
}

std::vector<SampleResult> sample_batch(const VelocityField& field,
                                       const geometry::LengthPrior& length_prior,
                                       const SizeSampler& sizes, int count, int vocab_size,
                                       int order, const SamplerConfig& config) {
  std::mt19937_64 rng(config.seed);
  std::vector<int> n(static_cast<std::size_t>(std::max(count, 0)));
  for (auto& x : n) x = sizes.draw(rng);
  return sample_dng(field, length_prior, n, vocab_size, order, config);
}

}  // namespace dflow
