#include "hmcam/hmc.hpp"

#include <cmath>
#include <ostream>

#include "hmcam/errors.hpp"

namespace hmcam::hmc {

HamiltonianSystem with_gaussian_kinetic(std::function<double(const Tensor&)> potential,
                                        std::function<Tensor(const Tensor&)> potential_grad) {
  return {std::move(potential), std::move(potential_grad), [](const Tensor& v) { return 0.5 * dot(v, v); },
          [](const Tensor& v) { return v; }};
}

HamiltonianSystem with_l1_kinetic(std::function<double(const Tensor&)> potential,
                                  std::function<Tensor(const Tensor&)> potential_grad) {
  return {std::move(potential), std::move(potential_grad), [](const Tensor& v) { return abs_sum(v).item(); },
          [](const Tensor& v) { return sign(v); }};
}

ChainState leapfrog(const HamiltonianSystem& sys, const ChainState& start, double step, std::size_t steps) {
  if (!(step > 0.0)) throw ContractError("leapfrog: step must be positive");
  try {
    Tensor theta = start.position;
    Tensor v = sub(start.momentum, scale(sys.potential_grad(theta), 0.5 * step));
    for (std::size_t t = 1; t <= steps; ++t) {
      theta = add(theta, scale(sys.kinetic_grad(v), step));
      if (t < steps) v = sub(v, scale(sys.potential_grad(theta), step));
    }
    v = sub(v, scale(sys.potential_grad(theta), 0.5 * step));
    const double h = sys.energy(theta, v);
    if (!std::isfinite(h)) throw NonFiniteError("non-finite energy");
    return {std::move(theta), std::move(v), h, start.step_index + steps};
  } catch (const NonFiniteError& e) {
    throw IntegrationError(std::string("leapfrog: ") + e.what());
  }
}

double acceptance_probability(double h_current, double h_proposal, AcceptConvention convention) {
  const double log_ratio =
      convention == AcceptConvention::Standard ? h_current - h_proposal : h_proposal - h_current;
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

bool mh_accept(SeededRng& rng, double h_current, double h_proposal, AcceptConvention convention) {
  const double u = rng.uniform();
  return u < acceptance_probability(h_current, h_proposal, convention);
}

double ChainTrace::acceptance_rate() const {
  if (accept_flags.empty()) return 0.0;
  std::size_t n = 0;
  for (bool a : accept_flags) n += a;
  return static_cast<double>(n) / static_cast<double>(accept_flags.size());
}

void ChainTrace::write_csv(std::ostream& out) const {
  const std::size_t dim = positions.empty() ? 0 : positions.front().size();
  out << "step,accepted,energy";
  for (std::size_t j = 0; j < dim; ++j) out << ",p" << j;
  out << '\n';
  const auto old_precision = out.precision(17);
  for (std::size_t s = 0; s < positions.size(); ++s) {
    out << s << ',' << (accept_flags[s] ? 1 : 0) << ',' << energies[s];
    for (double v : positions[s].data()) out << ',' << v;
    out << '\n';
  }
  out.precision(old_precision);
}

Tensor standard_normal(SeededRng& rng, const Tensor::Shape& shape) {
  std::vector<double> v(shape_product(shape));
  for (double& x : v) x = rng.normal();
  return Tensor(shape, std::move(v));
}

ChainTrace run_chain(const HamiltonianSystem& sys, const Tensor& init, const ChainConfig& cfg,
                     const MomentumSampler& sampler) {
  if (cfg.samples < 1) throw ContractError("run_chain: need at least one sample");
  if (cfg.thin < 1) throw ContractError("run_chain: thin must be >= 1");
  SeededRng rng(cfg.seed);
  ChainTrace trace;
  Tensor theta = init;
  const std::size_t total = cfg.burn_in + cfg.samples * cfg.thin;
  for (std::size_t s = 0; s < total; ++s) {
    ChainState current{theta, sampler(rng, theta.shape()), 0.0, s};
    ChainState proposal;
    try {
      current.energy = sys.energy(current.position, current.momentum);
      proposal = leapfrog(sys, current, cfg.step, cfg.leapfrog_steps);
    } catch (const std::exception& e) {
      throw ChainAborted(std::string("run_chain: proposal ") + std::to_string(s) + ": " + e.what(), std::move(trace));
    }
    const bool accepted = mh_accept(rng, current.energy, proposal.energy, cfg.convention);
    const ChainState& kept = accepted ? proposal : current;
    theta = kept.position;
    if (s >= cfg.burn_in && (s - cfg.burn_in) % cfg.thin == 0) {
      trace.positions.push_back(kept.position);
      trace.momenta.push_back(kept.momentum);
      trace.accept_flags.push_back(accepted);
      trace.energies.push_back(kept.energy);
    }
  }
  return trace;
}

}  // namespace hmcam::hmc
