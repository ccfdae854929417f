#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "hmcam/rng.hpp"
#include "hmcam/tensor.hpp"

namespace hmcam::hmc {

/// H(position, momentum) = U(position) + K(momentum), with both gradients.
struct HamiltonianSystem {
  std::function<double(const Tensor&)> potential;
  std::function<Tensor(const Tensor&)> potential_grad;
  std::function<double(const Tensor&)> kinetic;
  std::function<Tensor(const Tensor&)> kinetic_grad;

  double energy(const Tensor& position, const Tensor& momentum) const {
    return potential(position) + kinetic(momentum);
  }
};

/// K(v) = v.v / 2, grad v.
HamiltonianSystem with_gaussian_kinetic(std::function<double(const Tensor&)> potential,
                                        std::function<Tensor(const Tensor&)> potential_grad);
/// K(v) = |v|_1, grad sign(v).
HamiltonianSystem with_l1_kinetic(std::function<double(const Tensor&)> potential,
                                  std::function<Tensor(const Tensor&)> potential_grad);

struct ChainState {
  Tensor position;
  Tensor momentum;
  double energy = 0.0;
  std::size_t step_index = 0;
};

/// Which way the Metropolis-Hastings exponent points.
enum class AcceptConvention {
  /// min(1, exp(H_current - H_proposal)): targets p proportional to exp(-H).
  Standard,
  /// min(1, exp(H_proposal - H_current)): favours higher energy, used by the attack chain.
  PaperAttack,
};

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Leapfrog trajectory: half momentum kick, then `steps` drifts separated by
/// full kicks, then a closing half kick. steps == 0 applies the two half
/// kicks at the starting position. The returned state's energy is recomputed.
ChainState leapfrog(const HamiltonianSystem& sys, const ChainState& start, double step, std::size_t steps);

/// Probability of accepting a proposal under `convention`.
double acceptance_probability(double h_current, double h_proposal, AcceptConvention convention);

/// Draws one uniform from `rng` and accepts when it falls below the acceptance probability.
bool mh_accept(SeededRng& rng, double h_current, double h_proposal, AcceptConvention convention);

struct ChainTrace {
  /// Chain position after each recorded proposal (repeats the previous one on rejection).
  std::vector<Tensor> positions;
  std::vector<Tensor> momenta;
  std::vector<bool> accept_flags;
  /// H of the state the chain holds after each proposal.
  std::vector<double> energies;

  std::size_t proposals() const { return accept_flags.size(); }
  double acceptance_rate() const;
  /// CSV with columns step, accepted, energy, p0..p{n-1}.
  void write_csv(std::ostream& out) const;
};

/// Thrown when a trajectory hits a non-finite value; carries the trace so far.
class ChainAborted : public IntegrationError {
 public:
  ChainAborted(const std::string& what, ChainTrace partial) : IntegrationError(what), partial(std::move(partial)) {}
  ChainTrace partial;
};

using MomentumSampler = std::function<Tensor(SeededRng& rng, const Tensor::Shape& shape)>;

/// Independent standard normal entries.
Tensor standard_normal(SeededRng& rng, const Tensor::Shape& shape);

struct ChainConfig {
  double step = 0.1;
  std::size_t leapfrog_steps = 10;
  std::size_t samples = 1000;
  std::size_t burn_in = 0;
  /// Record every `thin`-th proposal after burn-in.
  std::size_t thin = 1;
  AcceptConvention convention = AcceptConvention::Standard;
  std::uint64_t seed = 0;
};

/// Full HMC loop: fresh momentum, leapfrog, Metropolis-Hastings. Records
/// `samples` proposals after `burn_in` discarded ones.
ChainTrace run_chain(const HamiltonianSystem& sys, const Tensor& init, const ChainConfig& cfg,
                     const MomentumSampler& sampler = standard_normal);

}  // namespace hmcam::hmc
