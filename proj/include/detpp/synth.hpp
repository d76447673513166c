#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "detpp/events.hpp"

namespace detpp {

// Multivariate Hawkes process with exponential kernel:
//   lambda_l(t) = mu[l] + sum_{t_j < t} alpha[l_j][l] * exp(-beta * (t - t_j))
// Construction rejects supercritical specs (max row sum of alpha / beta >= 1).
struct HawkesSpec {
    std::size_t label_count = 1;
    std::vector<double> mu;                  // length L, >= 0
    std::vector<std::vector<double>> alpha;  // L x L, >= 0
    double beta = 1.0;                       // > 0
    double t_max = 10.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Label-chain generator: labels follow a row-stochastic transition matrix
// with self_prob on the diagonal and seeded random weights off it; the gap
// to the next event is exponential with a rate tied to the current label.
struct MarkovBurstsSpec {
    std::size_t label_count = 2;
    double t_max = 10.0;
    std::uint64_t seed = 0;
    double self_prob = 0.6;          // diagonal of the transition matrix
    double rate_min = 0.5;           // per-label gap rates, log-spaced
    double rate_max = 2.0;

    std::vector<std::vector<double>> transition_matrix() const;
    std::vector<double> gap_rates() const;
};

// Ogata thinning; each sequence draws from an independent stream derived
// from (spec.seed, sequence index), so generation order never matters.
std::vector<EventSequence> generate_hawkes(const HawkesSpec& spec, std::size_t n_sequences);

std::vector<EventSequence> generate_markov_bursts(const MarkovBurstsSpec& spec,
                                                  std::size_t n_sequences);

// Deterministic shuffled partition into train/val/test. Fractions must be
// positive and sum to 1 within 1e-9.
struct DatasetSplit {
    std::vector<EventSequence> train;
    std::vector<EventSequence> val;
    std::vector<EventSequence> test;
};

DatasetSplit split_dataset(std::vector<EventSequence> sequences,
                           const std::array<double, 3>& fractions,
                           std::uint64_t seed);

} // namespace detpp
