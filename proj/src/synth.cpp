#include "detpp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "detpp/errors.hpp"
#include "detpp/rng.hpp"

namespace detpp {

void HawkesSpec::validate() const {
    if (label_count == 0 || mu.size() != label_count || alpha.size() != label_count) {
        throw ValidationError("hawkes spec: mu and alpha must have label_count entries");
    }
    if (!(beta > 0.0)) {
        throw ValidationError("hawkes spec: beta must be positive");
    }
    if (!(t_max > 0.0)) {
        throw ValidationError("hawkes spec: t_max must be positive");
    }
    double max_row_sum = 0.0;
    for (std::size_t i = 0; i < label_count; ++i) {
        if (mu[i] < 0.0) {
            throw ValidationError("hawkes spec: mu must be non-negative");
        }
        if (alpha[i].size() != label_count) {
            throw ValidationError("hawkes spec: alpha must be square");
        }
        double row = 0.0;
        for (double a : alpha[i]) {
            if (a < 0.0) {
                throw ValidationError("hawkes spec: alpha must be non-negative");
            }
            row += a;
        }
        max_row_sum = std::max(max_row_sum, row);
    }
    if (!(max_row_sum / beta < 1.0)) {
        throw ValidationError("hawkes spec: supercritical (max alpha row sum / beta = " +
                              std::to_string(max_row_sum / beta) + " >= 1)");
    }
}

namespace {

EventSequence simulate_hawkes_one(const HawkesSpec& spec, std::size_t index) {
    Rng rng = rng_stream({spec.seed, kStreamDataset, index});
    const std::size_t L = spec.label_count;

    EventSequence seq;
    seq.id = "hawkes-" + std::to_string(spec.seed) + "-" + std::to_string(index);

    // excitation[l]: current kernel mass targeting label l, decayed to `t`.
    std::vector<double> excitation(L, 0.0);
    std::vector<double> lambda(L, 0.0);
    double t = 0.0;
    double prev_emitted = -1.0;

    while (true) {
        double bound = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            bound += spec.mu[l] + excitation[l];
        }
        if (!(bound > 0.0)) {
            break; // silent process, nothing more can fire
        }
        const double wait = rng.exponential(bound);
        const double candidate = t + wait;
        if (candidate > spec.t_max) {
            break;
        }
        const double decay = std::exp(-spec.beta * wait);
        double total = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            excitation[l] *= decay;
            lambda[l] = spec.mu[l] + excitation[l];
            total += lambda[l];
        }
        t = candidate;
        if (rng.uniform() * bound <= total) {
            // accepted: draw the label proportionally to lambda
            double u = rng.uniform() * total;
            std::size_t label = L - 1;
            double acc = 0.0;
            for (std::size_t l = 0; l < L; ++l) {
                acc += lambda[l];
                if (u <= acc) {
                    label = l;
                    break;
                }
            }
            const double stamped = quantize_time(t);
            if (stamped <= prev_emitted) {
                continue; // tie after quantization: reject and keep thinning
            }
            seq.events.push_back({stamped, static_cast<std::uint32_t>(label)});
            prev_emitted = stamped;
            for (std::size_t l = 0; l < L; ++l) {
                excitation[l] += spec.alpha[label][l];
            }
        }
        // rejected candidates just advance t; the bound recomputes above
    }
    return seq;
}

} // namespace

std::vector<EventSequence> generate_hawkes(const HawkesSpec& spec, std::size_t n_sequences) {
    spec.validate();
    std::vector<EventSequence> out;
    out.reserve(n_sequences);
    for (std::size_t i = 0; i < n_sequences; ++i) {
        out.push_back(simulate_hawkes_one(spec, i));
    }
    return out;
}

std::vector<std::vector<double>> MarkovBurstsSpec::transition_matrix() const {
    if (label_count < 2) {
        throw ValidationError("markov bursts: label_count must be at least 2");
    }
    if (!(self_prob >= 0.0 && self_prob < 1.0)) {
        throw ValidationError("markov bursts: self_prob must lie in [0, 1)");
    }
    Rng rng = rng_stream({seed, kStreamInit, 0x7a});
    std::vector<std::vector<double>> m(label_count, std::vector<double>(label_count, 0.0));
    for (std::size_t i = 0; i < label_count; ++i) {
        double sum = 0.0;
        std::vector<double> w(label_count, 0.0);
        for (std::size_t j = 0; j < label_count; ++j) {
            if (j == i) {
                continue;
            }
            w[j] = 0.2 + rng.uniform(); // bounded away from zero so every hop stays possible
            sum += w[j];
        }
        for (std::size_t j = 0; j < label_count; ++j) {
            m[i][j] = (j == i) ? self_prob : (1.0 - self_prob) * w[j] / sum;
        }
    }
    return m;
}

std::vector<double> MarkovBurstsSpec::gap_rates() const {
    std::vector<double> rates(label_count, rate_min);
    if (label_count == 1) {
        return rates;
    }
    const double log_lo = std::log(rate_min);
    const double log_hi = std::log(rate_max);
    for (std::size_t l = 0; l < label_count; ++l) {
        const double frac = static_cast<double>(l) / static_cast<double>(label_count - 1);
        rates[l] = std::exp(log_lo + frac * (log_hi - log_lo));
    }
    return rates;
}

std::vector<EventSequence> generate_markov_bursts(const MarkovBurstsSpec& spec,
                                                  std::size_t n_sequences) {
    const auto transitions = spec.transition_matrix();
    const auto rates = spec.gap_rates();
    std::vector<EventSequence> out;
    out.reserve(n_sequences);
    for (std::size_t index = 0; index < n_sequences; ++index) {
        Rng rng = rng_stream({spec.seed, kStreamDataset, index});
        EventSequence seq;
        seq.id = "bursts-" + std::to_string(spec.seed) + "-" + std::to_string(index);
        std::size_t label = static_cast<std::size_t>(rng.below(spec.label_count));
        double t = 0.0;
        double prev_emitted = -1.0;
        while (true) {
            const double gap = rng.exponential(rates[label]);
            t += gap;
            if (t > spec.t_max) {
                break;
            }
            const double stamped = quantize_time(t);
            if (stamped <= prev_emitted) {
                continue; // re-draw the gap on a quantization tie
            }
            seq.events.push_back({stamped, static_cast<std::uint32_t>(label)});
            prev_emitted = stamped;
            // next label
            const double u = rng.uniform();
            double acc = 0.0;
            std::size_t next = spec.label_count - 1;
            for (std::size_t j = 0; j < spec.label_count; ++j) {
                acc += transitions[label][j];
                if (u <= acc) {
                    next = j;
                    break;
                }
            }
            label = next;
        }
        out.push_back(std::move(seq));
    }
    return out;
}

DatasetSplit split_dataset(std::vector<EventSequence> sequences,
                           const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) {
            throw ValidationError("split fractions must be positive");
        }
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("split fractions must sum to 1");
    }
    if (sequences.size() < 3) {
        throw ValidationError("need at least as many sequences as split parts");
    }

    Rng rng = rng_stream({seed, kStreamSplit});
    // Fisher-Yates
    for (std::size_t i = sequences.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(sequences[i], sequences[j]);
    }

    const std::size_t n = sequences.size();
    std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
    std::size_t n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
    n_val = std::clamp<std::size_t>(n_val, 1, n - n_train - 1);

    DatasetSplit split;
    split.train.assign(sequences.begin(), sequences.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(sequences.begin() + static_cast<std::ptrdiff_t>(n_train),
                     sequences.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(sequences.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                      sequences.end());
    return split;
}

} // namespace detpp
