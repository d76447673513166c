#include "detpp/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "detpp/errors.hpp"

namespace detpp {

Assignment hungarian(const std::vector<std::vector<double>>& cost) {
    Assignment out;
    const std::size_t n = cost.size();
    if (n == 0) {
        return out;
    }
    const std::size_t m = cost[0].size();
    if (m < n) {
        throw ValidationError("assignment: " + std::to_string(n) + " rows need at least " +
                              std::to_string(n) + " columns, got " + std::to_string(m));
    }
    for (const auto& row : cost) {
        if (row.size() != m) {
            throw ValidationError("assignment: ragged cost matrix");
        }
        for (double c : row) {
            if (!std::isfinite(c)) {
                throw NumericError("assignment: non-finite cost entry");
            }
        }
    }

    // Augmenting rows one at a time while maintaining dual potentials
    // (1-based arrays; column 0 is the virtual start).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            std::size_t j1 = 0;
            double delta = inf;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    out.slot_of_target.assign(n, 0);
    out.slot_matched.assign(m, false);
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) {
            out.slot_of_target[p[j] - 1] = j - 1;
            out.slot_matched[j - 1] = true;
        }
    }

    // Deterministic tie preference: each row in order takes the lowest
    // column it can reach through an exactly cost-neutral move or swap.
    std::vector<long long> owner(m, -1);
    for (std::size_t i = 0; i < n; ++i) {
        owner[out.slot_of_target[i]] = static_cast<long long>(i);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cur = out.slot_of_target[i];
        for (std::size_t j = 0; j < cur; ++j) {
            const long long o = owner[j];
            if (o >= 0 && static_cast<std::size_t>(o) < i) {
                continue; // earlier rows are already settled
            }
            if (o < 0) {
                if (cost[i][j] == cost[i][cur]) {
                    owner[cur] = -1;
                    owner[j] = static_cast<long long>(i);
                    out.slot_matched[cur] = false;
                    out.slot_matched[j] = true;
                    out.slot_of_target[i] = j;
                    break;
                }
            } else {
                const std::size_t oi = static_cast<std::size_t>(o);
                if (cost[i][j] + cost[oi][cur] == cost[i][cur] + cost[oi][j]) {
                    owner[j] = static_cast<long long>(i);
                    owner[cur] = o;
                    out.slot_of_target[i] = j;
                    out.slot_of_target[oi] = cur;
                    break;
                }
            }
        }
    }
    return out;
}

Var build_cost_matrix(Tape& tape, const HorizonTarget& target, const PredictionSet& preds) {
    const std::size_t t_count = target.events.size();
    const std::size_t k = preds.slot_count;
    if (t_count == 0) {
        throw ValidationError("cost matrix: empty target");
    }
    if (t_count > k) {
        throw ValidationError("cost matrix: " + std::to_string(t_count) +
                              " targets exceed " + std::to_string(k) + " slots");
    }

    const Var log_probs = tape.log_softmax(preds.label_logits);
    const Var log_o = tape.log_sigmoid(preds.o_logits);
    const Var log_not_o = tape.log_sigmoid(tape.neg(preds.o_logits));
    const Var presence_adj = tape.sub(log_not_o, log_o);

    std::vector<Var> rows;
    rows.reserve(t_count);
    for (const Event& e : target.events) {
        const double dt = e.t - target.anchor;
        const Var time_cost =
            tape.abs(tape.sub(tape.constant(Tensor::full({k}, dt)), preds.t_shifts));
        const Var label_nll =
            tape.neg(tape.reshape(tape.index_select(log_probs, 1, {e.label}), {k}));
        rows.push_back(tape.add(time_cost, tape.add(label_nll, presence_adj)));
    }
    return tape.reshape(tape.concat(rows), {t_count, k});
}

namespace {

// Indices ordered by the tensor's values (then by index, so tied values
// keep a reproducible gradient routing).
std::vector<std::size_t> sort_by_value(const Tensor& values,
                                       const std::vector<std::size_t>& indices) {
    std::vector<std::size_t> out = indices;
    std::sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
        if (values.data[a] != values.data[b]) {
            return values.data[a] < values.data[b];
        }
        return a < b;
    });
    return out;
}

} // namespace

MatchingLossResult matching_loss(Tape& tape, const HorizonTarget& target,
                                 const PredictionSet& preds) {
    const std::size_t k = preds.slot_count;
    const std::size_t l = preds.label_count;
    const std::size_t t_count = target.events.size();
    if (t_count > k) {
        throw ValidationError("matching loss: " + std::to_string(t_count) +
                              " targets exceed " + std::to_string(k) + " slots");
    }

    MatchingLossResult res;
    res.assignment.slot_matched.assign(k, false);

    Var pair_term;
    if (t_count > 0) {
        const Var cost = build_cost_matrix(tape, target, preds);
        const Tensor& cval = tape.value(cost);
        std::vector<std::vector<double>> plain(t_count, std::vector<double>(k));
        for (std::size_t i = 0; i < t_count; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                plain[i][j] = cval.data[i * k + j];
            }
        }
        res.assignment = hungarian(plain);

        const std::vector<std::size_t>& slots = res.assignment.slot_of_target;
        Tensor deltas = Tensor::zeros({t_count});
        std::vector<std::size_t> flat(t_count);
        for (std::size_t i = 0; i < t_count; ++i) {
            deltas.data[i] = target.events[i].t - target.anchor;
            flat[i] = i * l + target.events[i].label;
        }
        const Var sel_shifts = tape.index_select(preds.t_shifts, 0, slots);
        const Var time_term =
            tape.sum(tape.abs(tape.sub(tape.constant(std::move(deltas)), sel_shifts)));
        const Var sel_rows =
            tape.index_select(tape.log_softmax(preds.label_logits), 0, slots);
        const Var label_term =
            tape.neg(tape.sum(tape.index_select(tape.reshape(sel_rows, {t_count * l}), 0, flat)));
        pair_term = tape.add(time_term, label_term);
    }

    const Var log_o = tape.log_sigmoid(preds.o_logits);
    const Var log_not_o = tape.log_sigmoid(tape.neg(preds.o_logits));
    std::vector<std::size_t> matched, unmatched;
    for (std::size_t j = 0; j < k; ++j) {
        (res.assignment.slot_matched[j] ? matched : unmatched).push_back(j);
    }
    matched = sort_by_value(tape.value(log_o), matched);
    unmatched = sort_by_value(tape.value(log_not_o), unmatched);

    Var bce;
    if (!matched.empty() && !unmatched.empty()) {
        bce = tape.neg(tape.add(tape.sum(tape.index_select(log_o, 0, matched)),
                                tape.sum(tape.index_select(log_not_o, 0, unmatched))));
    } else if (!matched.empty()) {
        bce = tape.neg(tape.sum(tape.index_select(log_o, 0, matched)));
    } else {
        bce = tape.neg(tape.sum(tape.index_select(log_not_o, 0, unmatched)));
    }

    res.loss = pair_term.valid() ? tape.add(pair_term, bce) : bce;
    return res;
}

Var positional_loss_next_k(Tape& tape, const HorizonTarget& target, const PredictionSet& preds) {
    const std::size_t k = preds.slot_count;
    const std::size_t l = preds.label_count;
    const std::size_t t_count = target.events.size();
    if (t_count > k) {
        throw ValidationError("positional loss: " + std::to_string(t_count) +
                              " targets exceed " + std::to_string(k) + " slots");
    }
    if (t_count == 0) {
        return tape.constant_scalar(0.0);
    }

    Tensor deltas = Tensor::zeros({t_count});
    std::vector<std::size_t> flat(t_count);
    for (std::size_t i = 0; i < t_count; ++i) {
        deltas.data[i] = target.events[i].t - target.anchor;
        flat[i] = i * l + target.events[i].label;
    }
    const Var sel_shifts = tape.slice(preds.t_shifts, 0, t_count);
    const Var time_term =
        tape.sum(tape.abs(tape.sub(tape.constant(std::move(deltas)), sel_shifts)));
    const Var sel_rows = tape.slice(tape.log_softmax(preds.label_logits), 0, t_count);
    const Var label_term =
        tape.neg(tape.sum(tape.index_select(tape.reshape(sel_rows, {t_count * l}), 0, flat)));
    return tape.add(time_term, label_term);
}

} // namespace detpp
