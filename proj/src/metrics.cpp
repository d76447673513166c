#include "detpp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "detpp/errors.hpp"
#include "detpp/matching.hpp"

namespace detpp {

NextItemPrediction next_event_choice(const std::vector<ForecastEvent>& retained,
                                     const std::vector<ForecastEvent>& all_ranked,
                                     double anchor) {
    if (!retained.empty()) {
        return {retained.front().t - anchor, retained.front().label};
    }
    if (all_ranked.empty()) {
        throw ValidationError("next-event choice: no candidate predictions");
    }
    const ForecastEvent* best = &all_ranked.front();
    for (const ForecastEvent& e : all_ranked) {
        if (e.score > best->score) {
            best = &e;
        }
    }
    return {best->t - anchor, best->label};
}

std::pair<double, double> next_item_metrics(const std::vector<NextItemPrediction>& predicted,
                                            const std::vector<NextItemPrediction>& truth) {
    if (predicted.size() != truth.size()) {
        throw ValidationError("next-item metrics: " + std::to_string(predicted.size()) +
                              " predictions vs " + std::to_string(truth.size()) + " truths");
    }
    if (predicted.empty()) {
        throw ValidationError("next-item metrics: no anchors to score");
    }
    double hits = 0.0, abs_err = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        hits += predicted[i].label == truth[i].label ? 1.0 : 0.0;
        abs_err += std::abs(predicted[i].dt - truth[i].dt);
    }
    const double n = static_cast<double>(predicted.size());
    return {hits / n, abs_err / n};
}

double otd(const std::vector<Event>& predicted, const std::vector<Event>& truth,
           double delete_cost) {
    if (!(delete_cost > 0.0)) {
        throw ValidationError("otd: delete cost must be positive");
    }
    const std::size_t n = predicted.size(), m = truth.size();
    if (n == 0 || m == 0) {
        return delete_cost * static_cast<double>(n + m);
    }
    // Matching a pair can save at most its two deletions. Working with
    // savings = pair cost - 2 * delete_cost (always <= 0, and 0 for
    // label-mismatched pairs) lets zero-padded assignment cells stand for
    // "leave unmatched", so no infinities are needed.
    const double cap = 2.0 * delete_cost;
    const std::size_t side = std::max(n, m);
    std::vector<std::vector<double>> savings(side, std::vector<double>(side, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double pair_cost = predicted[i].label == truth[j].label
                                         ? std::min(std::abs(predicted[i].t - truth[j].t), cap)
                                         : cap;
            savings[i][j] = pair_cost - cap;
        }
    }
    const Assignment assignment = hungarian(savings);
    double total = delete_cost * static_cast<double>(n + m);
    for (std::size_t i = 0; i < side; ++i) {
        total += savings[i][assignment.slot_of_target[i]];
    }
    return total;
}

double t_map(std::vector<PooledEvent> predictions, const std::vector<PooledEvent>& truth,
             double delta) {
    if (!(delta > 0.0)) {
        throw ValidationError("t-map: time tolerance must be positive");
    }
    if (truth.empty()) {
        return 0.0;
    }
    // Group the truth pool by label; matched flags are per truth event.
    std::map<std::uint32_t, std::vector<std::size_t>> truth_by_label;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        truth_by_label[truth[i].label].push_back(i);
    }
    std::map<std::uint32_t, std::vector<std::size_t>> preds_by_label;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        preds_by_label[predictions[i].label].push_back(i);
    }

    double ap_sum = 0.0;
    for (const auto& [label, truth_ids] : truth_by_label) {
        auto it = preds_by_label.find(label);
        if (it == preds_by_label.end()) {
            continue; // average precision 0 for this label
        }
        std::vector<std::size_t> order = it->second;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const PooledEvent& pa = predictions[a];
            const PooledEvent& pb = predictions[b];
            if (pa.score != pb.score) return pa.score > pb.score;
            if (pa.anchor != pb.anchor) return pa.anchor < pb.anchor;
            return pa.t < pb.t;
        });
        std::vector<char> used(truth_ids.size(), 0);
        double tp = 0.0, ap = 0.0;
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            const PooledEvent& p = predictions[order[rank]];
            std::size_t best = truth_ids.size();
            double best_gap = delta;
            for (std::size_t c = 0; c < truth_ids.size(); ++c) {
                if (used[c]) continue;
                const PooledEvent& g = truth[truth_ids[c]];
                if (g.anchor != p.anchor) continue;
                const double gap = std::abs(g.t - p.t);
                if (gap > delta) continue;
                if (best == truth_ids.size() || gap < best_gap ||
                    (gap == best_gap && g.t < truth[truth_ids[best]].t)) {
                    best = c;
                    best_gap = gap;
                }
            }
            if (best < truth_ids.size()) {
                used[best] = 1;
                tp += 1.0;
                ap += tp / static_cast<double>(rank + 1);
            }
        }
        ap_sum += ap / static_cast<double>(truth_ids.size());
    }
    return ap_sum / static_cast<double>(truth_by_label.size());
}

double label_entropy(const std::vector<std::uint32_t>& labels) {
    if (labels.empty()) {
        throw ValidationError("label entropy: empty pool");
    }
    std::map<std::uint32_t, std::size_t> counts;
    for (std::uint32_t l : labels) {
        counts[l] += 1;
    }
    const double n = static_cast<double>(labels.size());
    double h = 0.0;
    for (const auto& [label, count] : counts) {
        const double p = static_cast<double>(count) / n;
        h -= p * std::log(p);
    }
    return h;
}

DiffEntropy time_delta_diff_entropy(std::vector<double> deltas) {
    if (deltas.size() < 50) {
        throw ValidationError("time-delta entropy: need at least 50 samples, got " +
                              std::to_string(deltas.size()));
    }
    std::sort(deltas.begin(), deltas.end());
    if (deltas.front() == deltas.back()) {
        return {kEntropyFloor, true};
    }
    // Exact ties would give zero neighbor distances; spread them out.
    for (std::size_t i = 1; i < deltas.size(); ++i) {
        if (deltas[i] <= deltas[i - 1]) {
            deltas[i] = deltas[i - 1] + 1e-12;
        }
    }
    const std::size_t n = deltas.size();
    double log_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d;
        if (i == 0) {
            d = deltas[1] - deltas[0];
        } else if (i == n - 1) {
            d = deltas[n - 1] - deltas[n - 2];
        } else {
            d = std::min(deltas[i] - deltas[i - 1], deltas[i + 1] - deltas[i]);
        }
        log_sum += std::log(2.0 * d);
    }
    // psi(n) - psi(1) is the (n-1)-th harmonic number; summed small terms
    // first to keep the float error down.
    double harmonic = 0.0;
    for (std::size_t k = n - 1; k >= 1; --k) {
        harmonic += 1.0 / static_cast<double>(k);
    }
    return {harmonic + log_sum / static_cast<double>(n), false};
}

MetricReport evaluate_records(const std::vector<PredictionRecord>& records,
                              const std::vector<EventSequence>& dataset,
                              const EvalConfig& config) {
    if (records.empty()) {
        throw ValidationError("evaluate: no prediction records");
    }
    if (!(config.horizon > 0.0)) {
        throw ValidationError("evaluate: horizon must be positive");
    }
    std::unordered_map<std::string, const EventSequence*> by_id;
    for (const EventSequence& seq : dataset) {
        if (!by_id.emplace(seq.id, &seq).second) {
            throw ValidationError("evaluate: duplicate sequence id '" + seq.id + "'");
        }
    }

    std::vector<NextItemPrediction> next_pred, next_truth;
    std::vector<std::uint32_t> label_pool;
    std::vector<double> delta_pool;
    std::vector<PooledEvent> map_pred, map_truth;
    double otd_sum = 0.0;
    double length_sum = 0.0;

    for (std::size_t r = 0; r < records.size(); ++r) {
        const PredictionRecord& rec = records[r];
        auto it = by_id.find(rec.sequence_id);
        if (it == by_id.end()) {
            throw ValidationError("evaluate: unknown sequence id '" + rec.sequence_id + "'");
        }
        const EventSequence& seq = *it->second;
        if (rec.anchor_index >= seq.events.size()) {
            throw ValidationError("evaluate: anchor " + std::to_string(rec.anchor_index) +
                                  " out of range in sequence '" + rec.sequence_id + "'");
        }
        const double anchor = seq.events[rec.anchor_index].t;

        auto window = [&](const std::vector<ForecastEvent>& list, const char* what) {
            std::vector<ForecastEvent> kept;
            for (std::size_t i = 0; i < list.size(); ++i) {
                if (i > 0 && list[i].t < list[i - 1].t) {
                    throw ValidationError(std::string("evaluate: ") + what +
                                          " events out of order in sequence '" +
                                          rec.sequence_id + "'");
                }
                if (list[i].t > anchor && list[i].t <= anchor + config.horizon) {
                    kept.push_back(list[i]);
                }
            }
            return kept;
        };
        const std::vector<ForecastEvent> pred = window(rec.events, "forecast");
        const std::vector<ForecastEvent> ranked = window(rec.ranked, "ranked");
        std::vector<Event> gt;
        for (std::size_t i = rec.anchor_index + 1; i < seq.events.size(); ++i) {
            if (seq.events[i].t > anchor + config.horizon) break;
            gt.push_back(seq.events[i]);
        }

        length_sum += static_cast<double>(pred.size());
        double prev_t = anchor;
        for (const ForecastEvent& e : pred) {
            label_pool.push_back(e.label);
            delta_pool.push_back(e.t - prev_t);
            prev_t = e.t;
        }
        for (const ForecastEvent& e : ranked) {
            map_pred.push_back({r, e.t, e.label, e.score});
        }
        for (const Event& e : gt) {
            map_truth.push_back({r, e.t, e.label, 1.0});
        }

        std::vector<Event> otd_pred;
        for (const ForecastEvent& e : pred) {
            if (otd_pred.size() == config.slot_cap) break;
            otd_pred.push_back({e.t, e.label});
        }
        if (gt.size() > config.slot_cap) {
            gt.resize(config.slot_cap);
        }
        otd_sum += otd(otd_pred, gt, config.otd_delete_cost);

        if (rec.anchor_index + 1 < seq.events.size()) {
            next_pred.push_back(rec.next);
            next_truth.push_back(
                {seq.events[rec.anchor_index + 1].t - anchor, seq.events[rec.anchor_index + 1].label});
        }
    }

    MetricReport report;
    report.mean_length = length_sum / static_cast<double>(records.size());
    report.otd = otd_sum / static_cast<double>(records.size());
    report.t_map = t_map(map_pred, map_truth, config.t_map_delta);
    report.label_entropy = label_pool.empty() ? 0.0 : label_entropy(label_pool);
    if (delta_pool.size() < 50) {
        report.time_delta_diff_entropy = kEntropyFloor;
        report.time_entropy_degenerate = true;
    } else {
        const DiffEntropy h = time_delta_diff_entropy(std::move(delta_pool));
        report.time_delta_diff_entropy = h.nats;
        report.time_entropy_degenerate = h.degenerate;
    }
    const auto [accuracy, mae] = next_item_metrics(next_pred, next_truth);
    report.next_item_accuracy = accuracy;
    report.next_item_mae = mae;
    return report;
}

} // namespace detpp
