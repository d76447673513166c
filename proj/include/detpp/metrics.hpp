#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "detpp/events.hpp"
#include "detpp/forecast.hpp"

namespace detpp {

// One row of the evaluation table. Entropies are in nats; the differential
// entropy of time deltas may legitimately be negative, and collapses to
// kEntropyFloor with the degenerate flag set when the forecasts repeat a
// single value (or give too few deltas to estimate from).
struct MetricReport {
    double mean_length = 0.0;
    double label_entropy = 0.0;
    double time_delta_diff_entropy = 0.0;
    bool time_entropy_degenerate = false;
    double next_item_accuracy = 0.0;
    double next_item_mae = 0.0;
    double otd = 0.0;
    double t_map = 0.0;
};

// Point estimate of the single event right after an anchor.
struct NextItemPrediction {
    double dt = 0.0;
    std::uint32_t label = 0;
};

// Reduces a horizon forecast to a next-event estimate: the earliest
// retained event wins; with nothing retained, the highest-scoring slot of
// the unfiltered readout stands in (earliest such slot on score ties).
NextItemPrediction next_event_choice(const std::vector<ForecastEvent>& retained,
                                     const std::vector<ForecastEvent>& all_ranked,
                                     double anchor);

// (accuracy, mean absolute time error) over aligned prediction/truth
// pairs. Throws ValidationError when the lists are empty or mismatched.
std::pair<double, double> next_item_metrics(const std::vector<NextItemPrediction>& predicted,
                                            const std::vector<NextItemPrediction>& truth);

// Minimum cost of editing one event list into the other, where matching
// two same-label events costs their time distance (capped at twice the
// delete cost, so matching never beats deleting both) and every unmatched
// event on either side costs delete_cost. Solved exactly as an assignment
// problem. Inputs are the windowed lists; delete_cost must be positive.
double otd(const std::vector<Event>& predicted, const std::vector<Event>& truth,
           double delete_cost);

// An event pooled across evaluation anchors; anchor identifies the window
// it came from so cross-window matches are impossible.
struct PooledEvent {
    std::size_t anchor = 0;
    double t = 0.0;
    std::uint32_t label = 0;
    double score = 1.0;
};

// Detection-style mean average precision over labels present in the ground
// truth. Per label, predictions are ranked by descending score and matched
// greedily to the nearest free same-label, same-window truth event within
// |dt| <= delta; average precision is computed from the resulting hit
// ranks. Returns 0 when the truth pool is empty.
double t_map(std::vector<PooledEvent> predictions, const std::vector<PooledEvent>& truth,
             double delta);

// Shannon entropy (nats) of the empirical label distribution. Throws
// ValidationError on an empty pool.
double label_entropy(const std::vector<std::uint32_t>& labels);

// Reported when the nearest-neighbor entropy estimate degenerates.
inline constexpr double kEntropyFloor = -30.0;

struct DiffEntropy {
    double nats = 0.0;
    bool degenerate = false;
};

// Kozachenko-Leonenko 1-nearest-neighbor differential entropy estimate of
// a sample of time deltas. Exact ties are perturbed by 1e-12 so neighbor
// distances stay positive; an all-constant sample short-circuits to the
// floor with the degenerate flag. Needs at least 50 samples.
DiffEntropy time_delta_diff_entropy(std::vector<double> deltas);

// Everything the evaluator needs to know about one anchor's forecast.
// `events` is the method's horizon forecast (already time-sorted) and
// drives the edit distance, length, and diversity metrics. `ranked` is the
// unthresholded per-slot readout driving the score-ranked detection metric
// (identical to `events` for methods without presence filtering). `next`
// is the method's next-event reduction, computed at prediction time.
struct PredictionRecord {
    std::string sequence_id;
    std::size_t anchor_index = 0;
    std::vector<ForecastEvent> events;
    std::vector<ForecastEvent> ranked;
    NextItemPrediction next;
};

struct EvalConfig {
    double horizon = 1.0;
    std::size_t slot_cap = 1;      // per-side event cap for the edit-distance metric
    double otd_delete_cost = 1.0;
    double t_map_delta = 0.1;
};

// Folds per-anchor records against their ground-truth windows into one
// report. Forecast events beyond anchor + horizon are dropped here (the
// forecaster deliberately does not clip). Empty pools degrade gracefully:
// zero label entropy and a degenerate-flagged floor time entropy, so a run
// with all-empty forecasts still reports cleanly.
MetricReport evaluate_records(const std::vector<PredictionRecord>& records,
                              const std::vector<EventSequence>& dataset,
                              const EvalConfig& config);

} // namespace detpp
