#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detpp/calibration.hpp"
#include "detpp/checkpoint.hpp"
#include "detpp/events.hpp"
#include "detpp/metrics.hpp"
#include "detpp/model.hpp"
#include "detpp/trainer.hpp"

namespace detpp {

struct PredictConfig {
    // Earliest prefix length that gets a forecast.
    std::size_t min_history = 1;
    // Safety cap on autoregressive decoding steps per anchor.
    std::size_t max_rollout_steps = 64;

    void validate() const;
};

// One record per anchor (every prefix of length >= min_history) per
// sequence, in dataset order. The anchor set is method-independent so the
// three methods stay comparable:
//   detpp    - events: calibrated threshold filtering; ranked: all K slots;
//              next: earliest retained event, else the top-scoring slot.
//   mae_ce   - events = ranked: autoregressive rollout over the horizon;
//              next: the head's raw (gap, label) readout at the anchor,
//              which exists even when the rollout is empty.
//   mae_ce_k - events = ranked: all K positional slots sorted by time,
//              scored by label confidence; next: slot 0's readout.
// For detpp a calibration state with observations on every slot is
// required; the other methods ignore it. Worker threads split the work by
// sequence and never change the output.
std::vector<PredictionRecord> predict_records(SequenceModel& model,
                                              const CalibrationState* calibration,
                                              const std::vector<EventSequence>& data,
                                              const PredictConfig& config,
                                              std::size_t threads = 1);

// JSONL, one record per line:
//   {"id": ..., "anchor_index": n, "events": [[t, l, score], ...],
//    "ranked": [...], "next": [dt, label]}
// Doubles are written in shortest round-trip form, so a dump read back is
// bit-identical to the records that produced it.
void write_prediction_dump(const std::vector<PredictionRecord>& records,
                           const std::string& path);
std::vector<PredictionRecord> read_prediction_dump(const std::string& path);

// The evaluation report as pretty-printed JSON with lexicographically
// sorted keys: every MetricReport field plus the metric knobs and the run
// seed. Carries no timing, so reports from identical runs are
// byte-identical.
std::string render_report_json(const MetricReport& report, const EvalConfig& config,
                               std::uint64_t seed);

// Entropy of the ground-truth label pool over the same evaluation windows
// the metrics use: every event inside (anchor, anchor + horizon] across all
// anchors with min_history observed events.
double truth_label_entropy(const std::vector<EventSequence>& dataset, double horizon,
                           std::size_t min_history = 1);

// The full synthetic comparison study: generate one bursty benchmark,
// train all three methods on it, forecast the test split, and evaluate.
struct ReproduceConfig {
    std::uint64_t seed = 7;
    std::size_t threads = 1;
    // When non-empty, per-method reports (report_<method>.json), training
    // logs, and the comparison table (table.txt) are written here.
    std::string out_dir;
};

struct MethodOutcome {
    Method method = Method::kDetpp;
    MetricReport report;
};

struct ReproduceResult {
    std::uint64_t seed = 0;
    double gt_label_entropy = 0.0;
    std::vector<MethodOutcome> outcomes; // detpp, mae_ce, mae_ce_k
    // Fixed-width comparison table, one row per metric, one column per
    // method. Deterministic given the outcomes.
    std::string table;
};

ReproduceResult run_reproduce(const ReproduceConfig& config);

} // namespace detpp
