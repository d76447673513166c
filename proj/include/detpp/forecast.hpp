#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "detpp/calibration.hpp"
#include "detpp/events.hpp"
#include "detpp/model.hpp"
#include "detpp/predictions.hpp"
#include "detpp/tape.hpp"

namespace detpp {

// One predicted event: absolute time, argmax label, and the presence score
// behind it (kept so score-ranked metrics can reuse the forecast).
struct ForecastEvent {
    double t = 0.0;
    std::uint32_t label = 0;
    double score = 0.5;
};

// Thresholded K-slot readout: slot j survives iff its presence score is at
// least the slot's calibrated threshold; survivors are sorted by predicted
// time with ties keeping slot order. Times are anchor-relative shifts made
// absolute; shifts can overshoot the horizon, and trimming to the
// evaluation window is the metrics layer's job, not done here.
std::vector<ForecastEvent> forecast(const Tape& tape, const PredictionSet& preds,
                                    double anchor, const CalibrationState& cal);

// Every slot, no thresholding, sorted the same way. Score-ranked metrics
// consume this and apply their own cutoffs.
std::vector<ForecastEvent> forecast_unfiltered_ranked(const Tape& tape,
                                                      const PredictionSet& preds,
                                                      double anchor);

// Decodes a next-event model by applying it to its own output: predict
// (dt, argmax label), append as if observed, advance the recurrent state,
// repeat. Stops once the next event would leave (anchor, anchor + horizon]
// or after max_steps events, whichever comes first; the anchor is the last
// prefix timestamp. Scores are the argmax label probabilities. Decoding is
// deterministic (point estimates, no sampling).
std::vector<ForecastEvent> autoregressive_rollout(SequenceModel& model,
                                                  const EventSequence& prefix,
                                                  double horizon,
                                                  std::size_t max_steps);

} // namespace detpp
