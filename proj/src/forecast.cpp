#include "detpp/forecast.hpp"

#include <algorithm>
#include <string>

#include "detpp/errors.hpp"

namespace detpp {

namespace {

// Lowest index wins ties so decoding stays deterministic.
std::uint32_t argmax_row(const Tensor& probs, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
        if (probs.at(row, c) > probs.at(row, best)) {
            best = c;
        }
    }
    return static_cast<std::uint32_t>(best);
}

std::vector<ForecastEvent> read_slots(const Tape& tape, const PredictionSet& preds,
                                      double anchor) {
    const std::vector<double> scores = presence_probs(tape, preds);
    const std::vector<double> shifts = predicted_shifts(tape, preds);
    const Tensor probs = label_probs(tape, preds);
    std::vector<ForecastEvent> events(preds.slot_count);
    for (std::size_t j = 0; j < preds.slot_count; ++j) {
        events[j] = {anchor + shifts[j], argmax_row(probs, j), scores[j]};
    }
    return events;
}

void sort_by_time(std::vector<ForecastEvent>& events) {
    std::stable_sort(events.begin(), events.end(),
                     [](const ForecastEvent& a, const ForecastEvent& b) { return a.t < b.t; });
}

} // namespace

std::vector<ForecastEvent> forecast(const Tape& tape, const PredictionSet& preds,
                                    double anchor, const CalibrationState& cal) {
    if (cal.slot_count() != preds.slot_count) {
        throw ValidationError("forecast: calibration covers " + std::to_string(cal.slot_count()) +
                              " slots, predictions have " + std::to_string(preds.slot_count));
    }
    std::vector<ForecastEvent> slots = read_slots(tape, preds, anchor);
    std::vector<ForecastEvent> retained;
    for (std::size_t j = 0; j < slots.size(); ++j) {
        if (slots[j].score >= cal.threshold(j)) {
            retained.push_back(slots[j]);
        }
    }
    sort_by_time(retained);
    return retained;
}

std::vector<ForecastEvent> forecast_unfiltered_ranked(const Tape& tape,
                                                      const PredictionSet& preds,
                                                      double anchor) {
    std::vector<ForecastEvent> slots = read_slots(tape, preds, anchor);
    sort_by_time(slots);
    return slots;
}

std::vector<ForecastEvent> autoregressive_rollout(SequenceModel& model,
                                                  const EventSequence& prefix,
                                                  double horizon,
                                                  std::size_t max_steps) {
    if (model.method() != Method::kMaeCe) {
        throw ValidationError("rollout: needs a next-event model, got " +
                              method_to_string(model.method()));
    }
    if (max_steps < 1) {
        throw ValidationError("rollout: max_steps must be at least 1");
    }
    Tape tape;
    ModelRun run(tape, model);
    Var h = run.encode(prefix).back();
    const double anchor = prefix.events.back().t;

    std::vector<ForecastEvent> events;
    double now = anchor;
    while (events.size() < max_steps) {
        const PredictionSet preds = run.predict(h);
        const double dt = predicted_shifts(tape, preds)[0];
        const Tensor probs = label_probs(tape, preds);
        const std::uint32_t label = argmax_row(probs, 0);
        const double t_next = now + dt;
        if (t_next > anchor + horizon) {
            break;
        }
        events.push_back({t_next, label, probs.at(std::size_t{0}, label)});
        h = run.step(h, label, dt);
        now = t_next;
    }
    return events;
}

} // namespace detpp
