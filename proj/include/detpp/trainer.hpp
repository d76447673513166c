#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detpp/calibration.hpp"
#include "detpp/checkpoint.hpp"
#include "detpp/events.hpp"
#include "detpp/model.hpp"
#include "detpp/predictions.hpp"
#include "detpp/tape.hpp"

namespace detpp {

// Adam moments plus the shared step counter, one tensor pair per parameter
// in the model's canonical order.
struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

AdamState make_adam_state(const std::vector<Parameter*>& params);

// One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8) applied
// in place. Reads the accumulated gradients and leaves them untouched; the
// caller decides when to zero them.
void adam_step(const std::vector<Parameter*>& params, AdamState& state, double learning_rate);

// Rescales all gradients by min(1, max_norm / ||g||_2) where the norm runs
// over every parameter jointly. Returns the factor that was applied.
double clip_gradients(const std::vector<Parameter*>& params, double max_norm);

// Objective for the single-slot baseline: absolute error on the gap to the
// true next event plus cross-entropy on its label.
Var next_event_loss(Tape& tape, double dt_true, std::uint32_t label, const PredictionSet& preds);

struct TrainConfig {
    Method method = Method::kDetpp;
    EncoderConfig model;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double grad_clip_norm = 1.0;
    std::uint64_t seed = 1;
    // Earliest prefix length allowed to act as an anchor during training.
    std::size_t min_history = 1;
    // Epochs trained before presence scores start feeding the calibrator.
    std::size_t calibration_warmup_epochs = 1;
    // Consecutive epochs without a validation improvement before stopping.
    std::size_t early_stop_patience = 5;

    void validate() const;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_seconds = 0.0;
};

// Renders the per-epoch log with an epoch,train_loss,val_loss,wall_seconds
// header row.
std::string training_log_csv(const std::vector<EpochLog>& log);

struct TrainResult {
    // Parameters from the epoch with the lowest validation loss, ready for
    // inference. For the K-slot method its calibration is measured fresh
    // against exactly these parameters (see calibrate_presence); it carries
    // no optimizer state.
    Checkpoint best;
    // State after the final epoch, including optimizer moments and the
    // best-epoch snapshot, so training can resume exactly where it stopped.
    Checkpoint last;
    // One row per epoch trained by this call.
    std::vector<EpochLog> log;
};

// Mean per-anchor loss of the model over a dataset, using the method's own
// anchor policy. No gradients are produced.
double dataset_loss(SequenceModel& model, const std::vector<EventSequence>& data,
                    const TrainConfig& config, std::size_t threads = 1);

// Full training run. Mini-batches are drawn in a seeded shuffle order each
// epoch, per-anchor losses are averaged per batch, gradients are clipped to
// a global norm, and parameters follow Adam. The K-slot method additionally
// feeds (slot, presence score, matched) triples to the threshold calibrator
// once the warm-up epochs have passed, and initializes the presence biases
// from the mean target length before the first epoch. That streaming state
// travels with `last` so a resumed run continues it exactly; `best` instead
// carries a calibrate_presence pass over the training set, measured against
// the best-epoch weights themselves.
//
// `resume` continues from a checkpoint produced by a previous run with the
// same config; `config.epochs` counts total epochs including the resumed
// ones. Results are bit-identical for a fixed (config, seed, datasets)
// triple regardless of `threads`, because per-sequence contributions are
// always reduced in dataset order.
TrainResult train(const TrainConfig& config,
                  const std::vector<EventSequence>& train_set,
                  const std::vector<EventSequence>& val_set,
                  const Checkpoint* resume = nullptr,
                  std::size_t threads = 1);

// Measures presence-threshold calibration for a trained K-slot model with
// its weights held fixed: one matching pass over `data`, feeding every
// (slot, presence score, matched) triple in dataset order. Scores observed
// this way come from the same weights inference will use, unlike the
// streaming state accumulated while training, whose early observations were
// produced by parameters that have since moved on. Throws ValidationError
// for other methods.
CalibrationState calibrate_presence(SequenceModel& model,
                                    const std::vector<EventSequence>& data,
                                    std::size_t min_history, std::uint64_t seed);

} // namespace detpp
