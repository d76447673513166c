#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "detpp/model.hpp"
#include "detpp/tensor.hpp"

namespace detpp {

// Optimizer and bookkeeping state carried by resumable checkpoints so a
// split training run continues bit-exactly where it stopped. Moment and
// snapshot vectors follow the model's canonical parameter order.
struct TrainerState {
    std::uint64_t adam_step = 0;
    std::uint64_t next_epoch = 0;
    double best_val_loss = 0.0;
    std::uint64_t epochs_since_improvement = 0;
    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;
    std::vector<Tensor> best_params;
};

// On-disk model snapshot: method, dimensions, named parameter tensors with
// 64-bit values, the calibration section (empty when the method has none),
// and an optional trainer section for resuming.
struct Checkpoint {
    Method method = Method::kDetpp;
    EncoderConfig config;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::uint8_t> calibration;
    std::optional<TrainerState> trainer;
};

// Binary format versioned by the leading magic string "DETPP1". Bad magic,
// unknown versions, and truncation raise ParseError; file-system failures
// raise IoError.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Copies a model's parameters (and optional calibration bytes) into a
// fresh in-memory checkpoint.
Checkpoint snapshot_model(SequenceModel& model, const std::vector<std::uint8_t>& calibration);

// Builds the model a checkpoint describes and loads its weights. Name or
// shape disagreements with the stored tensors raise ValidationError.
SequenceModel model_from_checkpoint(const Checkpoint& ckpt);

// Overwrites an existing model's parameters from the checkpoint, with the
// same name and shape validation.
void restore_model(const Checkpoint& ckpt, SequenceModel& model);

} // namespace detpp
