#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detpp/events.hpp"
#include "detpp/predictions.hpp"
#include "detpp/tape.hpp"

namespace detpp {

// The three trainable methods. They share the encoder and differ only in
// head shape and loss.
enum class Method { kDetpp, kMaeCe, kMaeCeK };

Method method_from_string(const std::string& name);
std::string method_to_string(Method method);

struct EncoderConfig {
    std::size_t label_count = 2;
    std::size_t embed_dim = 16;
    std::size_t hidden_dim = 64;
    std::size_t slot_count = 32; // K
    double horizon = 1.0;        // H

    void validate() const;
};

// Owns the parameters of one method: a single-layer GRU over
// [label embedding ; log(1 + dt)] inputs plus an affine head. All work
// happens through ModelRun, which binds the parameters onto a tape.
class SequenceModel {
public:
    SequenceModel(Method method, EncoderConfig config, std::uint64_t seed);

    Method method() const { return method_; }
    const EncoderConfig& config() const { return config_; }

    // Registration order is the canonical parameter order for the
    // optimizer and the checkpoint.
    std::vector<Parameter*> parameters();

    // Initializes every presence logit bias to the given value (slot
    // symmetry breaking before training).
    void set_presence_bias(double logit);

    std::size_t head_output_dim() const;

private:
    friend class ModelRun;

    Method method_;
    EncoderConfig config_;
    Parameter embedding_; // [L, E]
    Parameter gru_w_;     // [3H, E+1], row blocks: reset, update, candidate
    Parameter gru_u_;     // [3H, H]
    Parameter gru_bi_;    // [3H]
    Parameter gru_bh_;    // [3H]
    Parameter head_w_;    // [head_output_dim, H]
    Parameter head_b_;    // [head_output_dim]
};

// Execution of one model on one tape. Binds each parameter once so
// repeated steps and head calls share the same tape nodes.
class ModelRun {
public:
    ModelRun(Tape& tape, SequenceModel& model);

    Var initial_state(); // zero hidden state

    // One GRU step. dt is the raw gap to the previous event; the log(1+dt)
    // transform is applied here.
    Var step(Var h_prev, std::uint32_t label, double dt);

    // Hidden states h_1..h_n for a non-empty sequence, where h_i has seen
    // events 1..i and dt_1 = 0.
    std::vector<Var> encode(const EventSequence& seq);

    // The method's head applied to a hidden state. For the K-slot method
    // the result carries presence logits and horizon-scaled time shifts;
    // the baseline heads leave o_logits invalid and use a plain softplus
    // shift.
    PredictionSet predict(Var h);

private:
    Tape* tape_;
    SequenceModel* model_;
    Var embedding_, w_, u_, bi_, bh_, head_w_, head_b_;
    Var ones_hidden_;
};

} // namespace detpp
