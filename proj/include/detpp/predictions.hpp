#pragma once

#include <vector>

#include "detpp/tape.hpp"

namespace detpp {

// K prediction slots living on a tape. o_logits [K] are presence logits,
// t_shifts [K] are predicted offsets after the anchor in time units
// (already mapped through their positive parameterization), label_logits
// [K, L] are unnormalized label scores per slot. Heads without a presence
// output leave o_logits invalid.
struct PredictionSet {
    std::size_t slot_count = 0;
    std::size_t label_count = 0;
    Var o_logits;
    Var t_shifts;
    Var label_logits;
};

// Detached probability views.
std::vector<double> presence_probs(const Tape& tape, const PredictionSet& preds);
std::vector<double> predicted_shifts(const Tape& tape, const PredictionSet& preds);
// Row-softmax of the label logits, shape [K, L].
Tensor label_probs(const Tape& tape, const PredictionSet& preds);

} // namespace detpp
