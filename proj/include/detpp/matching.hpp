#pragma once

#include <cstddef>
#include <vector>

#include "detpp/events.hpp"
#include "detpp/predictions.hpp"

namespace detpp {

// Injective map from target index to slot index plus the induced mask over
// all K slots.
struct Assignment {
    std::vector<std::size_t> slot_of_target;
    std::vector<bool> slot_matched;
};

// Exact minimum-cost assignment of T rows to K >= T columns (augmenting
// paths with potentials, O(T K^2)). Ties are broken toward lower column
// indices, scanning rows in order. An empty cost matrix yields an empty
// assignment; callers that know K extend the mask themselves.
Assignment hungarian(const std::vector<std::vector<double>>& cost);

// C[i][j] = |dt_i - t_shift_j| - log p_hat_j(l_i) - log o_hat_j + log(1 - o_hat_j)
// with dt_i the target's offset after the anchor. Built on the tape so
// gradients reach the slot outputs; shape [T, K]. Requires T >= 1.
Var build_cost_matrix(Tape& tape, const HorizonTarget& target, const PredictionSet& preds);

struct MatchingLossResult {
    Var loss;
    Assignment assignment;
};

// Training objective for the K-slot head: the minimum over injective
// alignments of the per-pair negative log-likelihood (unit-scale Laplace
// time term plus label cross-entropy) together with the presence BCE over
// all slots. The alignment is solved on detached values and held constant
// during backward. Presence terms are summed in value order so permuting
// slots cannot change the total even in the last bit.
MatchingLossResult matching_loss(Tape& tape, const HorizonTarget& target,
                                 const PredictionSet& preds);

// Position-aligned baseline objective: sum over i < T of
// |dt_i - t_shift_i| + cross_entropy(label_logits_i, l_i). Slots beyond the
// target length receive no loss; an empty target contributes exact zero.
Var positional_loss_next_k(Tape& tape, const HorizonTarget& target, const PredictionSet& preds);

} // namespace detpp
