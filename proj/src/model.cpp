#include "detpp/model.hpp"

#include <cmath>

#include "detpp/errors.hpp"
#include "detpp/rng.hpp"

namespace detpp {

Method method_from_string(const std::string& name) {
    if (name == "detpp") return Method::kDetpp;
    if (name == "mae_ce") return Method::kMaeCe;
    if (name == "mae_ce_k") return Method::kMaeCeK;
    throw ValidationError("unknown method '" + name + "' (expected detpp, mae_ce or mae_ce_k)");
}

std::string method_to_string(Method method) {
    switch (method) {
        case Method::kDetpp: return "detpp";
        case Method::kMaeCe: return "mae_ce";
        case Method::kMaeCeK: return "mae_ce_k";
    }
    return "?";
}

void EncoderConfig::validate() const {
    if (label_count < 1 || embed_dim < 1 || hidden_dim < 1 || slot_count < 1) {
        throw ValidationError("encoder config: dimensions must be at least 1");
    }
    if (!(horizon > 0.0)) {
        throw ValidationError("encoder config: horizon must be positive");
    }
}

std::size_t SequenceModel::head_output_dim() const {
    const std::size_t l = config_.label_count;
    const std::size_t k = config_.slot_count;
    switch (method_) {
        case Method::kDetpp: return k * (2 + l);
        case Method::kMaeCe: return 1 + l;
        case Method::kMaeCeK: return k * (1 + l);
    }
    return 0;
}

namespace {

void fill_uniform(Tensor& t, Rng& rng, double bound) {
    for (double& x : t.data) {
        x = rng.uniform(-bound, bound);
    }
}

} // namespace

SequenceModel::SequenceModel(Method method, EncoderConfig config, std::uint64_t seed)
    : method_(method), config_(config) {
    config_.validate();
    const std::size_t l = config_.label_count;
    const std::size_t e = config_.embed_dim;
    const std::size_t h = config_.hidden_dim;

    embedding_ = Parameter("embedding", Tensor::zeros({l, e}));
    gru_w_ = Parameter("gru_w", Tensor::zeros({3 * h, e + 1}));
    gru_u_ = Parameter("gru_u", Tensor::zeros({3 * h, h}));
    gru_bi_ = Parameter("gru_bi", Tensor::zeros({3 * h}));
    gru_bh_ = Parameter("gru_bh", Tensor::zeros({3 * h}));
    head_w_ = Parameter("head_w", Tensor::zeros({head_output_dim(), h}));
    head_b_ = Parameter("head_b", Tensor::zeros({head_output_dim()}));

    Rng emb_rng = rng_stream({seed, kStreamInit, 1});
    for (double& x : embedding_.value.data) {
        x = emb_rng.normal();
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    Rng w_rng = rng_stream({seed, kStreamInit, 2});
    fill_uniform(gru_w_.value, w_rng, bound);
    Rng u_rng = rng_stream({seed, kStreamInit, 3});
    fill_uniform(gru_u_.value, u_rng, bound);
    Rng bi_rng = rng_stream({seed, kStreamInit, 4});
    fill_uniform(gru_bi_.value, bi_rng, bound);
    Rng bh_rng = rng_stream({seed, kStreamInit, 5});
    fill_uniform(gru_bh_.value, bh_rng, bound);
    Rng head_rng = rng_stream({seed, kStreamInit, 6});
    fill_uniform(head_w_.value, head_rng, bound);
    // head bias stays zero; the presence part may be reset by the trainer
}

std::vector<Parameter*> SequenceModel::parameters() {
    return {&embedding_, &gru_w_, &gru_u_, &gru_bi_, &gru_bh_, &head_w_, &head_b_};
}

void SequenceModel::set_presence_bias(double logit) {
    if (method_ != Method::kDetpp) {
        throw ValidationError("presence bias only exists on the K-slot head");
    }
    for (std::size_t j = 0; j < config_.slot_count; ++j) {
        head_b_.value.data[j] = logit;
    }
}

ModelRun::ModelRun(Tape& tape, SequenceModel& model) : tape_(&tape), model_(&model) {
    embedding_ = tape.param(model.embedding_);
    w_ = tape.param(model.gru_w_);
    u_ = tape.param(model.gru_u_);
    bi_ = tape.param(model.gru_bi_);
    bh_ = tape.param(model.gru_bh_);
    head_w_ = tape.param(model.head_w_);
    head_b_ = tape.param(model.head_b_);
    ones_hidden_ = tape.constant(Tensor::full({model.config_.hidden_dim}, 1.0));
}

Var ModelRun::initial_state() {
    return tape_->constant(Tensor::zeros({model_->config_.hidden_dim}));
}

Var ModelRun::step(Var h_prev, std::uint32_t label, double dt) {
    if (label >= model_->config_.label_count) {
        throw ValidationError("step: label " + std::to_string(label) +
                              " outside vocabulary of size " +
                              std::to_string(model_->config_.label_count));
    }
    if (!(dt >= 0.0)) {
        throw ValidationError("step: negative time gap");
    }
    Tape& tape = *tape_;
    const std::size_t e = model_->config_.embed_dim;
    const std::size_t h = model_->config_.hidden_dim;

    const Var emb = tape.reshape(tape.index_select(embedding_, 0, {label}), {e});
    const Var dt_feat = tape.constant(Tensor::vector({std::log1p(dt)}));
    const Var x = tape.concat({emb, dt_feat});

    const Var gi = tape.add(tape.matmul(w_, x), bi_);
    const Var gh = tape.add(tape.matmul(u_, h_prev), bh_);

    const Var reset = tape.sigmoid(tape.add(tape.slice(gi, 0, h), tape.slice(gh, 0, h)));
    const Var update =
        tape.sigmoid(tape.add(tape.slice(gi, h, 2 * h), tape.slice(gh, h, 2 * h)));
    const Var candidate = tape.tanh(tape.add(
        tape.slice(gi, 2 * h, 3 * h), tape.mul(reset, tape.slice(gh, 2 * h, 3 * h))));

    // h' = (1 - update) * candidate + update * h_prev
    return tape.add(tape.mul(tape.sub(ones_hidden_, update), candidate),
                    tape.mul(update, h_prev));
}

std::vector<Var> ModelRun::encode(const EventSequence& seq) {
    if (seq.events.empty()) {
        throw ValidationError("encode: empty sequence '" + seq.id + "'");
    }
    std::vector<Var> states;
    states.reserve(seq.events.size());
    Var h = initial_state();
    double prev_t = seq.events[0].t;
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const double dt = i == 0 ? 0.0 : seq.events[i].t - prev_t;
        h = step(h, seq.events[i].label, dt);
        states.push_back(h);
        prev_t = seq.events[i].t;
    }
    return states;
}

PredictionSet ModelRun::predict(Var h) {
    Tape& tape = *tape_;
    const std::size_t l = model_->config_.label_count;
    const std::size_t k = model_->config_.slot_count;
    const Var out = tape.add(tape.matmul(head_w_, h), head_b_);

    PredictionSet preds;
    preds.label_count = l;
    switch (model_->method_) {
        case Method::kDetpp: {
            preds.slot_count = k;
            preds.o_logits = tape.slice(out, 0, k);
            // zero raw output lands at horizon / 2
            const double factor = model_->config_.horizon / (2.0 * softplus_value(0.0));
            preds.t_shifts = tape.scale(tape.softplus(tape.slice(out, k, 2 * k)), factor);
            preds.label_logits = tape.reshape(tape.slice(out, 2 * k, (2 + l) * k), {k, l});
            break;
        }
        case Method::kMaeCe: {
            preds.slot_count = 1;
            preds.t_shifts = tape.softplus(tape.slice(out, 0, 1));
            preds.label_logits = tape.reshape(tape.slice(out, 1, 1 + l), {1, l});
            break;
        }
        case Method::kMaeCeK: {
            preds.slot_count = k;
            preds.t_shifts = tape.softplus(tape.slice(out, 0, k));
            preds.label_logits = tape.reshape(tape.slice(out, k, (1 + l) * k), {k, l});
            break;
        }
    }
    return preds;
}

} // namespace detpp
