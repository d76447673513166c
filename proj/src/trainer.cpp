#include "detpp/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <thread>
#include <utility>

#include "detpp/calibration.hpp"
#include "detpp/errors.hpp"
#include "detpp/matching.hpp"
#include "detpp/rng.hpp"

namespace detpp {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct CalibObservation {
    std::size_t slot = 0;
    double score = 0.0;
    bool matched = false;
};

// Everything one sequence contributes to a batch: its summed anchor loss,
// its anchor count, optionally its gradient of (scale * loss sum), and the
// calibration triples gathered along the way. Keeping contributions
// per-sequence lets the caller reduce them in dataset order, which is what
// makes results independent of the worker count.
struct SequenceWork {
    double loss_sum = 0.0;
    std::size_t anchor_count = 0;
    std::vector<Tensor> grads;
    std::vector<CalibObservation> calib;
};

std::size_t anchor_count_for(Method method, std::size_t length, std::size_t min_history) {
    const std::size_t first = min_history - 1;
    if (method == Method::kMaeCe) {
        // The single-slot baseline needs a true successor.
        return length >= first + 2 ? length - first - 1 : 0;
    }
    return length > first ? length - first : 0;
}

SequenceWork process_sequence(SequenceModel& model, const EventSequence& seq,
                              const TrainConfig& config, double scale, bool want_grads,
                              bool want_calib) {
    SequenceWork out;
    if (anchor_count_for(config.method, seq.events.size(), config.min_history) == 0) {
        return out;
    }

    Tape tape;
    ModelRun run(tape, model);
    const std::vector<Var> states = run.encode(seq);

    std::vector<Var> losses;
    if (config.method == Method::kMaeCe) {
        for (std::size_t n = config.min_history - 1; n + 1 < seq.events.size(); ++n) {
            const double dt = seq.events[n + 1].t - seq.events[n].t;
            PredictionSet preds = run.predict(states[n]);
            losses.push_back(next_event_loss(tape, dt, seq.events[n + 1].label, preds));
        }
    } else {
        const auto targets = extract_horizon_targets(seq, config.model.horizon,
                                                     config.model.slot_count,
                                                     config.min_history);
        for (const auto& [anchor_index, target] : targets) {
            PredictionSet preds = run.predict(states[anchor_index]);
            if (config.method == Method::kDetpp) {
                MatchingLossResult result = matching_loss(tape, target, preds);
                losses.push_back(result.loss);
                if (want_calib) {
                    const std::vector<double> scores = presence_probs(tape, preds);
                    for (std::size_t j = 0; j < scores.size(); ++j) {
                        out.calib.push_back({j, scores[j], result.assignment.slot_matched[j]});
                    }
                }
            } else {
                losses.push_back(positional_loss_next_k(tape, target, preds));
            }
        }
    }

    out.anchor_count = losses.size();
    Var total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) {
        total = tape.add(total, losses[i]);
    }
    out.loss_sum = tape.scalar_value(total);

    if (want_grads) {
        const std::vector<Parameter*> params = model.parameters();
        for (Parameter* p : params) {
            p->zero_grad();
        }
        tape.backward(tape.scale(total, scale));
        out.grads.reserve(params.size());
        for (Parameter* p : params) {
            out.grads.push_back(p->grad);
            p->zero_grad();
        }
    }
    return out;
}

// Runs process_sequence over a batch, fanned out over up to `threads`
// workers. Each worker computes on its own copy of the model, so parameter
// gradients never race; results land in per-sequence slots and the caller
// folds them in index order.
std::vector<SequenceWork> run_batch(SequenceModel& model,
                                    const std::vector<const EventSequence*>& batch,
                                    const TrainConfig& config, double scale, bool want_grads,
                                    bool want_calib, std::size_t threads) {
    std::vector<SequenceWork> works(batch.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, batch.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            works[i] = process_sequence(model, *batch[i], config, scale, want_grads, want_calib);
        }
        return works;
    }

    std::atomic<std::size_t> cursor{0};
    std::vector<std::exception_ptr> failures(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                SequenceModel local(model);
                for (;;) {
                    const std::size_t i = cursor.fetch_add(1);
                    if (i >= batch.size()) {
                        break;
                    }
                    works[i] =
                        process_sequence(local, *batch[i], config, scale, want_grads, want_calib);
                }
            } catch (...) {
                failures[w] = std::current_exception();
            }
        });
    }
    for (std::thread& t : pool) {
        t.join();
    }
    for (const std::exception_ptr& e : failures) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return works;
}

std::vector<Tensor> copy_values(const std::vector<Parameter*>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Parameter* p : params) {
        out.push_back(p->value);
    }
    return out;
}

} // namespace

AdamState make_adam_state(const std::vector<Parameter*>& params) {
    AdamState state;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Parameter* p : params) {
        state.m.push_back(Tensor::zeros(p->value.shape));
        state.v.push_back(Tensor::zeros(p->value.shape));
    }
    return state;
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state, double learning_rate) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ValidationError("optimizer state does not match the parameter list");
    }
    if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
        throw ValidationError("learning rate must be finite and non-negative");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double m_correction = 1.0 - std::pow(kBeta1, t);
    const double v_correction = 1.0 - std::pow(kBeta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        if (state.m[i].shape != p.value.shape) {
            throw ValidationError("optimizer state shape mismatch for '" + p.name + "'");
        }
        for (std::size_t k = 0; k < p.value.data.size(); ++k) {
            const double g = p.grad.data[k];
            double& m = state.m[i].data[k];
            double& v = state.v[i].data[k];
            m = kBeta1 * m + (1.0 - kBeta1) * g;
            v = kBeta2 * v + (1.0 - kBeta2) * g * g;
            const double m_hat = m / m_correction;
            const double v_hat = v / v_correction;
            p.value.data[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEps);
        }
    }
}

double clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
    if (!std::isfinite(max_norm) || max_norm <= 0.0) {
        throw ValidationError("gradient clip norm must be positive");
    }
    double sum_sq = 0.0;
    for (const Parameter* p : params) {
        for (double g : p->grad.data) {
            sum_sq += g * g;
        }
    }
    const double norm = std::sqrt(sum_sq);
    if (!std::isfinite(norm)) {
        throw NumericError("gradient norm is not finite");
    }
    if (norm <= max_norm) {
        return 1.0;
    }
    const double scale = max_norm / norm;
    for (Parameter* p : params) {
        for (double& g : p->grad.data) {
            g *= scale;
        }
    }
    return scale;
}

Var next_event_loss(Tape& tape, double dt_true, std::uint32_t label, const PredictionSet& preds) {
    if (preds.slot_count != 1) {
        throw ValidationError("next-event loss needs a single-slot head");
    }
    if (label >= preds.label_count) {
        throw ValidationError("next-event label out of range");
    }
    if (!std::isfinite(dt_true) || dt_true < 0.0) {
        throw ValidationError("next-event gap must be finite and non-negative");
    }
    Var time_err = tape.abs(tape.sub(preds.t_shifts, tape.constant(Tensor::vector({dt_true}))));
    Var log_probs = tape.reshape(tape.log_softmax(preds.label_logits), {preds.label_count});
    Var nll = tape.neg(tape.index_select(log_probs, 0, {label}));
    return tape.add(tape.sum(time_err), tape.sum(nll));
}

void TrainConfig::validate() const {
    model.validate();
    if (epochs == 0) {
        throw ValidationError("epochs must be positive");
    }
    if (batch_size == 0) {
        throw ValidationError("batch size must be positive");
    }
    if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
        throw ValidationError("learning rate must be finite and non-negative");
    }
    if (!std::isfinite(grad_clip_norm) || grad_clip_norm <= 0.0) {
        throw ValidationError("gradient clip norm must be positive");
    }
    if (min_history == 0) {
        throw ValidationError("min history must be at least 1");
    }
    if (early_stop_patience == 0) {
        throw ValidationError("early stop patience must be at least 1");
    }
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,val_loss,wall_seconds\n";
    char row[160];
    for (const EpochLog& e : log) {
        std::snprintf(row, sizeof(row), "%zu,%.9g,%.9g,%.3f\n", e.epoch, e.train_loss, e.val_loss,
                      e.wall_seconds);
        out += row;
    }
    return out;
}

double dataset_loss(SequenceModel& model, const std::vector<EventSequence>& data,
                    const TrainConfig& config, std::size_t threads) {
    std::vector<const EventSequence*> all;
    all.reserve(data.size());
    for (const EventSequence& seq : data) {
        all.push_back(&seq);
    }
    const std::vector<SequenceWork> works =
        run_batch(model, all, config, 0.0, false, false, threads);
    double loss_sum = 0.0;
    std::size_t anchors = 0;
    for (const SequenceWork& w : works) {
        loss_sum += w.loss_sum;
        anchors += w.anchor_count;
    }
    if (anchors == 0) {
        throw ValidationError("dataset holds no anchors under the configured min history");
    }
    return loss_sum / static_cast<double>(anchors);
}

TrainResult train(const TrainConfig& config, const std::vector<EventSequence>& train_set,
                  const std::vector<EventSequence>& val_set, const Checkpoint* resume,
                  std::size_t threads) {
    config.validate();
    if (train_set.empty()) {
        throw ValidationError("training set is empty");
    }
    if (val_set.empty()) {
        throw ValidationError("validation set is empty");
    }
    for (const EventSequence& seq : train_set) {
        validate_sequence(seq, config.model.label_count);
    }
    for (const EventSequence& seq : val_set) {
        validate_sequence(seq, config.model.label_count);
    }
    std::size_t total_train_anchors = 0;
    for (const EventSequence& seq : train_set) {
        total_train_anchors += anchor_count_for(config.method, seq.events.size(),
                                                config.min_history);
    }
    if (total_train_anchors == 0) {
        throw ValidationError("training set holds no anchors under the configured min history");
    }

    SequenceModel model(config.method, config.model, config.seed);
    const std::vector<Parameter*> params = model.parameters();
    AdamState adam = make_adam_state(params);
    std::optional<CalibrationState> calib;
    if (config.method == Method::kDetpp) {
        calib.emplace(config.model.slot_count, config.seed);
    }

    std::size_t start_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t stall = 0;
    std::vector<Tensor> best_params;

    if (resume != nullptr) {
        if (resume->method != config.method) {
            throw ValidationError("resume checkpoint was trained with method '" +
                                  method_to_string(resume->method) + "'");
        }
        const EncoderConfig& rc = resume->config;
        if (rc.label_count != config.model.label_count || rc.embed_dim != config.model.embed_dim ||
            rc.hidden_dim != config.model.hidden_dim ||
            rc.slot_count != config.model.slot_count || rc.horizon != config.model.horizon) {
            throw ValidationError("resume checkpoint model dimensions do not match the config");
        }
        if (!resume->trainer.has_value()) {
            throw ValidationError("checkpoint carries no optimizer state to resume from");
        }
        restore_model(*resume, model);
        const TrainerState& ts = *resume->trainer;
        if (ts.adam_m.size() != params.size() || ts.adam_v.size() != params.size()) {
            throw ValidationError("resume checkpoint optimizer state has wrong tensor count");
        }
        adam.step = ts.adam_step;
        adam.m = ts.adam_m;
        adam.v = ts.adam_v;
        start_epoch = static_cast<std::size_t>(ts.next_epoch);
        best_val = ts.best_val_loss;
        stall = static_cast<std::size_t>(ts.epochs_since_improvement);
        best_params = ts.best_params;
        if (config.method == Method::kDetpp) {
            calib = CalibrationState::deserialize(resume->calibration);
        }
        if (start_epoch >= config.epochs) {
            throw ValidationError("checkpoint has already completed " +
                                  std::to_string(start_epoch) +
                                  " epochs; raise epochs to continue");
        }
    } else if (config.method == Method::kDetpp) {
        // Break slot symmetry: start every presence probability at the mean
        // number of in-horizon events per slot, capped to [0.01, 0.5].
        double target_events = 0.0;
        for (const EventSequence& seq : train_set) {
            for (const auto& [anchor_index, target] :
                 extract_horizon_targets(seq, config.model.horizon, config.model.slot_count,
                                         config.min_history)) {
                (void)anchor_index;
                target_events += static_cast<double>(target.events.size());
            }
        }
        const double mean_len = target_events / static_cast<double>(total_train_anchors);
        const double p = std::max(0.01, std::min(0.5, mean_len /
                                                          static_cast<double>(
                                                              config.model.slot_count)));
        model.set_presence_bias(std::log(p / (1.0 - p)));
    }

    std::vector<EpochLog> log;
    std::vector<std::size_t> order(train_set.size());
    std::size_t epochs_done = start_epoch;

    for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = rng_stream({config.seed, kStreamShuffle, epoch});
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i));
            std::swap(order[i - 1], order[j]);
        }
        const bool observe =
            config.method == Method::kDetpp && epoch >= config.calibration_warmup_epochs;

        double epoch_loss_sum = 0.0;
        std::size_t epoch_anchors = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            std::vector<const EventSequence*> batch;
            batch.reserve(end - begin);
            std::size_t batch_anchors = 0;
            for (std::size_t i = begin; i < end; ++i) {
                const EventSequence& seq = train_set[order[i]];
                batch.push_back(&seq);
                batch_anchors += anchor_count_for(config.method, seq.events.size(),
                                                  config.min_history);
            }
            if (batch_anchors == 0) {
                continue;
            }

            const std::size_t batch_index = begin / config.batch_size;
            std::vector<SequenceWork> works;
            try {
                works = run_batch(model, batch, config, 1.0 / static_cast<double>(batch_anchors),
                                  true, observe, threads);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index) + ": " + e.what());
            }

            double batch_loss_sum = 0.0;
            for (Parameter* p : params) {
                p->zero_grad();
            }
            for (const SequenceWork& w : works) {
                batch_loss_sum += w.loss_sum;
                if (w.grads.empty()) {
                    continue;
                }
                for (std::size_t i = 0; i < params.size(); ++i) {
                    Tensor& grad = params[i]->grad;
                    const Tensor& add = w.grads[i];
                    for (std::size_t k = 0; k < grad.data.size(); ++k) {
                        grad.data[k] += add.data[k];
                    }
                }
            }
            if (!std::isfinite(batch_loss_sum)) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index) +
                                   ": loss is not finite");
            }

            clip_gradients(params, config.grad_clip_norm);
            adam_step(params, adam, config.learning_rate);

            if (observe) {
                for (const SequenceWork& w : works) {
                    for (const CalibObservation& obs : w.calib) {
                        calib->observe(obs.slot, obs.score, obs.matched);
                    }
                }
            }

            epoch_loss_sum += batch_loss_sum;
            epoch_anchors += batch_anchors;
        }

        double val_loss;
        try {
            val_loss = dataset_loss(model, val_set, config, threads);
        } catch (const NumericError& e) {
            throw NumericError("validation failed after epoch " + std::to_string(epoch) + ": " +
                               e.what());
        }
        const double train_loss = epoch_loss_sum / static_cast<double>(epoch_anchors);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        log.push_back({epoch, train_loss, val_loss, wall});
        epochs_done = epoch + 1;

        if (val_loss < best_val) {
            best_val = val_loss;
            stall = 0;
            best_params = copy_values(params);
        } else {
            ++stall;
            if (stall >= config.early_stop_patience) {
                break;
            }
        }
    }

    if (best_params.empty()) {
        // Defensive: a foreign checkpoint may carry no best snapshot.
        best_params = copy_values(params);
    }

    TrainResult result;
    const std::vector<std::uint8_t> calib_bytes =
        calib ? calib->serialize() : std::vector<std::uint8_t>{};
    result.last = snapshot_model(model, calib_bytes);
    TrainerState ts;
    ts.adam_step = adam.step;
    ts.next_epoch = epochs_done;
    ts.best_val_loss = best_val;
    ts.epochs_since_improvement = stall;
    ts.adam_m = adam.m;
    ts.adam_v = adam.v;
    ts.best_params = best_params;
    result.last.trainer = std::move(ts);

    result.best.method = config.method;
    result.best.config = config.model;
    result.best.params.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        result.best.params.emplace_back(params[i]->name, best_params[i]);
    }
    if (config.method == Method::kDetpp) {
        // The streaming state above mixes scores from every post-warm-up
        // epoch, i.e. from weights that were still moving. The inference
        // checkpoint instead gets thresholds measured against the weights
        // it actually ships with.
        SequenceModel best_model(config.method, config.model, config.seed);
        const std::vector<Parameter*> best_slots = best_model.parameters();
        for (std::size_t i = 0; i < best_slots.size(); ++i) {
            best_slots[i]->value = best_params[i];
        }
        result.best.calibration =
            calibrate_presence(best_model, train_set, config.min_history, config.seed)
                .serialize();
    }
    result.log = std::move(log);
    return result;
}

CalibrationState calibrate_presence(SequenceModel& model,
                                    const std::vector<EventSequence>& data,
                                    std::size_t min_history, std::uint64_t seed) {
    if (model.method() != Method::kDetpp) {
        throw ValidationError("presence calibration only applies to the K-slot method");
    }
    if (min_history == 0) {
        throw ValidationError("min history must be at least 1");
    }
    TrainConfig probe;
    probe.method = Method::kDetpp;
    probe.model = model.config();
    probe.min_history = min_history;
    CalibrationState state(model.config().slot_count, seed);
    for (const EventSequence& seq : data) {
        const SequenceWork work = process_sequence(model, seq, probe, 1.0, false, true);
        for (const CalibObservation& obs : work.calib) {
            state.observe(obs.slot, obs.score, obs.matched);
        }
    }
    return state;
}

} // namespace detpp
