#include "detpp/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <thread>
#include <utility>

#include "detpp/errors.hpp"
#include "detpp/forecast.hpp"
#include "detpp/rng.hpp"
#include "detpp/synth.hpp"

namespace detpp {

namespace {

std::uint32_t argmax_row(const Tensor& probs, std::size_t row) {
    const std::size_t cols = probs.shape[1];
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
        if (probs.at(row, c) > probs.at(row, best)) {
            best = c;
        }
    }
    return static_cast<std::uint32_t>(best);
}

// All K positional slots as a time-sorted forecast, scored by label
// confidence (the next-K head has no presence output to rank by).
std::vector<ForecastEvent> positional_readout(const Tape& tape, const PredictionSet& preds,
                                              double anchor) {
    const std::vector<double> shifts = predicted_shifts(tape, preds);
    const Tensor probs = label_probs(tape, preds);
    std::vector<ForecastEvent> out;
    out.reserve(shifts.size());
    for (std::size_t j = 0; j < shifts.size(); ++j) {
        const std::uint32_t label = argmax_row(probs, j);
        out.push_back({anchor + shifts[j], label, probs.at(j, label)});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ForecastEvent& a, const ForecastEvent& b) { return a.t < b.t; });
    return out;
}

std::vector<PredictionRecord> records_for_sequence(SequenceModel& model,
                                                   const CalibrationState* calibration,
                                                   const EventSequence& seq,
                                                   const PredictConfig& config) {
    std::vector<PredictionRecord> out;
    const std::size_t first = config.min_history - 1;
    if (seq.events.size() <= first) {
        return out;
    }
    out.reserve(seq.events.size() - first);

    if (model.method() == Method::kMaeCe) {
        // The rollout re-encodes each prefix on its own tape; the raw
        // next-event readout reuses one shared encoding pass.
        Tape tape;
        ModelRun run(tape, model);
        const std::vector<Var> states = run.encode(seq);
        EventSequence prefix;
        prefix.id = seq.id;
        for (std::size_t n = first; n < seq.events.size(); ++n) {
            prefix.events.assign(seq.events.begin(),
                                 seq.events.begin() + static_cast<std::ptrdiff_t>(n) + 1);
            PredictionRecord rec;
            rec.sequence_id = seq.id;
            rec.anchor_index = n;
            rec.events = autoregressive_rollout(model, prefix, model.config().horizon,
                                                config.max_rollout_steps);
            rec.ranked = rec.events;
            PredictionSet preds = run.predict(states[n]);
            const std::vector<double> shifts = predicted_shifts(tape, preds);
            rec.next = {shifts[0], argmax_row(label_probs(tape, preds), 0)};
            out.push_back(std::move(rec));
        }
        return out;
    }

    Tape tape;
    ModelRun run(tape, model);
    const std::vector<Var> states = run.encode(seq);
    for (std::size_t n = first; n < seq.events.size(); ++n) {
        const double anchor = seq.events[n].t;
        PredictionSet preds = run.predict(states[n]);
        PredictionRecord rec;
        rec.sequence_id = seq.id;
        rec.anchor_index = n;
        if (model.method() == Method::kDetpp) {
            rec.events = forecast(tape, preds, anchor, *calibration);
            rec.ranked = forecast_unfiltered_ranked(tape, preds, anchor);
            rec.next = next_event_choice(rec.events, rec.ranked, anchor);
        } else {
            rec.events = positional_readout(tape, preds, anchor);
            rec.ranked = rec.events;
            const std::vector<double> shifts = predicted_shifts(tape, preds);
            rec.next = {shifts[0], argmax_row(label_probs(tape, preds), 0)};
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void append_double(std::string& buf, double x) {
    buf += nlohmann::json(x).dump();
}

void append_forecast_list(std::string& buf, const std::vector<ForecastEvent>& events) {
    buf += '[';
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (i > 0) {
            buf += ',';
        }
        buf += '[';
        append_double(buf, events[i].t);
        buf += ',';
        buf += std::to_string(events[i].label);
        buf += ',';
        append_double(buf, events[i].score);
        buf += ']';
    }
    buf += ']';
}

std::vector<ForecastEvent> parse_forecast_list(const nlohmann::json& list, const std::string& where) {
    std::vector<ForecastEvent> out;
    out.reserve(list.size());
    for (const auto& entry : list) {
        if (!entry.is_array() || entry.size() != 3) {
            throw ParseError(where + ": forecast entry is not a [t, label, score] triple");
        }
        const long long raw_label = entry[1].get<long long>();
        if (raw_label < 0) {
            throw ParseError(where + ": negative label");
        }
        out.push_back({entry[0].get<double>(), static_cast<std::uint32_t>(raw_label),
                       entry[2].get<double>()});
    }
    return out;
}

} // namespace

void PredictConfig::validate() const {
    if (min_history == 0) {
        throw ValidationError("min history must be at least 1");
    }
    if (max_rollout_steps == 0) {
        throw ValidationError("max rollout steps must be at least 1");
    }
}

std::vector<PredictionRecord> predict_records(SequenceModel& model,
                                              const CalibrationState* calibration,
                                              const std::vector<EventSequence>& data,
                                              const PredictConfig& config,
                                              std::size_t threads) {
    config.validate();
    if (model.method() == Method::kDetpp) {
        if (calibration == nullptr) {
            throw ValidationError("the K-slot method needs a calibration state to forecast");
        }
        if (calibration->slot_count() != model.config().slot_count) {
            throw ValidationError("calibration slot count does not match the model");
        }
    }

    std::vector<std::vector<PredictionRecord>> per_seq(data.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, data.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            per_seq[i] = records_for_sequence(model, calibration, data[i], config);
        }
    } else {
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
                        if (i >= data.size()) {
                            break;
                        }
                        per_seq[i] = records_for_sequence(local, calibration, data[i], config);
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
    }

    std::vector<PredictionRecord> out;
    for (std::vector<PredictionRecord>& chunk : per_seq) {
        for (PredictionRecord& rec : chunk) {
            out.push_back(std::move(rec));
        }
    }
    return out;
}

void write_prediction_dump(const std::vector<PredictionRecord>& records,
                           const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    std::string buf;
    for (const PredictionRecord& rec : records) {
        buf.clear();
        buf += "{\"id\":";
        buf += nlohmann::json(rec.sequence_id).dump();
        buf += ",\"anchor_index\":";
        buf += std::to_string(rec.anchor_index);
        buf += ",\"events\":";
        append_forecast_list(buf, rec.events);
        buf += ",\"ranked\":";
        append_forecast_list(buf, rec.ranked);
        buf += ",\"next\":[";
        append_double(buf, rec.next.dt);
        buf += ',';
        buf += std::to_string(rec.next.label);
        buf += "]}\n";
        out << buf;
    }
    if (!out) {
        throw IoError("write failed for '" + path + "'");
    }
}

std::vector<PredictionRecord> read_prediction_dump(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open prediction dump '" + path + "'");
    }
    std::vector<PredictionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = path + ":" + std::to_string(line_no);
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        PredictionRecord parsed;
        try {
            parsed.sequence_id = rec.at("id").get<std::string>();
            const long long anchor = rec.at("anchor_index").get<long long>();
            if (anchor < 0) {
                throw ParseError(where + ": negative anchor index");
            }
            parsed.anchor_index = static_cast<std::size_t>(anchor);
            parsed.events = parse_forecast_list(rec.at("events"), where);
            parsed.ranked = parse_forecast_list(rec.at("ranked"), where);
            const auto& next = rec.at("next");
            if (!next.is_array() || next.size() != 2) {
                throw ParseError(where + ": \"next\" is not a [dt, label] pair");
            }
            const long long next_label = next[1].get<long long>();
            if (next_label < 0) {
                throw ParseError(where + ": negative label");
            }
            parsed.next = {next[0].get<double>(), static_cast<std::uint32_t>(next_label)};
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        out.push_back(std::move(parsed));
    }
    return out;
}

std::string render_report_json(const MetricReport& report, const EvalConfig& config,
                               std::uint64_t seed) {
    nlohmann::json doc;
    doc["mean_length"] = report.mean_length;
    doc["label_entropy"] = report.label_entropy;
    doc["time_delta_diff_entropy"] = report.time_delta_diff_entropy;
    doc["time_entropy_degenerate"] = report.time_entropy_degenerate;
    doc["next_item_accuracy"] = report.next_item_accuracy;
    doc["next_item_mae"] = report.next_item_mae;
    doc["otd"] = report.otd;
    doc["t_map"] = report.t_map;
    doc["horizon"] = config.horizon;
    doc["slot_cap"] = config.slot_cap;
    doc["otd_delete_cost"] = config.otd_delete_cost;
    doc["t_map_delta"] = config.t_map_delta;
    doc["seed"] = seed;
    return doc.dump(2) + "\n";
}

double truth_label_entropy(const std::vector<EventSequence>& dataset, double horizon,
                           std::size_t min_history) {
    std::vector<std::uint32_t> pool;
    for (const EventSequence& seq : dataset) {
        const auto targets = extract_horizon_targets(
            seq, horizon, std::numeric_limits<std::size_t>::max(), min_history);
        for (const auto& [anchor_index, target] : targets) {
            (void)anchor_index;
            for (const Event& e : target.events) {
                pool.push_back(e.label);
            }
        }
    }
    if (pool.empty()) {
        return 0.0;
    }
    return label_entropy(pool);
}

namespace {

// Benchmark shape for the comparison study. Sized so one full run of all
// three methods stays within a couple of minutes on one core while the
// horizon still spans about ten events (mean gap is roughly one time unit
// under the log-spaced burst rates).
constexpr std::size_t kBenchSequences = 700; // split 5/7, 1/7, 1/7
constexpr std::size_t kBenchLabels = 5;
constexpr double kBenchTMax = 30.0;
constexpr double kBenchSelfProb = 0.7;
constexpr double kBenchRateMin = 0.4;
constexpr double kBenchRateMax = 5.0;
constexpr double kBenchHorizon = 10.0;
constexpr std::size_t kBenchSlots = 16;
constexpr std::size_t kBenchEmbed = 8;
constexpr std::size_t kBenchHidden = 24;
constexpr std::size_t kBenchEpochs = 40;
constexpr std::size_t kBenchPatience = 8;
constexpr std::size_t kBenchBatch = 8;
constexpr double kBenchLearningRate = 1e-2;
constexpr double kBenchClip = 5.0;
constexpr double kBenchOtdDeleteCost = 1.0;
constexpr double kBenchTmapDelta = 1.0;
constexpr std::size_t kBenchRolloutCap = 64;

std::string method_file_tag(Method method) {
    return method_to_string(method);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << text;
    if (!out) {
        throw IoError("write failed for '" + path + "'");
    }
}

} // namespace

ReproduceResult run_reproduce(const ReproduceConfig& config) {
    if (config.threads == 0) {
        throw ValidationError("threads must be at least 1");
    }

    MarkovBurstsSpec spec;
    spec.label_count = kBenchLabels;
    spec.t_max = kBenchTMax;
    spec.seed = config.seed;
    spec.self_prob = kBenchSelfProb;
    spec.rate_min = kBenchRateMin;
    spec.rate_max = kBenchRateMax;
    DatasetSplit split = split_dataset(generate_markov_bursts(spec, kBenchSequences),
                                       {5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0}, config.seed);

    const bool persist = !config.out_dir.empty();
    if (persist) {
        std::filesystem::create_directories(config.out_dir);
    }

    EvalConfig eval_cfg;
    eval_cfg.horizon = kBenchHorizon;
    eval_cfg.slot_cap = kBenchSlots;
    eval_cfg.otd_delete_cost = kBenchOtdDeleteCost;
    eval_cfg.t_map_delta = kBenchTmapDelta;

    ReproduceResult result;
    result.seed = config.seed;
    result.gt_label_entropy = truth_label_entropy(split.test, kBenchHorizon);

    for (Method method : {Method::kDetpp, Method::kMaeCe, Method::kMaeCeK}) {
        TrainConfig train_cfg;
        train_cfg.method = method;
        train_cfg.model.label_count = kBenchLabels;
        train_cfg.model.embed_dim = kBenchEmbed;
        train_cfg.model.hidden_dim = kBenchHidden;
        train_cfg.model.slot_count = method == Method::kMaeCe ? 1 : kBenchSlots;
        train_cfg.model.horizon = kBenchHorizon;
        train_cfg.epochs = kBenchEpochs;
        train_cfg.batch_size = kBenchBatch;
        train_cfg.learning_rate = kBenchLearningRate;
        train_cfg.grad_clip_norm = kBenchClip;
        train_cfg.seed = config.seed;
        train_cfg.early_stop_patience = kBenchPatience;

        TrainResult trained = train(train_cfg, split.train, split.val, nullptr, config.threads);

        SequenceModel model = model_from_checkpoint(trained.best);
        CalibrationState calibration;
        if (method == Method::kDetpp) {
            calibration = CalibrationState::deserialize(trained.best.calibration);
        }
        PredictConfig predict_cfg;
        predict_cfg.max_rollout_steps = kBenchRolloutCap;
        const std::vector<PredictionRecord> records =
            predict_records(model, method == Method::kDetpp ? &calibration : nullptr,
                            split.test, predict_cfg, config.threads);
        MetricReport report = evaluate_records(records, split.test, eval_cfg);
        result.outcomes.push_back({method, report});

        if (persist) {
            const std::string tag = method_file_tag(method);
            write_text_file(config.out_dir + "/report_" + tag + ".json",
                            render_report_json(report, eval_cfg, config.seed));
            write_text_file(config.out_dir + "/log_" + tag + ".csv",
                            training_log_csv(trained.log));
        }
    }

    // Fixed-width comparison in the shape of the usual results table: one
    // row per metric, one column per method.
    std::string table;
    char line[160];
    std::snprintf(line, sizeof(line), "%-26s", "metric");
    table += line;
    for (const MethodOutcome& outcome : result.outcomes) {
        std::snprintf(line, sizeof(line), " %12s", method_to_string(outcome.method).c_str());
        table += line;
    }
    table += '\n';
    const auto add_row = [&](const char* name, auto getter) {
        std::snprintf(line, sizeof(line), "%-26s", name);
        table += line;
        for (const MethodOutcome& outcome : result.outcomes) {
            std::snprintf(line, sizeof(line), " %12.4f", getter(outcome.report));
            table += line;
        }
        table += '\n';
    };
    add_row("mean_length", [](const MetricReport& r) { return r.mean_length; });
    add_row("label_entropy", [](const MetricReport& r) { return r.label_entropy; });
    add_row("time_delta_diff_entropy",
            [](const MetricReport& r) { return r.time_delta_diff_entropy; });
    add_row("next_item_accuracy", [](const MetricReport& r) { return r.next_item_accuracy; });
    add_row("next_item_mae", [](const MetricReport& r) { return r.next_item_mae; });
    add_row("otd", [](const MetricReport& r) { return r.otd; });
    add_row("t_map", [](const MetricReport& r) { return r.t_map; });
    std::snprintf(line, sizeof(line), "\nground-truth label entropy %.4f\nseed %llu\n",
                  result.gt_label_entropy,
                  static_cast<unsigned long long>(result.seed));
    table += line;
    result.table = table;

    if (persist) {
        write_text_file(config.out_dir + "/table.txt", table);
    }
    return result;
}

} // namespace detpp
