// Command-line front end: generate synthetic datasets, train any of the
// three methods, dump predictions, score them, and run the full
// three-method comparison.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "detpp/calibration.hpp"
#include "detpp/checkpoint.hpp"
#include "detpp/errors.hpp"
#include "detpp/events.hpp"
#include "detpp/metrics.hpp"
#include "detpp/model.hpp"
#include "detpp/pipeline.hpp"
#include "detpp/synth.hpp"
#include "detpp/trainer.hpp"

namespace {

using namespace detpp;

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

struct ConfigEntry {
    std::string value;
    std::size_t line = 0;
};

// Flat `key = value` file with # comments. Returns entries keyed by name;
// duplicate keys keep the last value, like repeating a flag would.
std::map<std::string, ConfigEntry> read_flat_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file '" + path + "'");
    }
    std::map<std::string, ConfigEntry> out;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": empty key");
        }
        out[key] = {value, line_no};
    }
    return out;
}

std::uint64_t config_u64(const std::string& value, const std::string& where) {
    try {
        std::size_t used = 0;
        const std::uint64_t parsed = std::stoull(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return parsed;
    } catch (const std::exception&) {
        throw ParseError(where + ": '" + value + "' is not a whole number");
    }
}

double config_f64(const std::string& value, const std::string& where) {
    try {
        std::size_t used = 0;
        const double parsed = std::stod(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return parsed;
    } catch (const std::exception&) {
        throw ParseError(where + ": '" + value + "' is not a number");
    }
}

std::string format_double(const char* fmt, double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, x);
    return buf;
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

struct GenerateArgs {
    std::string kind = "markov_bursts";
    std::size_t count = 100;
    std::size_t labels = 2;
    double t_max = 10.0;
    std::uint64_t seed = 0;
    double self_prob = 0.6;
    double rate_min = 0.5;
    double rate_max = 2.0;
    double mu = 1.0;
    double alpha = 0.5; // total excitation mass per event, split evenly
    double beta = 2.0;
    double split_train = 0.7;
    double split_val = 0.15;
    double split_test = 0.15;
    std::string out_dir;
};

void run_generate(const GenerateArgs& args) {
    std::vector<EventSequence> sequences;
    if (args.kind == "markov_bursts") {
        MarkovBurstsSpec spec;
        spec.label_count = args.labels;
        spec.t_max = args.t_max;
        spec.seed = args.seed;
        spec.self_prob = args.self_prob;
        spec.rate_min = args.rate_min;
        spec.rate_max = args.rate_max;
        sequences = generate_markov_bursts(spec, args.count);
    } else {
        HawkesSpec spec;
        spec.label_count = args.labels;
        spec.mu.assign(args.labels, args.mu);
        const double excite =
            args.kind == "poisson" ? 0.0 : args.alpha / static_cast<double>(args.labels);
        spec.alpha.assign(args.labels, std::vector<double>(args.labels, excite));
        spec.beta = args.beta;
        spec.t_max = args.t_max;
        spec.seed = args.seed;
        sequences = generate_hawkes(spec, args.count);
    }

    std::size_t total_events = 0;
    std::vector<std::size_t> label_counts(args.labels, 0);
    for (const EventSequence& seq : sequences) {
        total_events += seq.events.size();
        for (const Event& e : seq.events) {
            ++label_counts[e.label];
        }
    }

    DatasetSplit split = split_dataset(std::move(sequences),
                                       {args.split_train, args.split_val, args.split_test},
                                       args.seed);
    std::filesystem::create_directories(args.out_dir);
    const std::string train_path = args.out_dir + "/train.jsonl";
    const std::string val_path = args.out_dir + "/val.jsonl";
    const std::string test_path = args.out_dir + "/test.jsonl";
    save_sequences(split.train, train_path);
    save_sequences(split.val, val_path);
    save_sequences(split.test, test_path);

    std::cout << "train " << split.train.size() << " sequences -> " << train_path << "\n"
              << "val " << split.val.size() << " sequences -> " << val_path << "\n"
              << "test " << split.test.size() << " sequences -> " << test_path << "\n";
    const double mean_len =
        args.count == 0 ? 0.0 : static_cast<double>(total_events) / static_cast<double>(args.count);
    std::cout << "mean length " << format_double("%.4f", mean_len) << "\n";
    std::cout << "label marginals";
    for (std::size_t l = 0; l < args.labels; ++l) {
        const double frac = total_events == 0
                                ? 0.0
                                : static_cast<double>(label_counts[l]) /
                                      static_cast<double>(total_events);
        std::cout << " " << l << ":" << format_double("%.4f", frac);
    }
    std::cout << "\n";
}

struct TrainArgs {
    std::string config_path;
    std::string method = "detpp";
    std::string train_path;
    std::string val_path;
    std::string out_path;
    std::string resume_path;
    std::string log_path;
    std::size_t labels = 2;
    std::size_t embed = 16;
    std::size_t hidden = 64;
    std::size_t slots = 32;
    double horizon = 1.0;
    std::size_t epochs = 10;
    std::size_t batch = 8;
    double lr = 1e-3;
    double clip = 1.0;
    std::uint64_t seed = 1;
    std::size_t min_history = 1;
    std::size_t warmup = 1;
    std::size_t patience = 5;
    std::size_t threads = 1;
};

// Applies config-file values underneath any flags the user passed; a flag
// given on the command line always wins over the same key in the file.
void apply_train_config(const CLI::App* sub, TrainArgs& args) {
    if (args.config_path.empty()) {
        return;
    }
    const auto entries = read_flat_config(args.config_path);
    const auto u64_setter = [&](std::size_t* target) {
        return [target](const std::string& value, const std::string& where) {
            *target = static_cast<std::size_t>(config_u64(value, where));
        };
    };
    const auto f64_setter = [&](double* target) {
        return [target](const std::string& value, const std::string& where) {
            *target = config_f64(value, where);
        };
    };
    const auto str_setter = [&](std::string* target) {
        return [target](const std::string& value, const std::string&) { *target = value; };
    };
    const std::unordered_map<std::string,
                             std::function<void(const std::string&, const std::string&)>>
        setters = {
            {"method",
             [&](const std::string& value, const std::string& where) {
                 try {
                     method_from_string(value);
                 } catch (const ValidationError& e) {
                     throw ParseError(where + ": " + e.what());
                 }
                 args.method = value;
             }},
            {"train", str_setter(&args.train_path)},
            {"val", str_setter(&args.val_path)},
            {"out", str_setter(&args.out_path)},
            {"resume", str_setter(&args.resume_path)},
            {"log", str_setter(&args.log_path)},
            {"labels", u64_setter(&args.labels)},
            {"embed", u64_setter(&args.embed)},
            {"hidden", u64_setter(&args.hidden)},
            {"slots", u64_setter(&args.slots)},
            {"horizon", f64_setter(&args.horizon)},
            {"epochs", u64_setter(&args.epochs)},
            {"batch", u64_setter(&args.batch)},
            {"lr", f64_setter(&args.lr)},
            {"clip", f64_setter(&args.clip)},
            {"seed",
             [&](const std::string& value, const std::string& where) {
                 args.seed = config_u64(value, where);
             }},
            {"min-history", u64_setter(&args.min_history)},
            {"warmup", u64_setter(&args.warmup)},
            {"patience", u64_setter(&args.patience)},
            {"threads", u64_setter(&args.threads)},
        };
    for (const auto& [key, entry] : entries) {
        const std::string where = args.config_path + ":" + std::to_string(entry.line);
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw ParseError(where + ": unknown key '" + key + "'");
        }
        if (sub->count("--" + key) > 0) {
            continue; // flag overrides file
        }
        it->second(entry.value, where);
    }
}

void run_train(const CLI::App* sub, TrainArgs& args) {
    apply_train_config(sub, args);
    if (args.train_path.empty() || args.val_path.empty() || args.out_path.empty()) {
        throw ValidationError("train, val and out paths are all required");
    }
    if (args.threads == 0) {
        throw ValidationError("threads must be at least 1");
    }

    TrainConfig cfg;
    cfg.method = method_from_string(args.method);
    cfg.model.label_count = args.labels;
    cfg.model.embed_dim = args.embed;
    cfg.model.hidden_dim = args.hidden;
    cfg.model.slot_count = args.slots;
    cfg.model.horizon = args.horizon;
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch;
    cfg.learning_rate = args.lr;
    cfg.grad_clip_norm = args.clip;
    cfg.seed = args.seed;
    cfg.min_history = args.min_history;
    cfg.calibration_warmup_epochs = args.warmup;
    cfg.early_stop_patience = args.patience;

    const auto train_set = load_sequences(args.train_path, args.labels);
    const auto val_set = load_sequences(args.val_path, args.labels);

    Checkpoint resume;
    const bool resuming = !args.resume_path.empty();
    if (resuming) {
        resume = load_checkpoint(args.resume_path);
    }

    TrainResult result =
        train(cfg, train_set, val_set, resuming ? &resume : nullptr, args.threads);

    const std::string last_path = args.out_path + ".last";
    const std::string log_path =
        args.log_path.empty() ? args.out_path + ".log.csv" : args.log_path;
    save_checkpoint(result.best, args.out_path);
    save_checkpoint(result.last, last_path);
    write_text_file(log_path, training_log_csv(result.log));

    std::cout << "trained " << result.last.trainer->next_epoch << " epochs (best val loss "
              << format_double("%.9g", result.last.trainer->best_val_loss) << ")\n"
              << "checkpoint -> " << args.out_path << "\n"
              << "resumable state -> " << last_path << "\n"
              << "training log -> " << log_path << "\n";
}

struct PredictArgs {
    std::string checkpoint_path;
    std::string data_path;
    std::string out_path;
    std::size_t min_history = 1;
    std::size_t max_rollout_steps = 64;
    std::size_t threads = 1;
};

void run_predict(const PredictArgs& args) {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint_path);
    // Loading against the checkpoint's label count is the mismatch check:
    // any event whose label needs a bigger alphabet fails right here.
    const auto data = load_sequences(args.data_path, ckpt.config.label_count);
    SequenceModel model = model_from_checkpoint(ckpt);

    CalibrationState calibration;
    const bool needs_calibration = ckpt.method == Method::kDetpp;
    if (needs_calibration) {
        if (ckpt.calibration.empty()) {
            throw ValidationError("checkpoint carries no calibration state; predict from the "
                                  "best checkpoint, or train the resumable one past the "
                                  "warm-up epochs");
        }
        calibration = CalibrationState::deserialize(ckpt.calibration);
    }

    PredictConfig cfg;
    cfg.min_history = args.min_history;
    cfg.max_rollout_steps = args.max_rollout_steps;
    const auto records = predict_records(model, needs_calibration ? &calibration : nullptr,
                                         data, cfg, args.threads);
    write_prediction_dump(records, args.out_path);
    std::cout << records.size() << " records -> " << args.out_path << "\n";
}

struct EvaluateArgs {
    std::string predictions_path;
    std::string data_path;
    std::string out_path;
    std::size_t labels = 2;
    double horizon = 1.0;
    std::size_t slot_cap = 1;
    double otd_delete_cost = 1.0;
    double t_map_delta = 0.1;
    std::uint64_t seed = 0;
};

void run_evaluate(const EvaluateArgs& args) {
    const auto data = load_sequences(args.data_path, args.labels);
    const auto records = read_prediction_dump(args.predictions_path);

    // Check every record against the dataset up front so the error can list
    // all orphaned anchors instead of stopping at the first.
    std::unordered_map<std::string, std::size_t> lengths;
    for (const EventSequence& seq : data) {
        lengths[seq.id] = seq.events.size();
    }
    std::vector<std::string> missing;
    for (const PredictionRecord& rec : records) {
        const auto it = lengths.find(rec.sequence_id);
        if (it == lengths.end() || rec.anchor_index >= it->second) {
            missing.push_back(rec.sequence_id + ":" + std::to_string(rec.anchor_index));
        }
    }
    if (!missing.empty()) {
        std::string listed;
        const std::size_t shown = std::min<std::size_t>(missing.size(), 10);
        for (std::size_t i = 0; i < shown; ++i) {
            listed += (i == 0 ? "" : ", ") + missing[i];
        }
        if (missing.size() > shown) {
            listed += " and " + std::to_string(missing.size() - shown) + " more";
        }
        throw ValidationError("predictions reference anchors absent from the dataset: " + listed);
    }

    EvalConfig cfg;
    cfg.horizon = args.horizon;
    cfg.slot_cap = args.slot_cap;
    cfg.otd_delete_cost = args.otd_delete_cost;
    cfg.t_map_delta = args.t_map_delta;
    const MetricReport report = evaluate_records(records, data, cfg);
    const std::string json = render_report_json(report, cfg, args.seed);
    if (args.out_path.empty()) {
        std::cout << json;
    } else {
        write_text_file(args.out_path, json);
        std::cout << "report -> " << args.out_path << "\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"marked temporal point process toolkit"};
    app.require_subcommand(1);

    GenerateArgs gen;
    CLI::App* generate = app.add_subcommand("generate", "write synthetic train/val/test datasets");
    generate->add_option("--kind", gen.kind, "generator family")
        ->check(CLI::IsMember({"markov_bursts", "hawkes", "poisson"}));
    generate->add_option("--count", gen.count, "number of sequences");
    generate->add_option("--labels", gen.labels, "label alphabet size");
    generate->add_option("--t-max", gen.t_max, "time span per sequence");
    generate->add_option("--seed", gen.seed, "generation seed");
    generate->add_option("--self-prob", gen.self_prob, "markov_bursts: self-transition mass");
    generate->add_option("--rate-min", gen.rate_min, "markov_bursts: slowest label gap rate");
    generate->add_option("--rate-max", gen.rate_max, "markov_bursts: fastest label gap rate");
    generate->add_option("--mu", gen.mu, "hawkes/poisson: per-label base rate");
    generate->add_option("--alpha", gen.alpha, "hawkes: total excitation mass per event");
    generate->add_option("--beta", gen.beta, "hawkes: excitation decay");
    generate->add_option("--split-train", gen.split_train, "train fraction");
    generate->add_option("--split-val", gen.split_val, "validation fraction");
    generate->add_option("--split-test", gen.split_test, "test fraction");
    generate->add_option("--out-dir", gen.out_dir, "output directory")->required();
    generate->callback([&] { run_generate(gen); });

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "fit one method and write checkpoints");
    train_cmd->add_option("--config", tr.config_path, "flat key = value config file");
    train_cmd->add_option("--method", tr.method, "detpp, mae_ce or mae_ce_k")
        ->check(CLI::IsMember({"detpp", "mae_ce", "mae_ce_k"}));
    train_cmd->add_option("--train", tr.train_path, "training dataset (JSONL)");
    train_cmd->add_option("--val", tr.val_path, "validation dataset (JSONL)");
    train_cmd->add_option("--out", tr.out_path, "best checkpoint path");
    train_cmd->add_option("--resume", tr.resume_path, "resumable checkpoint to continue from");
    train_cmd->add_option("--log", tr.log_path, "training log CSV (default <out>.log.csv)");
    train_cmd->add_option("--labels", tr.labels, "label alphabet size");
    train_cmd->add_option("--embed", tr.embed, "label embedding width");
    train_cmd->add_option("--hidden", tr.hidden, "recurrent state width");
    train_cmd->add_option("--slots", tr.slots, "parallel prediction slots (K)");
    train_cmd->add_option("--horizon", tr.horizon, "forecast window length (H)");
    train_cmd->add_option("--epochs", tr.epochs, "total epochs including resumed ones");
    train_cmd->add_option("--batch", tr.batch, "sequences per optimizer step");
    train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
    train_cmd->add_option("--clip", tr.clip, "global gradient norm limit");
    train_cmd->add_option("--seed", tr.seed, "training seed");
    train_cmd->add_option("--min-history", tr.min_history, "events required before an anchor");
    train_cmd->add_option("--warmup", tr.warmup, "epochs before calibration starts");
    train_cmd->add_option("--patience", tr.patience, "early-stop patience in epochs");
    train_cmd->add_option("--threads", tr.threads, "worker threads")
        ->check(CLI::PositiveNumber);
    train_cmd->callback([&] { run_train(train_cmd, tr); });

    PredictArgs pr;
    CLI::App* predict = app.add_subcommand("predict", "dump per-anchor predictions as JSONL");
    predict->add_option("--checkpoint", pr.checkpoint_path, "trained checkpoint")->required();
    predict->add_option("--data", pr.data_path, "dataset to predict on (JSONL)")->required();
    predict->add_option("--out", pr.out_path, "prediction dump path")->required();
    predict->add_option("--min-history", pr.min_history, "events required before an anchor");
    predict->add_option("--max-rollout-steps", pr.max_rollout_steps,
                        "step cap for the autoregressive rollout");
    predict->add_option("--threads", pr.threads, "worker threads")->check(CLI::PositiveNumber);
    predict->callback([&] { run_predict(pr); });

    EvaluateArgs ev;
    CLI::App* evaluate = app.add_subcommand("evaluate", "score a prediction dump");
    evaluate->add_option("--predictions", ev.predictions_path, "prediction dump (JSONL)")
        ->required();
    evaluate->add_option("--data", ev.data_path, "ground-truth dataset (JSONL)")->required();
    evaluate->add_option("--labels", ev.labels, "label alphabet size")->required();
    evaluate->add_option("--horizon", ev.horizon, "evaluation window length")->required();
    evaluate->add_option("--slot-cap", ev.slot_cap, "per-side event cap for the edit distance");
    evaluate->add_option("--otd-delete-cost", ev.otd_delete_cost, "edit-distance delete cost");
    evaluate->add_option("--t-map-delta", ev.t_map_delta, "ranked-precision time tolerance");
    evaluate->add_option("--seed", ev.seed, "seed echoed into the report");
    evaluate->add_option("--out", ev.out_path, "report path (stdout when omitted)");
    evaluate->callback([&] { run_evaluate(ev); });

    ReproduceConfig rp;
    CLI::App* reproduce =
        app.add_subcommand("reproduce", "run the three-method synthetic comparison");
    reproduce->add_option("--seed", rp.seed, "benchmark seed");
    reproduce->add_option("--threads", rp.threads, "worker threads")->check(CLI::PositiveNumber);
    reproduce->add_option("--out-dir", rp.out_dir, "directory for reports and logs");
    reproduce->callback([&] { std::cout << run_reproduce(rp).table; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
