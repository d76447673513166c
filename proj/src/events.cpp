#include "detpp/events.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "detpp/errors.hpp"

namespace detpp {

void validate_sequence(const EventSequence& seq, std::size_t label_count) {
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const Event& e = seq.events[i];
        if (!std::isfinite(e.t)) {
            throw ValidationError("sequence '" + seq.id + "': non-finite timestamp at position " +
                                  std::to_string(i));
        }
        if (i > 0 && !(e.t > prev)) {
            std::ostringstream msg;
            msg << "sequence '" << seq.id << "': timestamps not strictly increasing at position "
                << i << " (" << prev << " then " << e.t << ")";
            throw ValidationError(msg.str());
        }
        if (e.label >= label_count) {
            throw ValidationError("sequence '" + seq.id + "': label " + std::to_string(e.label) +
                                  " outside vocabulary of size " + std::to_string(label_count));
        }
        prev = e.t;
    }
}

std::vector<EventSequence> load_sequences(const std::string& path, std::size_t label_count) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset file '" + path + "'");
    }
    std::vector<EventSequence> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        EventSequence seq;
        try {
            seq.id = rec.at("id").get<std::string>();
            for (const auto& pair : rec.at("events")) {
                if (!pair.is_array() || pair.size() != 2) {
                    throw ParseError(path + ":" + std::to_string(line_no) +
                                     ": event entry is not a [t, l] pair");
                }
                const long long raw_label = pair[1].get<long long>();
                if (raw_label < 0) {
                    throw ValidationError("sequence '" + seq.id + "': negative label");
                }
                seq.events.push_back(
                    {pair[0].get<double>(), static_cast<std::uint32_t>(raw_label)});
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        validate_sequence(seq, label_count);
        out.push_back(std::move(seq));
    }
    return out;
}

namespace {

void append_time(std::string& buf, double t) {
    char tmp[40];
    std::snprintf(tmp, sizeof(tmp), "%.9g", t);
    buf += tmp;
}

} // namespace

void save_sequences(const std::vector<EventSequence>& sequences, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    std::string buf;
    for (const EventSequence& seq : sequences) {
        buf.clear();
        buf += "{\"id\":";
        buf += nlohmann::json(seq.id).dump();
        buf += ",\"events\":[";
        for (std::size_t i = 0; i < seq.events.size(); ++i) {
            if (i > 0) {
                buf += ',';
            }
            buf += '[';
            append_time(buf, seq.events[i].t);
            buf += ',';
            buf += std::to_string(seq.events[i].label);
            buf += ']';
        }
        buf += "]}\n";
        out << buf;
    }
    if (!out) {
        throw IoError("write failed for '" + path + "'");
    }
}

double quantize_time(double t) {
    char tmp[40];
    std::snprintf(tmp, sizeof(tmp), "%.9g", t);
    return std::strtod(tmp, nullptr);
}

std::vector<std::pair<std::size_t, HorizonTarget>> extract_horizon_targets(
    const EventSequence& seq,
    double horizon,
    std::size_t k,
    std::size_t min_history) {
    if (!(horizon > 0.0)) {
        throw ValidationError("horizon must be positive");
    }
    if (k < 1 || min_history < 1) {
        throw ValidationError("k and min_history must be at least 1");
    }
    std::vector<std::pair<std::size_t, HorizonTarget>> out;
    for (std::size_t n = min_history - 1; n < seq.events.size(); ++n) {
        HorizonTarget target;
        target.anchor = seq.events[n].t;
        target.horizon = horizon;
        for (std::size_t j = n + 1; j < seq.events.size(); ++j) {
            const Event& e = seq.events[j];
            if (!(e.t <= target.anchor + horizon)) {
                break;
            }
            if (target.events.size() == k) {
                break;
            }
            target.events.push_back(e);
        }
        out.emplace_back(n, std::move(target));
    }
    return out;
}

} // namespace detpp
