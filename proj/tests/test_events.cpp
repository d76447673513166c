#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "detpp/errors.hpp"
#include "detpp/events.hpp"
#include "detpp/synth.hpp"

using namespace detpp;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

} // namespace

TEST_CASE("load parses a two-event record") {
    std::string path = temp_path("events_two.jsonl");
    write_file(path, "{\"id\":\"s0\",\"events\":[[0.5,1],[1.0,0]]}\n");
    auto seqs = load_sequences(path, 2);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].id == "s0");
    REQUIRE(seqs[0].events.size() == 2);
    CHECK(seqs[0].events[0].t == 0.5);
    CHECK(seqs[0].events[0].label == 1);
    CHECK(seqs[0].events[1].t == 1.0);
    CHECK(seqs[0].events[1].label == 0);
    std::remove(path.c_str());
}

TEST_CASE("load rejects tied timestamps naming the sequence") {
    std::string path = temp_path("events_tie.jsonl");
    write_file(path, "{\"id\":\"s1\",\"events\":[[1.0,0],[1.0,1]]}\n");
    try {
        load_sequences(path, 2);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("s1") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("load of an empty file gives an empty list") {
    std::string path = temp_path("events_empty.jsonl");
    write_file(path, "");
    CHECK(load_sequences(path, 2).empty());
    std::remove(path.c_str());
}

TEST_CASE("load reports the line number of malformed JSON") {
    std::string path = temp_path("events_bad.jsonl");
    write_file(path, "{\"id\":\"ok\",\"events\":[]}\nnot json\n");
    try {
        load_sequences(path, 2);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("load rejects labels outside the vocabulary") {
    std::string path = temp_path("events_label.jsonl");
    write_file(path, "{\"id\":\"s2\",\"events\":[[1.0,5]]}\n");
    CHECK_THROWS_AS(load_sequences(path, 3), ValidationError);
    std::remove(path.c_str());
}

TEST_CASE("save then load round-trips exactly") {
    std::vector<EventSequence> seqs;
    EventSequence a;
    a.id = "alpha";
    a.events = {{quantize_time(0.123456789123), 0}, {quantize_time(3.14159265358979), 2}};
    seqs.push_back(a);
    seqs.push_back(EventSequence{"empty", {}});

    std::string path = temp_path("events_rt.jsonl");
    save_sequences(seqs, path);
    auto back = load_sequences(path, 3);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "alpha");
    REQUIRE(back[0].events.size() == 2);
    CHECK(back[0].events[0].t == a.events[0].t);
    CHECK(back[0].events[1].t == a.events[1].t);
    CHECK(back[0].events[1].label == 2);
    CHECK(back[1].events.empty());
    std::remove(path.c_str());
}

TEST_CASE("round-trip of 1000 generated sequences is field-exact") {
    MarkovBurstsSpec spec;
    spec.label_count = 3;
    spec.t_max = 5.0;
    spec.seed = 42;
    auto seqs = generate_markov_bursts(spec, 1000);

    std::string path = temp_path("events_rt_big.jsonl");
    save_sequences(seqs, path);
    auto back = load_sequences(path, 3);
    REQUIRE(back.size() == seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        CHECK(back[i].id == seqs[i].id);
        REQUIRE(back[i].events.size() == seqs[i].events.size());
        for (std::size_t j = 0; j < seqs[i].events.size(); ++j) {
            CHECK(back[i].events[j].t == seqs[i].events[j].t);
            CHECK(back[i].events[j].label == seqs[i].events[j].label);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("horizon extraction emits one entry per anchor") {
    EventSequence seq;
    seq.id = "h";
    seq.events = {{1.0, 0}, {2.0, 1}, {3.0, 0}};
    auto targets = extract_horizon_targets(seq, 1.5, 10);
    REQUIRE(targets.size() == 3);

    CHECK(targets[0].first == 0);
    REQUIRE(targets[0].second.events.size() == 1);
    CHECK(targets[0].second.events[0].t == 2.0);

    CHECK(targets[1].first == 1);
    REQUIRE(targets[1].second.events.size() == 1);
    CHECK(targets[1].second.events[0].t == 3.0);

    CHECK(targets[2].first == 2);
    CHECK(targets[2].second.events.empty());
}

TEST_CASE("horizon extraction with no events in any window") {
    EventSequence seq;
    seq.id = "h2";
    seq.events = {{0.0, 0}, {10.0, 0}};
    auto targets = extract_horizon_targets(seq, 1.0, 4);
    REQUIRE(targets.size() == 2);
    CHECK(targets[0].second.events.empty());
    CHECK(targets[1].second.events.empty());
}

TEST_CASE("horizon targets keep the K earliest events") {
    EventSequence seq;
    seq.id = "h3";
    seq.events = {{0.0, 0}, {0.1, 1}, {0.2, 2}, {0.3, 0}};
    auto targets = extract_horizon_targets(seq, 10.0, 2);
    REQUIRE(targets[0].second.events.size() == 2);
    CHECK(targets[0].second.events[0].t == 0.1);
    CHECK(targets[0].second.events[1].t == 0.2);
}

TEST_CASE("min_history delays the first anchor") {
    EventSequence seq;
    seq.id = "h4";
    seq.events = {{1.0, 0}, {2.0, 0}, {3.0, 0}};
    auto targets = extract_horizon_targets(seq, 1.0, 4, 2);
    REQUIRE(targets.size() == 2);
    CHECK(targets[0].first == 1);
}

TEST_CASE("window membership is anchor-exclusive and right-inclusive") {
    EventSequence seq;
    seq.id = "h5";
    seq.events = {{0.0, 0}, {1.0, 0}, {2.0, 0}};
    auto targets = extract_horizon_targets(seq, 1.0, 4);
    // an event exactly at anchor + H belongs to the window
    REQUIRE(targets[0].second.events.size() == 1);
    CHECK(targets[0].second.events[0].t == 1.0);

    MarkovBurstsSpec spec;
    spec.label_count = 2;
    spec.t_max = 20.0;
    spec.seed = 7;
    for (const auto& s : generate_markov_bursts(spec, 10)) {
        for (const auto& [n, target] : extract_horizon_targets(s, 2.0, 3)) {
            for (const Event& e : target.events) {
                CHECK(e.t > target.anchor);
                CHECK(e.t <= target.anchor + target.horizon);
            }
            // truncation keeps a prefix: the next event after the kept ones is
            // either outside the window or beyond the slot budget
            std::size_t kept = target.events.size();
            if (kept > 0 && kept < 3) {
                std::size_t last_idx = n + kept;
                if (last_idx + 1 < s.events.size()) {
                    CHECK(s.events[last_idx + 1].t > target.anchor + target.horizon);
                }
            }
        }
    }
}

TEST_CASE("quantize_time is idempotent and 9-digit") {
    double q = quantize_time(3.14159265358979);
    CHECK(q == 3.14159265);
    CHECK(quantize_time(q) == q);
    CHECK(quantize_time(0.0) == 0.0);
    CHECK(quantize_time(123456789.123) == 123456789.0);
}

TEST_CASE("validate_sequence rejects non-finite timestamps") {
    EventSequence seq;
    seq.id = "bad";
    seq.events = {{std::numeric_limits<double>::quiet_NaN(), 0}};
    CHECK_THROWS_AS(validate_sequence(seq, 2), ValidationError);
}
