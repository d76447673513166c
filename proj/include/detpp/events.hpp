#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace detpp {

// One (timestamp, label) observation. Times are abstract units; labels
// index into a vocabulary of size L declared by the run configuration.
struct Event {
    double t = 0.0;
    std::uint32_t label = 0;
};

// A strictly time-ordered event list. Immutable by convention after
// construction; validate() enforces the ordering and label-range invariants.
struct EventSequence {
    std::string id;
    std::vector<Event> events;
};

// Ground-truth events inside (anchor, anchor + horizon], earliest first,
// truncated to at most the model's slot count.
struct HorizonTarget {
    double anchor = 0.0;
    double horizon = 0.0;
    std::vector<Event> events;
};

// Throws ValidationError if the sequence breaks strict time ordering, has a
// non-finite timestamp, or carries a label outside [0, label_count).
void validate_sequence(const EventSequence& seq, std::size_t label_count);

// Reads the JSONL dataset format, one {"id":..., "events":[[t,l],...]}
// object per line. Malformed lines raise ParseError naming the line number;
// invariant breaches raise ValidationError naming the sequence id.
std::vector<EventSequence> load_sequences(const std::string& path, std::size_t label_count);

// Writes the JSONL dataset format. Timestamps are serialized as decimal with
// 9 significant digits; sequences produced by this toolkit carry timestamps
// already quantized to that precision, so load(save(x)) == x bit-exactly.
void save_sequences(const std::vector<EventSequence>& sequences, const std::string& path);

// Rounds a timestamp to the dataset format's 9-significant-digit precision.
double quantize_time(double t);

// One horizon target per anchor index n >= min_history - 1, including
// anchors whose window holds no events (T = 0 targets train presence
// probabilities toward zero). The window is half-open on the left:
// anchor < t <= anchor + horizon.
std::vector<std::pair<std::size_t, HorizonTarget>> extract_horizon_targets(
    const EventSequence& seq,
    double horizon,
    std::size_t k,
    std::size_t min_history = 1);

} // namespace detpp
