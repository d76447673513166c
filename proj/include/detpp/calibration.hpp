#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace detpp {

// Streaming per-slot calibration. During training every slot reports its
// presence score together with a flag saying whether the matcher used it;
// the state keeps a running match rate m_j and a uniform reservoir sample
// of the scores. At inference threshold(j) returns the (1 - m_j)-quantile
// of slot j's reservoir, so filtering at the threshold retains roughly the
// same fraction of predictions that the matcher kept during training.
//
// Mutated only between optimizer steps on the training thread; no internal
// locking.
class CalibrationState {
public:
    static constexpr std::size_t kReservoirCapacity = 1024;

    CalibrationState() = default;
    CalibrationState(std::size_t slot_count, std::uint64_t seed);

    std::size_t slot_count() const { return slots_.size(); }

    // Records one (score, matched) observation for a slot. The reservoir
    // stays a uniform sample of every score the slot has reported.
    void observe(std::size_t slot, double o_hat, bool matched);

    // Running mean of the matched indicator; 0 before any observation.
    double match_rate(std::size_t slot) const;

    std::uint64_t observation_count(std::size_t slot) const;

    // True once every slot has at least one observation.
    bool ready() const;

    // Empirical (1 - m_j)-quantile of the slot's reservoir with lower
    // interpolation: m_j = 1 keeps everything (minimum), m_j = 0 keeps
    // almost nothing (maximum). Throws ValidationError "calibrate before
    // inference" while the slot has no observations.
    double threshold(std::size_t slot) const;

    // Binary round-trip, exact on match rates, counts, reservoir contents,
    // and sampler position. Version mismatches raise ParseError.
    std::vector<std::uint8_t> serialize() const;
    static CalibrationState deserialize(const std::vector<std::uint8_t>& bytes);

private:
    struct Slot {
        std::uint64_t count = 0;
        std::uint64_t matched = 0;
        std::uint64_t key = 0;
        std::vector<double> reservoir;
    };

    const Slot& checked(std::size_t slot) const;

    std::vector<Slot> slots_;
};

} // namespace detpp
