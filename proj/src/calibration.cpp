#include "detpp/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "detpp/errors.hpp"
#include "detpp/rng.hpp"
#include "detpp/serialize.hpp"

namespace detpp {

namespace {

constexpr std::uint8_t kFormatVersion = 1;

} // namespace

CalibrationState::CalibrationState(std::size_t slot_count, std::uint64_t seed) {
    slots_.resize(slot_count);
    for (std::size_t j = 0; j < slot_count; ++j) {
        slots_[j].key = stream_key({seed, kStreamCalib, j});
    }
}

const CalibrationState::Slot& CalibrationState::checked(std::size_t slot) const {
    if (slot >= slots_.size()) {
        throw ValidationError("calibration: slot " + std::to_string(slot) +
                              " out of range (have " + std::to_string(slots_.size()) + ")");
    }
    return slots_[slot];
}

void CalibrationState::observe(std::size_t slot, double o_hat, bool matched) {
    checked(slot);
    if (!(o_hat >= 0.0 && o_hat <= 1.0)) {
        throw NumericError("calibration: presence score " + std::to_string(o_hat) +
                           " outside [0, 1]");
    }
    Slot& s = slots_[slot];
    s.count += 1;
    s.matched += matched ? 1 : 0;
    if (s.reservoir.size() < kReservoirCapacity) {
        s.reservoir.push_back(o_hat);
        return;
    }
    // Classic reservoir replacement: item n lands at a uniform position in
    // [0, n) and survives only if that position is inside the reservoir.
    // The draw is a stateless hash of (slot key, item number), so resuming
    // from a checkpoint replays the identical sample path.
    const std::uint64_t u = splitmix64(s.key ^ s.count);
    const auto pos = static_cast<std::uint64_t>(
        static_cast<double>(u >> 11) * 0x1.0p-53 * static_cast<double>(s.count));
    if (pos < kReservoirCapacity) {
        s.reservoir[static_cast<std::size_t>(pos)] = o_hat;
    }
}

double CalibrationState::match_rate(std::size_t slot) const {
    const Slot& s = checked(slot);
    if (s.count == 0) {
        return 0.0;
    }
    return static_cast<double>(s.matched) / static_cast<double>(s.count);
}

std::uint64_t CalibrationState::observation_count(std::size_t slot) const {
    return checked(slot).count;
}

bool CalibrationState::ready() const {
    for (const Slot& s : slots_) {
        if (s.count == 0) {
            return false;
        }
    }
    return true;
}

double CalibrationState::threshold(std::size_t slot) const {
    const Slot& s = checked(slot);
    if (s.reservoir.empty()) {
        throw ValidationError("calibrate before inference");
    }
    std::vector<double> sorted(s.reservoir);
    std::sort(sorted.begin(), sorted.end());
    const double q = 1.0 - match_rate(slot);
    const auto idx = static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1));
    return sorted[idx];
}

std::vector<std::uint8_t> CalibrationState::serialize() const {
    std::vector<std::uint8_t> out;
    out.push_back('C');
    out.push_back('A');
    out.push_back('L');
    out.push_back(kFormatVersion);
    append_u64(out, slots_.size());
    for (const Slot& s : slots_) {
        append_u64(out, s.count);
        append_u64(out, s.matched);
        append_u64(out, s.key);
        append_u64(out, s.reservoir.size());
        for (double v : s.reservoir) {
            append_f64(out, v);
        }
    }
    return out;
}

CalibrationState CalibrationState::deserialize(const std::vector<std::uint8_t>& bytes) {
    ByteReader in(bytes);
    std::uint8_t header[4] = {0, 0, 0, 0};
    in.raw(header, 4);
    if (header[0] != 'C' || header[1] != 'A' || header[2] != 'L') {
        throw ParseError("calibration state: unrecognized header");
    }
    if (header[3] != kFormatVersion) {
        throw ParseError("calibration state: unsupported version " +
                         std::to_string(static_cast<int>(header[3])));
    }
    CalibrationState state;
    state.slots_.resize(static_cast<std::size_t>(in.u64()));
    for (Slot& s : state.slots_) {
        s.count = in.u64();
        s.matched = in.u64();
        s.key = in.u64();
        const std::uint64_t size = in.u64();
        if (size > kReservoirCapacity) {
            throw ParseError("calibration state: reservoir exceeds capacity");
        }
        if (s.matched > s.count || size > s.count) {
            throw ParseError("calibration state: inconsistent slot counters");
        }
        s.reservoir.resize(static_cast<std::size_t>(size));
        for (double& v : s.reservoir) {
            v = in.f64();
        }
    }
    if (!in.done()) {
        throw ParseError("calibration state: trailing bytes");
    }
    return state;
}

} // namespace detpp
