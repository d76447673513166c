#include "detpp/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "detpp/errors.hpp"
#include "detpp/serialize.hpp"

namespace detpp {

namespace {

constexpr char kMagic[6] = {'D', 'E', 'T', 'P', 'P', '1'};
constexpr std::uint64_t kFormatVersion = 1;

void append_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
    append_u64(out, t.shape.size());
    for (std::size_t d : t.shape) {
        append_u64(out, d);
    }
    for (double v : t.data) {
        append_f64(out, v);
    }
}

Tensor read_tensor(ByteReader& in) {
    const std::uint64_t rank = in.u64();
    if (rank > 4) {
        throw ParseError("checkpoint: implausible tensor rank " + std::to_string(rank));
    }
    std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
    std::size_t count = 1;
    for (std::size_t& d : shape) {
        d = static_cast<std::size_t>(in.u64());
        count *= d;
    }
    if (count * 8 > in.remaining()) {
        throw ParseError("checkpoint: tensor payload larger than file");
    }
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) {
        v = in.f64();
    }
    return t;
}

void append_string(std::vector<std::uint8_t>& out, const std::string& s) {
    append_u64(out, s.size());
    out.insert(out.end(), s.begin(), s.end());
}

std::string read_string(ByteReader& in) {
    const std::uint64_t len = in.u64();
    if (len > 4096) {
        throw ParseError("checkpoint: implausible string length");
    }
    std::string s(static_cast<std::size_t>(len), '\0');
    in.raw(s.data(), s.size());
    return s;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
    append_u64(out, kFormatVersion);

    append_u64(out, static_cast<std::uint64_t>(ckpt.method));
    append_u64(out, ckpt.config.label_count);
    append_u64(out, ckpt.config.embed_dim);
    append_u64(out, ckpt.config.hidden_dim);
    append_u64(out, ckpt.config.slot_count);
    append_f64(out, ckpt.config.horizon);
    append_u64(out, ckpt.params.size());
    for (const auto& [name, tensor] : ckpt.params) {
        append_string(out, name);
        append_tensor(out, tensor);
    }

    append_u64(out, ckpt.calibration.size());
    out.insert(out.end(), ckpt.calibration.begin(), ckpt.calibration.end());

    append_u64(out, ckpt.trainer.has_value() ? 1 : 0);
    if (ckpt.trainer) {
        const TrainerState& ts = *ckpt.trainer;
        append_u64(out, ts.adam_step);
        append_u64(out, ts.next_epoch);
        append_f64(out, ts.best_val_loss);
        append_u64(out, ts.epochs_since_improvement);
        for (const auto& group : {ts.adam_m, ts.adam_v, ts.best_params}) {
            append_u64(out, group.size());
            for (const Tensor& t : group) {
                append_tensor(out, t);
            }
        }
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    file.write(reinterpret_cast<const char*>(out.data()),
               static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw IoError("failed writing checkpoint to '" + path + "'");
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                    std::istreambuf_iterator<char>());
    ByteReader in(bytes);

    char magic[6] = {};
    in.raw(magic, sizeof(magic));
    if (!std::equal(magic, magic + sizeof(magic), kMagic)) {
        throw ParseError("checkpoint: bad magic in '" + path + "'");
    }
    const std::uint64_t version = in.u64();
    if (version != kFormatVersion) {
        throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
    }

    Checkpoint ckpt;
    const std::uint64_t method = in.u64();
    if (method > 2) {
        throw ParseError("checkpoint: unknown method tag " + std::to_string(method));
    }
    ckpt.method = static_cast<Method>(method);
    ckpt.config.label_count = static_cast<std::size_t>(in.u64());
    ckpt.config.embed_dim = static_cast<std::size_t>(in.u64());
    ckpt.config.hidden_dim = static_cast<std::size_t>(in.u64());
    ckpt.config.slot_count = static_cast<std::size_t>(in.u64());
    ckpt.config.horizon = in.f64();

    const std::uint64_t param_count = in.u64();
    if (param_count > 64) {
        throw ParseError("checkpoint: implausible parameter count");
    }
    ckpt.params.reserve(static_cast<std::size_t>(param_count));
    for (std::uint64_t i = 0; i < param_count; ++i) {
        std::string name = read_string(in);
        Tensor tensor = read_tensor(in);
        ckpt.params.emplace_back(std::move(name), std::move(tensor));
    }

    const std::uint64_t calib_len = in.u64();
    if (calib_len > in.remaining()) {
        throw ParseError("checkpoint: calibration section larger than file");
    }
    ckpt.calibration.resize(static_cast<std::size_t>(calib_len));
    if (calib_len > 0) {
        in.raw(ckpt.calibration.data(), ckpt.calibration.size());
    }

    const std::uint64_t has_trainer = in.u64();
    if (has_trainer > 1) {
        throw ParseError("checkpoint: corrupt trainer flag");
    }
    if (has_trainer == 1) {
        TrainerState ts;
        ts.adam_step = in.u64();
        ts.next_epoch = in.u64();
        ts.best_val_loss = in.f64();
        ts.epochs_since_improvement = in.u64();
        for (auto* group : {&ts.adam_m, &ts.adam_v, &ts.best_params}) {
            const std::uint64_t n = in.u64();
            if (n > 64) {
                throw ParseError("checkpoint: implausible trainer tensor count");
            }
            group->reserve(static_cast<std::size_t>(n));
            for (std::uint64_t i = 0; i < n; ++i) {
                group->push_back(read_tensor(in));
            }
        }
        ckpt.trainer = std::move(ts);
    }
    if (!in.done()) {
        throw ParseError("checkpoint: trailing bytes in '" + path + "'");
    }
    return ckpt;
}

Checkpoint snapshot_model(SequenceModel& model, const std::vector<std::uint8_t>& calibration) {
    Checkpoint ckpt;
    ckpt.method = model.method();
    ckpt.config = model.config();
    for (Parameter* p : model.parameters()) {
        ckpt.params.emplace_back(p->name, p->value);
    }
    ckpt.calibration = calibration;
    return ckpt;
}

void restore_model(const Checkpoint& ckpt, SequenceModel& model) {
    std::vector<Parameter*> params = model.parameters();
    if (params.size() != ckpt.params.size()) {
        throw ValidationError("checkpoint restore: expected " + std::to_string(params.size()) +
                              " parameters, file has " + std::to_string(ckpt.params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, tensor] = ckpt.params[i];
        if (params[i]->name != name) {
            throw ValidationError("checkpoint restore: parameter " + std::to_string(i) +
                                  " is '" + name + "', model expects '" + params[i]->name + "'");
        }
        if (params[i]->value.shape != tensor.shape) {
            throw ValidationError("checkpoint restore: shape mismatch for '" + name + "': file " +
                                  shape_str(tensor.shape) + ", model " +
                                  shape_str(params[i]->value.shape));
        }
        params[i]->value = tensor;
    }
}

SequenceModel model_from_checkpoint(const Checkpoint& ckpt) {
    SequenceModel model(ckpt.method, ckpt.config, 0);
    restore_model(ckpt, model);
    return model;
}

} // namespace detpp
