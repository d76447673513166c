#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "detpp/calibration.hpp"
#include "detpp/checkpoint.hpp"
#include "detpp/errors.hpp"
#include "detpp/rng.hpp"

using namespace detpp;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/detpp_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.label_count = 3;
    cfg.embed_dim = 3;
    cfg.hidden_dim = 4;
    cfg.slot_count = 2;
    cfg.horizon = 2.0;
    return cfg;
}

std::vector<std::uint8_t> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

bool same_tensor(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

} // namespace

TEST_CASE("a full training snapshot survives the disk round-trip bit-exactly") {
    SequenceModel model(Method::kDetpp, small_config(), 5);

    CalibrationState cal(2, 9);
    Rng rng(3);
    for (int i = 0; i < 3000; ++i) {
        cal.observe(0, rng.uniform(), i % 3 == 0);
        cal.observe(1, rng.uniform(), i % 2 == 0);
    }

    Checkpoint ckpt = snapshot_model(model, cal.serialize());
    TrainerState ts;
    ts.adam_step = 1234;
    ts.next_epoch = 7;
    ts.best_val_loss = 0.3125;
    ts.epochs_since_improvement = 2;
    for (Parameter* p : model.parameters()) {
        Tensor m = p->value, v = p->value, best = p->value;
        for (double& x : m.data) x = rng.uniform(-1.0, 1.0);
        for (double& x : v.data) x = rng.uniform(0.0, 1.0);
        ts.adam_m.push_back(m);
        ts.adam_v.push_back(v);
        ts.best_params.push_back(best);
    }
    ckpt.trainer = ts;

    TempFile file("roundtrip.ckpt");
    save_checkpoint(ckpt, file.path);
    Checkpoint loaded = load_checkpoint(file.path);

    CHECK(loaded.method == Method::kDetpp);
    CHECK(loaded.config.label_count == 3);
    CHECK(loaded.config.hidden_dim == 4);
    CHECK(loaded.config.horizon == 2.0);
    REQUIRE(loaded.params.size() == ckpt.params.size());
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        CHECK(loaded.params[i].first == ckpt.params[i].first);
        CHECK(same_tensor(loaded.params[i].second, ckpt.params[i].second));
    }
    CHECK(loaded.calibration == ckpt.calibration);
    REQUIRE(loaded.trainer.has_value());
    CHECK(loaded.trainer->adam_step == 1234);
    CHECK(loaded.trainer->next_epoch == 7);
    CHECK(loaded.trainer->best_val_loss == 0.3125);
    CHECK(loaded.trainer->epochs_since_improvement == 2);
    for (std::size_t i = 0; i < ts.adam_m.size(); ++i) {
        CHECK(same_tensor(loaded.trainer->adam_m[i], ts.adam_m[i]));
        CHECK(same_tensor(loaded.trainer->adam_v[i], ts.adam_v[i]));
        CHECK(same_tensor(loaded.trainer->best_params[i], ts.best_params[i]));
    }

    // The restored calibration continues producing the same thresholds.
    CalibrationState cal2 = CalibrationState::deserialize(loaded.calibration);
    CHECK(cal2.threshold(0) == cal.threshold(0));
    CHECK(cal2.threshold(1) == cal.threshold(1));

    // Saving the loaded snapshot reproduces the file byte for byte.
    TempFile file2("roundtrip2.ckpt");
    save_checkpoint(loaded, file2.path);
    CHECK(file_bytes(file.path) == file_bytes(file2.path));
}

TEST_CASE("a model rebuilt from its checkpoint behaves identically") {
    SequenceModel model(Method::kMaeCe, small_config(), 21);
    Checkpoint ckpt = snapshot_model(model, {});
    TempFile file("rebuild.ckpt");
    save_checkpoint(ckpt, file.path);
    SequenceModel rebuilt = model_from_checkpoint(load_checkpoint(file.path));
    CHECK(rebuilt.method() == Method::kMaeCe);

    EventSequence seq;
    seq.id = "s";
    seq.events = {{0.5, 0}, {1.0, 2}, {1.7, 1}};
    Tape ta, tb;
    ModelRun ra(ta, model), rb(tb, rebuilt);
    PredictionSet pa = ra.predict(ra.encode(seq).back());
    PredictionSet pb = rb.predict(rb.encode(seq).back());
    CHECK(ta.value(pa.t_shifts).data == tb.value(pb.t_shifts).data);
    CHECK(ta.value(pa.label_logits).data == tb.value(pb.label_logits).data);
}

TEST_CASE("minimal checkpoints round-trip too") {
    SequenceModel model(Method::kMaeCeK, small_config(), 2);
    Checkpoint ckpt = snapshot_model(model, {});
    TempFile file("minimal.ckpt");
    save_checkpoint(ckpt, file.path);
    Checkpoint loaded = load_checkpoint(file.path);
    CHECK(loaded.calibration.empty());
    CHECK_FALSE(loaded.trainer.has_value());
    CHECK(loaded.method == Method::kMaeCeK);
}

TEST_CASE("damaged checkpoint files are rejected with parse errors") {
    SequenceModel model(Method::kMaeCe, small_config(), 4);
    TempFile file("damaged.ckpt");
    save_checkpoint(snapshot_model(model, {}), file.path);
    const std::vector<std::uint8_t> good = file_bytes(file.path);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    write_bytes(file.path, bad_magic);
    CHECK_THROWS_AS(load_checkpoint(file.path), ParseError);

    auto bad_version = good;
    bad_version[6] = 99;
    write_bytes(file.path, bad_version);
    CHECK_THROWS_AS(load_checkpoint(file.path), ParseError);

    auto truncated = good;
    truncated.resize(truncated.size() / 2);
    write_bytes(file.path, truncated);
    CHECK_THROWS_AS(load_checkpoint(file.path), ParseError);

    auto trailing = good;
    trailing.push_back(0);
    write_bytes(file.path, trailing);
    CHECK_THROWS_AS(load_checkpoint(file.path), ParseError);

    CHECK_THROWS_AS(load_checkpoint("/tmp/detpp_test_does_not_exist.ckpt"), IoError);
}

TEST_CASE("restore refuses mismatched models") {
    SequenceModel model(Method::kMaeCe, small_config(), 4);
    Checkpoint ckpt = snapshot_model(model, {});

    Checkpoint renamed = ckpt;
    std::swap(renamed.params[0].first, renamed.params[1].first);
    CHECK_THROWS_AS(restore_model(renamed, model), ValidationError);

    Checkpoint dropped = ckpt;
    dropped.params.pop_back();
    CHECK_THROWS_AS(restore_model(dropped, model), ValidationError);

    EncoderConfig wider = small_config();
    wider.hidden_dim = 8;
    SequenceModel other(Method::kMaeCe, wider, 4);
    CHECK_THROWS_AS(restore_model(ckpt, other), ValidationError);
}
