#include <doctest.h>

#include <cmath>

#include "detpp/errors.hpp"
#include "detpp/matching.hpp"
#include "detpp/model.hpp"
#include "detpp/rng.hpp"
#include "fd_oracle.hpp"

using namespace detpp;

namespace {

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.label_count = 3;
    cfg.embed_dim = 3;
    cfg.hidden_dim = 4;
    cfg.slot_count = 2;
    cfg.horizon = 2.0;
    return cfg;
}

EventSequence make_seq(std::vector<Event> events) {
    EventSequence seq;
    seq.id = "fixture";
    seq.events = std::move(events);
    return seq;
}

void zero_head(SequenceModel& model) {
    for (Parameter* p : model.parameters()) {
        if (p->name == "head_w" || p->name == "head_b") {
            std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
        }
    }
}

} // namespace

TEST_CASE("method names round-trip and bad names are rejected") {
    for (Method m : {Method::kDetpp, Method::kMaeCe, Method::kMaeCeK}) {
        CHECK(method_from_string(method_to_string(m)) == m);
    }
    CHECK_THROWS_AS(method_from_string("transformer"), ValidationError);
}

TEST_CASE("encode yields one state per event and rejects empty input") {
    SequenceModel model(Method::kDetpp, small_config(), 1);
    Tape tape;
    ModelRun run(tape, model);
    auto states = run.encode(make_seq({{0.5, 0}, {1.0, 2}, {1.7, 1}}));
    CHECK(states.size() == 3);
    for (Var h : states) {
        CHECK(tape.value(h).shape == std::vector<std::size_t>{4});
    }
    CHECK_THROWS_AS(run.encode(make_seq({})), ValidationError);
}

TEST_CASE("hidden states depend only on the prefix") {
    SequenceModel model(Method::kMaeCe, small_config(), 3);
    EventSequence a = make_seq({{0.1, 0}, {0.4, 1}, {0.9, 2}, {1.3, 1}, {1.8, 0}, {2.5, 2}});
    EventSequence b = a;
    b.events[5] = {9.0, 0};
    b.events.push_back({11.0, 1});

    Tape ta, tb;
    ModelRun ra(ta, model), rb(tb, model);
    auto ha = ra.encode(a);
    auto hb = rb.encode(b);
    for (std::size_t i = 0; i < 5; ++i) {
        const Tensor& va = ta.value(ha[i]);
        const Tensor& vb = tb.value(hb[i]);
        for (std::size_t j = 0; j < va.data.size(); ++j) {
            CHECK(va.data[j] == vb.data[j]);
        }
    }
}

TEST_CASE("zeroed K-slot head gives the analytic resting outputs") {
    SequenceModel model(Method::kDetpp, small_config(), 5);
    zero_head(model);
    Tape tape;
    ModelRun run(tape, model);
    auto states = run.encode(make_seq({{1.0, 1}, {1.5, 0}}));
    PredictionSet preds = run.predict(states.back());

    for (double o : presence_probs(tape, preds)) {
        CHECK(o == 0.5);
    }
    for (double shift : predicted_shifts(tape, preds)) {
        CHECK(shift == doctest::Approx(1.0).epsilon(1e-12)); // horizon / 2
    }
    Tensor probs = label_probs(tape, preds);
    for (double p : probs.data) {
        CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("zeroed baseline heads rest at softplus(0)") {
    for (Method m : {Method::kMaeCe, Method::kMaeCeK}) {
        SequenceModel model(m, small_config(), 5);
        zero_head(model);
        Tape tape;
        ModelRun run(tape, model);
        auto states = run.encode(make_seq({{1.0, 1}}));
        PredictionSet preds = run.predict(states.back());
        CHECK(preds.slot_count == (m == Method::kMaeCe ? 1 : 2));
        for (double shift : predicted_shifts(tape, preds)) {
            CHECK(shift == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        }
        Tensor probs = label_probs(tape, preds);
        for (double p : probs.data) {
            CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("prediction set invariants hold under random parameters") {
    SequenceModel model(Method::kDetpp, small_config(), 17);
    Tape tape;
    ModelRun run(tape, model);
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor h = Tensor::zeros({4});
        for (double& x : h.data) x = rng.uniform(-3.0, 3.0);
        PredictionSet preds = run.predict(tape.constant(h));
        for (double o : presence_probs(tape, preds)) {
            CHECK(o > 0.0);
            CHECK(o < 1.0);
        }
        for (double shift : predicted_shifts(tape, preds)) {
            CHECK(shift > 0.0);
        }
        Tensor probs = label_probs(tape, preds);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < probs.cols(); ++c) s += probs.at(r, c);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("no slot is dead at random initialization") {
    SequenceModel model(Method::kDetpp, small_config(), 23);
    Tape tape;
    ModelRun run(tape, model);
    Rng rng(9);
    Tensor h = Tensor::zeros({4});
    for (double& x : h.data) x = rng.uniform(-1.0, 1.0);
    Tensor h2 = h;
    for (double& x : h2.data) x += rng.uniform(0.01, 0.05);

    PredictionSet a = run.predict(tape.constant(h));
    PredictionSet b = run.predict(tape.constant(h2));
    auto oa = presence_probs(tape, a), ob = presence_probs(tape, b);
    auto sa = predicted_shifts(tape, a), sb = predicted_shifts(tape, b);
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(oa[j] != ob[j]);
        CHECK(sa[j] != sb[j]);
    }
}

TEST_CASE("presence bias resets exactly the presence logits") {
    EncoderConfig cfg = small_config();
    SequenceModel model(Method::kDetpp, cfg, 2);
    zero_head(model);
    const double logit = std::log(0.2 / 0.8);
    model.set_presence_bias(logit);
    Tape tape;
    ModelRun run(tape, model);
    PredictionSet preds = run.predict(tape.constant(Tensor::zeros({4})));
    for (double o : presence_probs(tape, preds)) {
        CHECK(o == doctest::Approx(0.2).epsilon(1e-12));
    }
    for (double shift : predicted_shifts(tape, preds)) {
        CHECK(shift == doctest::Approx(cfg.horizon / 2.0).epsilon(1e-12));
    }

    SequenceModel baseline(Method::kMaeCe, cfg, 2);
    CHECK_THROWS_AS(baseline.set_presence_bias(0.0), ValidationError);
}

TEST_CASE("same seed reproduces parameters bit-exactly") {
    SequenceModel a(Method::kDetpp, small_config(), 11);
    SequenceModel b(Method::kDetpp, small_config(), 11);
    SequenceModel c(Method::kDetpp, small_config(), 12);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->value.data.size() == pb[i]->value.data.size());
        for (std::size_t j = 0; j < pa[i]->value.data.size(); ++j) {
            CHECK(pa[i]->value.data[j] == pb[i]->value.data[j]);
            any_diff |= pa[i]->value.data[j] != pc[i]->value.data[j];
        }
    }
    CHECK(any_diff);
}

TEST_CASE("encoder gradients through a scalar readout match finite differences") {
    EncoderConfig cfg = small_config();
    SequenceModel model(Method::kMaeCe, cfg, 31);
    EventSequence seq = make_seq({{0.2, 1}, {0.9, 0}, {1.1, 2}, {2.0, 1}});

    auto eval = [&](Tape& tape) {
        ModelRun run(tape, model);
        auto states = run.encode(seq);
        PredictionSet preds = run.predict(states.back());
        return tape.add(tape.sum(preds.t_shifts), tape.sum(preds.label_logits));
    };

    Tape tape;
    tape.backward(eval(tape));
    for (Parameter* p : model.parameters()) {
        Tensor fd = fd_gradient(p->value, [&]() {
            Tape fresh;
            return fresh.scalar_value(eval(fresh));
        });
        INFO("parameter ", p->name);
        CHECK(grad_rel_err(p->grad, fd) < 1e-4);
    }
}

TEST_CASE("full K-slot pipeline gradients match finite differences") {
    EncoderConfig cfg = small_config();
    SequenceModel model(Method::kDetpp, cfg, 37);
    EventSequence seq = make_seq({{0.2, 1}, {0.9, 0}, {1.4, 2}});
    HorizonTarget target;
    target.anchor = 1.4;
    target.horizon = cfg.horizon;
    target.events = {{2.1, 0}, {3.0, 2}};

    auto eval = [&](Tape& tape) {
        ModelRun run(tape, model);
        auto states = run.encode(seq);
        PredictionSet preds = run.predict(states.back());
        return matching_loss(tape, target, preds).loss;
    };

    Tape tape;
    tape.backward(eval(tape));
    for (Parameter* p : model.parameters()) {
        Tensor fd = fd_gradient(p->value, [&]() {
            Tape fresh;
            return fresh.scalar_value(eval(fresh));
        });
        INFO("parameter ", p->name);
        CHECK(grad_rel_err(p->grad, fd) < 1e-4);
    }
}
