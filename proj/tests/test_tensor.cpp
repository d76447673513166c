#include <doctest.h>

#include <cmath>
#include <string>

#include "detpp/errors.hpp"
#include "detpp/rng.hpp"
#include "detpp/tape.hpp"
#include "detpp/tensor.hpp"
#include "fd_oracle.hpp"

using namespace detpp;

TEST_CASE("tensor factories and accessors") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.rows() == 2);
    CHECK(z.cols() == 3);
    CHECK(z.at(1, 2) == 0.0);

    Tensor f = Tensor::full({4}, 1.5);
    CHECK(f.at(3) == 1.5);

    Tensor s = Tensor::scalar(-2.0);
    CHECK(s.numel() == 1);
    CHECK(s.data[0] == -2.0);

    CHECK(shape_str({2, 3}) == "[2,3]");
    CHECK(shape_str({7}) == "[7]");
}

TEST_CASE("abs forward and gradient signs") {
    Tape tape;
    Parameter p("p", Tensor::vector({-2.0, 3.0}));
    Var y = tape.abs(tape.param(p));
    CHECK(tape.value(y).data[0] == 2.0);
    CHECK(tape.value(y).data[1] == 3.0);
    tape.backward(tape.sum(y));
    CHECK(p.grad.data[0] == -1.0);
    CHECK(p.grad.data[1] == 1.0);
}

TEST_CASE("abs subgradient at zero") {
    Tape tape;
    Parameter p("p", Tensor::vector({0.0, 1e-12, -1e-12}));
    Var y = tape.abs(tape.param(p));
    CHECK(tape.value(y).data[0] == 0.0);
    tape.backward(tape.sum(y));
    CHECK(p.grad.data[0] == 0.0);
    CHECK(p.grad.data[1] == 1.0);
    CHECK(p.grad.data[2] == -1.0);
}

TEST_CASE("log_softmax of a symmetric pair") {
    Tape tape;
    Var y = tape.log_softmax(tape.constant(Tensor::vector({0.0, 0.0})));
    CHECK(tape.value(y).data[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(tape.value(y).data[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log_softmax per row on a matrix") {
    Tape tape;
    Tensor m = Tensor::zeros({2, 2});
    m.data = {0.0, 0.0, 1.0, 1.0};
    Var y = tape.log_softmax(tape.constant(m));
    for (double v : tape.value(y).data) {
        CHECK(v == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("sigmoid forward and gradient at zero") {
    Tape tape;
    Parameter p("p", Tensor::vector({0.0}));
    Var y = tape.sigmoid(tape.param(p));
    CHECK(tape.value(y).data[0] == 0.5);
    tape.backward(tape.sum(y));
    CHECK(p.grad.data[0] == 0.25);
}

TEST_CASE("sum gives all-ones gradient and sum of squares gives 2p") {
    Tape tape;
    Parameter p("p", Tensor::vector({0.3, -1.2, 2.0}));
    tape.backward(tape.sum(tape.param(p)));
    for (double g : p.grad.data) CHECK(g == 1.0);

    p.zero_grad();
    tape.reset();
    Var v = tape.param(p);
    tape.backward(tape.sum(tape.mul(v, v)));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(p.grad.data[i] == doctest::Approx(2.0 * p.value.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul forward matrix times vector") {
    Tape tape;
    Tensor a = Tensor::zeros({2, 2});
    a.data = {1.0, 2.0, 3.0, 4.0};
    Var y = tape.matmul(tape.constant(a), tape.constant(Tensor::vector({5.0, 6.0})));
    CHECK(tape.value(y).data[0] == 17.0);
    CHECK(tape.value(y).data[1] == 39.0);
}

TEST_CASE("stable primitives at extreme inputs") {
    Tape tape;
    Var a = tape.log_sigmoid(tape.constant(Tensor::vector({-800.0, 0.0, 30.0})));
    CHECK(tape.value(a).data[0] == doctest::Approx(-800.0).epsilon(1e-12));
    CHECK(tape.value(a).data[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(tape.value(a).data[2] < 0.0);

    Var b = tape.softplus(tape.constant(Tensor::vector({-800.0, 0.0, 800.0})));
    CHECK(tape.value(b).data[0] == 0.0);
    CHECK(tape.value(b).data[1] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(tape.value(b).data[2] == 800.0);

    Var c = tape.log_softmax(tape.constant(Tensor::vector({1000.0, 1000.0})));
    CHECK(tape.value(c).data[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

namespace {

struct Net {
    Parameter w1{"w1", Tensor::zeros({5, 4})};
    Parameter b1{"b1", Tensor::zeros({5})};
    Parameter w2{"w2", Tensor::zeros({3, 5})};
    Parameter b2{"b2", Tensor::zeros({3})};
    Parameter emb{"emb", Tensor::zeros({7, 4})};
    Tensor x = Tensor::zeros({4});

    void randomize(uint64_t seed) {
        Rng rng(seed);
        for (Parameter* p : {&w1, &b1, &w2, &b2, &emb}) {
            for (double& v : p->value.data) v = rng.uniform(-2.0, 2.0);
        }
        for (double& v : x.data) v = rng.uniform(-2.0, 2.0);
    }

    // A composition that touches every primitive at least once.
    double loss(Tape& tape, Var* out = nullptr) {
        Var h1 = tape.tanh(tape.add(tape.matmul(tape.param(w1), tape.constant(x)),
                                    tape.param(b1)));
        Var gate = tape.sigmoid(h1);
        Var z2 = tape.add(tape.matmul(tape.param(w2), tape.mul(gate, h1)), tape.param(b2));
        Var ls = tape.log_softmax(z2);
        Var rows = tape.index_select(tape.param(emb), 0, {1, 3, 6, 3});
        Var cols = tape.index_select(rows, 1, {0, 2});
        Var sl = tape.slice(tape.reshape(cols, {8}), 2, 7);
        Var d = tape.abs(tape.sub(sl, h1));
        Var cat = tape.concat({ls, d, tape.log_sigmoid(z2)});
        Var extra = tape.scale(tape.sum(tape.exp(tape.neg(ls))), 0.01);
        Var pos = tape.sum(tape.log(tape.softplus(tape.mean(d))));
        Var total = tape.add(tape.add(tape.mean(cat), extra), pos);
        if (out) *out = total;
        return tape.scalar_value(total);
    }
};

} // namespace

TEST_CASE("composed graph gradients match central finite differences") {
    for (uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
        Net net;
        net.randomize(seed);

        Tape tape;
        Var loss;
        net.loss(tape, &loss);
        tape.backward(loss);

        for (Parameter* p : {&net.w1, &net.b1, &net.w2, &net.b2, &net.emb}) {
            Tensor fd = fd_gradient(p->value, [&]() {
                Tape fresh;
                return net.loss(fresh);
            });
            INFO("seed ", seed, " parameter ", p->name);
            CHECK(grad_rel_err(p->grad, fd) < 1e-4);
        }
    }
}

TEST_CASE("identical graphs produce bit-identical values and gradients") {
    Net a, b;
    a.randomize(99);
    b.randomize(99);

    Tape ta, tb;
    Var la, lb;
    a.loss(ta, &la);
    b.loss(tb, &lb);
    ta.backward(la);
    tb.backward(lb);

    CHECK(ta.scalar_value(la) == tb.scalar_value(lb));
    Parameter* pa[] = {&a.w1, &a.b1, &a.w2, &a.b2, &a.emb};
    Parameter* pb[] = {&b.w1, &b.b1, &b.w2, &b.b2, &b.emb};
    for (int i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < pa[i]->grad.data.size(); ++j) {
            CHECK(pa[i]->grad.data[j] == pb[i]->grad.data[j]);
        }
    }
}

TEST_CASE("gradients accumulate until zeroed") {
    Parameter p("p", Tensor::vector({1.0, 2.0}));
    {
        Tape tape;
        tape.backward(tape.sum(tape.param(p)));
    }
    {
        Tape tape;
        tape.backward(tape.sum(tape.param(p)));
    }
    CHECK(p.grad.data[0] == 2.0);
    p.zero_grad();
    CHECK(p.grad.data[0] == 0.0);
}

TEST_CASE("shape mismatches name the primitive and both shapes") {
    Tape tape;
    Var a = tape.constant(Tensor::zeros({2}));
    Var b = tape.constant(Tensor::zeros({3}));
    try {
        tape.add(a, b);
        FAIL("expected a shape error");
    } catch (const NumericError& e) {
        std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2]") != std::string::npos);
        CHECK(msg.find("[3]") != std::string::npos);
    }

    Var m = tape.constant(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(tape.matmul(m, a), NumericError);
    CHECK_THROWS_AS(tape.reshape(a, {5}), NumericError);
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape tape;
    Var v = tape.constant(Tensor::zeros({3}));
    CHECK_THROWS_AS(tape.backward(v), NumericError);
}

TEST_CASE("non-finite results are trapped and name the primitive") {
    Tape tape;
    try {
        tape.log(tape.constant(Tensor::vector({0.0})));
        FAIL("expected a numeric trap");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
    CHECK_THROWS_AS(tape.exp(tape.constant(Tensor::vector({1000.0}))), NumericError);
}
