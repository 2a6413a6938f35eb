#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/gradcheck.hpp"
#include "core/rng.hpp"
#include "core/tape.hpp"

using namespace avdit;

namespace {

Array<double> randn(Shape s, Rng& rng) { return Array<double>::randn(std::move(s), rng); }

// Scalar objective: mean(op_output * fixed_random_weights). Non-uniform
// weights so every output element influences the objective differently.
template <class BuildOp>
void check_grads_vs_fd(const char* what, Shape in_shape, BuildOp&& build, uint64_t seed = 7) {
    Rng rng(seed);
    ParamRegistry<double> reg;
    Parameter<double>* p = reg.add("p", in_shape, true);
    p->value = randn(in_shape, rng);

    Array<double> weights;
    {
        // one dry run to learn the output shape
        Tape<double> t;
        Var out = build(t, t.leaf(*p));
        weights = randn(t.shape(out), rng);
    }
    auto objective = [&]() -> double {
        Tape<double> t;
        Var out = build(t, t.leaf(*p));
        Var obj = t.mean_all(t.mul(out, t.constant(weights)));
        return t.data(obj)[0];
    };
    // autodiff
    p->zero_grad();
    {
        Tape<double> t;
        Var out = build(t, t.leaf(*p));
        Var obj = t.mean_all(t.mul(out, t.constant(weights)));
        t.backward(obj);
    }
    REQUIRE(p->has_grad());
    Array<double> fd = finite_diff_grad<double>(objective, *p, 1e-5);
    double worst = 0.0;
    for (int64_t i = 0; i < p->value.numel(); ++i)
        worst = std::max(worst, grad_rel_err(p->grad[static_cast<size_t>(i)], fd.v[static_cast<size_t>(i)]));
    INFO(what << " worst rel err " << worst);
    CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("matmul basic values") {
    Tape<float> t;
    Var i2 = t.constant(Array<float>({2, 2}, {1, 0, 0, 1}));
    Var b = t.constant(Array<float>({2, 2}, {5, 6, 7, 8}));
    Var c = t.matmul(i2, b);
    CHECK(t.data(c) == std::vector<float>{5, 6, 7, 8});

    Var a = t.constant(Array<float>({2, 2}, {1, 2, 3, 4}));
    Var ones = t.constant(Array<float>({2, 1}, {1, 1}));
    Var d = t.matmul(a, ones);
    CHECK(t.data(d) == std::vector<float>{3, 7});
}

TEST_CASE("matmul reports both shapes on inner-dim mismatch") {
    Tape<float> t;
    Var a = t.constant(Array<float>({2, 2}, {1, 2, 3, 4}));
    Var b = t.constant(Array<float>({3, 1}, {1, 1, 1}));
    try {
        t.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,2]") != std::string::npos);
        CHECK(msg.find("[3,1]") != std::string::npos);
    }
}

TEST_CASE("matmul batched against per-slice products") {
    Rng rng(3);
    Array<double> a = Array<double>::randn({2, 3, 4, 5}, rng);
    Array<double> b = Array<double>::randn({2, 3, 5, 2}, rng);
    Tape<double> t;
    Var c = t.matmul(t.constant(a), t.constant(b));
    CHECK(t.shape(c) == Shape{2, 3, 4, 2});
    // slice (1,2): recompute by hand
    const double* pa = a.data() + (1 * 3 + 2) * 4 * 5;
    const double* pb = b.data() + (1 * 3 + 2) * 5 * 2;
    const auto& pc = t.data(c);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0;
            for (int k = 0; k < 5; ++k) acc += pa[i * 5 + k] * pb[k * 2 + j];
            CHECK(pc[(1 * 3 + 2) * 8 + i * 2 + j] == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("softmax symmetry, stability, hand value") {
    Tape<float> t;
    Var a = t.softmax_lastdim(t.constant(Array<float>({2}, {0, 0})));
    CHECK(t.data(a)[0] == doctest::Approx(0.5));
    Var b = t.softmax_lastdim(t.constant(Array<float>({2}, {1000, 1000})));
    CHECK(t.data(b)[0] == doctest::Approx(0.5));
    CHECK(std::isfinite(t.data(b)[0]));
    Var c = t.softmax_lastdim(t.constant(Array<float>({2}, {0.0f, std::log(3.0f)})));
    CHECK(t.data(c)[0] == doctest::Approx(0.25).epsilon(1e-5));
    CHECK(t.data(c)[1] == doctest::Approx(0.75).epsilon(1e-5));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(11);
    Tape<double> t;
    Var y = t.softmax_lastdim(t.constant(Array<double>::randn({3, 4, 7}, rng)));
    const auto& d = t.data(y);
    for (int r = 0; r < 12; ++r) {
        double s = 0;
        for (int j = 0; j < 7; ++j) s += d[r * 7 + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("layer_norm constant row, hand value, shape") {
    Tape<float> t;
    Var a = t.layer_norm(t.constant(Array<float>({4}, {2.5f, 2.5f, 2.5f, 2.5f})), 1e-6f);
    for (float v : t.data(a)) CHECK(std::abs(v) < 1e-3);

    // [1,3]: mean 2, population variance 1 -> normalized [-1, 1]
    Var b = t.layer_norm(t.constant(Array<float>({2}, {1, 3})), 1e-12f);
    CHECK(t.data(b)[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(t.data(b)[1] == doctest::Approx(1.0).epsilon(1e-5));

    Rng rng(5);
    Var c = t.layer_norm(t.constant(Array<double>::randn({3, 5, 8}, rng).cast<float>()), 1e-6f);
    CHECK(t.shape(c) == Shape{3, 5, 8});
    const auto& d = t.data(c);
    for (int r = 0; r < 15; ++r) {
        double mu = 0;
        for (int j = 0; j < 8; ++j) mu += d[r * 8 + j];
        CHECK(std::abs(mu / 8) < 1e-6);
    }
}

TEST_CASE("layer_norm rejects length-1 axis") {
    Tape<float> t;
    CHECK_THROWS_AS(t.layer_norm(t.constant(Array<float>({3, 1}, {1, 2, 3})), 1e-6f), ShapeError);
}

TEST_CASE("backward: dW of sum(W x) broadcasts x") {
    ParamRegistry<double> reg;
    Parameter<double>* w = reg.add("w", {3, 2}, true);
    Rng rng(2);
    w->value = Array<double>::randn({3, 2}, rng);
    Array<double> x({2, 1}, {0.5, -2.0});
    Tape<double> t;
    Var y = t.matmul(t.leaf(*w), t.constant(x));
    Var loss = t.scale(t.mean_all(y), 3.0);  // sum over the 3 rows
    t.backward(loss);
    REQUIRE(w->has_grad());
    for (int i = 0; i < 3; ++i) {
        CHECK(w->grad[i * 2 + 0] == doctest::Approx(0.5));
        CHECK(w->grad[i * 2 + 1] == doctest::Approx(-2.0));
    }
}

TEST_CASE("backward: unused parameter gets no grad") {
    ParamRegistry<double> reg;
    Parameter<double>* used = reg.add("used", {1}, true);
    Parameter<double>* unused = reg.add("unused", {1}, true);
    used->value.v[0] = 3.0;
    unused->value.v[0] = 4.0;
    Tape<double> t;
    Var x = t.leaf(*used);
    t.leaf(*unused);
    Var loss = t.mean_all(t.mul(x, x));
    t.backward(loss);
    CHECK(used->has_grad());
    CHECK(used->grad[0] == doctest::Approx(6.0));  // d(x^2)/dx at 3
    CHECK_FALSE(unused->has_grad());
}

TEST_CASE("backward: parameter used twice accumulates") {
    ParamRegistry<double> reg;
    Parameter<double>* p = reg.add("p", {1}, true);
    p->value.v[0] = 2.0;
    Tape<double> t;
    Var a = t.leaf(*p);
    Var b = t.leaf(*p);  // second binding of the same parameter
    Var loss = t.mean_all(t.add(t.mul(a, a), b));  // x^2 + x -> 2x + 1 = 5
    t.backward(loss);
    CHECK(p->grad[0] == doctest::Approx(5.0));
}

TEST_CASE("backward rejects non-scalar loss") {
    ParamRegistry<double> reg;
    Parameter<double>* p = reg.add("p", {2}, true);
    Tape<double> t;
    Var x = t.leaf(*p);
    CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("finite_diff: calculus identity and contract") {
    ParamRegistry<double> reg;
    Parameter<double>* p = reg.add("x", {1}, true);
    p->value.v[0] = 3.0;
    auto f = [&]() { return p->value.v[0] * p->value.v[0]; };
    Array<double> g = finite_diff_grad<double>(f, *p, 1e-5);
    CHECK(std::abs(g.v[0] - 6.0) < 1e-8);

    auto fconst = [&]() { return 1.25; };
    Array<double> gc = finite_diff_grad<double>(fconst, *p, 1e-5);
    CHECK(gc.v[0] == 0.0);

    CHECK_THROWS_AS(finite_diff_grad<double>(f, *p, 0.0), ContractError);
    CHECK_THROWS_AS(finite_diff_grad<double>(f, *p, -1e-5), ContractError);
}

TEST_CASE("autodiff matches central differences for every primitive") {
    check_grads_vs_fd("matmul lhs", {3, 4}, [](Tape<double>& t, Var p) {
        Rng r(91);
        return t.matmul(p, t.constant(Array<double>::randn({4, 2}, r)));
    });
    check_grads_vs_fd("matmul rhs", {4, 2}, [](Tape<double>& t, Var p) {
        Rng r(92);
        return t.matmul(t.constant(Array<double>::randn({3, 4}, r)), p);
    });
    check_grads_vs_fd("matmul batched", {2, 3, 4}, [](Tape<double>& t, Var p) {
        Rng r(93);
        return t.matmul(p, t.constant(Array<double>::randn({2, 4, 3}, r)));
    });
    check_grads_vs_fd("add", {2, 3}, [](Tape<double>& t, Var p) {
        Rng r(94);
        return t.add(p, t.constant(Array<double>::randn({2, 3}, r)));
    });
    check_grads_vs_fd("sub", {2, 3}, [](Tape<double>& t, Var p) {
        Rng r(95);
        return t.sub(t.constant(Array<double>::randn({2, 3}, r)), p);
    });
    check_grads_vs_fd("mul", {5}, [](Tape<double>& t, Var p) {
        Rng r(96);
        return t.mul(p, t.constant(Array<double>::randn({5}, r)));
    });
    check_grads_vs_fd("mul self", {5}, [](Tape<double>& t, Var p) { return t.mul(p, p); });
    check_grads_vs_fd("scale", {2, 2, 2}, [](Tape<double>& t, Var p) { return t.scale(p, -1.7); });
    check_grads_vs_fd("add_scalar", {3, 2}, [](Tape<double>& t, Var p) { return t.add_scalar(p, 0.3); });
    check_grads_vs_fd("mul_scalar gate side", {1}, [](Tape<double>& t, Var p) {
        Rng r(97);
        return t.mul_scalar(t.constant(Array<double>::randn({3, 4}, r)), p);
    });
    check_grads_vs_fd("mul_scalar tensor side", {3, 4}, [](Tape<double>& t, Var p) {
        Rng r(98);
        return t.mul_scalar(p, t.constant(Array<double>::randn({1}, r)));
    });
    check_grads_vs_fd("bias_add bias side", {4}, [](Tape<double>& t, Var p) {
        Rng r(99);
        return t.bias_add(t.constant(Array<double>::randn({2, 3, 4}, r)), p);
    });
    check_grads_vs_fd("gelu", {3, 3}, [](Tape<double>& t, Var p) { return t.gelu(p); });
    check_grads_vs_fd("exp", {3, 3}, [](Tape<double>& t, Var p) { return t.exp(t.scale(p, 0.2)); });
    check_grads_vs_fd("softmax", {3, 5}, [](Tape<double>& t, Var p) { return t.softmax_lastdim(p); });
    check_grads_vs_fd("layer_norm", {4, 6}, [](Tape<double>& t, Var p) {
        return t.layer_norm(p, 1e-6);
    });
    check_grads_vs_fd("mean_axis", {3, 4, 2}, [](Tape<double>& t, Var p) { return t.mean_axis(p, 1); });
    check_grads_vs_fd("mean_all", {2, 2, 2, 2}, [](Tape<double>& t, Var p) { return t.mean_all(p); });
    check_grads_vs_fd("reshape", {2, 6}, [](Tape<double>& t, Var p) {
        return t.reshape(p, {3, 4});
    });
    check_grads_vs_fd("permute", {2, 3, 4, 2}, [](Tape<double>& t, Var p) {
        return t.permute(p, {3, 1, 0, 2});
    });
    check_grads_vs_fd("concat lhs", {2, 3}, [](Tape<double>& t, Var p) {
        Rng r(100);
        return t.concat(p, t.constant(Array<double>::randn({2, 2}, r)), 1);
    });
    check_grads_vs_fd("split", {2, 7}, [](Tape<double>& t, Var p) {
        auto parts = t.split(p, 1, {3, 4});
        return t.concat(t.scale(parts[0], 2.0), parts[1], 1);
    });
    check_grads_vs_fd("broadcast_axis", {2, 1, 3}, [](Tape<double>& t, Var p) {
        return t.broadcast_axis(p, 1, 4);
    });
    check_grads_vs_fd("modulate tokens", {2, 3, 4}, [](Tape<double>& t, Var p) {
        Rng r(101);
        Var shift = t.constant(Array<double>::randn({2, 4}, r));
        Var scl = t.constant(Array<double>::randn({2, 4}, r));
        return t.modulate(p, shift, scl, 1e-6);
    });
    check_grads_vs_fd("modulate shift/scale", {2, 4}, [](Tape<double>& t, Var p) {
        Rng r(102);
        Var x = t.constant(Array<double>::randn({2, 5, 4}, r));
        return t.modulate(x, p, p, 1e-6);
    });
}

TEST_CASE("ops are pure: identical inputs give bit-identical outputs") {
    Rng rng(42);
    Array<float> a = Array<double>::randn({4, 8, 16}, rng).cast<float>();
    Array<float> w = Array<double>::randn({16, 16}, rng).cast<float>();
    auto run = [&]() {
        Tape<float> t;
        Var x = t.constant(a);
        Var y = t.matmul(x, t.constant(w));
        y = t.softmax_lastdim(t.layer_norm(y, 1e-6f));
        y = t.gelu(t.mean_axis(y, 1));
        return t.data(y);
    };
    auto r1 = run();
    auto r2 = run();
    REQUIRE(r1.size() == r2.size());
    for (size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("gradients disabled tape computes values but refuses backward") {
    ParamRegistry<float> reg;
    Parameter<float>* p = reg.add("p", {2}, true);
    p->value.v = {1, 2};
    Tape<float> t(false);
    Var x = t.leaf(*p);
    Var y = t.mean_all(t.mul(x, x));
    CHECK(t.data(y)[0] == doctest::Approx(2.5));
    CHECK_THROWS_AS(t.backward(y), ContractError);
}
