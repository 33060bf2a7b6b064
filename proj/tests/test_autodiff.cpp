#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "dtql/errors.hpp"
#include "dtql/nn.hpp"
#include "dtql/rng.hpp"
#include "dtql/tape.hpp"
#include "test_util.hpp"

using namespace dtql;
using namespace dtql::testutil;

TEST_CASE("tanh derivative at the origin is one") {
    Tape tape;
    int x = tape.variable(Tensor::scalar(0.0));
    int y = tape.tanh_(x);
    tape.backward(y);
    CHECK(tape.grad(x).v[0] == doctest::Approx(1.0));
}

TEST_CASE("fan-out accumulates: d(x+x)/dx = 2") {
    Tape tape;
    int x = tape.variable(Tensor::scalar(1.5));
    int y = tape.add(x, x);
    tape.backward(y);
    CHECK(tape.grad(x).v[0] == doctest::Approx(2.0));
}

TEST_CASE("backward on an empty tape is a usage error") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(0), usage_error);
}

TEST_CASE("double backward is rejected") {
    Tape tape;
    int x = tape.variable(Tensor::scalar(2.0));
    int y = tape.mul_elem(x, x);
    tape.backward(y);
    CHECK_THROWS_AS(tape.backward(y), usage_error);
}

TEST_CASE("gradients do not flow into constants") {
    Tape tape;
    int x = tape.variable(Tensor::scalar(1.0));
    int c = tape.constant(Tensor::scalar(3.0));
    int y = tape.mul_elem(x, c);
    tape.backward(y);
    CHECK(tape.grad(x).v[0] == doctest::Approx(3.0));
    CHECK(!tape.has_grad(c));
}

TEST_CASE("min2 routes gradient to the achieving input, ties to the first") {
    Tape tape;
    Tensor a = Tensor::row({1.0, 5.0, 2.0});
    Tensor b = Tensor::row({3.0, 4.0, 2.0});
    int ai = tape.variable(a);
    int bi = tape.variable(b);
    int m = tape.min2(ai, bi);
    Tensor seed(1, 3, 1.0);
    tape.backward(m, &seed);
    CHECK(tape.grad(ai).v[0] == 1.0);  // a wins
    CHECK(tape.grad(ai).v[1] == 0.0);  // b wins
    CHECK(tape.grad(ai).v[2] == 1.0);  // tie -> first
    CHECK(tape.grad(bi).v[0] == 0.0);
    CHECK(tape.grad(bi).v[1] == 1.0);
    CHECK(tape.grad(bi).v[2] == 0.0);
}

TEST_CASE("every tape op matches central finite differences") {
    // One composite graph touching each primitive, differentiated at a
    // variable input; 20 seeds as the gradient-integrity contract demands.
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 7919 + 3);
        Tensor x0(3, 4);
        fill_normal(x0, rng);
        for (auto& v : x0.v) v *= 0.5;
        Tensor w0(4, 5);
        fill_normal(w0, rng);
        Tensor b0(1, 5);
        fill_normal(b0, rng);
        Tensor other(3, 5);
        fill_normal(other, rng);
        Tensor row_w(1, 3);
        fill_normal(row_w, rng);
        Tensor eps(3, 5);
        fill_normal(eps, rng);

        auto build = [&](Tape& tape, int& x_out) {
            int x = tape.leaf(&x0, true);
            x_out = x;
            int w = tape.leaf(&w0, true);
            int b = tape.leaf(&b0, true);
            int h = tape.add_row(tape.matmul(x, w), b);
            int m = tape.mish(h);
            int t = tape.tanh_(tape.scale(m, 0.7));
            int rl = tape.relu(tape.sub(t, tape.constant(other)));
            int e = tape.exp_(tape.scale(rl, 0.3));
            int me = tape.mul_elem(e, tape.constant(eps));
            int cl = tape.clamp(me, -0.8, 0.9);
            int lg = tape.log1msq(tape.scale(tape.tanh_(cl), 0.99));
            int cc = tape.concat_cols(cl, lg);
            int mn = tape.min2(tape.scale(cc, 1.1), cc);
            int sr = tape.scale_rows(mn, row_w);
            int l1 = tape.mean_sumsq(sr, Tensor::row({0.5, 1.5, 1.0}));
            int l2 = tape.expectile_mean(tape.sub(mn, tape.scale(mn, 0.3)), 0.73);
            int l3 = tape.mean_sum(sr);
            return tape.add(tape.add(l1, l2), l3);
        };

        Tape tape;
        int x_node = -1;
        int loss = build(tape, x_node);
        tape.backward(loss);
        Tensor analytic = tape.grad(x_node);

        auto eval = [&]() {
            Tape t2;
            int unused = -1;
            return t2.scalar_value(build(t2, unused));
        };
        double worst = 0.0;
        for (size_t i = 0; i < x0.numel(); ++i) {
            double fd = central_diff(x0, i, eval);
            worst = std::max(worst, grad_rel_err(analytic.v[i], fd));
        }
        INFO("seed ", seed, " worst rel err ", worst);
        // clamp/relu/min kinks can sit exactly on a sampled point; the
        // tolerance here is for smooth coordinates, so use a modest slack
        CHECK(worst < 2e-4);
    }
}

TEST_CASE("matmul gradients against finite differences for both operands") {
    Rng rng(99);
    Tensor a0(4, 6), b0(6, 3);
    fill_normal(a0, rng);
    fill_normal(b0, rng);
    auto build = [&](Tape& t, int& ai, int& bi) {
        ai = t.leaf(&a0, true);
        bi = t.leaf(&b0, true);
        return t.mean_sumsq(t.matmul(ai, bi));
    };
    Tape tape;
    int ai = -1, bi = -1;
    tape.backward(build(tape, ai, bi));
    auto eval = [&]() {
        Tape t;
        int u = -1, v = -1;
        return t.scalar_value(build(t, u, v));
    };
    for (size_t i = 0; i < a0.numel(); ++i)
        CHECK(grad_rel_err(tape.grad(ai).v[i], central_diff(a0, i, eval)) < 1e-6);
    for (size_t i = 0; i < b0.numel(); ++i)
        CHECK(grad_rel_err(tape.grad(bi).v[i], central_diff(b0, i, eval)) < 1e-6);
}
