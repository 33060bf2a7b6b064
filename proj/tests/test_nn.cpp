#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "dtql/errors.hpp"
#include "dtql/nn.hpp"
#include "test_util.hpp"

using namespace dtql;
using namespace dtql::testutil;

namespace {
// Independent straight-line re-evaluation of a 4-layer mish MLP, no shared
// code with mlp_forward/mlp_infer.
std::vector<double> reference_forward(const MlpSpec& spec, const ParamStore& store,
                                      const std::vector<double>& input) {
    auto mish = [](double x) {
        double sp = x > 30.0 ? x : std::log1p(std::exp(x));
        return x * std::tanh(sp);
    };
    std::vector<double> cur = input;
    for (size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        const Tensor& w = store.find("l" + std::to_string(l) + ".W").value;
        const Tensor& b = store.find("l" + std::to_string(l) + ".b").value;
        std::vector<double> next(w.cols, 0.0);
        for (int j = 0; j < w.cols; ++j) {
            double s = b.v[j];
            for (int i = 0; i < w.rows; ++i) s += cur[i] * w.at(i, j);
            next[j] = s;
        }
        if (l + 2 < spec.widths.size()) {
            for (auto& x : next) x = mish(x);
        } else if (spec.out_act == OutAct::kTanh) {
            for (auto& x : next) x = std::tanh(x);
        }
        cur = std::move(next);
    }
    return cur;
}
}  // namespace

TEST_CASE("zero weights give zero output, and activation closed forms hold") {
    MlpSpec spec = MlpSpec::make(3, 2, 8, 3, Act::kMish);
    ParamStore store;
    Rng rng(1);
    init_mlp(store, spec, rng);
    for (auto& p : store.entries()) p.value.fill(0.0);
    Tensor x(4, 3);
    Rng rng2(2);
    fill_normal(x, rng2);
    Tensor y = mlp_infer(spec, store, x);
    for (double v : y.v) CHECK(v == 0.0);

    // mish(0) = 0, relu(-1) = 0
    Tape tape;
    int zero = tape.constant(Tensor::scalar(0.0));
    CHECK(tape.value(tape.mish(zero)).v[0] == doctest::Approx(0.0));
    int neg = tape.constant(Tensor::scalar(-1.0));
    CHECK(tape.value(tape.relu(neg)).v[0] == 0.0);
}

TEST_CASE("mish identity and lower bound") {
    Tape tape;
    Rng rng(3);
    Tensor x(1, 200);
    for (int i = 0; i < 200; ++i) x.v[i] = -20.0 + 0.2 * i;
    int xi = tape.constant(x);
    const Tensor& y = tape.value(tape.mish(xi));
    for (int i = 0; i < 200; ++i) {
        double expect = x.v[i] * std::tanh(std::log1p(std::exp(x.v[i])));
        CHECK(rel_close(y.v[i], expect, 1e-12, 1e-14));
        CHECK(y.v[i] >= -0.31);
    }
}

TEST_CASE("random 4-layer net matches an independent reference forward pass") {
    MlpSpec spec = MlpSpec::make(7, 3, 32, 4, Act::kMish);
    ParamStore store;
    Rng rng(11);
    init_mlp(store, spec, rng);
    Rng rng2(12);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x(1, 7);
        fill_normal(x, rng2);
        Tensor y = mlp_infer(spec, store, x);
        auto ref = reference_forward(spec, store, x.v);
        REQUIRE(y.numel() == ref.size());
        for (size_t i = 0; i < ref.size(); ++i) CHECK(rel_close(y.v[i], ref[i], 1e-12, 1e-13));
    }
}

TEST_CASE("forward pass is a pure function of params and input") {
    MlpSpec spec = MlpSpec::make(5, 2, 16, 3, Act::kRelu, OutAct::kTanh);
    ParamStore store;
    Rng rng(21);
    init_mlp(store, spec, rng);
    Tensor x(6, 5);
    Rng rng2(22);
    fill_normal(x, rng2);
    Tensor y1 = mlp_infer(spec, store, x);
    Tensor y2 = mlp_infer(spec, store, x);
    CHECK(y1.v == y2.v);
    Tape t1, t2;
    BoundMlp b1 = bind_mlp(t1, store, spec, false);
    BoundMlp b2 = bind_mlp(t2, store, spec, false);
    CHECK(t1.value(mlp_forward(t1, spec, b1, t1.constant(x))).v ==
          t2.value(mlp_forward(t2, spec, b2, t2.constant(x))).v);
    CHECK(t1.value(mlp_forward(t1, spec, b1, t1.constant(x))).v == y1.v);
}

TEST_CASE("mlp gradient vs central finite differences on a scalar loss") {
    MlpSpec spec = MlpSpec::make(4, 3, 12, 3, Act::kMish);
    ParamStore store;
    Rng rng(31);
    init_mlp(store, spec, rng);
    Tensor x(5, 4), target(5, 3);
    Rng rng2(32);
    fill_normal(x, rng2);
    fill_normal(target, rng2);

    auto eval = [&]() {
        Tape tape;
        BoundMlp b = bind_mlp(tape, store, spec, true);
        int out = mlp_forward(tape, spec, b, tape.constant(x));
        return tape.scalar_value(tape.mean_sumsq(tape.sub(out, tape.constant(target))));
    };

    Tape tape;
    BoundMlp bound = bind_mlp(tape, store, spec, true);
    int out = mlp_forward(tape, spec, bound, tape.constant(x));
    int loss = tape.mean_sumsq(tape.sub(out, tape.constant(target)));
    tape.backward(loss);

    Rng pick(33);
    auto grad_of = [&](const std::string& name) -> const Tensor& {
        for (size_t l = 0; l < bound.weights.size(); ++l) {
            if (name == "l" + std::to_string(l) + ".W") return tape.grad(bound.weights[l]);
            if (name == "l" + std::to_string(l) + ".b") return tape.grad(bound.biases[l]);
        }
        throw usage_error("no grad for " + name);
    };
    double worst = check_store_gradients(store, eval, grad_of, 6, pick);
    INFO("worst rel err ", worst);
    CHECK(worst < 1e-4);
}

TEST_CASE("adam first step and zero-gradient identity") {
    MlpSpec spec = MlpSpec::make(2, 2, 4, 2, Act::kRelu);
    ParamStore store;
    Rng rng(41);
    init_mlp(store, spec, rng);
    std::vector<double> before = store.find("l0.W").value.v;

    // zero gradient: parameters unchanged
    std::vector<std::pair<Param*, const Tensor*>> grads;
    Tensor zero_g(2, 4);
    grads.emplace_back(&store.find("l0.W"), &zero_g);
    adam_step(store, grads, {0.05, 0.9, 0.999, 1e-8});
    CHECK(store.find("l0.W").value.v == before);
    CHECK(store.step_count() == 1);

    // first step on a fresh parameter: magnitude ~ lr per coordinate
    ParamStore fresh;
    Param& p = fresh.add("w", 1, 3);
    p.value = Tensor::row({1.0, -2.0, 0.5});
    Tensor g = Tensor::row({0.3, -0.7, 0.0001});
    std::vector<double> pv = p.value.v;
    adam_step(fresh, {{&p, &g}}, {0.05, 0.9, 0.999, 1e-8});
    for (int i = 0; i < 3; ++i) {
        double delta = pv[i] - p.value.v[i];
        CHECK(rel_close(delta, 0.05 * (g.v[i] > 0 ? 1.0 : -1.0), 1e-3));
    }
}

TEST_CASE("adam descends w^2 monotonically and rejects non-finite gradients") {
    ParamStore store;
    Param& p = store.add("w", 1, 1);
    p.value.v[0] = 1.0;
    double prev = 1.0;
    for (int i = 0; i < 3; ++i) {
        Tensor g = Tensor::scalar(2.0 * p.value.v[0]);
        adam_step(store, {{&p, &g}}, {0.1, 0.9, 0.999, 1e-8});
        CHECK(p.value.v[0] < prev);
        prev = p.value.v[0];
    }
    Tensor bad = Tensor::scalar(std::nan(""));
    double before = p.value.v[0];
    int64_t steps_before = store.step_count();
    CHECK_THROWS_AS(adam_step(store, {{&p, &bad}}, {0.1, 0.9, 0.999, 1e-8}), numeric_error);
    CHECK(p.value.v[0] == before);                 // aborted before mutation
    CHECK(store.step_count() == steps_before);
}

TEST_CASE("sinusoidal embedding basics") {
    CHECK_THROWS_AS(sinusoidal_embed(1.0, 7), config_error);
    CHECK_THROWS_AS(sinusoidal_embed(1.0, 0), config_error);
    Tensor e0 = sinusoidal_embed(0.0, 16);
    CHECK(e0.numel() == 16);
    for (int i = 0; i < 8; ++i) {
        CHECK(e0.v[2 * i] == 0.0);
        CHECK(e0.v[2 * i + 1] == 1.0);
    }
    // distinctness over a bounded range of inputs
    Rng rng(51);
    for (int rep = 0; rep < 50; ++rep) {
        double a = rng.uniform(-2.0, 2.0);
        double b = rng.uniform(-2.0, 2.0);
        if (std::fabs(a - b) < 1e-9) continue;
        Tensor ea = sinusoidal_embed(a, 16);
        Tensor eb = sinusoidal_embed(b, 16);
        double diff = 0.0;
        for (int i = 0; i < 16; ++i) diff = std::max(diff, std::fabs(ea.v[i] - eb.v[i]));
        CHECK(diff > 1e-10);
    }
}

TEST_CASE("checkpoint round-trip preserves values, moments, steps and meta") {
    namespace fs = std::filesystem;
    MlpSpec spec = MlpSpec::make(3, 2, 8, 3, Act::kMish);
    ParamStore store;
    Rng rng(61);
    init_mlp(store, spec, rng);
    // dirty the moments and counter
    Tensor g(3, 8);
    fill_normal(g, rng);
    adam_step(store, {{&store.find("l0.W"), &g}}, {1e-3, 0.9, 0.999, 1e-8});

    fs::path path = fs::temp_directory_path() / "dtql_ckpt_test.bin";
    save_stores(path.string(), {{"net", &store}}, {{"kind", "test"}, {"note", "42"}});
    ParamStore loaded;
    auto meta = load_stores(path.string(), {{"net", &loaded}});
    CHECK(meta.at("kind") == "test");
    CHECK(meta.at("note") == "42");
    CHECK(loaded.step_count() == store.step_count());
    REQUIRE(loaded.entries().size() == store.entries().size());
    for (size_t i = 0; i < store.entries().size(); ++i) {
        CHECK(loaded.entries()[i].name == store.entries()[i].name);
        CHECK(loaded.entries()[i].value.v == store.entries()[i].value.v);
        CHECK(loaded.entries()[i].m.v == store.entries()[i].m.v);
        CHECK(loaded.entries()[i].v.v == store.entries()[i].v.v);
    }

    // corrupted magic is rejected
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTMAGIC garbage";
    }
    ParamStore dummy;
    CHECK_THROWS_AS(load_stores(path.string(), {{"net", &dummy}}), io_error);
    fs::remove(path);
}
