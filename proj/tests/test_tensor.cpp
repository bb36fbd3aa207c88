#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "sphlat/checkpoint.hpp"
#include "sphlat/nn.hpp"
#include "sphlat/optim.hpp"
#include "sphlat/tensor.hpp"
#include "test_util.hpp"

using namespace sphlat;

namespace {

Parameter make_param(const std::string& name, Shape shape, RngStream& rng, double lo = -1.0,
                     double hi = 1.0) {
    Parameter p(name, std::move(shape));
    for (double& v : p.value) v = rng.uniform_range(lo, hi);
    return p;
}

// Reduce any tensor to a scalar with fixed random weights so every output
// element contributes to the loss.
Tensor weighted_sum(Tape& t, Tensor x, RngStream& rng) {
    Vec w(x.size());
    for (double& v : w) v = rng.uniform_range(-1.0, 1.0);
    return sum(mul(x, t.constant(x.shape(), std::move(w))));
}

}  // namespace

TEST_CASE("forward op examples") {
    Tape t;
    Tensor a = t.constant({2, 3}, Vec(6, 1.0));
    Tensor b = t.constant({3, 2}, Vec(6, 1.0));
    Tensor m = matmul(a, b);
    for (double v : m.values()) REQUIRE(v == 3.0);

    Tensor z = t.constant({1}, {0.0});
    REQUIRE(softplus(z).scalar() == Catch::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor v34 = t.constant({2}, {3.0, 4.0});
    REQUIRE(l2norm_last(v34).values()[0] == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("shape errors name the op and shapes") {
    Tape t;
    Tensor a = t.constant({2, 3}, Vec(6, 1.0));
    Tensor b = t.constant({4, 2}, Vec(8, 1.0));
    try {
        matmul(a, b);
        FAIL("expected shape error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("matmul") != std::string::npos);
        REQUIRE(msg.find("(2,3)") != std::string::npos);
        REQUIRE(msg.find("(4,2)") != std::string::npos);
    }
    REQUIRE_THROWS_AS(add(a, b), std::invalid_argument);
}

TEST_CASE("domain errors for log and sqrt of negative input") {
    Tape t;
    Tensor a = t.constant({2}, {1.0, -0.5});
    REQUIRE_THROWS_AS(log(a), std::domain_error);
    REQUIRE_THROWS_AS(sqrt(a), std::domain_error);
    REQUIRE_THROWS_AS(pow(a, 0.5), std::domain_error);
}

TEST_CASE("backward basics") {
    Parameter x("x", {1});
    x.value[0] = 3.0;
    {
        Tape t;
        Tensor xs = t.param(x);
        Tensor loss = mul(xs, xs);
        t.backward(loss);
    }
    REQUIRE(x.grad[0] == Catch::Approx(6.0).margin(1e-14));

    Parameter v("v", {4});
    for (std::size_t i = 0; i < 4; ++i) v.value[i] = 0.3 * (i + 1.0);
    {
        Tape t;
        t.backward(sum(t.param(v)));
    }
    for (double g : v.grad) REQUIRE(g == 1.0);

    // repeated backward without zeroing accumulates
    {
        Tape t;
        t.backward(sum(t.param(v)));
    }
    for (double g : v.grad) REQUIRE(g == 2.0);

    Tape t;
    Tensor nonscalar = t.constant({2}, {1.0, 2.0});
    REQUIRE_THROWS_AS(t.backward(nonscalar), std::invalid_argument);
}

TEST_CASE("gradients match central finite differences across all ops") {
    // >= 100 randomized checks overall; every registered op is covered.
    int checks = 0;
    auto run = [&](const std::string& label, Shape a_shape,
                   const std::function<Tensor(Tape&, Tensor)>& body, double lo = -1.0,
                   double hi = 1.0, int seeds = 6) {
        for (int s = 0; s < seeds; ++s) {
            RngStream rng(77 + s, std::hash<std::string>{}(label) & 0xffff);
            Parameter p = make_param("p", a_shape, rng, lo, hi);
            auto loss = [&](Tape& t) -> Tensor {
                RngStream wrng(55, 1);  // fixed weights across re-evaluations
                return weighted_sum(t, body(t, t.param(p)), wrng);
            };
            auto res = testutil::check_gradients({&p}, loss);
            INFO(label << " seed " << s << " worst " << res.worst_param);
            REQUIRE(res.max_rel_err < 1e-5);
            ++checks;
        }
    };

    run("add_same", {2, 3}, [](Tape& t, Tensor x) {
        Tensor c = t.constant({2, 3}, {0.3, -0.7, 1.1, 0.2, -0.4, 0.9});
        return add(x, c);
    });
    run("mul_div_chain", {2, 3}, [](Tape& t, Tensor x) {
        Tensor c = t.constant({2, 3}, {1.3, 0.7, 1.1, 2.2, 0.4, 0.9});
        return div(mul(x, x), c);
    });
    run("sub", {5}, [](Tape& t, Tensor x) {
        return sub(x, mul_scalar(x, 0.25));
    });
    run("scalar_broadcast", {2, 3}, [](Tape& t, Tensor x) {
        Tensor s = t.constant({1}, {0.8});
        return add(mul(s, x), div(s, add_scalar(mul(x, x), 1.0)));
    });
    run("row_broadcast", {3, 4}, [](Tape& t, Tensor x) {
        Tensor bias = t.constant({4}, {0.1, -0.2, 0.3, 0.4});
        return mul(add(x, bias), bias);
    });
    run("col_broadcast", {3, 4}, [](Tape& t, Tensor x) {
        Tensor col = t.constant({3, 1}, {0.5, -1.2, 2.0});
        return mul(add(x, col), col);
    });
    run("matmul", {2, 3}, [](Tape& t, Tensor x) {
        Tensor w = t.constant({3, 4}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8,
                                       -0.9, 1.0, 0.11, -0.12});
        return matmul(x, w);
    });
    run("exp_log", {4}, [](Tape& t, Tensor x) {
        return log(add_scalar(exp(x), 0.5));
    });
    run("log1p_sqrt", {4}, [](Tape& t, Tensor x) {
        return sqrt(add_scalar(log1p(mul(x, x)), 0.2));
    }, 0.1, 1.0);
    run("pow", {4}, [](Tape& t, Tensor x) { return pow(x, 2.5); }, 0.2, 1.5);
    run("pow_int", {4}, [](Tape& t, Tensor x) { return pow(x, 3.0); });
    run("silu_softplus_sigmoid", {6}, [](Tape& t, Tensor x) {
        return add(silu(x), mul(softplus(x), sigmoid(x)));
    }, -2.0, 2.0);
    run("mean", {3, 3}, [](Tape& t, Tensor x) { return mean(mul(x, x)); });
    run("reshape_concat_slice", {2, 4}, [](Tape& t, Tensor x) {
        Tensor r = reshape(x, {4, 2});
        Tensor c = concat_last({r, mul_scalar(r, 2.0)});
        return slice_last(c, 1, 2);
    });
    run("slice_rows_select", {4, 3}, [](Tape& t, Tensor x) {
        Tensor top = slice_rows(x, 1, 2);
        Tensor row = row_select(x, 3);
        return add(sum(top), sum(mul(row, row)));
    });
    run("softmax", {2, 5}, [](Tape& t, Tensor x) { return softmax_last(x); }, -2.0, 2.0);
    run("l2norm", {3, 4}, [](Tape& t, Tensor x) { return l2norm_last(x); }, 0.3, 1.5);
    run("rms_norm", {3, 4}, [](Tape& t, Tensor x) {
        Tensor xm = slice_rows(x, 0, 2);
        Tensor gain = reshape(slice_rows(x, 2, 1), {4});
        return rms_norm(xm, gain);
    }, 0.2, 1.2);
    run("rope", {4, 6}, [](Tape& t, Tensor x) {
        Vec cos_tab(12), sin_tab(12);
        for (int i = 0; i < 12; ++i) {
            cos_tab[i] = std::cos(0.3 * i);
            sin_tab[i] = std::sin(0.3 * i);
        }
        return rope_rotate(x, cos_tab, sin_tab);
    });
    run("attention_square", {12, 4}, [](Tape& t, Tensor x) {
        Tensor q = slice_rows(x, 0, 4);
        Tensor k = slice_rows(x, 4, 4);
        Tensor v = slice_rows(x, 8, 4);
        return causal_attention(q, k, v, 2);
    });
    run("attention_incremental", {9, 4}, [](Tape& t, Tensor x) {
        Tensor q = slice_rows(x, 0, 1);
        Tensor k = slice_rows(x, 1, 4);
        Tensor v = slice_rows(x, 5, 4);
        return causal_attention(q, k, v, 2, 3);
    });
    run("affine", {2, 3}, [](Tape& t, Tensor x) {
        Tensor w = t.constant({3, 2}, {0.4, -0.2, 0.1, 0.7, -0.5, 0.3});
        Tensor b = t.constant({2}, {0.05, -0.15});
        return silu(affine(x, w, b));
    });

    REQUIRE(checks >= 100);
}

TEST_CASE("forward evaluation is bit-identical across runs") {
    auto run_once = [] {
        RngStream rng(2024, 7);
        Parameter p = make_param("p", {4, 4}, rng);
        Tape t;
        Tensor y = softmax_last(matmul(t.param(p), t.param(p)));
        return y.values();
    };
    const Vec a = run_once();
    const Vec b = run_once();
    REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("adamw examples") {
    SECTION("zero gradient, zero weight decay leaves parameters unchanged") {
        Parameter p("p", {3});
        p.value = {1.0, -2.0, 0.5};
        p.has_grad = true;  // populated with zeros
        AdamW opt({&p}, {});
        opt.step();
        REQUIRE(p.value[0] == 1.0);
        REQUIRE(p.value[1] == -2.0);
        REQUIRE(p.value[2] == 0.5);
    }
    SECTION("zero gradient with decay scales by (1 - lr * wd)") {
        Parameter p("p", {2});
        p.value = {2.0, -4.0};
        p.has_grad = true;
        AdamWConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.05;
        AdamW opt({&p}, cfg);
        opt.step();
        REQUIRE(p.value[0] == Catch::Approx(2.0 * (1.0 - 0.005)).margin(1e-15));
        REQUIRE(p.value[1] == Catch::Approx(-4.0 * (1.0 - 0.005)).margin(1e-15));
    }
    SECTION("single bias-corrected step") {
        Parameter p("p", {1});
        p.value = {1.0};
        p.grad = {1.0};
        p.has_grad = true;
        AdamWConfig cfg;
        cfg.lr = 0.1;
        cfg.beta1 = 0.9;
        cfg.beta2 = 0.95;
        cfg.eps = 1e-8;
        cfg.weight_decay = 0.0;
        AdamW opt({&p}, cfg);
        opt.step();
        REQUIRE(p.value[0] == Catch::Approx(0.9).margin(1e-7));
        REQUIRE(opt.step_count() == 1);
    }
    SECTION("missing gradient names the parameter") {
        Parameter p("encoder.l0.w", {2});
        AdamW opt({&p}, {});
        try {
            opt.step();
            FAIL("expected error");
        } catch (const std::invalid_argument& e) {
            REQUIRE(std::string(e.what()).find("encoder.l0.w") != std::string::npos);
        }
    }
}

TEST_CASE("mlp basics") {
    RngStream rng(5, 0);
    SECTION("zero weights and bias give zero output") {
        Mlp mlp("m", {3, 4, 2}, rng);
        for (auto& l : mlp.layers) {
            std::fill(l.weight.value.begin(), l.weight.value.end(), 0.0);
            std::fill(l.bias.value.begin(), l.bias.value.end(), 0.0);
        }
        Tape t;
        Tensor y = mlp.forward(t, t.constant({2, 3}, {1, 2, 3, 4, 5, 6}));
        for (double v : y.values()) REQUIRE(v == 0.0);
    }
    SECTION("identity single layer passes input through") {
        Mlp mlp("m", {3, 3}, rng);
        auto& l = mlp.layers[0];
        std::fill(l.weight.value.begin(), l.weight.value.end(), 0.0);
        for (int i = 0; i < 3; ++i) l.weight.value[i * 3 + i] = 1.0;
        std::fill(l.bias.value.begin(), l.bias.value.end(), 0.0);
        Tape t;
        const Vec in = {0.5, -1.5, 2.5};
        Tensor y = mlp.forward(t, t.constant({1, 3}, in));
        for (int i = 0; i < 3; ++i) REQUIRE(y.values()[i] == Catch::Approx(in[i]).margin(1e-15));
    }
    SECTION("input gradient of output sum matches finite differences") {
        Mlp mlp("m", {3, 8, 2}, rng);
        Parameter input = make_param("input", {2, 3}, rng);
        ParamRefs all = {&input};
        mlp.collect(all);
        auto loss = [&](Tape& t) { return sum(mlp.forward(t, t.param(input))); };
        auto res = testutil::check_gradients(all, loss);
        INFO("worst " << res.worst_param);
        REQUIRE(res.max_rel_err < 1e-5);
    }
}

TEST_CASE("identical seeds produce identical post-training parameters") {
    auto train = [] {
        RngStream rng(99, 3);
        Mlp mlp("m", {4, 8, 1}, rng);
        ParamRefs params;
        mlp.collect(params);
        AdamWConfig cfg;
        cfg.lr = 3e-3;
        AdamW opt(params, cfg);
        RngStream data_rng(17, 0);
        for (int step = 0; step < 25; ++step) {
            Vec xs(12), ys(3);
            for (double& v : xs) v = data_rng.uniform_range(-1, 1);
            for (double& v : ys) v = data_rng.uniform_range(-1, 1);
            Tape t;
            Tensor pred = mlp.forward(t, t.constant({3, 4}, xs));
            Tensor err = sub(pred, t.constant({3, 1}, ys));
            Tensor loss = mean(mul(err, err));
            zero_grads(params);
            t.backward(loss);
            opt.step();
        }
        Vec flat;
        for (Parameter* p : params) flat.insert(flat.end(), p->value.begin(), p->value.end());
        return flat;
    };
    const Vec a = train();
    const Vec b = train();
    REQUIRE(a.size() == b.size());
    REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "sphlat_ckpt_test.sphl";

    RngStream rng(404, 1);
    Mlp mlp("net", {3, 5, 2}, rng);
    ParamRefs params;
    mlp.collect(params);
    // awkward values included on purpose
    params[0]->value[0] = -0.0;
    params[0]->value[1] = 1e-310;
    params[0]->value[2] = std::numbers::pi;
    AdamW opt(params, {});
    for (Parameter* p : params) p->has_grad = true;
    opt.step();

    save_checkpoint(path.string(), params, &opt);

    std::vector<Vec> before;
    for (Parameter* p : params) before.push_back(p->value);
    const auto before_step = opt.step_count();

    RngStream rng2(999, 2);
    Mlp mlp2("net", {3, 5, 2}, rng2);
    ParamRefs params2;
    mlp2.collect(params2);
    AdamW opt2(params2, {});
    load_checkpoint(path.string(), params2, &opt2);

    REQUIRE(opt2.step_count() == before_step);
    for (std::size_t i = 0; i < params2.size(); ++i) {
        REQUIRE(params2[i]->value.size() == before[i].size());
        REQUIRE(std::memcmp(params2[i]->value.data(), before[i].data(),
                            before[i].size() * sizeof(double)) == 0);
    }

    // byte-for-byte stability of the file itself
    save_checkpoint(path.string() + ".b", params2, &opt2);
    std::ifstream f1(path, std::ios::binary), f2(path.string() + ".b", std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);
    fs::remove(path);
    fs::remove(path.string() + ".b");

    SECTION("bad magic is rejected") {
        const fs::path bad = fs::temp_directory_path() / "sphlat_bad.sphl";
        std::ofstream os(bad, std::ios::binary);
        os << "NOPE then some bytes";
        os.close();
        REQUIRE_THROWS_AS(load_arrays(bad.string()), std::runtime_error);
        fs::remove(bad);
    }
}
