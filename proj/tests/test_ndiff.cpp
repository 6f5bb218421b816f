#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "mimolab/ndiff.hpp"
#include "mimolab/rng.hpp"

using namespace mimolab;
using namespace mimolab::ndiff;

namespace {

// Straightforward recomputation, independent of forward_mlp's loop structure.
Vec reference_forward(const MlpParams& p, const Vec& x) {
    Vec h = x;
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
        const auto& l = p.layers[li];
        Vec z(l.w.rows, 0.0);
        for (int r = 0; r < l.w.rows; ++r) {
            z[r] = l.b[r];
            for (int c = 0; c < l.w.cols; ++c) z[r] += l.w(r, c) * h[c];
        }
        if (li + 1 < p.layers.size())
            for (auto& v : z) v = std::max(v, 0.0);
        else if (p.output_activation == OutputActivation::kSigmoid)
            for (auto& v : z) v = 1.0 / (1.0 + std::exp(-v));
        h = z;
    }
    return h;
}

}  // namespace

TEST_CASE("forward_mlp identity and dead-relu cases") {
    MlpParams identity;
    identity.layers.push_back({Mat::identity(3), Vec(3, 0.0)});
    const Vec x{0.5, -1.0, 2.0};
    CHECK(forward_mlp(identity, x) == x);

    // hidden W = -I kills nonnegative inputs after the ReLU
    MlpParams dead;
    Mat neg = Mat::identity(2);
    for (auto& v : neg.a) v = -v;
    dead.layers.push_back({neg, Vec(2, 0.0)});
    dead.layers.push_back({Mat::identity(2), Vec(2, 0.0)});
    const Vec out = forward_mlp(dead, {1.0, 3.0});
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);

    CHECK_THROWS_AS(forward_mlp(identity, {1.0}), ShapeError);
}

TEST_CASE("forward_mlp matches the reference recomputation") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const MlpParams p = random_mlp({4, 8, 8, 3}, rng);
        Vec x(4);
        for (auto& v : x) v = rng.normal();
        const Vec a = forward_mlp(p, x);
        const Vec b = reference_forward(p, x);
        for (int i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
}

TEST_CASE("graph forward agrees with plain forward, sigmoid head included") {
    Rng rng(2);
    MlpParams p = random_mlp({3, 6, 2}, rng, OutputActivation::kSigmoid);
    Vec x{0.4, -0.2, 1.1};
    Tape tape;
    const MlpBinding binding = bind_mlp(tape, p, false);
    const int out = mlp_forward_graph(tape, p, binding, tape.input(Mat::column(x)));
    const Vec plain = forward_mlp(p, x);
    for (int i = 0; i < 2; ++i) CHECK(tape.val(out)(i, 0) == doctest::Approx(plain[i]).epsilon(1e-14));
}

TEST_CASE("backward: x squared at 3 gives 6, relu at 0 gives 0") {
    Tape tape;
    Mat x(1, 1);
    x(0, 0) = 3.0;
    const int xn = tape.input(x);
    tape.backward(tape.sum_all(tape.mul(xn, xn)));
    CHECK(tape.grad(xn)(0, 0) == doctest::Approx(6.0));

    Tape tape2;
    Mat zero(1, 1);
    const int zn = tape2.input(zero);
    tape2.backward(tape2.sum_all(tape2.relu(zn)));
    CHECK(tape2.grad(zn)(0, 0) == 0.0);
}

TEST_CASE("mlp gradients match central finite differences") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        MlpParams p = random_mlp({4, 10, 10, 1}, rng);
        Vec x(4);
        for (auto& v : x) v = rng.normal();

        auto loss_at = [&](const MlpParams& params, const Vec& input) {
            return forward_mlp(params, input)[0];
        };

        Tape tape;
        const MlpBinding binding = bind_mlp(tape, p, true);
        const int xn = tape.input(Mat::column(x));
        const int out = mlp_forward_graph(tape, p, binding, xn);
        tape.backward(tape.sum_all(out));

        const double h = 1e-5;
        int checked = 0;
        // input gradient
        for (int i = 0; i < 4; ++i) {
            Vec xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fd = (loss_at(p, xp) - loss_at(p, xm)) / (2 * h);
            const double an = tape.grad(xn)(i, 0);
            if (std::fabs(fd) > 1e-6) {
                CHECK(std::fabs(an - fd) / std::fabs(fd) < 1e-4);
                ++checked;
            }
        }
        // a sample of weight gradients
        Vec flat = flatten(p);
        for (std::size_t k = 0; k < flat.size(); k += 17) {
            MlpParams pp = p, pm = p;
            Vec fp = flat, fm = flat;
            fp[k] += h;
            fm[k] -= h;
            assign_from_flat(pp, fp);
            assign_from_flat(pm, fm);
            const double fd = (loss_at(pp, x) - loss_at(pm, x)) / (2 * h);
            // locate the analytic gradient for flat index k
            std::size_t off = 0;
            double an = 0.0;
            for (std::size_t li = 0; li < p.layers.size(); ++li) {
                const auto& l = p.layers[li];
                if (k < off + l.w.size()) {
                    an = tape.grad(binding.layers[li].first).a[k - off];
                    break;
                }
                off += l.w.size();
                if (k < off + l.b.size()) {
                    an = tape.grad(binding.layers[li].second).a[k - off];
                    break;
                }
                off += l.b.size();
            }
            if (std::fabs(fd) > 1e-6) {
                CHECK(std::fabs(an - fd) / std::fabs(fd) < 1e-4);
                ++checked;
            }
        }
        CHECK(checked > 0);
    }
}

TEST_CASE("composite op gradients match finite differences") {
    Rng rng(5);
    Mat a(3, 4), v(4, 1), w(3, 1);
    for (auto& x : a.a) x = rng.normal() + 0.1;
    for (auto& x : v.a) x = rng.normal() + 2.0;  // keep logs and reciprocals well-defined
    for (auto& x : w.a) x = rng.normal();

    auto build = [&](const Mat& am, const Mat& vm, const Mat& wm, Tape& tape, int* ha, int* hv,
                     int* hw) {
        *ha = tape.input(am);
        *hv = tape.input(vm);
        *hw = tape.input(wm);
        const int t1 = tape.colwise_mul(*ha, tape.log(*hv));
        const int t2 = tape.rowwise_mul(t1, tape.sigmoid(*hw));
        const int t3 = tape.add_col(t2, tape.tanh(*hw));
        const int t4 = tape.max_elem(t3, tape.affine(t3, -0.5, 0.1));
        const int t5 = tape.mul(t4, tape.softplus(t4));
        const int t6 = tape.concat_rows(tape.row_sum(t5), tape.reciprocal(tape.exp(*hw)));
        return tape.sum_all(t6);
    };

    Tape tape;
    int ha, hv, hw;
    const int root = build(a, v, w, tape, &ha, &hv, &hw);
    tape.backward(root);

    auto value_of = [&](const Mat& am, const Mat& vm, const Mat& wm) {
        Tape t;
        int x, y, z;
        return t.val(build(am, vm, wm, t, &x, &y, &z))(0, 0);
    };

    const double h = 1e-6;
    auto fd_check = [&](Mat& m, int handle, const Mat& grads) {
        for (std::size_t k = 0; k < m.size(); ++k) {
            const double keep = m.a[k];
            m.a[k] = keep + h;
            const double fp = value_of(a, v, w);
            m.a[k] = keep - h;
            const double fm = value_of(a, v, w);
            m.a[k] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double an = grads.a[k];
            CHECK(std::fabs(an - fd) <= 1e-5 * std::max(1.0, std::fabs(fd)));
        }
        (void)handle;
    };
    fd_check(a, ha, tape.grad(ha));
    fd_check(v, hv, tape.grad(hv));
    fd_check(w, hw, tape.grad(hw));
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        AdamState st(3);
        Vec params{1.0, -2.0, 0.5};
        const Vec before = params;
        adam_step(st, params, Vec(3, 0.0));
        CHECK(params == before);
    }

    SUBCASE("first step magnitude is lr * g / (|g| + eps)") {
        AdamConfig cfg;
        cfg.lr = 0.01;
        AdamState st(1, cfg);
        Vec params{0.0};
        adam_step(st, params, {0.5});
        CHECK(params[0] == doctest::Approx(-0.01 * 0.5 / (0.5 + cfg.eps)).epsilon(1e-9));
    }

    SUBCASE("quadratic bowl converges within 1e-3 in 500 steps") {
        AdamConfig cfg;
        cfg.lr = 0.05;
        AdamState st(2, cfg);
        Vec x{0.0, 0.0};
        const Vec target{0.3, -0.2};
        for (int i = 0; i < 500; ++i) {
            Vec g{x[0] - target[0], x[1] - target[1]};
            adam_step(st, x, g);
        }
        CHECK(std::fabs(x[0] - target[0]) < 1e-3);
        CHECK(std::fabs(x[1] - target[1]) < 1e-3);
    }
}

TEST_CASE("weights file roundtrip is bit-exact") {
    Rng rng(7);
    WeightsFile wf;
    wf.nets.emplace_back("actor", random_mlp({4, 8, 2}, rng, OutputActivation::kSigmoid));
    wf.nets.emplace_back("critic", random_mlp({6, 8, 1}, rng));
    wf.normalizer.count = 123;
    wf.normalizer.mean = {1.0, -0.5, 0.25, 3.0};
    wf.normalizer.m2 = {0.1, 0.2, 0.3, 0.4};
    wf.extra["note"] = "roundtrip";

    const char* path = "weights_test.fggm";
    save_weights(wf, path);
    const WeightsFile back = load_weights(path);

    REQUIRE(back.nets.size() == 2);
    CHECK(back.nets[0].first == "actor");
    CHECK(back.nets[1].first == "critic");
    CHECK(back.nets[0].second.output_activation == OutputActivation::kSigmoid);
    for (int n = 0; n < 2; ++n) {
        const auto& pa = wf.nets[n].second;
        const auto& pb = back.nets[n].second;
        REQUIRE(pa.layers.size() == pb.layers.size());
        for (std::size_t li = 0; li < pa.layers.size(); ++li) {
            CHECK(pa.layers[li].w.a == pb.layers[li].w.a);
            CHECK(pa.layers[li].b == pb.layers[li].b);
        }
    }
    CHECK(back.normalizer.count == 123);
    CHECK(back.normalizer.mean == wf.normalizer.mean);
    CHECK(back.normalizer.m2 == wf.normalizer.m2);
    CHECK(back.extra.at("note") == "roundtrip");

    // identical policy outputs after reload
    Rng xr(8);
    for (int trial = 0; trial < 10; ++trial) {
        Vec x(4);
        for (auto& v : x) v = xr.normal();
        CHECK(forward_mlp(wf.nets[0].second, x) == forward_mlp(back.nets[0].second, x));
    }
    std::remove(path);
}

TEST_CASE("weights file rejects corruption") {
    Rng rng(9);
    WeightsFile wf;
    wf.nets.emplace_back("net", random_mlp({3, 4, 1}, rng));
    wf.normalizer.mean = {0.0, 0.0, 0.0};
    wf.normalizer.m2 = {0.0, 0.0, 0.0};
    const char* path = "weights_bad.fggm";
    save_weights(wf, path);

    // truncate: keep everything except the last 16 bytes
    std::FILE* f = std::fopen(path, "rb");
    std::fseek(f, 0, SEEK_END);
    const long full = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<char> bytes(full);
    REQUIRE(std::fread(bytes.data(), 1, full, f) == static_cast<std::size_t>(full));
    std::fclose(f);
    f = std::fopen(path, "wb");
    std::fwrite(bytes.data(), 1, full - 16, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_weights(path), FormatError);

    // bad magic
    bytes[0] = 'X';
    f = std::fopen(path, "wb");
    std::fwrite(bytes.data(), 1, full, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_weights(path), FormatError);

    CHECK_THROWS_AS(load_weights("does_not_exist.fggm"), FormatError);
    std::remove(path);
}
