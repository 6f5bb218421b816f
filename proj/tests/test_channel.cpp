#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>

#include "mimolab/channel.hpp"
#include "mimolab/rng.hpp"

using namespace mimolab;
using namespace mimolab::channel;

namespace {

CMat random_csi(int m, int l, Rng& rng) {
    CMat h(m, l);
    for (auto& v : h.a) v = rng.cnormal();
    return h;
}

}  // namespace

TEST_CASE("config validation") {
    ChannelConfig cfg;
    cfg.num_antennas = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.noise_variance = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.doppler_coefficient = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    CHECK_NOTHROW(cfg.validate());
    CHECK_THROWS_AS(generate_csi_trace(cfg, 0), ConfigError);
}

TEST_CASE("trace generation is deterministic for a fixed seed") {
    ChannelConfig cfg;
    cfg.seed = 42;
    const auto a = generate_csi_trace(cfg, 20);
    const auto b = generate_csi_trace(cfg, 20);
    REQUIRE(a.size() == b.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
        for (std::size_t i = 0; i < a[t].true_csi.a.size(); ++i) {
            CHECK(a[t].true_csi.a[i] == b[t].true_csi.a[i]);
        }
        for (std::size_t l = 0; l < a[t].max_rates.size(); ++l)
            CHECK(a[t].max_rates[l] == b[t].max_rates[l]);
    }
}

TEST_CASE("rho=0 gives uncorrelated slots, rho=0.7 gives matching correlation") {
    for (const double rho : {0.0, 0.7}) {
        ChannelConfig cfg;
        cfg.num_antennas = 4;
        cfg.num_users = 8;
        cfg.doppler_coefficient = rho;
        cfg.seed = 7;
        const int slots = 10000 / (cfg.num_antennas * cfg.num_users) + 2;
        const auto trace = generate_csi_trace(cfg, slots);
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        int n = 0;
        for (std::size_t t = 0; t + 1 < trace.size(); ++t)
            for (std::size_t i = 0; i < trace[t].true_csi.a.size(); ++i) {
                const double x = trace[t].true_csi.a[i].real();
                const double y = trace[t + 1].true_csi.a[i].real();
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
                ++n;
            }
        const double cov = sxy / n - (sx / n) * (sy / n);
        const double vx = sxx / n - (sx / n) * (sx / n);
        const double vy = syy / n - (sy / n) * (sy / n);
        const double r = cov / std::sqrt(vx * vy);
        CHECK(std::fabs(r - rho) < 0.05);
    }
}

TEST_CASE("fading is marginally unit variance") {
    ChannelConfig cfg;
    cfg.num_antennas = 4;
    cfg.num_users = 8;
    cfg.doppler_coefficient = 0.0;
    cfg.seed = 3;
    const auto trace = generate_csi_trace(cfg, 320);
    double acc = 0.0;
    int n = 0;
    for (const auto& st : trace)
        for (const auto& v : st.true_csi.a) {
            acc += std::norm(v);
            ++n;
        }
    CHECK(n >= 10000);
    CHECK(acc / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("zf beamformer: single column is the scaled matched filter") {
    Rng rng(11);
    CMat h = random_csi(4, 1, rng);
    const CMat w = zf_beamformer(h);
    std::complex<double> dot = 0.0;
    for (int r = 0; r < 4; ++r) dot += std::conj(w(r, 0)) * h(r, 0);
    CHECK(dot.real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(dot.imag()) < 1e-12);
}

TEST_CASE("zf beamformer: orthonormal columns are a fixed point") {
    CMat h(3, 2);
    h(0, 0) = 1.0;
    h(1, 1) = {0.0, 1.0};
    const CMat w = zf_beamformer(h);
    for (std::size_t i = 0; i < h.a.size(); ++i) CHECK(std::abs(w.a[i] - h.a[i]) < 1e-12);
}

TEST_CASE("zf beamformer: W^H H = I within 1e-9 on random instances") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        CMat h = random_csi(4, 3, rng);
        const CMat w = zf_beamformer(h);
        const CMat prod = cmatmul(hermitian(w), h);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const std::complex<double> expect = i == j ? 1.0 : 0.0;
                CHECK(std::abs(prod(i, j) - expect) < 1e-9);
            }
    }
}

TEST_CASE("zf beamformer: rank-deficient subset raises") {
    Rng rng(9);
    CMat h = random_csi(4, 2, rng);
    for (int r = 0; r < 4; ++r) h(r, 1) = h(r, 0);  // duplicated column
    CHECK_THROWS_AS(zf_beamformer(h), SingularMatrixError);
    CMat wide = random_csi(2, 3, rng);
    CHECK_THROWS_AS(zf_beamformer(wide), ConfigError);
}

TEST_CASE("single-user AWGN rate is log 2") {
    CMat truth(1, 1);
    truth(0, 0) = 1.0;
    const Vec rates = sinr_and_rates(truth, truth, {0}, 1.0, 1.0);
    CHECK(rates[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("truthful reporting: SINR matches the gram-inverse expression") {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        CMat h = random_csi(4, 3, rng);
        const Vec rates = sinr_and_rates(h, h, {0, 1, 2}, 2.0, 0.5);
        CMat gram = cmatmul(hermitian(h), h);
        CMat gram_inv;
        REQUIRE(cinvert(gram, gram_inv));
        for (int l = 0; l < 3; ++l) {
            const double sinr = 2.0 / (0.5 * gram_inv(l, l).real());
            const double expect = std::log1p(sinr);
            CHECK(rates[l] == doctest::Approx(expect).epsilon(1e-8));
        }
    }
}

TEST_CASE("falsified adversary CSI does not help the victim on average") {
    Rng rng(17);
    double truthful = 0.0, falsified = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        CMat h = random_csi(4, 2, rng);
        const Vec honest = sinr_and_rates(h, h, {0, 1}, 1.0, 0.1);
        CMat reported = h;
        for (int r = 0; r < 4; ++r) reported(r, 1) = rng.cnormal();
        const Vec attacked = sinr_and_rates(h, reported, {0, 1}, 1.0, 0.1);
        truthful += honest[0];
        falsified += attacked[0];
    }
    CHECK(falsified <= truthful);
}

TEST_CASE("single_user_max_rate basics and dominance") {
    CMat zero(4, 1);
    CHECK(single_user_max_rate(zero, 1.0, 0.1) == 0.0);

    CMat unit(1, 1);
    unit(0, 0) = 1.0;
    CHECK(single_user_max_rate(unit, 1.0, 1.0) == doctest::Approx(std::log(2.0)));

    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        CMat h = random_csi(4, 3, rng);
        const Vec rates = sinr_and_rates(h, h, {0, 1, 2}, 1.0, 0.1);
        for (int l = 0; l < 3; ++l) {
            const double cap = single_user_max_rate(h.col(l), 1.0, 0.1);
            CHECK(rates[l] <= cap + 1e-9);
        }
    }
}

TEST_CASE("empty or oversized selections are rejected") {
    Rng rng(29);
    CMat h = random_csi(2, 3, rng);
    CHECK_THROWS_AS(sinr_and_rates(h, h, {}, 1.0, 0.1), ConfigError);
    CHECK_THROWS_AS(sinr_and_rates(h, h, {0, 1, 2}, 1.0, 0.1), ConfigError);
}

TEST_CASE("trace export writes the declared header") {
    ChannelConfig cfg;
    cfg.num_antennas = 2;
    cfg.num_users = 3;
    cfg.seed = 1;
    const auto trace = generate_csi_trace(cfg, 4);
    const char* path = "trace_test.csit";
    export_trace(trace, path);
    std::FILE* f = std::fopen(path, "rb");
    REQUIRE(f != nullptr);
    char magic[4];
    std::uint32_t version, m, l, slots;
    REQUIRE(std::fread(magic, 1, 4, f) == 4);
    REQUIRE(std::fread(&version, 4, 1, f) == 1);
    REQUIRE(std::fread(&m, 4, 1, f) == 1);
    REQUIRE(std::fread(&l, 4, 1, f) == 1);
    REQUIRE(std::fread(&slots, 4, 1, f) == 1);
    CHECK(std::string(magic, 4) == "CSIT");
    CHECK(version == 1);
    CHECK(m == 2);
    CHECK(l == 3);
    CHECK(slots == 4);
    double first_re;
    REQUIRE(std::fread(&first_re, 8, 1, f) == 1);
    CHECK(first_re == trace[0].true_csi(0, 0).real());
    std::fclose(f);
    std::remove(path);
}
