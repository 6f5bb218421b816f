#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mimolab/errors.hpp"
#include "mimolab/linalg.hpp"
#include "mimolab/rng.hpp"

namespace mimolab::channel {

// First-order Gauss-Markov Rayleigh fading between M base-station antennas and
// L single-antenna users:  H^{t+1} = rho * H^t + sqrt(1 - rho^2) * G, with G
// i.i.d. CN(0,1) per entry. rho close to 1 mimics slow pedestrian fading.
struct ChannelConfig {
    int num_antennas = 4;          // M
    int num_users = 8;             // L
    double noise_variance = 0.1;   // sigma^2, linear
    double tx_power = 1.0;         // P, linear, per selected user
    double doppler_coefficient = 0.99;  // rho in [0, 1)
    std::uint64_t seed = 0;

    void validate() const {
        if (num_antennas < 1) throw ConfigError("num_antennas must be >= 1");
        if (num_users < 1) throw ConfigError("num_users must be >= 1");
        if (!(noise_variance > 0.0)) throw ConfigError("noise_variance must be > 0");
        if (!(tx_power > 0.0)) throw ConfigError("tx_power must be > 0");
        if (!(doppler_coefficient >= 0.0 && doppler_coefficient < 1.0))
            throw ConfigError("doppler_coefficient must be in [0, 1)");
    }
};

// Matched-filter capacity when user l transmits alone: log(1 + P ||h||^2 / sigma^2).
inline double single_user_max_rate(const CMat& h_col, double tx_power, double noise_variance) {
    double g = 0.0;
    for (const auto& v : h_col.a) g += std::norm(v);
    return std::log1p(tx_power * g / noise_variance);
}

struct ChannelState {
    int slot = 0;
    CMat true_csi;   // M x L
    Vec max_rates;   // per-user single-user max rate, length L
};

inline ChannelState make_state(int slot, const CMat& csi, double tx_power, double noise_variance) {
    ChannelState st;
    st.slot = slot;
    st.true_csi = csi;
    st.max_rates.resize(csi.cols);
    for (int l = 0; l < csi.cols; ++l)
        st.max_rates[l] = single_user_max_rate(csi.col(l), tx_power, noise_variance);
    return st;
}

// Stateful fading generator; a pure value, so copies fork the trace
// deterministically.
class FadingProcess {
public:
    explicit FadingProcess(const ChannelConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
        cfg_.validate();
        h_ = CMat(cfg_.num_antennas, cfg_.num_users);
        for (auto& v : h_.a) v = rng_.cnormal();
    }

    const ChannelConfig& config() const { return cfg_; }
    int slot() const { return slot_; }

    ChannelState state() const {
        return make_state(slot_, h_, cfg_.tx_power, cfg_.noise_variance);
    }

    void advance() {
        const double rho = cfg_.doppler_coefficient;
        const double mix = std::sqrt(1.0 - rho * rho);
        for (auto& v : h_.a) v = rho * v + mix * rng_.cnormal();
        ++slot_;
    }

private:
    ChannelConfig cfg_;
    Rng rng_;
    CMat h_;
    int slot_ = 0;
};

inline std::vector<ChannelState> generate_csi_trace(const ChannelConfig& cfg, int num_slots) {
    if (num_slots < 1) throw ConfigError("num_slots must be >= 1");
    FadingProcess proc(cfg);
    std::vector<ChannelState> trace;
    trace.reserve(num_slots);
    for (int t = 0; t < num_slots; ++t) {
        trace.push_back(proc.state());
        proc.advance();
    }
    return trace;
}

// Condition guard for H^H H: Frobenius-based estimate, an overestimate of the
// 2-norm condition number by at most a factor N. Beyond the threshold the
// subset is treated as infeasible.
inline constexpr double kConditionLimit = 1e6;

// Zero-forcing beamformer W = H (H^H H)^{-1} for an M x N reported subset.
// Throws SingularMatrixError when H^H H is numerically singular.
inline CMat zf_beamformer(const CMat& reported_subset) {
    const int m = reported_subset.rows;
    const int n = reported_subset.cols;
    if (n > m) throw ConfigError("zf_beamformer: more users than antennas");
    const CMat gram = cmatmul(hermitian(reported_subset), reported_subset);
    CMat gram_inv;
    if (!cinvert(gram, gram_inv)) throw SingularMatrixError("H^H H not invertible");
    if (frobenius_norm(gram) * frobenius_norm(gram_inv) > kConditionLimit)
        throw SingularMatrixError("H^H H condition estimate above limit");
    return cmatmul(reported_subset, gram_inv);
}

// Rates for the selected users: the base station beamforms on the reported
// CSI, while signal and interference flow through the true CSI.
//   SINR_l = P |w_l^H h_l|^2 / (sigma^2 ||w_l||^2 + P sum_{j != l} |w_l^H h_j|^2)
// A singular beamformer makes the whole selection infeasible (all rates 0).
inline Vec sinr_and_rates(const CMat& true_csi, const CMat& reported_csi,
                          const std::vector<int>& selected, double tx_power,
                          double noise_variance) {
    const int n = static_cast<int>(selected.size());
    if (n == 0) throw ConfigError("sinr_and_rates: empty selection");
    if (n > true_csi.rows) throw ConfigError("sinr_and_rates: selection exceeds antenna count");

    CMat reported_sub(reported_csi.rows, n);
    for (int j = 0; j < n; ++j)
        for (int r = 0; r < reported_csi.rows; ++r)
            reported_sub(r, j) = reported_csi(r, selected[j]);

    CMat w;
    try {
        w = zf_beamformer(reported_sub);
    } catch (const SingularMatrixError&) {
        return Vec(n, 0.0);
    }

    Vec rates(n, 0.0);
    for (int i = 0; i < n; ++i) {
        std::complex<double> signal = 0.0;
        double w_norm2 = 0.0;
        for (int r = 0; r < w.rows; ++r) {
            signal += std::conj(w(r, i)) * true_csi(r, selected[i]);
            w_norm2 += std::norm(w(r, i));
        }
        double interference = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            std::complex<double> cross = 0.0;
            for (int r = 0; r < w.rows; ++r) cross += std::conj(w(r, i)) * true_csi(r, selected[j]);
            interference += std::norm(cross);
        }
        const double sinr = tx_power * std::norm(signal) /
                            (noise_variance * w_norm2 + tx_power * interference);
        rates[i] = std::isfinite(sinr) && sinr > 0.0 ? std::log1p(sinr) : 0.0;
    }
    return rates;
}

// Optional trace export: "CSIT" magic, u32 version, u32 M/L/num_slots, then
// row-major interleaved f64 re/im per slot.
inline void export_trace(const std::vector<ChannelState>& trace, const std::string& path) {
    if (trace.empty()) throw ConfigError("export_trace: empty trace");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw FormatError("cannot open " + path);
    const char magic[4] = {'C', 'S', 'I', 'T'};
    const std::uint32_t version = 1;
    const std::uint32_t m = static_cast<std::uint32_t>(trace[0].true_csi.rows);
    const std::uint32_t l = static_cast<std::uint32_t>(trace[0].true_csi.cols);
    const std::uint32_t slots = static_cast<std::uint32_t>(trace.size());
    std::fwrite(magic, 1, 4, f);
    std::fwrite(&version, sizeof version, 1, f);
    std::fwrite(&m, sizeof m, 1, f);
    std::fwrite(&l, sizeof l, 1, f);
    std::fwrite(&slots, sizeof slots, 1, f);
    for (const auto& st : trace)
        for (const auto& v : st.true_csi.a) {
            const double re = v.real(), im = v.imag();
            std::fwrite(&re, sizeof re, 1, f);
            std::fwrite(&im, sizeof im, 1, f);
        }
    std::fclose(f);
}

}  // namespace mimolab::channel
