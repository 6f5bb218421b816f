#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mimolab/actions.hpp"
#include "mimolab/bounds.hpp"
#include "mimolab/channel.hpp"
#include "mimolab/errors.hpp"
#include "mimolab/linalg.hpp"

namespace mimolab::env {

// Observation layout: one block per user,
//   [gamma_l, R_l, Re h_{1,l}, Im h_{1,l}, ..., Re h_{M,l}, Im h_{M,l}]
// flattened over users in index order.
struct ObsLayout {
    int num_users = 0;     // L
    int num_antennas = 0;  // M

    int block_size() const { return 2 + 2 * num_antennas; }
    int dim() const { return num_users * block_size(); }
    int gamma_dim(int user) const { return user * block_size(); }
    int avg_rate_dim(int user) const { return user * block_size() + 1; }
    int csi_begin(int user) const { return user * block_size() + 2; }

    std::vector<int> block_dims(int user) const {
        std::vector<int> dims(block_size());
        for (int i = 0; i < block_size(); ++i) dims[i] = user * block_size() + i;
        return dims;
    }

    std::vector<int> csi_dims(int user) const {
        std::vector<int> dims(2 * num_antennas);
        for (int i = 0; i < 2 * num_antennas; ++i) dims[i] = csi_begin(user) + i;
        return dims;
    }
};

// Pre-decision instantaneous rate used for gamma_l: ZF with the full user set
// when it fits the antenna array, otherwise matched filter with all other
// users as interference.
inline Vec observation_rates(const CMat& csi, double tx_power, double noise_variance) {
    const int m = csi.rows, l_total = csi.cols;
    if (l_total <= m) {
        std::vector<int> all(l_total);
        for (int l = 0; l < l_total; ++l) all[l] = l;
        return channel::sinr_and_rates(csi, csi, all, tx_power, noise_variance);
    }
    Vec rates(l_total, 0.0);
    for (int l = 0; l < l_total; ++l) {
        double self = 0.0;
        for (int r = 0; r < m; ++r) self += std::norm(csi(r, l));
        double interference = 0.0;
        for (int j = 0; j < l_total; ++j) {
            if (j == l) continue;
            std::complex<double> cross = 0.0;
            for (int r = 0; r < m; ++r) cross += std::conj(csi(r, l)) * csi(r, j);
            interference += std::norm(cross);
        }
        const double sinr = tx_power * self * self /
                            (noise_variance * self + tx_power * interference);
        rates[l] = self > 0.0 ? std::log1p(sinr) : 0.0;
    }
    return rates;
}

inline Vec build_observation(const channel::ChannelState& chan, const Vec& avg_rates,
                             double tx_power, double noise_variance) {
    const int m = chan.true_csi.rows, l_total = chan.true_csi.cols;
    ObsLayout layout{l_total, m};
    const Vec rates = observation_rates(chan.true_csi, tx_power, noise_variance);
    Vec obs(layout.dim(), 0.0);
    for (int l = 0; l < l_total; ++l) {
        const double rmax = chan.max_rates[l];
        const double gamma = rmax > 0.0 ? std::clamp(rates[l] / rmax, 0.0, 1.0) : 0.0;
        obs[layout.gamma_dim(l)] = gamma;
        obs[layout.avg_rate_dim(l)] = avg_rates[l];
        for (int r = 0; r < m; ++r) {
            obs[layout.csi_begin(l) + 2 * r] = chan.true_csi(r, l).real();
            obs[layout.csi_begin(l) + 2 * r + 1] = chan.true_csi(r, l).imag();
        }
    }
    return obs;
}

inline constexpr double kSigmaFloor = 1e-6;

// Welford running statistics over raw observations. sigma is the population
// standard deviation sqrt(m2 / count).
struct NormalizerState {
    std::uint64_t count = 0;
    Vec mean;
    Vec m2;

    void update(const Vec& obs) {
        if (mean.empty()) {
            mean.assign(obs.size(), 0.0);
            m2.assign(obs.size(), 0.0);
        }
        if (obs.size() != mean.size()) throw ShapeError("normalizer: observation dim");
        ++count;
        for (std::size_t i = 0; i < obs.size(); ++i) {
            const double delta = obs[i] - mean[i];
            mean[i] += delta / static_cast<double>(count);
            m2[i] += delta * (obs[i] - mean[i]);
        }
    }

    double sigma(int dim) const {
        return count > 0 ? std::sqrt(m2[dim] / static_cast<double>(count)) : 0.0;
    }

    Vec sigma_vec() const {
        Vec s(mean.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = sigma(static_cast<int>(i));
        return s;
    }
};

inline Vec normalize(const NormalizerState& st, const Vec& obs) {
    if (st.count < 2) throw ConfigError("normalize: need at least 2 samples");
    if (obs.size() != st.mean.size()) throw ShapeError("normalize: observation dim");
    Vec out(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i)
        out[i] = (obs[i] - st.mean[i]) / std::max(st.sigma(static_cast<int>(i)), kSigmaFloor);
    return out;
}

inline Vec denormalize(const NormalizerState& st, const Vec& z) {
    if (z.size() != st.mean.size()) throw ShapeError("denormalize: dim");
    Vec out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        out[i] = st.mean[i] + z[i] * std::max(st.sigma(static_cast<int>(i)), kSigmaFloor);
    return out;
}

// [mean - delta*sigma, mean + delta*sigma] over the listed users' observation
// blocks, concatenated in the given user order.
inline polytope::BoxBounds observation_box(const NormalizerState& st,
                                           const std::vector<int>& users, double delta,
                                           const ObsLayout& layout) {
    if (static_cast<int>(st.mean.size()) != layout.dim())
        throw ShapeError("observation_box: normalizer dim vs layout");
    polytope::BoxBounds box;
    for (int user : users) {
        for (int d : layout.block_dims(user)) {
            const double half = delta * st.sigma(d);
            box.lower.push_back(st.mean[d] - half);
            box.upper.push_back(st.mean[d] + half);
        }
    }
    return box;
}

inline constexpr double kInitialAvgRate = 0.01;  // PF bootstrap, avoids division by zero

struct EnvConfig {
    int num_users = 8;        // L
    int num_antennas = 4;     // M
    int max_selected = 4;     // N-bar
    double beta = 0.5;        // EMA weight on the historical average
    double tx_power = 1.0;
    double noise_variance = 0.1;
    double doppler_coefficient = 0.99;
    int proto_dims = 3;  // D
    int knn_k = 20;

    void validate() const {
        channel_config(0).validate();
        if (max_selected < 1 || max_selected > num_users)
            throw ConfigError("max_selected must be in [1, num_users]");
        if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0, 1]");
        if (proto_dims < 1) throw ConfigError("proto_dims must be >= 1");
        if (knn_k < 1) throw ConfigError("knn_k must be >= 1");
    }

    channel::ChannelConfig channel_config(std::uint64_t seed) const {
        return {num_antennas, num_users, noise_variance, tx_power, doppler_coefficient, seed};
    }

    ObsLayout layout() const { return {num_users, num_antennas}; }
    int action_total() const { return action_count(num_users, max_selected); }
};

struct EnvState {
    EnvConfig cfg;
    int t = 0;
    Vec avg_rates;
    channel::FadingProcess fading;
    channel::ChannelState chan;

    EnvState(const EnvConfig& config, std::uint64_t seed)
        : cfg(config), fading(config.channel_config(seed)) {
        cfg.validate();
        avg_rates.assign(cfg.num_users, kInitialAvgRate);
        chan = fading.state();
    }

    Vec observation() const {
        return build_observation(chan, avg_rates, cfg.tx_power, cfg.noise_variance);
    }
};

struct StepResult {
    EnvState next;
    double reward = 0.0;
    Vec rates;  // per user, zero when unscheduled
};

// One slot transition: rates flow through the true CSI with the reported-CSI
// beamformer, reward is the PF sum over scheduled users with the pre-update
// averages, then every user's average advances by R' = (1-beta) r + beta R.
inline StepResult step(const EnvState& state, ActionIndex action, const CMat& reported_csi) {
    const EnvConfig& cfg = state.cfg;
    const UserSubset subset = decode_action(action, cfg.num_users, cfg.max_selected);

    Vec rates(cfg.num_users, 0.0);
    const Vec selected_rates = channel::sinr_and_rates(
        state.chan.true_csi, reported_csi, subset, cfg.tx_power, cfg.noise_variance);
    for (std::size_t i = 0; i < subset.size(); ++i) rates[subset[i]] = selected_rates[i];

    double reward = 0.0;
    for (int l : subset) reward += rates[l] / state.avg_rates[l];

    StepResult out{state, reward, rates};
    for (int l = 0; l < cfg.num_users; ++l)
        out.next.avg_rates[l] = (1.0 - cfg.beta) * rates[l] + cfg.beta * state.avg_rates[l];
    out.next.fading.advance();
    out.next.chan = out.next.fading.state();
    out.next.t = state.t + 1;
    return out;
}

}  // namespace mimolab::env
