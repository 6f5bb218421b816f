#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mimolab/actions.hpp"
#include "mimolab/channel.hpp"
#include "mimolab/env.hpp"
#include "mimolab/errors.hpp"
#include "mimolab/rng.hpp"
#include "mimolab/sac.hpp"

namespace mimolab::sched {

enum class PolicyKind { kRandom, kOptPf, kOptMr, kOptPfUg, kSac };

inline PolicyKind parse_policy(const std::string& name) {
    if (name == "random") return PolicyKind::kRandom;
    if (name == "optpf") return PolicyKind::kOptPf;
    if (name == "optmr") return PolicyKind::kOptMr;
    if (name == "optpfug") return PolicyKind::kOptPfUg;
    if (name == "sac") return PolicyKind::kSac;
    throw ConfigError("unknown policy: " + name);
}

inline const char* policy_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::kRandom: return "random";
        case PolicyKind::kOptPf: return "optpf";
        case PolicyKind::kOptMr: return "optmr";
        case PolicyKind::kOptPfUg: return "optpfug";
        case PolicyKind::kSac: return "sac";
    }
    return "?";
}

inline env::ActionIndex random_policy(Rng& rng, int action_total) {
    return rng.uniform_int(action_total);
}

// The exhaustive policies walk the full action set; the paper caps them at
// L <= 16 because of the 2^L growth.
inline constexpr int kExhaustiveUserLimit = 16;

namespace detail {

inline void check_exhaustive(int num_users) {
    if (num_users > kExhaustiveUserLimit)
        throw ConfigError("exhaustive policy limited to L <= 16");
}

inline double subset_pf_score(const CMat& reported, const env::UserSubset& s,
                              const Vec& avg_rates, double p, double s2) {
    const Vec rates = channel::sinr_and_rates(reported, reported, s, p, s2);
    double score = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) score += rates[i] / avg_rates[s[i]];
    return score;
}

inline double subset_sum_rate(const CMat& reported, const env::UserSubset& s, double p,
                              double s2) {
    const Vec rates = channel::sinr_and_rates(reported, reported, s, p, s2);
    double score = 0.0;
    for (double r : rates) score += r;
    return score;
}

}  // namespace detail

inline env::ActionIndex opt_pf(const CMat& reported, const Vec& avg_rates, double p, double s2,
                               int num_users, int max_selected) {
    detail::check_exhaustive(num_users);
    const int total = env::action_count(num_users, max_selected);
    env::ActionIndex best = 0;
    double best_score = -1.0;
    for (int a = 0; a < total; ++a) {
        const auto s = env::decode_action(a, num_users, max_selected);
        const double score = detail::subset_pf_score(reported, s, avg_rates, p, s2);
        if (score > best_score) {
            best_score = score;
            best = a;
        }
    }
    return best;
}

inline env::ActionIndex opt_mr(const CMat& reported, const Vec& avg_rates, double p, double s2,
                               int num_users, int max_selected) {
    (void)avg_rates;
    detail::check_exhaustive(num_users);
    const int total = env::action_count(num_users, max_selected);
    env::ActionIndex best = 0;
    double best_score = -1.0;
    for (int a = 0; a < total; ++a) {
        const auto s = env::decode_action(a, num_users, max_selected);
        const double score = detail::subset_sum_rate(reported, s, p, s2);
        if (score > best_score) {
            best_score = score;
            best = a;
        }
    }
    return best;
}

inline double channel_correlation(const CMat& csi, int i, int j) {
    std::complex<double> dot = 0.0;
    double ni = 0.0, nj = 0.0;
    for (int r = 0; r < csi.rows; ++r) {
        dot += std::conj(csi(r, i)) * csi(r, j);
        ni += std::norm(csi(r, i));
        nj += std::norm(csi(r, j));
    }
    const double denom = std::sqrt(ni * nj);
    return denom > 0.0 ? std::abs(dot) / denom : 0.0;
}

// User-grouping heuristic: users are visited in descending single-user PF
// ratio and greedily packed into the first group where they stay below the
// 0.5 correlation threshold with every member; the group with the best PF
// score wins.
inline env::ActionIndex opt_pf_ug(const CMat& reported, const Vec& avg_rates, double p, double s2,
                                  int num_users, int max_selected) {
    std::vector<int> order(num_users);
    for (int l = 0; l < num_users; ++l) order[l] = l;
    Vec ratio(num_users);
    for (int l = 0; l < num_users; ++l)
        ratio[l] = channel::single_user_max_rate(reported.col(l), p, s2) / avg_rates[l];
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return ratio[a] > ratio[b]; });

    std::vector<env::UserSubset> groups;
    for (int user : order) {
        bool placed = false;
        for (auto& g : groups) {
            if (static_cast<int>(g.size()) >= max_selected) continue;
            bool ok = true;
            for (int member : g)
                if (channel_correlation(reported, user, member) >= 0.5) {
                    ok = false;
                    break;
                }
            if (ok) {
                g.push_back(user);
                placed = true;
                break;
            }
        }
        if (!placed) groups.push_back({user});
    }

    env::ActionIndex best = -1;
    double best_score = -1.0;
    for (auto& g : groups) {
        std::sort(g.begin(), g.end());
        const double score = detail::subset_pf_score(reported, g, avg_rates, p, s2);
        const env::ActionIndex a = env::encode_action(g, num_users, max_selected);
        if (score > best_score || (score == best_score && a < best)) {
            best_score = score;
            best = a;
        }
    }
    return best;
}

// Greedy inference path of the trained agent; shares select_action with the
// trainer so both stay bit-identical.
inline env::ActionIndex sac_policy(const sac::Checkpoint& ck, const env::ProtoLattice& lattice,
                                   const Vec& raw_obs) {
    if (raw_obs.size() != ck.normalizer.mean.size())
        throw ShapeError("sac_policy: observation dim vs checkpoint");
    const Vec norm_obs = env::normalize(ck.normalizer, raw_obs);
    return sac::select_action(ck.actor, ck.critic1, ck.critic2, lattice, norm_obs,
                              ck.config.knn_k, false, nullptr)
        .action;
}

// Uniform front-end used by the experiment harness.
class Scheduler {
public:
    Scheduler(PolicyKind kind, const sac::Checkpoint* checkpoint = nullptr)
        : kind_(kind), checkpoint_(checkpoint) {
        if (kind == PolicyKind::kSac) {
            if (checkpoint == nullptr) throw ConfigError("sac policy needs a checkpoint");
            lattice_ = checkpoint->lattice();
        }
    }

    env::ActionIndex select(const CMat& reported_csi, const Vec& avg_rates,
                            const env::EnvConfig& cfg, Rng& rng) const {
        switch (kind_) {
            case PolicyKind::kRandom:
                return random_policy(rng, cfg.action_total());
            case PolicyKind::kOptPf:
                return opt_pf(reported_csi, avg_rates, cfg.tx_power, cfg.noise_variance,
                              cfg.num_users, cfg.max_selected);
            case PolicyKind::kOptMr:
                return opt_mr(reported_csi, avg_rates, cfg.tx_power, cfg.noise_variance,
                              cfg.num_users, cfg.max_selected);
            case PolicyKind::kOptPfUg:
                return opt_pf_ug(reported_csi, avg_rates, cfg.tx_power, cfg.noise_variance,
                                 cfg.num_users, cfg.max_selected);
            case PolicyKind::kSac: {
                const auto st = channel::make_state(0, reported_csi, cfg.tx_power,
                                                    cfg.noise_variance);
                const Vec obs =
                    env::build_observation(st, avg_rates, cfg.tx_power, cfg.noise_variance);
                return sac_policy(*checkpoint_, lattice_, obs);
            }
        }
        throw ConfigError("unhandled policy kind");
    }

    PolicyKind kind() const { return kind_; }

private:
    PolicyKind kind_;
    const sac::Checkpoint* checkpoint_;
    env::ProtoLattice lattice_;
};

}  // namespace mimolab::sched
