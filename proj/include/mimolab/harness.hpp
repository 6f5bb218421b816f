#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimolab/attack.hpp"
#include "mimolab/channel.hpp"
#include "mimolab/env.hpp"
#include "mimolab/errors.hpp"
#include "mimolab/rng.hpp"
#include "mimolab/sac.hpp"
#include "mimolab/schedulers.hpp"

namespace mimolab::harness {

enum class AttackScheme { kNone, kNoise, kFggm, kSpgd };

inline AttackScheme parse_scheme(const std::string& name) {
    if (name == "none") return AttackScheme::kNone;
    if (name == "noise") return AttackScheme::kNoise;
    if (name == "fggm") return AttackScheme::kFggm;
    if (name == "spgd") return AttackScheme::kSpgd;
    throw ConfigError("unknown attack scheme: " + name);
}

inline const char* scheme_name(AttackScheme s) {
    switch (s) {
        case AttackScheme::kNone: return "none";
        case AttackScheme::kNoise: return "noise";
        case AttackScheme::kFggm: return "fggm";
        case AttackScheme::kSpgd: return "spgd";
    }
    return "?";
}

struct ExperimentConfig {
    env::EnvConfig env;
    int num_slots = 500;
    int num_blocks = 1;  // independent resource-block replicas
    sched::PolicyKind policy = sched::PolicyKind::kRandom;
    AttackScheme scheme = AttackScheme::kNone;
    double delta_adv = 2.0;
    double delta_vic = 1.5;
    std::vector<int> adversaries;  // explicit set; empty means "last num_adversaries users"
    int num_adversaries = 0;
    bool falsify_csi_only = true;    // attack searches injectable CSI dims only
    bool attack_both_critics = true; // bound the scheduler's min(Q1,Q2) surface
    attack::AttackBudget budget;  // for inline fggm/spgd computation
    std::string checkpoint_path;
    std::uint64_t seed = 0;

    std::vector<int> adversary_set() const {
        if (!adversaries.empty()) return adversaries;
        std::vector<int> out;
        for (int u = env.num_users - num_adversaries; u < env.num_users; ++u) out.push_back(u);
        return out;
    }

    std::vector<int> victim_set() const {
        const auto adv = adversary_set();
        std::vector<int> out;
        for (int u = 0; u < env.num_users; ++u)
            if (std::find(adv.begin(), adv.end(), u) == adv.end()) out.push_back(u);
        return out;
    }

    void validate() const {
        env.validate();
        if (num_slots < 1) throw ConfigError("num_slots must be >= 1");
        if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
        for (int u : adversary_set())
            if (u < 0 || u >= env.num_users) throw ConfigError("adversary index out of range");
        if (scheme != AttackScheme::kNone && adversary_set().empty())
            throw ConfigError("attack scheme needs a nonempty adversary set");
    }

    bool needs_checkpoint() const {
        return policy == sched::PolicyKind::kSac || scheme != AttackScheme::kNone;
    }
};

// Jain fairness index (sum R)^2 / (L sum R^2), in [1/L, 1].
inline double jfi(const Vec& rates) {
    double sum = 0.0, sq = 0.0;
    for (double r : rates) {
        sum += r;
        sq += r * r;
    }
    if (sq == 0.0) throw MetricError("jfi undefined for the all-zero vector");
    return sum * sum / (static_cast<double>(rates.size()) * sq);
}

struct SlotRecord {
    int block = 0;
    int slot = 0;
    std::vector<int> selected;
    Vec rates;       // per user, zero when unscheduled
    double pf_score = 0.0;
    double jfi_running = 0.0;  // on the post-update averages
};

struct UserStats {
    double selection_probability = 0.0;
    double mean_rate = 0.0;
};

struct MetricsReport {
    std::vector<SlotRecord> slots;
    std::vector<UserStats> users;  // averaged over blocks
    double final_jfi = 0.0;
    double mean_pf = 0.0;
    std::vector<int> victims;
    double victim_sel_mean = 0.0;
    double victim_sel_min = 0.0;
    double victim_rate_mean = 0.0;
    double victim_rate_min = 0.0;
};

struct ExperimentInputs {
    const sac::Checkpoint* checkpoint = nullptr;
    const attack::AttackResult* attack = nullptr;
};

inline attack::AttackResult compute_attack(const ExperimentConfig& cfg,
                                           const sac::Checkpoint& ck) {
    auto threat = attack::make_threat(ck, cfg.adversary_set(), cfg.delta_adv, cfg.delta_vic);
    threat.falsify_csi_only = cfg.falsify_csi_only;
    threat.attack_both_critics = cfg.attack_both_critics;
    attack::AttackBudget budget = cfg.budget;
    if (budget.seed == 0) budget.seed = cfg.seed;
    switch (cfg.scheme) {
        case AttackScheme::kFggm: return attack::fggm(ck, threat, budget);
        case AttackScheme::kSpgd: return attack::spgd(ck, threat, budget);
        default: throw ConfigError("compute_attack: scheme has no precomputed result");
    }
}

// Runs the seeded experiment: per slot the adversaries substitute their
// reported CSI, the scheduler acts on reported observations, physics runs on
// the true CSI, and the PF averages advance. Identical config, identical
// report.
inline MetricsReport run_experiment(const ExperimentConfig& cfg,
                                    const ExperimentInputs& inputs = {}) {
    cfg.validate();

    sac::Checkpoint loaded;
    const sac::Checkpoint* ck = inputs.checkpoint;
    if (cfg.needs_checkpoint() && ck == nullptr) {
        if (cfg.checkpoint_path.empty())
            throw ConfigError("experiment needs a checkpoint but no path was given");
        loaded = sac::Checkpoint::load(cfg.checkpoint_path);
        ck = &loaded;
    }
    if (ck != nullptr) {
        if (ck->env_config.num_users != cfg.env.num_users ||
            ck->env_config.num_antennas != cfg.env.num_antennas ||
            ck->env_config.max_selected != cfg.env.max_selected)
            throw ConfigError("checkpoint dimensions do not match the experiment config");
    }

    std::optional<attack::ThreatModel> threat;
    if (cfg.scheme != AttackScheme::kNone)
        threat = attack::make_threat(*ck, cfg.adversary_set(), cfg.delta_adv, cfg.delta_vic);

    attack::AttackResult computed;
    const attack::AttackResult* atk = inputs.attack;
    if ((cfg.scheme == AttackScheme::kFggm || cfg.scheme == AttackScheme::kSpgd) &&
        atk == nullptr) {
        computed = compute_attack(cfg, *ck);
        atk = &computed;
    }
    if (atk != nullptr && cfg.scheme != AttackScheme::kNone) {
        if (static_cast<int>(atk->o_adv_star.size()) != threat->adv_dim())
            throw ConfigError("attack result does not match the threat layout");
    }

    const sched::Scheduler scheduler(cfg.policy, ck);
    MetricsReport report;
    report.victims = cfg.victim_set();
    const int num_users = cfg.env.num_users;
    std::vector<double> sel_counts(num_users, 0.0), rate_sums(num_users, 0.0);
    double jfi_acc = 0.0, pf_acc = 0.0;

    for (int block = 0; block < cfg.num_blocks; ++block) {
        const std::uint64_t block_seed = derive_seed(cfg.seed, 17 + block);
        env::EnvState state(cfg.env, block_seed);
        Rng policy_rng(derive_seed(block_seed, 1));

        for (int t = 0; t < cfg.num_slots; ++t) {
            CMat reported = state.chan.true_csi;
            switch (cfg.scheme) {
                case AttackScheme::kNone:
                    break;
                case AttackScheme::kNoise:
                    reported = attack::apply_noise_csi(
                        reported, *threat,
                        attack::noise_attack(*threat, derive_seed(block_seed, 4000 + t)));
                    break;
                case AttackScheme::kFggm:
                case AttackScheme::kSpgd:
                    reported = attack::apply_adversarial_csi(reported, *threat, atk->o_adv_star);
                    break;
            }

            const env::ActionIndex action =
                scheduler.select(reported, state.avg_rates, cfg.env, policy_rng);
            const env::StepResult sr = env::step(state, action, reported);

            SlotRecord rec;
            rec.block = block;
            rec.slot = t;
            rec.selected = env::decode_action(action, num_users, cfg.env.max_selected);
            rec.rates = sr.rates;
            rec.pf_score = sr.reward;
            rec.jfi_running = jfi(sr.next.avg_rates);
            pf_acc += rec.pf_score;
            for (int u : rec.selected) sel_counts[u] += 1.0;
            for (int u = 0; u < num_users; ++u) rate_sums[u] += sr.rates[u];
            report.slots.push_back(std::move(rec));

            state = sr.next;
        }
        jfi_acc += jfi(state.avg_rates);
    }

    const double slots_total = static_cast<double>(cfg.num_slots) * cfg.num_blocks;
    report.users.resize(num_users);
    for (int u = 0; u < num_users; ++u) {
        report.users[u].selection_probability = sel_counts[u] / slots_total;
        report.users[u].mean_rate = rate_sums[u] / slots_total;
    }
    report.final_jfi = jfi_acc / cfg.num_blocks;
    report.mean_pf = pf_acc / slots_total;

    double sel_sum = 0.0, rate_sum = 0.0;
    double sel_min = std::numeric_limits<double>::infinity();
    double rate_min = std::numeric_limits<double>::infinity();
    for (int v : report.victims) {
        sel_sum += report.users[v].selection_probability;
        rate_sum += report.users[v].mean_rate;
        sel_min = std::min(sel_min, report.users[v].selection_probability);
        rate_min = std::min(rate_min, report.users[v].mean_rate);
    }
    if (!report.victims.empty()) {
        report.victim_sel_mean = sel_sum / report.victims.size();
        report.victim_rate_mean = rate_sum / report.victims.size();
        report.victim_sel_min = sel_min;
        report.victim_rate_min = rate_min;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Deterministic text output: shortest-roundtrip doubles via to_chars.
// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void write_metrics_csv(const MetricsReport& report, int num_users,
                              const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path);
    out << "block,slot,selected,pf_score,jfi";
    for (int u = 0; u < num_users; ++u) out << ",rate_" << u;
    out << "\n";
    for (const auto& rec : report.slots) {
        out << rec.block << ',' << rec.slot << ',';
        for (std::size_t i = 0; i < rec.selected.size(); ++i) {
            if (i > 0) out << '|';
            out << rec.selected[i];
        }
        out << ',' << fmt_double(rec.pf_score) << ',' << fmt_double(rec.jfi_running);
        for (double r : rec.rates) out << ',' << fmt_double(r);
        out << "\n";
    }
}

// Rates are logged in nats/s/Hz; the mbps column scales by the 20 MHz
// bandwidth for readability, without claiming paper-unit equivalence.
inline constexpr double kBandwidthMHz = 20.0;

inline void write_summary_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path);
    out << "metric,value\n";
    out << "final_jfi," << fmt_double(report.final_jfi) << "\n";
    out << "mean_pf," << fmt_double(report.mean_pf) << "\n";
    out << "victim_sel_mean," << fmt_double(report.victim_sel_mean) << "\n";
    out << "victim_sel_min," << fmt_double(report.victim_sel_min) << "\n";
    out << "victim_rate_mean," << fmt_double(report.victim_rate_mean) << "\n";
    out << "victim_rate_min," << fmt_double(report.victim_rate_min) << "\n";
    out << "victim_rate_mean_mbps," << fmt_double(report.victim_rate_mean * kBandwidthMHz)
        << "\n";
    for (std::size_t u = 0; u < report.users.size(); ++u) {
        out << "sel_prob_" << u << ',' << fmt_double(report.users[u].selection_probability)
            << "\n";
        out << "mean_rate_" << u << ',' << fmt_double(report.users[u].mean_rate) << "\n";
    }
}

// ---------------------------------------------------------------------------
// Parameter sweeps: one experiment per cell per seed, failures recorded
// without stopping the sweep.
// ---------------------------------------------------------------------------

struct SweepCell {
    double delta_adv = 2.0;
    double delta_vic = 1.5;
    int num_adversaries = 1;
};

struct SweepRow {
    SweepCell cell;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double victim_sel_mean = 0.0;
    double victim_sel_min = 0.0;
    double victim_rate_mean = 0.0;
    double victim_rate_min = 0.0;
    double final_jfi = 0.0;
    double mean_pf = 0.0;
};

inline std::vector<SweepRow> sweep(const ExperimentConfig& base,
                                   const std::vector<SweepCell>& cells,
                                   const std::vector<std::uint64_t>& seeds,
                                   const sac::Checkpoint* checkpoint = nullptr) {
    if (cells.empty() || seeds.empty()) throw ConfigError("sweep: empty grid");
    std::vector<SweepRow> rows;
    for (const auto& cell : cells) {
        for (const auto seed : seeds) {
            SweepRow row;
            row.cell = cell;
            row.seed = seed;
            try {
                ExperimentConfig cfg = base;
                cfg.delta_adv = cell.delta_adv;
                cfg.delta_vic = cell.delta_vic;
                cfg.num_adversaries = cell.num_adversaries;
                cfg.adversaries.clear();
                cfg.seed = seed;
                cfg.budget.seed = derive_seed(seed, 0xA77ACULL);
                ExperimentInputs inputs;
                inputs.checkpoint = checkpoint;
                const MetricsReport report = run_experiment(cfg, inputs);
                row.ok = true;
                row.victim_sel_mean = report.victim_sel_mean;
                row.victim_sel_min = report.victim_sel_min;
                row.victim_rate_mean = report.victim_rate_mean;
                row.victim_rate_min = report.victim_rate_min;
                row.final_jfi = report.final_jfi;
                row.mean_pf = report.mean_pf;
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path);
    out << "delta_adv,delta_vic,num_adversaries,seed,ok,error,victim_sel_mean,victim_sel_min,"
           "victim_rate_mean,victim_rate_min,final_jfi,mean_pf\n";
    for (const auto& r : rows) {
        out << fmt_double(r.cell.delta_adv) << ',' << fmt_double(r.cell.delta_vic) << ','
            << r.cell.num_adversaries << ',' << r.seed << ',' << (r.ok ? 1 : 0) << ','
            << r.error << ',' << fmt_double(r.victim_sel_mean) << ','
            << fmt_double(r.victim_sel_min) << ',' << fmt_double(r.victim_rate_mean) << ','
            << fmt_double(r.victim_rate_min) << ',' << fmt_double(r.final_jfi) << ','
            << fmt_double(r.mean_pf) << "\n";
    }
}

inline void write_sweep_summary_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path);
    out << "delta_adv,delta_vic,num_adversaries,seeds_ok,victim_sel_mean,victim_rate_mean\n";
    std::vector<SweepCell> seen;
    for (const auto& r : rows) {
        bool found = false;
        for (const auto& c : seen)
            if (c.delta_adv == r.cell.delta_adv && c.delta_vic == r.cell.delta_vic &&
                c.num_adversaries == r.cell.num_adversaries)
                found = true;
        if (found) continue;
        seen.push_back(r.cell);
        int n = 0;
        double sel = 0.0, rate = 0.0;
        for (const auto& q : rows)
            if (q.ok && q.cell.delta_adv == r.cell.delta_adv &&
                q.cell.delta_vic == r.cell.delta_vic &&
                q.cell.num_adversaries == r.cell.num_adversaries) {
                ++n;
                sel += q.victim_sel_mean;
                rate += q.victim_rate_mean;
            }
        out << fmt_double(r.cell.delta_adv) << ',' << fmt_double(r.cell.delta_vic) << ','
            << r.cell.num_adversaries << ',' << n << ','
            << fmt_double(n > 0 ? sel / n : 0.0) << ',' << fmt_double(n > 0 ? rate / n : 0.0)
            << "\n";
    }
}

}  // namespace mimolab::harness
