#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimolab/actions.hpp"
#include "mimolab/bounds.hpp"
#include "mimolab/env.hpp"
#include "mimolab/errors.hpp"
#include "mimolab/ndiff.hpp"
#include "mimolab/polytope.hpp"
#include "mimolab/rng.hpp"
#include "mimolab/sac.hpp"

namespace mimolab::attack {

using ndiff::MlpParams;

// Grey-box setting: the adversary cluster knows the trained networks and the
// normalizer statistics, controls its own observation block exactly, and only
// knows interval bounds (mu +- delta * sigma) for the victims.
struct ThreatModel {
    std::vector<int> adversaries;  // sorted user indices
    std::vector<int> victims;      // sorted complement
    double delta_adv = 2.0;
    double delta_vic = 1.5;
    env::NormalizerState normalizer;  // snapshot of the training-phase stats
    env::ObsLayout layout;
    // Only the CSI dims of the adversary block are physically injectable (the
    // base station derives gamma from reported CSI and keeps its own rate
    // averages), so by default the optimizer searches CSI dims and pins the
    // gamma/R dims at their mean. Turning this off optimizes the full block.
    bool falsify_csi_only = true;
    // The scheduler refines actions with min(Q1, Q2), so the attack bounds
    // that same surface by default: per action it minimizes min of the two
    // critics' upper bounds. Turning this off attacks critic 1 alone.
    bool attack_both_critics = true;

    // victims may be empty for box-only uses; the attack entry points reject
    // that case through victim_actions
    void validate() const {
        if (adversaries.empty()) throw ConfigError("threat: no adversaries");
        if (delta_adv < 0.0 || delta_vic < 0.0) throw ConfigError("threat: negative delta");
        std::vector<bool> seen(layout.num_users, false);
        for (int u : adversaries) {
            if (u < 0 || u >= layout.num_users || seen[u]) throw ConfigError("threat: bad user set");
            seen[u] = true;
        }
        for (int u : victims) {
            if (u < 0 || u >= layout.num_users || seen[u]) throw ConfigError("threat: bad user set");
            seen[u] = true;
        }
        for (bool s : seen)
            if (!s) throw ConfigError("threat: user sets must cover all users");
        if (static_cast<int>(normalizer.mean.size()) != layout.dim())
            throw ShapeError("threat: normalizer dim vs layout");
    }

    std::vector<int> adversary_dims() const {
        std::vector<int> dims;
        for (int u : adversaries)
            for (int d : layout.block_dims(u)) dims.push_back(d);
        return dims;
    }

    std::vector<int> victim_dims() const {
        std::vector<int> dims;
        for (int u : victims)
            for (int d : layout.block_dims(u)) dims.push_back(d);
        return dims;
    }

    int adv_dim() const { return static_cast<int>(adversaries.size()) * layout.block_size(); }
};

inline ThreatModel make_threat(const sac::Checkpoint& ck, std::vector<int> adversaries,
                               double delta_adv, double delta_vic) {
    ThreatModel threat;
    threat.layout = ck.env_config.layout();
    std::sort(adversaries.begin(), adversaries.end());
    threat.adversaries = std::move(adversaries);
    for (int u = 0; u < threat.layout.num_users; ++u)
        if (!std::binary_search(threat.adversaries.begin(), threat.adversaries.end(), u))
            threat.victims.push_back(u);
    threat.delta_adv = delta_adv;
    threat.delta_vic = delta_vic;
    threat.normalizer = ck.normalizer;
    threat.validate();
    return threat;
}

// Raw-units box over the full observation: adversary dimensions pinned to
// o_adv, victim dimensions spanning mu +- delta_vic * sigma.
inline polytope::BoxBounds build_attack_box(const ThreatModel& threat, const Vec& o_adv_raw) {
    threat.validate();
    if (static_cast<int>(o_adv_raw.size()) != threat.adv_dim())
        throw ShapeError("build_attack_box: o_adv length");
    polytope::BoxBounds box;
    box.lower.assign(threat.layout.dim(), 0.0);
    box.upper.assign(threat.layout.dim(), 0.0);
    const auto adv_dims = threat.adversary_dims();
    for (std::size_t i = 0; i < adv_dims.size(); ++i) {
        box.lower[adv_dims[i]] = o_adv_raw[i];
        box.upper[adv_dims[i]] = o_adv_raw[i];
    }
    for (int d : threat.victim_dims()) {
        const double half = threat.delta_vic * threat.normalizer.sigma(d);
        box.lower[d] = threat.normalizer.mean[d] - half;
        box.upper[d] = threat.normalizer.mean[d] + half;
    }
    return box;
}

// All actions whose decoded subset contains at least one victim.
inline std::vector<env::ActionIndex> victim_actions(int num_users, int max_selected,
                                                    const std::vector<int>& victims) {
    if (victims.empty()) throw ConfigError("victim_actions: empty victim set");
    std::vector<bool> is_victim(num_users, false);
    for (int v : victims) {
        if (v < 0 || v >= num_users) throw ConfigError("victim_actions: bad victim index");
        is_victim[v] = true;
    }
    std::vector<env::ActionIndex> out;
    const int total = env::action_count(num_users, max_selected);
    for (int a = 0; a < total; ++a) {
        for (int u : env::decode_action(a, num_users, max_selected))
            if (is_victim[u]) {
                out.push_back(a);
                break;
            }
    }
    return out;
}

// Victim lattice points consistent with the actor's output bounds over the
// box. The actor's pre-squash mean rows are bounded by the polytope pass and
// mapped through the monotone squash; when no victim proto fits, every victim
// proto is attacked (conservative fallback).
inline std::vector<env::ActionIndex> reachable_victim_actions(
    const MlpParams& actor, const polytope::BoxBounds& norm_box, const env::ProtoLattice& lattice,
    const std::vector<env::ActionIndex>& victim_set) {
    const auto res = polytope::propagate_bounds(actor, norm_box);
    Vec u_lo(lattice.dims), u_hi(lattice.dims);
    for (int d = 0; d < lattice.dims; ++d) {
        u_lo[d] = 1.0 / (1.0 + std::exp(-2.0 * res.output_lower[d]));
        u_hi[d] = 1.0 / (1.0 + std::exp(-2.0 * res.output_upper[d]));
    }
    std::vector<env::ActionIndex> inside;
    for (const auto a : victim_set) {
        const double* p = lattice.point(a);
        bool ok = true;
        for (int d = 0; d < lattice.dims; ++d)
            if (p[d] < u_lo[d] - 1e-9 || p[d] > u_hi[d] + 1e-9) {
                ok = false;
                break;
            }
        if (ok) inside.push_back(a);
    }
    return inside.empty() ? victim_set : inside;
}

inline std::vector<Vec> reachable_victim_protos(const MlpParams& actor,
                                                const polytope::BoxBounds& norm_box,
                                                const env::ProtoLattice& lattice,
                                                const std::vector<env::ActionIndex>& victim_set) {
    std::vector<Vec> protos;
    for (const auto a : reachable_victim_actions(actor, norm_box, lattice, victim_set))
        protos.emplace_back(lattice.point(a), lattice.point(a) + lattice.dims);
    return protos;
}

enum class Aggregation { kMax, kSum };

struct AttackBudget {
    int restarts = 10;
    int iterations = 300;
    double step_size = 0.01;
    int num_samples = 100;  // SPGD only
    std::uint64_t seed = 0;
    Aggregation aggregation = Aggregation::kMax;

    void validate() const {
        if (restarts < 1) throw ConfigError("restarts must be >= 1");
        if (iterations < 0) throw ConfigError("iterations must be >= 0");
        if (!(step_size > 0.0)) throw ConfigError("step_size must be > 0");
        if (num_samples < 1) throw ConfigError("num_samples must be >= 1");
    }
};

struct AttackResult {
    std::string scheme;
    Vec o_adv_star;                 // raw observation units, adversary blocks
    double best_objective = 0.0;
    std::vector<Vec> trace;         // per restart, best-so-far objective per iteration
    double wall_seconds = 0.0;      // informational; never serialized
    AttackBudget budget;
    std::vector<int> adversaries;
    std::vector<int> victims;
    double delta_adv = 0.0;
    double delta_vic = 0.0;
    std::string search_space = "csi";  // csi | block
    std::string surface = "min";       // min | critic1
};

namespace detail {

// Normalized-units view of the attack: z ranges over the normalized adversary
// block, victims keep their normalized interval, and the networks consume the
// result directly.
struct NormalizedThreat {
    std::vector<int> adv_dims;
    std::vector<bool> optimized;  // per z entry: searched, or pinned at the mean
    Vec base_lower;  // victim bounds in normalized units, 0 on adversary dims
    Vec base_upper;
    Vec z_lower;  // normalized clip box for z
    Vec z_upper;

    static NormalizedThreat build(const ThreatModel& threat) {
        threat.validate();
        NormalizedThreat nt;
        nt.adv_dims = threat.adversary_dims();
        const int dim = threat.layout.dim();
        nt.base_lower.assign(dim, 0.0);
        nt.base_upper.assign(dim, 0.0);
        const auto& norm = threat.normalizer;
        for (int d : threat.victim_dims()) {
            const double sigma = std::max(norm.sigma(d), env::kSigmaFloor);
            const double half = threat.delta_vic * norm.sigma(d) / sigma;
            nt.base_lower[d] = -half;
            nt.base_upper[d] = half;
        }
        std::vector<bool> injectable(dim, false);
        for (int u : threat.adversaries)
            for (int d : threat.layout.csi_dims(u)) injectable[d] = true;
        for (int d : nt.adv_dims) {
            const double sigma = std::max(norm.sigma(d), env::kSigmaFloor);
            nt.z_lower.push_back(-threat.delta_adv * norm.sigma(d) / sigma);
            nt.z_upper.push_back(threat.delta_adv * norm.sigma(d) / sigma);
            nt.optimized.push_back(!threat.falsify_csi_only || injectable[d]);
        }
        return nt;
    }

    Vec initial_z(Rng& rng) const {
        Vec z(adv_dims.size(), 0.0);
        for (std::size_t i = 0; i < z.size(); ++i)
            if (optimized[i]) z[i] = rng.uniform(z_lower[i], z_upper[i]);
        return z;
    }

    void project(Vec& z) const {
        for (std::size_t i = 0; i < z.size(); ++i)
            z[i] = optimized[i] ? std::clamp(z[i], z_lower[i], z_upper[i]) : 0.0;
    }

    void mask_gradient(Vec& g) const {
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!optimized[i]) g[i] = 0.0;
    }

    polytope::BoxBounds obs_box(const Vec& z) const {
        polytope::BoxBounds box{base_lower, base_upper};
        for (std::size_t i = 0; i < adv_dims.size(); ++i) {
            box.lower[adv_dims[i]] = z[i];
            box.upper[adv_dims[i]] = z[i];
        }
        return box;
    }

    Vec to_raw(const ThreatModel& threat, const Vec& z) const {
        Vec raw(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            const int d = adv_dims[i];
            raw[i] = threat.normalizer.mean[d] +
                     z[i] * std::max(threat.normalizer.sigma(d), env::kSigmaFloor);
        }
        return raw;
    }
};

// Critic input box = [obs box ; proto point]; returns the concretized upper
// bound of Q, optionally with its gradient in z.
inline double critic_upper_bound(const MlpParams& critic, const polytope::BoxBounds& obs_box,
                                 const Vec& proto, const std::vector<int>& adv_dims,
                                 Vec* grad_z) {
    const int obs_dim = obs_box.dim();
    const int d = static_cast<int>(proto.size());
    ndiff::Tape tape;
    int lb, ub;
    if (grad_z != nullptr) {
        lb = tape.input(Mat::column(obs_box.lower));
        ub = tape.input(Mat::column(obs_box.upper));
    } else {
        lb = tape.constant(obs_box.lower);
        ub = tape.constant(obs_box.upper);
    }
    const int u_const = tape.constant(proto);
    const int x_lb = tape.concat_rows(lb, u_const);
    const int x_ub = tape.concat_rows(ub, u_const);
    const auto graph = polytope::build_bound_graph(tape, critic, x_lb, x_ub);
    if (tape.val(graph.out_upper).rows != 1)
        throw ShapeError("attack: critic must have a scalar output");
    const double value = tape.val(graph.out_upper)(0, 0);
    if (grad_z != nullptr) {
        tape.backward(graph.out_upper);
        grad_z->assign(adv_dims.size(), 0.0);
        for (std::size_t i = 0; i < adv_dims.size(); ++i)
            (*grad_z)[i] = tape.grad(lb)(adv_dims[i], 0) + tape.grad(ub)(adv_dims[i], 0);
    }
    (void)obs_dim;
    return value;
}

}  // namespace detail

namespace detail {

// Upper bound of the scheduler's refinement value for one proto: min of the
// attacked critics' concretized upper bounds, with the gradient taken through
// the binding critic.
inline double attacked_upper_bound(const sac::Checkpoint& ck, const ThreatModel& threat,
                                   const polytope::BoxBounds& obs_box, const Vec& proto,
                                   const std::vector<int>& adv_dims, Vec* grad_z) {
    if (!threat.attack_both_critics)
        return critic_upper_bound(ck.critic1, obs_box, proto, adv_dims, grad_z);
    const double q1 = critic_upper_bound(ck.critic1, obs_box, proto, adv_dims, nullptr);
    const double q2 = critic_upper_bound(ck.critic2, obs_box, proto, adv_dims, nullptr);
    if (grad_z != nullptr)
        critic_upper_bound(q1 <= q2 ? ck.critic1 : ck.critic2, obs_box, proto, adv_dims, grad_z);
    return std::min(q1, q2);
}

}  // namespace detail

// Bound-minimization objective at a normalized adversary block z: the chosen
// aggregation of the attacked critics' concretized upper bounds over every
// reachable victim proto. Exposed for oracle comparisons in tests.
inline double fggm_objective(const sac::Checkpoint& ck, const ThreatModel& threat, const Vec& z,
                             Aggregation aggregation = Aggregation::kMax) {
    const auto nt = detail::NormalizedThreat::build(threat);
    const auto lattice = ck.lattice();
    const auto vic_actions =
        victim_actions(threat.layout.num_users, ck.env_config.max_selected, threat.victims);
    const auto box = nt.obs_box(z);
    const auto protos = reachable_victim_protos(ck.actor, box, lattice, vic_actions);
    double acc = aggregation == Aggregation::kMax ? -std::numeric_limits<double>::infinity() : 0.0;
    for (const auto& proto : protos) {
        const double q = detail::attacked_upper_bound(ck, threat, box, proto, nt.adv_dims, nullptr);
        if (aggregation == Aggregation::kMax)
            acc = std::max(acc, q);
        else
            acc += q;
    }
    return acc;
}

// FGGM: Adam descent on the adversary block to minimize the polytope upper
// bound of the attacked critic over all victim-containing actions, restarted
// from multiple uniform draws inside the clip box. The single optimized block
// is reused for the whole evaluation run.
inline AttackResult fggm(const sac::Checkpoint& ck, const ThreatModel& threat,
                         const AttackBudget& budget) {
    threat.validate();
    budget.validate();
    const auto nt = detail::NormalizedThreat::build(threat);
    const auto lattice = ck.lattice();
    const auto vic_actions =
        victim_actions(threat.layout.num_users, ck.env_config.max_selected, threat.victims);
    if (vic_actions.empty()) throw ConfigError("fggm: no victim actions");
    const int zdim = threat.adv_dim();

    AttackResult result;
    result.scheme = "fggm";
    result.budget = budget;
    result.adversaries = threat.adversaries;
    result.victims = threat.victims;
    result.delta_adv = threat.delta_adv;
    result.delta_vic = threat.delta_vic;
    result.search_space = threat.falsify_csi_only ? "csi" : "block";
    result.surface = threat.attack_both_critics ? "min" : "critic1";
    result.best_objective = std::numeric_limits<double>::infinity();

    Vec best_z(zdim, 0.0);
    for (int restart = 0; restart < budget.restarts; ++restart) {
        Rng rng(derive_seed(budget.seed, 100 + restart));
        Vec z = nt.initial_z(rng);
        ndiff::AdamState adam(zdim, {budget.step_size});

        double best_here = std::numeric_limits<double>::infinity();
        Vec best_here_z = z;
        Vec trace;
        trace.reserve(budget.iterations + 1);
        for (int iter = 0; iter <= budget.iterations; ++iter) {
            const auto box = nt.obs_box(z);
            const auto protos = reachable_victim_protos(ck.actor, box, lattice, vic_actions);

            // value sweep over the candidate set
            Vec q_values(protos.size());
            double objective = budget.aggregation == Aggregation::kMax
                                   ? -std::numeric_limits<double>::infinity()
                                   : 0.0;
            int argmax = 0;
            for (std::size_t i = 0; i < protos.size(); ++i) {
                q_values[i] =
                    detail::attacked_upper_bound(ck, threat, box, protos[i], nt.adv_dims, nullptr);
                if (budget.aggregation == Aggregation::kMax) {
                    if (q_values[i] > objective) {
                        objective = q_values[i];
                        argmax = static_cast<int>(i);
                    }
                } else {
                    objective += q_values[i];
                }
            }
            if (objective < best_here) {
                best_here = objective;
                best_here_z = z;
            }
            trace.push_back(best_here);
            if (iter == budget.iterations) break;

            // gradient of the aggregated bound, then a clipped Adam step
            Vec grad(zdim, 0.0);
            if (budget.aggregation == Aggregation::kMax) {
                detail::attacked_upper_bound(ck, threat, box, protos[argmax], nt.adv_dims, &grad);
            } else {
                Vec g;
                for (const auto& proto : protos) {
                    detail::attacked_upper_bound(ck, threat, box, proto, nt.adv_dims, &g);
                    for (int i = 0; i < zdim; ++i) grad[i] += g[i];
                }
            }
            nt.mask_gradient(grad);
            ndiff::adam_step(adam, z, grad);
            nt.project(z);
        }
        result.trace.push_back(std::move(trace));
        if (best_here < result.best_objective) {
            result.best_objective = best_here;
            best_z = best_here_z;
        }
    }
    result.o_adv_star = nt.to_raw(threat, best_z);
    return result;
}

// Deterministic victim-observation sample set for SPGD (normalized units,
// full observation dimension with adversary dims zeroed).
inline std::vector<Vec> spgd_samples(const ThreatModel& threat, int num_samples,
                                     std::uint64_t seed) {
    const auto nt = detail::NormalizedThreat::build(threat);
    Rng rng(derive_seed(seed, 0x53504744ULL));
    std::vector<Vec> samples(num_samples);
    for (auto& s : samples) {
        s = nt.base_lower;
        for (int d = 0; d < threat.layout.dim(); ++d)
            s[d] = rng.uniform(nt.base_lower[d], nt.base_upper[d]);
    }
    return samples;
}

inline double attacked_q(const sac::Checkpoint& ck, const ThreatModel& threat, const Vec& obs,
                         const Vec& proto) {
    const double q1 = sac::critic_q(ck.critic1, obs, proto);
    if (!threat.attack_both_critics) return q1;
    return std::min(q1, sac::critic_q(ck.critic2, obs, proto));
}

inline double spgd_objective(const sac::Checkpoint& ck, const ThreatModel& threat,
                             const std::vector<Vec>& samples, const Vec& z) {
    const auto nt = detail::NormalizedThreat::build(threat);
    const auto lattice = ck.lattice();
    const auto vic_actions =
        victim_actions(threat.layout.num_users, ck.env_config.max_selected, threat.victims);
    double best = -std::numeric_limits<double>::infinity();
    Vec obs;
    for (const auto& sample : samples) {
        obs = sample;
        for (std::size_t i = 0; i < nt.adv_dims.size(); ++i) obs[nt.adv_dims[i]] = z[i];
        for (const auto a : vic_actions) {
            Vec proto(lattice.point(a), lattice.point(a) + lattice.dims);
            best = std::max(best, attacked_q(ck, threat, obs, proto));
        }
    }
    return best;
}

// Sampling-based PGD baseline: identical restart/iteration budget and clip
// box, but the bound is replaced by the exact critic maximized over sampled
// victim observations and every victim action.
inline AttackResult spgd(const sac::Checkpoint& ck, const ThreatModel& threat,
                         const AttackBudget& budget) {
    threat.validate();
    budget.validate();
    const auto nt = detail::NormalizedThreat::build(threat);
    const auto lattice = ck.lattice();
    const auto vic_actions =
        victim_actions(threat.layout.num_users, ck.env_config.max_selected, threat.victims);
    if (vic_actions.empty()) throw ConfigError("spgd: no victim actions");
    const int zdim = threat.adv_dim();
    const int obs_dim = threat.layout.dim();

    const std::vector<Vec> samples = spgd_samples(threat, budget.num_samples, budget.seed);
    std::vector<Vec> protos;
    for (const auto a : vic_actions)
        protos.emplace_back(lattice.point(a), lattice.point(a) + lattice.dims);

    AttackResult result;
    result.scheme = "spgd";
    result.budget = budget;
    result.adversaries = threat.adversaries;
    result.victims = threat.victims;
    result.delta_adv = threat.delta_adv;
    result.delta_vic = threat.delta_vic;
    result.search_space = threat.falsify_csi_only ? "csi" : "block";
    result.surface = threat.attack_both_critics ? "min" : "critic1";
    result.best_objective = std::numeric_limits<double>::infinity();

    Vec best_z(zdim, 0.0);
    for (int restart = 0; restart < budget.restarts; ++restart) {
        Rng rng(derive_seed(budget.seed, 200 + restart));
        Vec z = nt.initial_z(rng);
        ndiff::AdamState adam(zdim, {budget.step_size});

        double best_here = std::numeric_limits<double>::infinity();
        Vec best_here_z = z;
        Vec trace;
        trace.reserve(budget.iterations + 1);
        Vec obs(obs_dim);
        for (int iter = 0; iter <= budget.iterations; ++iter) {
            double objective = -std::numeric_limits<double>::infinity();
            int arg_sample = 0, arg_proto = 0;
            for (std::size_t s = 0; s < samples.size(); ++s) {
                obs = samples[s];
                for (std::size_t i = 0; i < nt.adv_dims.size(); ++i) obs[nt.adv_dims[i]] = z[i];
                for (std::size_t pi = 0; pi < protos.size(); ++pi) {
                    const double q = attacked_q(ck, threat, obs, protos[pi]);
                    if (q > objective) {
                        objective = q;
                        arg_sample = static_cast<int>(s);
                        arg_proto = static_cast<int>(pi);
                    }
                }
            }
            if (objective < best_here) {
                best_here = objective;
                best_here_z = z;
            }
            trace.push_back(best_here);
            if (iter == budget.iterations) break;

            // exact gradient of Q at the argmax (sample, proto) pair
            ndiff::Tape tape;
            const int zn = tape.input(Mat::column(z));
            Mat embed(obs_dim, zdim);
            Vec base = samples[arg_sample];
            for (std::size_t i = 0; i < nt.adv_dims.size(); ++i) {
                embed(nt.adv_dims[i], static_cast<int>(i)) = 1.0;
                base[nt.adv_dims[i]] = 0.0;
            }
            const int obs_node = tape.add(tape.matmul(tape.constant(embed), zn),
                                          tape.constant(base));
            const int x = tape.concat_rows(obs_node, tape.constant(protos[arg_proto]));
            // gradient flows through whichever critic binds the min
            const ndiff::MlpParams* net = &ck.critic1;
            if (threat.attack_both_critics) {
                obs = samples[arg_sample];
                for (std::size_t i = 0; i < nt.adv_dims.size(); ++i) obs[nt.adv_dims[i]] = z[i];
                if (sac::critic_q(ck.critic2, obs, protos[arg_proto]) <
                    sac::critic_q(ck.critic1, obs, protos[arg_proto]))
                    net = &ck.critic2;
            }
            const auto binding = ndiff::bind_mlp(tape, *net, false);
            const int q = ndiff::mlp_forward_graph(tape, *net, binding, x);
            tape.backward(q);
            Vec grad(tape.grad(zn).a);
            nt.mask_gradient(grad);
            ndiff::adam_step(adam, z, grad);
            nt.project(z);
        }
        result.trace.push_back(std::move(trace));
        if (best_here < result.best_objective) {
            result.best_objective = best_here;
            best_z = best_here_z;
        }
    }
    result.o_adv_star = nt.to_raw(threat, best_z);
    return result;
}

// Black-box baseline: a fresh uniform draw inside the adversary clip box each
// slot, CSI dimensions only; gamma and average-rate dims stay truthful.
// Returns the raw CSI dims per adversary user, 2M values each, in set order.
inline Vec noise_attack(const ThreatModel& threat, std::uint64_t slot_seed) {
    threat.validate();
    Rng rng(slot_seed);
    Vec out;
    out.reserve(threat.adversaries.size() * 2 * threat.layout.num_antennas);
    for (int u : threat.adversaries)
        for (int d : threat.layout.csi_dims(u)) {
            const double half = threat.delta_adv * threat.normalizer.sigma(d);
            out.push_back(rng.uniform(threat.normalizer.mean[d] - half,
                                      threat.normalizer.mean[d] + half));
        }
    return out;
}

// Reported-CSI injection: writes the adversary users' CSI dims from the raw
// adversary block into the reported matrix. gamma and R dims are recomputed
// truthfully by the base station, so only CSI is falsifiable here.
inline CMat apply_adversarial_csi(const CMat& reported, const ThreatModel& threat,
                                  const Vec& o_adv_raw) {
    if (static_cast<int>(o_adv_raw.size()) != threat.adv_dim())
        throw ShapeError("apply_adversarial_csi: o_adv length");
    CMat out = reported;
    const int block = threat.layout.block_size();
    for (std::size_t ui = 0; ui < threat.adversaries.size(); ++ui) {
        const int user = threat.adversaries[ui];
        const int base = static_cast<int>(ui) * block + 2;  // skip gamma, R
        for (int r = 0; r < threat.layout.num_antennas; ++r)
            out(r, user) = {o_adv_raw[base + 2 * r], o_adv_raw[base + 2 * r + 1]};
    }
    return out;
}

// CSI-only variant of the injection for the per-slot noise scheme.
inline CMat apply_noise_csi(const CMat& reported, const ThreatModel& threat,
                            const Vec& csi_dims_raw) {
    CMat out = reported;
    const int per_user = 2 * threat.layout.num_antennas;
    if (static_cast<int>(csi_dims_raw.size()) !=
        per_user * static_cast<int>(threat.adversaries.size()))
        throw ShapeError("apply_noise_csi: csi length");
    for (std::size_t ui = 0; ui < threat.adversaries.size(); ++ui) {
        const int user = threat.adversaries[ui];
        for (int r = 0; r < threat.layout.num_antennas; ++r)
            out(r, user) = {csi_dims_raw[ui * per_user + 2 * r],
                            csi_dims_raw[ui * per_user + 2 * r + 1]};
    }
    return out;
}

inline nlohmann::json attack_result_to_json(const AttackResult& r) {
    nlohmann::json j;
    j["scheme"] = r.scheme;
    j["o_adv_star"] = r.o_adv_star;
    j["best_objective"] = r.best_objective;
    j["trace"] = r.trace;
    j["adversaries"] = r.adversaries;
    j["victims"] = r.victims;
    j["delta_adv"] = r.delta_adv;
    j["delta_vic"] = r.delta_vic;
    j["restarts"] = r.budget.restarts;
    j["iterations"] = r.budget.iterations;
    j["num_samples"] = r.budget.num_samples;
    j["step_size"] = r.budget.step_size;
    j["seed"] = r.budget.seed;
    j["aggregation"] = r.budget.aggregation == Aggregation::kMax ? "max" : "sum";
    j["search_space"] = r.search_space;
    j["surface"] = r.surface;
    return j;
}

inline AttackResult attack_result_from_json(const nlohmann::json& j) {
    AttackResult r;
    r.scheme = j.at("scheme").get<std::string>();
    r.o_adv_star = j.at("o_adv_star").get<Vec>();
    r.best_objective = j.at("best_objective").get<double>();
    r.trace = j.at("trace").get<std::vector<Vec>>();
    r.adversaries = j.at("adversaries").get<std::vector<int>>();
    r.victims = j.at("victims").get<std::vector<int>>();
    r.delta_adv = j.at("delta_adv");
    r.delta_vic = j.at("delta_vic");
    r.budget.restarts = j.at("restarts");
    r.budget.iterations = j.at("iterations");
    r.budget.num_samples = j.at("num_samples");
    r.budget.step_size = j.at("step_size");
    r.budget.seed = j.at("seed");
    r.budget.aggregation =
        j.at("aggregation").get<std::string>() == "sum" ? Aggregation::kSum : Aggregation::kMax;
    r.search_space = j.value("search_space", "csi");
    r.surface = j.value("surface", "min");
    return r;
}

}  // namespace mimolab::attack
