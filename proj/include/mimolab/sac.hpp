#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimolab/actions.hpp"
#include "mimolab/env.hpp"
#include "mimolab/errors.hpp"
#include "mimolab/ndiff.hpp"
#include "mimolab/rng.hpp"

namespace mimolab::sac {

using ndiff::MlpParams;

inline constexpr double kLogStdMin = -8.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kLog2Pi = 1.8378770664093453;

struct SacConfig {
    int proto_dims = 3;  // D
    int knn_k = 20;
    int actor_hidden = 128;
    int critic_hidden = 256;
    int hidden_layers = 2;
    int replay_capacity = 100000;
    int batch_size = 64;
    double discount = 0.95;
    double polyak = 0.005;
    bool auto_temperature = true;  // target entropy -D
    double temperature = 0.2;      // fixed value, or the initial value in auto mode
    double lr = 3e-4;
    int total_steps = 60000;
    int start_steps = 1000;    // uniform-proto exploration warmup
    int update_after = 1000;
    int update_every = 1;      // env steps per gradient step
    int episode_length = 500;
    int burn_in_slots = 20;    // slots after reset skipped by the replay buffer
    // Optional cap on the stored slot-sum reward, applied after the per-user
    // shaping. <= 0 disables. The environment reward is untouched.
    double reward_clip = 0.0;
    // Optional: train on sum r_l / R_l^{t+1} instead of the raw slot reward;
    // the post-update denominator bounds each term by 1/(1-beta). The capped
    // raw reward trains fairer policies, so this stays off by default.
    bool smoothed_reward = false;
    // Per-user urgency cap: stored reward = sum_l min(r_l/R_l, c). Around
    // 2 L / N_bar this keeps the pressure to serve under-served users without
    // letting a single decayed denominator dominate the return. Negative
    // means auto (2 L / N_bar); 0 disables.
    double per_user_clip = -1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (proto_dims < 1) throw ConfigError("proto_dims must be >= 1");
        if (knn_k < 1) throw ConfigError("knn_k must be >= 1");
        if (batch_size < 1 || batch_size > replay_capacity)
            throw ConfigError("batch_size must be in [1, replay_capacity]");
        if (!(discount >= 0.0 && discount <= 1.0)) throw ConfigError("discount in [0,1]");
        if (!(polyak > 0.0 && polyak <= 1.0)) throw ConfigError("polyak in (0,1]");
        if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
        if (update_every < 1) throw ConfigError("update_every must be >= 1");
        if (episode_length < 1) throw ConfigError("episode_length must be >= 1");
        if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
    }
};

inline nlohmann::json sac_config_to_json(const SacConfig& c) {
    return {{"proto_dims", c.proto_dims},
            {"knn_k", c.knn_k},
            {"actor_hidden", c.actor_hidden},
            {"critic_hidden", c.critic_hidden},
            {"hidden_layers", c.hidden_layers},
            {"replay_capacity", c.replay_capacity},
            {"batch_size", c.batch_size},
            {"discount", c.discount},
            {"polyak", c.polyak},
            {"auto_temperature", c.auto_temperature},
            {"temperature", c.temperature},
            {"lr", c.lr},
            {"total_steps", c.total_steps},
            {"start_steps", c.start_steps},
            {"update_after", c.update_after},
            {"update_every", c.update_every},
            {"episode_length", c.episode_length},
            {"burn_in_slots", c.burn_in_slots},
            {"reward_clip", c.reward_clip},
            {"smoothed_reward", c.smoothed_reward},
            {"per_user_clip", c.per_user_clip},
            {"seed", c.seed}};
}

inline SacConfig sac_config_from_json(const nlohmann::json& j) {
    SacConfig c;
    c.proto_dims = j.at("proto_dims");
    c.knn_k = j.at("knn_k");
    c.actor_hidden = j.at("actor_hidden");
    c.critic_hidden = j.at("critic_hidden");
    c.hidden_layers = j.at("hidden_layers");
    c.replay_capacity = j.at("replay_capacity");
    c.batch_size = j.at("batch_size");
    c.discount = j.at("discount");
    c.polyak = j.at("polyak");
    c.auto_temperature = j.at("auto_temperature");
    c.temperature = j.at("temperature");
    c.lr = j.at("lr");
    c.total_steps = j.at("total_steps");
    c.start_steps = j.at("start_steps");
    c.update_after = j.at("update_after");
    c.update_every = j.at("update_every");
    c.episode_length = j.at("episode_length");
    c.burn_in_slots = j.at("burn_in_slots");
    c.reward_clip = j.value("reward_clip", 0.0);
    c.smoothed_reward = j.value("smoothed_reward", false);
    c.per_user_clip = j.value("per_user_clip", -1.0);
    c.seed = j.at("seed");
    return c;
}

inline nlohmann::json env_config_to_json(const env::EnvConfig& c) {
    return {{"num_users", c.num_users},
            {"num_antennas", c.num_antennas},
            {"max_selected", c.max_selected},
            {"beta", c.beta},
            {"tx_power", c.tx_power},
            {"noise_variance", c.noise_variance},
            {"doppler_coefficient", c.doppler_coefficient},
            {"proto_dims", c.proto_dims},
            {"knn_k", c.knn_k}};
}

inline env::EnvConfig env_config_from_json(const nlohmann::json& j) {
    env::EnvConfig c;
    c.num_users = j.at("num_users");
    c.num_antennas = j.at("num_antennas");
    c.max_selected = j.at("max_selected");
    c.beta = j.at("beta");
    c.tx_power = j.at("tx_power");
    c.noise_variance = j.at("noise_variance");
    c.doppler_coefficient = j.at("doppler_coefficient");
    c.proto_dims = j.at("proto_dims");
    c.knn_k = j.at("knn_k");
    return c;
}

// ---------------------------------------------------------------------------
// Actor head: the trunk MLP emits [mu, log_std]; protos live in [0,1]^D via
// u = (tanh(z) + 1) / 2, which equals sigmoid(2z).
// ---------------------------------------------------------------------------

struct ActorOut {
    Vec mu;
    Vec log_std;
};

inline ActorOut actor_forward(const MlpParams& actor, const Vec& norm_obs, int proto_dims) {
    const Vec raw = ndiff::forward_mlp(actor, norm_obs);
    if (static_cast<int>(raw.size()) != 2 * proto_dims) throw ShapeError("actor head dims");
    ActorOut out;
    out.mu.assign(raw.begin(), raw.begin() + proto_dims);
    out.log_std.assign(raw.begin() + proto_dims, raw.end());
    for (auto& v : out.log_std) v = std::clamp(v, kLogStdMin, kLogStdMax);
    return out;
}

inline Vec squash_proto(const Vec& z) {
    Vec u(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) u[i] = 1.0 / (1.0 + std::exp(-2.0 * z[i]));
    return u;
}

inline Vec greedy_proto(const MlpParams& actor, const Vec& norm_obs, int proto_dims) {
    return squash_proto(actor_forward(actor, norm_obs, proto_dims).mu);
}

inline double critic_q(const MlpParams& critic, const Vec& norm_obs, const Vec& proto) {
    Vec x;
    x.reserve(norm_obs.size() + proto.size());
    x.insert(x.end(), norm_obs.begin(), norm_obs.end());
    x.insert(x.end(), proto.begin(), proto.end());
    return ndiff::forward_mlp(critic, x)[0];
}

struct ActionChoice {
    env::ActionIndex action = 0;
    Vec proto;  // the chosen lattice point
};

// Wolpertinger selection: the actor proposes a continuous proto, the k nearest
// assigned lattice actions are scored by the min of the twin critics, and the
// best one wins (ties to the smaller action index).
inline ActionChoice select_action(const MlpParams& actor, const MlpParams& critic1,
                                  const MlpParams& critic2, const env::ProtoLattice& lattice,
                                  const Vec& norm_obs, int k, bool explore, Rng* rng) {
    const ActorOut head = actor_forward(actor, norm_obs, lattice.dims);
    Vec z = head.mu;
    if (explore) {
        if (rng == nullptr) throw ConfigError("select_action: explore mode needs an rng");
        for (int d = 0; d < lattice.dims; ++d) z[d] += std::exp(head.log_std[d]) * rng->normal();
    }
    const Vec proto = squash_proto(z);
    const auto neighbors = env::knn(lattice, proto, k);

    ActionChoice best;
    double best_q = -std::numeric_limits<double>::infinity();
    bool first = true;
    for (const auto& nb : neighbors) {
        Vec cand(lattice.point(nb.action), lattice.point(nb.action) + lattice.dims);
        const double q = std::min(critic_q(critic1, norm_obs, cand),
                                  critic_q(critic2, norm_obs, cand));
        if (first || q > best_q || (q == best_q && nb.action < best.action)) {
            best_q = q;
            best.action = nb.action;
            best.proto = std::move(cand);
            first = false;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Replay buffer: uniform-sampling ring of raw-observation transitions.
// ---------------------------------------------------------------------------

struct Transition {
    Vec obs;
    Vec proto;
    double reward = 0.0;
    Vec next_obs;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity) : capacity_(capacity) {
        if (capacity < 1) throw ConfigError("replay capacity must be >= 1");
    }

    void push(Transition tr) {
        for (double v : tr.proto)
            if (!(v >= 0.0 && v <= 1.0)) throw TrainingError("proto action outside [0,1]");
        if (static_cast<int>(items_.size()) < capacity_) {
            items_.push_back(std::move(tr));
        } else {
            items_[head_] = std::move(tr);
        }
        head_ = (head_ + 1) % capacity_;
    }

    int size() const { return static_cast<int>(items_.size()); }

    const Transition& sample(Rng& rng) const { return items_[rng.uniform_int(size())]; }
    const Transition& at(int i) const { return items_[i]; }

private:
    int capacity_;
    int head_ = 0;
    std::vector<Transition> items_;
};

// ---------------------------------------------------------------------------
// Networks, checkpoint, and the SAC update.
// ---------------------------------------------------------------------------

struct Nets {
    MlpParams actor;
    MlpParams critic1, critic2;
    MlpParams target1, target2;
    double log_alpha = 0.0;
    ndiff::AdamState actor_opt, critic1_opt, critic2_opt, alpha_opt;

    double temperature() const { return std::exp(log_alpha); }
};

inline std::vector<int> mlp_dims(int in, int hidden, int layers, int out) {
    std::vector<int> dims{in};
    for (int i = 0; i < layers; ++i) dims.push_back(hidden);
    dims.push_back(out);
    return dims;
}

inline Nets init_nets(const env::EnvConfig& env_cfg, const SacConfig& cfg) {
    const int obs_dim = env_cfg.layout().dim();
    Rng rng(derive_seed(cfg.seed, 0x4e455453ULL));
    Nets nets;
    nets.actor = ndiff::random_mlp(
        mlp_dims(obs_dim, cfg.actor_hidden, cfg.hidden_layers, 2 * cfg.proto_dims), rng);
    nets.critic1 = ndiff::random_mlp(
        mlp_dims(obs_dim + cfg.proto_dims, cfg.critic_hidden, cfg.hidden_layers, 1), rng);
    nets.critic2 = ndiff::random_mlp(
        mlp_dims(obs_dim + cfg.proto_dims, cfg.critic_hidden, cfg.hidden_layers, 1), rng);
    nets.target1 = nets.critic1;
    nets.target2 = nets.critic2;
    nets.log_alpha = std::log(std::max(cfg.temperature, 1e-8));
    const ndiff::AdamConfig adam{cfg.lr};
    nets.actor_opt = ndiff::AdamState(ndiff::param_count(nets.actor), adam);
    nets.critic1_opt = ndiff::AdamState(ndiff::param_count(nets.critic1), adam);
    nets.critic2_opt = ndiff::AdamState(ndiff::param_count(nets.critic2), adam);
    nets.alpha_opt = ndiff::AdamState(1, adam);
    return nets;
}

struct Checkpoint {
    MlpParams actor;
    MlpParams critic1, critic2;
    env::NormalizerState normalizer;
    SacConfig config;
    env::EnvConfig env_config;

    void save(const std::string& path) const {
        ndiff::WeightsFile wf;
        wf.nets.emplace_back("actor", actor);
        wf.nets.emplace_back("critic1", critic1);
        wf.nets.emplace_back("critic2", critic2);
        wf.normalizer.count = normalizer.count;
        wf.normalizer.mean = normalizer.mean;
        wf.normalizer.m2 = normalizer.m2;
        wf.extra["sac"] = sac_config_to_json(config);
        wf.extra["env"] = env_config_to_json(env_config);
        ndiff::save_weights(wf, path);
    }

    static Checkpoint load(const std::string& path) {
        const ndiff::WeightsFile wf = ndiff::load_weights(path);
        if (wf.nets.size() != 3 || wf.nets[0].first != "actor" || wf.nets[1].first != "critic1" ||
            wf.nets[2].first != "critic2")
            throw FormatError("not a scheduler checkpoint");
        Checkpoint ck;
        ck.actor = wf.nets[0].second;
        ck.critic1 = wf.nets[1].second;
        ck.critic2 = wf.nets[2].second;
        ck.normalizer.count = wf.normalizer.count;
        ck.normalizer.mean = wf.normalizer.mean;
        ck.normalizer.m2 = wf.normalizer.m2;
        ck.config = sac_config_from_json(wf.extra.at("sac"));
        ck.env_config = env_config_from_json(wf.extra.at("env"));
        return ck;
    }

    env::ProtoLattice lattice() const {
        return env::build_lattice(env_config.action_total(), config.proto_dims);
    }
};

// Graph for the actor loss on a normalized observation batch with a fixed
// noise draw: mean over the batch of alpha * log pi(u|s) - min Q(s, u).
struct ActorGraph {
    int loss = -1;
    int logp = -1;  // 1 x B
    ndiff::MlpBinding actor_binding;
};

inline ActorGraph build_actor_loss(ndiff::Tape& tape, const MlpParams& actor,
                                   const MlpParams& critic1, const MlpParams& critic2,
                                   const Mat& norm_obs, const Mat& eps, double alpha,
                                   int proto_dims) {
    const int batch = norm_obs.cols;
    ActorGraph g;
    g.actor_binding = ndiff::bind_mlp(tape, actor, true);
    const int s = tape.constant(norm_obs);
    const int trunk = ndiff::mlp_forward_graph(tape, actor, g.actor_binding, s);

    Mat mu_sel(proto_dims, 2 * proto_dims), std_sel(proto_dims, 2 * proto_dims);
    for (int d = 0; d < proto_dims; ++d) {
        mu_sel(d, d) = 1.0;
        std_sel(d, proto_dims + d) = 1.0;
    }
    const int mu = tape.matmul(tape.constant(mu_sel), trunk);
    int log_std = tape.matmul(tape.constant(std_sel), trunk);
    log_std = tape.max_elem(log_std, tape.constant(Mat(proto_dims, batch, kLogStdMin)));
    log_std = tape.min_elem(log_std, tape.constant(Mat(proto_dims, batch, kLogStdMax)));
    const int std = tape.exp(log_std);
    const int z = tape.add(mu, tape.mul(std, tape.constant(eps)));
    const int u = tape.sigmoid(tape.affine(z, 2.0, 0.0));

    // log N(z; mu, std) summed over dims, with the tanh-squash correction
    // log du/dz = log 2 - softplus(-2z) - softplus(2z)
    const int zn = tape.mul(tape.sub(z, mu), tape.reciprocal(std));
    const int gauss = tape.sub(tape.affine(tape.mul(zn, zn), -0.5, -0.5 * kLog2Pi), log_std);
    const int corr = tape.sub(tape.add(tape.softplus(tape.affine(z, -2.0, 0.0)),
                                       tape.softplus(tape.affine(z, 2.0, 0.0))),
                              tape.constant(Mat(proto_dims, batch, std::log(2.0))));
    Mat ones(1, proto_dims, 1.0);
    const int logp = tape.matmul(tape.constant(ones), tape.add(gauss, corr));  // 1 x B
    g.logp = logp;

    const ndiff::MlpBinding c1 = ndiff::bind_mlp(tape, critic1, false);
    const ndiff::MlpBinding c2 = ndiff::bind_mlp(tape, critic2, false);
    const int x = tape.concat_rows(s, u);
    const int q = tape.min_elem(ndiff::mlp_forward_graph(tape, critic1, c1, x),
                                ndiff::mlp_forward_graph(tape, critic2, c2, x));
    const int per_item = tape.sub(tape.affine(logp, alpha, 0.0), q);
    g.loss = tape.affine(tape.sum_all(per_item), 1.0 / batch, 0.0);
    return g;
}

struct UpdateStats {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double mean_logp = 0.0;
    double temperature = 0.0;
};

namespace detail {

inline void apply_adam(ndiff::Tape& tape, const ndiff::MlpBinding& binding, MlpParams& params,
                       ndiff::AdamState& opt) {
    Vec flat = ndiff::flatten(params);
    Vec grads;
    grads.reserve(flat.size());
    for (const auto& [w, b] : binding.layers) {
        const Mat& gw = tape.grad(w);
        grads.insert(grads.end(), gw.a.begin(), gw.a.end());
        const Mat& gb = tape.grad(b);
        grads.insert(grads.end(), gb.a.begin(), gb.a.end());
    }
    ndiff::adam_step(opt, flat, grads);
    ndiff::assign_from_flat(params, flat);
}

inline void polyak_update(MlpParams& target, const MlpParams& online, double tau) {
    for (std::size_t li = 0; li < target.layers.size(); ++li) {
        auto& t = target.layers[li];
        const auto& o = online.layers[li];
        for (std::size_t i = 0; i < t.w.size(); ++i)
            t.w.a[i] = (1.0 - tau) * t.w.a[i] + tau * o.w.a[i];
        for (std::size_t i = 0; i < t.b.size(); ++i)
            t.b[i] = (1.0 - tau) * t.b[i] + tau * o.b[i];
    }
}

// Sampled squashed-Gaussian action and its log density, value-side.
inline std::pair<Vec, double> sample_with_logp(const ActorOut& head, Rng& rng) {
    const int d = static_cast<int>(head.mu.size());
    Vec z(d);
    double logp = 0.0;
    for (int i = 0; i < d; ++i) {
        const double std = std::exp(head.log_std[i]);
        const double eps = rng.normal();
        z[i] = head.mu[i] + std * eps;
        logp += -0.5 * eps * eps - head.log_std[i] - 0.5 * kLog2Pi;
        const double two_z = 2.0 * z[i];
        const double sp_pos = std::max(two_z, 0.0) + std::log1p(std::exp(-std::fabs(two_z)));
        const double sp_neg = std::max(-two_z, 0.0) + std::log1p(std::exp(-std::fabs(two_z)));
        logp += sp_pos + sp_neg - std::log(2.0);
    }
    return {squash_proto(z), logp};
}

}  // namespace detail

// One SAC gradient step on a sampled batch: twin-critic TD regression against
// the entropy-regularized target, a reparameterized actor step, an optional
// dual step on the temperature, then Polyak target smoothing.
inline UpdateStats sac_update(Nets& nets, const std::vector<const Transition*>& batch,
                              const env::NormalizerState& norm, const SacConfig& cfg, Rng& rng) {
    if (batch.empty()) throw ConfigError("sac_update: empty batch");
    const int b = static_cast<int>(batch.size());
    const int obs_dim = static_cast<int>(batch[0]->obs.size());
    const int d = cfg.proto_dims;
    const double alpha = nets.temperature();

    Mat s(obs_dim, b), s2(obs_dim, b), a(d, b);
    Vec y(b);
    for (int i = 0; i < b; ++i) {
        const Vec ns = env::normalize(norm, batch[i]->obs);
        const Vec ns2 = env::normalize(norm, batch[i]->next_obs);
        for (int r = 0; r < obs_dim; ++r) {
            s(r, i) = ns[r];
            s2(r, i) = ns2[r];
        }
        for (int r = 0; r < d; ++r) a(r, i) = batch[i]->proto[r];

        const ActorOut head2 = actor_forward(nets.actor, ns2, d);
        const auto [u2, logp2] = detail::sample_with_logp(head2, rng);
        const double qt = std::min(critic_q(nets.target1, ns2, u2),
                                   critic_q(nets.target2, ns2, u2));
        y[i] = batch[i]->reward + cfg.discount * (qt - alpha * logp2);
    }

    UpdateStats stats;

    {  // critic step
        ndiff::Tape tape;
        const ndiff::MlpBinding b1 = ndiff::bind_mlp(tape, nets.critic1, true);
        const ndiff::MlpBinding b2 = ndiff::bind_mlp(tape, nets.critic2, true);
        const int x = tape.concat_rows(tape.constant(s), tape.constant(a));
        const int q1 = ndiff::mlp_forward_graph(tape, nets.critic1, b1, x);
        const int q2 = ndiff::mlp_forward_graph(tape, nets.critic2, b2, x);
        Mat ym(1, b);
        for (int i = 0; i < b; ++i) ym(0, i) = y[i];
        const int target = tape.constant(ym);
        const int e1 = tape.sub(q1, target);
        const int e2 = tape.sub(q2, target);
        const int loss = tape.affine(
            tape.sum_all(tape.add(tape.mul(e1, e1), tape.mul(e2, e2))), 1.0 / b, 0.0);
        stats.critic_loss = tape.val(loss)(0, 0);
        tape.backward(loss);
        detail::apply_adam(tape, b1, nets.critic1, nets.critic1_opt);
        detail::apply_adam(tape, b2, nets.critic2, nets.critic2_opt);
    }

    {  // actor step
        Mat eps(d, b);
        for (auto& v : eps.a) v = rng.normal();
        ndiff::Tape tape;
        const ActorGraph g =
            build_actor_loss(tape, nets.actor, nets.critic1, nets.critic2, s, eps, alpha, d);
        stats.actor_loss = tape.val(g.loss)(0, 0);
        double mean_logp = 0.0;
        for (int i = 0; i < b; ++i) mean_logp += tape.val(g.logp)(0, i);
        stats.mean_logp = mean_logp / b;
        tape.backward(g.loss);
        detail::apply_adam(tape, g.actor_binding, nets.actor, nets.actor_opt);
    }

    if (cfg.auto_temperature) {
        // dual step on log alpha toward entropy target -D: descending
        // -log_alpha * mean(logp + target) lowers the temperature whenever
        // the policy entropy sits above the target
        const double target_entropy = -static_cast<double>(d);
        Vec la{nets.log_alpha};
        const Vec grad{-(stats.mean_logp + target_entropy)};
        ndiff::adam_step(nets.alpha_opt, la, grad);
        nets.log_alpha = la[0];
    }
    stats.temperature = nets.temperature();

    detail::polyak_update(nets.target1, nets.critic1, cfg.polyak);
    detail::polyak_update(nets.target2, nets.critic2, cfg.polyak);

    if (!std::isfinite(stats.critic_loss) || !std::isfinite(stats.actor_loss))
        throw TrainingError("non-finite loss");
    return stats;
}

struct CurvePoint {
    int step = 0;
    double episode_reward = 0.0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double temperature = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<CurvePoint> curve;
};

// Full training run: Wolpertinger action selection, per-episode channel
// re-seeding, normalizer updated on every raw observation. Deterministic for
// a fixed config.
inline TrainResult train(const env::EnvConfig& env_cfg, const SacConfig& cfg) {
    env_cfg.validate();
    cfg.validate();
    Nets nets = init_nets(env_cfg, cfg);
    env::NormalizerState norm;
    ReplayBuffer buffer(cfg.replay_capacity);
    const env::ProtoLattice lattice = env::build_lattice(env_cfg.action_total(), cfg.proto_dims);

    Rng explore_rng(derive_seed(cfg.seed, 0x584f504cULL));
    Rng update_rng(derive_seed(cfg.seed, 0x55504454ULL));

    TrainResult result;
    int step = 0;
    int episode = 0;
    double last_critic_loss = 0.0, last_actor_loss = 0.0;

    while (step < cfg.total_steps) {
        env::EnvState state(env_cfg, derive_seed(cfg.seed, 1000 + episode));
        double episode_reward = 0.0;
        int slots = 0;
        Vec obs = state.observation();
        norm.update(obs);
        while (slots < cfg.episode_length && step < cfg.total_steps) {
            ActionChoice choice;
            if (step < cfg.start_steps) {
                Vec proto(cfg.proto_dims);
                for (auto& v : proto) v = explore_rng.uniform();
                const auto nb = env::knn(lattice, proto, 1);
                choice.action = nb[0].action;
                choice.proto.assign(lattice.point(choice.action),
                                    lattice.point(choice.action) + cfg.proto_dims);
            } else {
                choice = select_action(nets.actor, nets.critic1, nets.critic2, lattice,
                                       env::normalize(norm, obs), cfg.knn_k, true, &explore_rng);
            }

            const Vec avg_before = state.avg_rates;
            const env::StepResult sr = env::step(state, choice.action, state.chan.true_csi);
            Vec next_obs = sr.next.observation();
            norm.update(next_obs);
            episode_reward += sr.reward;

            if (slots >= cfg.burn_in_slots) {
                double stored = sr.reward;
                const double user_cap = cfg.per_user_clip < 0.0
                                            ? 2.0 * env_cfg.num_users / env_cfg.max_selected
                                            : cfg.per_user_clip;
                if (user_cap > 0.0) {
                    stored = 0.0;
                    for (int l = 0; l < env_cfg.num_users; ++l)
                        if (sr.rates[l] > 0.0)
                            stored += std::min(sr.rates[l] / avg_before[l], user_cap);
                } else if (cfg.smoothed_reward) {
                    stored = 0.0;
                    for (int l = 0; l < env_cfg.num_users; ++l)
                        if (sr.rates[l] > 0.0) stored += sr.rates[l] / sr.next.avg_rates[l];
                }
                if (cfg.reward_clip > 0.0) stored = std::min(stored, cfg.reward_clip);
                buffer.push({obs, choice.proto, stored, next_obs});
            }

            state = sr.next;
            obs = std::move(next_obs);
            ++slots;
            ++step;

            if (step >= cfg.update_after && step % cfg.update_every == 0 &&
                buffer.size() >= cfg.batch_size) {
                std::vector<const Transition*> batch(cfg.batch_size);
                for (auto& item : batch) item = &buffer.sample(update_rng);
                UpdateStats stats;
                try {
                    stats = sac_update(nets, batch, norm, cfg, update_rng);
                } catch (const TrainingError& e) {
                    throw TrainingError(std::string(e.what()) + " at step " +
                                        std::to_string(step));
                }
                last_critic_loss = stats.critic_loss;
                last_actor_loss = stats.actor_loss;
            }
        }
        if (slots > 0)
            result.curve.push_back({step, episode_reward / slots, last_critic_loss,
                                    last_actor_loss, nets.temperature()});
        ++episode;
    }

    result.checkpoint.actor = std::move(nets.actor);
    result.checkpoint.critic1 = std::move(nets.critic1);
    result.checkpoint.critic2 = std::move(nets.critic2);
    result.checkpoint.normalizer = std::move(norm);
    result.checkpoint.config = cfg;
    result.checkpoint.env_config = env_cfg;
    return result;
}

}  // namespace mimolab::sac
