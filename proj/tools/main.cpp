// mimolab command line: train a DRL MU-MIMO scheduler, craft adversarial CSI
// against it, and evaluate schedulers under attack. See README for the config
// file format and output schemas.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mimolab/harness.hpp"

namespace {

using namespace mimolab;

std::string out_path(const std::string& out_dir, const std::string& name) {
    std::filesystem::create_directories(out_dir);
    return (std::filesystem::path(out_dir) / name).string();
}

std::string resolve_out_dir(const std::string& flag_value) {
    if (const char* env = std::getenv("MIMOLAB_OUT_DIR"); env != nullptr && env[0] != '\0')
        return env;
    return flag_value;
}

void add_env_options(CLI::App* cmd, env::EnvConfig& cfg) {
    cmd->add_option("--users,-L", cfg.num_users, "Number of users per resource block");
    cmd->add_option("--antennas,-M", cfg.num_antennas, "Base-station antennas");
    cmd->add_option("--max-selected,-N", cfg.max_selected, "Max users scheduled per slot");
    cmd->add_option("--beta", cfg.beta, "PF averaging coefficient");
    cmd->add_option("--tx-power", cfg.tx_power, "Per-user transmit power (linear)");
    cmd->add_option("--noise-variance", cfg.noise_variance, "Noise variance (linear)");
    cmd->add_option("--rho", cfg.doppler_coefficient, "Per-slot fading correlation");
    cmd->add_option("--proto-dims,-D", cfg.proto_dims, "Proto-action dimensions");
    cmd->add_option("--knn", cfg.knn_k, "Nearest neighbors refined by the critic");
}

void add_budget_options(CLI::App* cmd, attack::AttackBudget& budget, std::string& aggregation) {
    cmd->add_option("--restarts", budget.restarts, "Attack restarts");
    cmd->add_option("--iterations", budget.iterations, "Gradient iterations per restart");
    cmd->add_option("--samples", budget.num_samples, "SPGD victim-observation samples");
    cmd->add_option("--step-size", budget.step_size, "Adam step size for the attack");
    cmd->add_option("--aggregation", aggregation, "Objective aggregation: max or sum")
        ->check(CLI::IsMember({"max", "sum"}));
}

void add_threat_options(CLI::App* cmd, bool& full_block, bool& critic1_only) {
    cmd->add_flag("--optimize-full-block", full_block,
                  "Search all adversary observation dims, not just injectable CSI");
    cmd->add_flag("--attack-critic1", critic1_only,
                  "Bound critic 1 alone instead of the min of the twin critics");
}

int run_train(const env::EnvConfig& env_cfg, sac::SacConfig& cfg, const std::string& out_dir,
              std::string ckpt_path, std::string curve_path) {
    cfg.proto_dims = env_cfg.proto_dims;
    cfg.knn_k = env_cfg.knn_k;
    if (ckpt_path.empty()) ckpt_path = out_path(out_dir, "checkpoint.fggm");
    if (curve_path.empty()) curve_path = out_path(out_dir, "train_curve.csv");

    const sac::TrainResult result = sac::train(env_cfg, cfg);
    result.checkpoint.save(ckpt_path);

    std::ofstream curve(curve_path, std::ios::binary);
    if (!curve) throw FormatError("cannot open " + curve_path);
    curve << "step,episode_reward,critic_loss,actor_loss,temperature\n";
    for (const auto& p : result.curve)
        curve << p.step << ',' << harness::fmt_double(p.episode_reward) << ','
              << harness::fmt_double(p.critic_loss) << ',' << harness::fmt_double(p.actor_loss)
              << ',' << harness::fmt_double(p.temperature) << "\n";

    std::cout << "checkpoint: " << ckpt_path << "\n"
              << "curve:      " << curve_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale MU-MIMO scheduling lab: DRL training, polytope-bound CSI attacks,"
                 " and fairness evaluation"};
    app.require_subcommand(1);
    app.fallthrough();  // parent options remain valid after the subcommand name
    app.set_config("--config", "",
                   "key=value config file with [subcommand] sections; flags override it");

    std::string out_dir_flag = ".";
    app.add_option("--out-dir", out_dir_flag, "Output directory (MIMOLAB_OUT_DIR overrides)");

    // ---- train ----------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Train the SAC scheduler, write a checkpoint");
    env::EnvConfig train_env;
    sac::SacConfig sac_cfg;
    std::string ckpt_out, curve_out;
    add_env_options(train_cmd, train_env);
    train_cmd->add_option("--actor-hidden", sac_cfg.actor_hidden, "Actor hidden width");
    train_cmd->add_option("--critic-hidden", sac_cfg.critic_hidden, "Critic hidden width");
    train_cmd->add_option("--hidden-layers", sac_cfg.hidden_layers, "Hidden layers per net");
    train_cmd->add_option("--steps", sac_cfg.total_steps, "Total environment steps");
    train_cmd->add_option("--start-steps", sac_cfg.start_steps, "Uniform exploration warmup");
    train_cmd->add_option("--update-after", sac_cfg.update_after, "Steps before updates begin");
    train_cmd->add_option("--update-every", sac_cfg.update_every, "Env steps per gradient step");
    train_cmd->add_option("--batch", sac_cfg.batch_size, "Batch size");
    train_cmd->add_option("--replay", sac_cfg.replay_capacity, "Replay capacity");
    train_cmd->add_option("--discount", sac_cfg.discount, "Discount factor");
    train_cmd->add_option("--polyak", sac_cfg.polyak, "Target smoothing coefficient");
    train_cmd->add_option("--lr", sac_cfg.lr, "Adam learning rate");
    train_cmd->add_option("--episode-length", sac_cfg.episode_length, "Slots per episode");
    train_cmd->add_option("--burn-in", sac_cfg.burn_in_slots, "Slots skipped after reset");
    train_cmd->add_option("--reward-clip", sac_cfg.reward_clip,
                          "Cap on stored rewards; <= 0 disables");
    bool fixed_temp = false;
    train_cmd->add_flag("--fixed-temperature", fixed_temp, "Disable entropy auto-tuning");
    train_cmd->add_option("--temperature", sac_cfg.temperature, "Fixed or initial temperature");
    train_cmd->add_option("--seed", sac_cfg.seed, "Training seed")->required();
    train_cmd->add_option("--checkpoint", ckpt_out, "Checkpoint output path");
    train_cmd->add_option("--curve", curve_out, "Training-curve CSV output path");

    // ---- attack ---------------------------------------------------------
    auto* attack_cmd =
        app.add_subcommand("attack", "Compute an adversarial CSI block against a checkpoint");
    std::string atk_ckpt, atk_scheme = "fggm", atk_out, atk_aggregation = "max";
    double atk_delta_adv = 2.0, atk_delta_vic = 1.5;
    int atk_l_adv = 0;
    std::vector<int> atk_adversaries;
    attack::AttackBudget atk_budget;
    attack_cmd->add_option("--checkpoint", atk_ckpt, "Trained checkpoint path")->required();
    attack_cmd->add_option("--scheme", atk_scheme, "fggm, spgd or noise")
        ->check(CLI::IsMember({"fggm", "spgd", "noise"}));
    attack_cmd->add_option("--delta-adv", atk_delta_adv, "Adversary search width (std devs)");
    attack_cmd->add_option("--delta-vic", atk_delta_vic, "Victim bound width (std devs)");
    attack_cmd->add_option("--l-adv", atk_l_adv, "Number of adversaries (last users)");
    attack_cmd->add_option("--adversaries", atk_adversaries, "Explicit adversary user indices");
    add_budget_options(attack_cmd, atk_budget, atk_aggregation);
    bool atk_full_block = false, atk_critic1 = false;
    add_threat_options(attack_cmd, atk_full_block, atk_critic1);
    attack_cmd->add_option("--seed", atk_budget.seed, "Attack seed")->required();
    attack_cmd->add_option("--out", atk_out, "attack.json output path");

    // ---- eval -----------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "Run a seeded experiment and write metrics");
    harness::ExperimentConfig eval_cfg;
    std::string eval_policy = "random", eval_scheme = "none", eval_ckpt, eval_attack_json;
    std::string eval_aggregation = "max";
    add_env_options(eval_cmd, eval_cfg.env);
    eval_cmd->add_option("--policy", eval_policy, "random|optpf|optmr|optpfug|sac");
    eval_cmd->add_option("--scheme", eval_scheme, "none|noise|fggm|spgd");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint (sac policy / any attack)");
    eval_cmd->add_option("--attack-json", eval_attack_json,
                         "Precomputed attack result; its threat parameters take precedence");
    eval_cmd->add_option("--num-slots", eval_cfg.num_slots, "Slots per run");
    eval_cmd->add_option("--blocks", eval_cfg.num_blocks, "Independent resource-block replicas");
    eval_cmd->add_option("--delta-adv", eval_cfg.delta_adv, "Adversary width (std devs)");
    eval_cmd->add_option("--delta-vic", eval_cfg.delta_vic, "Victim width (std devs)");
    eval_cmd->add_option("--l-adv", eval_cfg.num_adversaries, "Number of adversaries");
    eval_cmd->add_option("--adversaries", eval_cfg.adversaries, "Explicit adversary indices");
    add_budget_options(eval_cmd, eval_cfg.budget, eval_aggregation);
    bool eval_full_block = false, eval_critic1 = false;
    add_threat_options(eval_cmd, eval_full_block, eval_critic1);
    eval_cmd->add_option("--seed", eval_cfg.seed, "Experiment seed")->required();

    // ---- sweep ----------------------------------------------------------
    auto* sweep_cmd = app.add_subcommand("sweep", "Grid of experiments over attack parameters");
    harness::ExperimentConfig sweep_base;
    std::string sweep_policy = "sac", sweep_scheme = "fggm", sweep_ckpt;
    std::string sweep_aggregation = "max";
    std::vector<double> grid_delta_adv, grid_delta_vic;
    std::vector<int> grid_l_adv;
    std::uint64_t sweep_seed = 0;
    int sweep_num_seeds = 1;
    add_env_options(sweep_cmd, sweep_base.env);
    sweep_cmd->add_option("--policy", sweep_policy, "Scheduling policy");
    sweep_cmd->add_option("--scheme", sweep_scheme, "Attack scheme per cell");
    sweep_cmd->add_option("--checkpoint", sweep_ckpt, "Checkpoint path");
    sweep_cmd->add_option("--num-slots", sweep_base.num_slots, "Slots per run");
    sweep_cmd->add_option("--delta-adv-grid", grid_delta_adv, "Adversary width grid");
    sweep_cmd->add_option("--delta-vic-grid", grid_delta_vic, "Victim width grid");
    sweep_cmd->add_option("--l-adv-grid", grid_l_adv, "Adversary count grid");
    sweep_cmd->add_option("--delta-adv", sweep_base.delta_adv, "Fixed adversary width");
    sweep_cmd->add_option("--delta-vic", sweep_base.delta_vic, "Fixed victim width");
    sweep_cmd->add_option("--l-adv", sweep_base.num_adversaries, "Fixed adversary count");
    add_budget_options(sweep_cmd, sweep_base.budget, sweep_aggregation);
    bool sweep_full_block = false, sweep_critic1 = false;
    add_threat_options(sweep_cmd, sweep_full_block, sweep_critic1);
    sweep_cmd->add_option("--seed", sweep_seed, "Base seed")->required();
    sweep_cmd->add_option("--num-seeds", sweep_num_seeds, "Replicas: seeds seed..seed+n-1");

    CLI11_PARSE(app, argc, argv);
    const std::string out_dir = resolve_out_dir(out_dir_flag);

    try {
        if (*train_cmd) {
            sac_cfg.auto_temperature = !fixed_temp;
            return run_train(train_env, sac_cfg, out_dir, ckpt_out, curve_out);
        }

        if (*attack_cmd) {
            const auto ck = sac::Checkpoint::load(atk_ckpt);
            if (atk_adversaries.empty()) {
                if (atk_l_adv < 1) throw ConfigError("attack needs --l-adv or --adversaries");
                for (int u = ck.env_config.num_users - atk_l_adv; u < ck.env_config.num_users;
                     ++u)
                    atk_adversaries.push_back(u);
            }
            atk_budget.aggregation = atk_aggregation == "sum" ? attack::Aggregation::kSum
                                                              : attack::Aggregation::kMax;
            auto threat = attack::make_threat(ck, atk_adversaries, atk_delta_adv, atk_delta_vic);
            threat.falsify_csi_only = !atk_full_block;
            threat.attack_both_critics = !atk_critic1;
            attack::AttackResult result;
            if (atk_scheme == "fggm") {
                result = attack::fggm(ck, threat, atk_budget);
            } else if (atk_scheme == "spgd") {
                result = attack::spgd(ck, threat, atk_budget);
            } else {
                // per-slot noise needs no precomputation; emit the threat echo
                result.scheme = "noise";
                result.budget = atk_budget;
                result.adversaries = threat.adversaries;
                result.victims = threat.victims;
                result.delta_adv = threat.delta_adv;
                result.delta_vic = threat.delta_vic;
                result.best_objective = 0.0;
            }
            if (atk_out.empty()) atk_out = out_path(out_dir, "attack.json");
            std::ofstream js(atk_out, std::ios::binary);
            if (!js) throw FormatError("cannot open " + atk_out);
            js << attack::attack_result_to_json(result).dump(2) << "\n";
            std::cout << "attack result: " << atk_out << "\n"
                      << "best objective: " << harness::fmt_double(result.best_objective)
                      << "\n";
            return 0;
        }

        if (*eval_cmd) {
            eval_cfg.policy = sched::parse_policy(eval_policy);
            eval_cfg.scheme = harness::parse_scheme(eval_scheme);
            eval_cfg.falsify_csi_only = !eval_full_block;
            eval_cfg.attack_both_critics = !eval_critic1;
            eval_cfg.checkpoint_path = eval_ckpt;
            eval_cfg.budget.aggregation = eval_aggregation == "sum" ? attack::Aggregation::kSum
                                                                    : attack::Aggregation::kMax;

            attack::AttackResult loaded_attack;
            harness::ExperimentInputs inputs;
            if (!eval_attack_json.empty()) {
                std::ifstream in(eval_attack_json);
                if (!in) throw FormatError("cannot open " + eval_attack_json);
                loaded_attack = attack::attack_result_from_json(nlohmann::json::parse(in));
                eval_cfg.delta_adv = loaded_attack.delta_adv;
                eval_cfg.delta_vic = loaded_attack.delta_vic;
                eval_cfg.adversaries = loaded_attack.adversaries;
                if (loaded_attack.scheme != "noise") {
                    eval_cfg.scheme = harness::parse_scheme(loaded_attack.scheme);
                    inputs.attack = &loaded_attack;
                } else {
                    eval_cfg.scheme = harness::AttackScheme::kNoise;
                }
            }

            const auto report = harness::run_experiment(eval_cfg, inputs);
            const std::string metrics_path = out_path(out_dir, "metrics.csv");
            const std::string summary_path = out_path(out_dir, "summary.csv");
            harness::write_metrics_csv(report, eval_cfg.env.num_users, metrics_path);
            harness::write_summary_csv(report, summary_path);
            std::cout << "metrics: " << metrics_path << "\n"
                      << "summary: " << summary_path << "\n"
                      << "final JFI: " << harness::fmt_double(report.final_jfi) << "\n"
                      << "victim selection probability (mean): "
                      << harness::fmt_double(report.victim_sel_mean) << "\n";
            return 0;
        }

        if (*sweep_cmd) {
            sweep_base.policy = sched::parse_policy(sweep_policy);
            sweep_base.scheme = harness::parse_scheme(sweep_scheme);
            sweep_base.falsify_csi_only = !sweep_full_block;
            sweep_base.attack_both_critics = !sweep_critic1;
            sweep_base.checkpoint_path = sweep_ckpt;
            sweep_base.budget.aggregation = sweep_aggregation == "sum"
                                                ? attack::Aggregation::kSum
                                                : attack::Aggregation::kMax;
            if (grid_delta_adv.empty()) grid_delta_adv = {sweep_base.delta_adv};
            if (grid_delta_vic.empty()) grid_delta_vic = {sweep_base.delta_vic};
            if (grid_l_adv.empty()) grid_l_adv = {sweep_base.num_adversaries};

            std::vector<harness::SweepCell> cells;
            for (const int ladv : grid_l_adv)
                for (const double da : grid_delta_adv)
                    for (const double dv : grid_delta_vic) cells.push_back({da, dv, ladv});
            std::vector<std::uint64_t> seeds;
            for (int i = 0; i < sweep_num_seeds; ++i) seeds.push_back(sweep_seed + i);

            sac::Checkpoint ck;
            const sac::Checkpoint* ck_ptr = nullptr;
            if (!sweep_ckpt.empty()) {
                ck = sac::Checkpoint::load(sweep_ckpt);
                ck_ptr = &ck;
            }
            const auto rows = harness::sweep(sweep_base, cells, seeds, ck_ptr);
            const std::string sweep_path = out_path(out_dir, "sweep.csv");
            const std::string summary_path = out_path(out_dir, "sweep_summary.csv");
            harness::write_sweep_csv(rows, sweep_path);
            harness::write_sweep_summary_csv(rows, summary_path);
            int failures = 0;
            for (const auto& r : rows)
                if (!r.ok) ++failures;
            std::cout << "sweep rows: " << rows.size() << " (" << failures << " failed)\n"
                      << "sweep: " << sweep_path << "\n"
                      << "summary: " << summary_path << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
