#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfmpg/environments.hpp"
#include "perfmpg/oracle_verify.hpp"
#include "perfmpg/run.hpp"
#include "perfmpg/serialization.hpp"

namespace perfmpg {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Fully-resolved experiment description: environment, algorithm, replication
/// seeds and output layout. Defaults follow the experiment tables and are
/// echoed into the manifest.
struct ExperimentConfig {
    nlohmann::json environment; // name + parameters, resolved
    AlgoConfig algorithm;
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "out";
    int metric_window = 10;
    int record_every = 1000; // round stride for policy snapshots

    nlohmann::json to_json() const {
        nlohmann::json doc;
        doc["environment"] = environment;
        doc["algorithm"] = algorithm.to_json();
        doc["seeds"] = seeds;
        doc["output_dir"] = output_dir;
        doc["metric_window"] = metric_window;
        doc["record_every"] = record_every;
        return doc;
    }
};

namespace detail {

inline void require_keys(const nlohmann::json& obj,
                         const std::set<std::string>& allowed, const char* where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ValidationError(std::string("unknown key '") + it.key() + "' in " +
                                  where);
}

inline std::string format_double(double v) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    return buffer;
}

} // namespace detail

/// Builds the environment named in a config block.
inline ResponseMap make_environment(const nlohmann::json& env) {
    const std::string name = env.at("name").get<std::string>();
    if (name == "congestion") {
        detail::require_keys(
            env, {"name", "num_agents", "schedule", "omega_r", "omega_p", "discount"},
            "environment");
        CongestionParams p;
        p.num_agents = env.value("num_agents", p.num_agents);
        p.schedule = env.value("schedule", p.schedule);
        p.omega_r = env.value("omega_r", p.omega_r);
        p.omega_p = env.value("omega_p", p.omega_p);
        p.discount = env.value("discount", p.discount);
        return make_congestion(p);
    }
    if (name == "safe_distancing") {
        detail::require_keys(env,
                             {"name", "num_agents", "num_activities", "weights",
                              "penalty", "alpha", "discount"},
                             "environment");
        SafeDistancingParams p;
        p.num_agents = env.value("num_agents", p.num_agents);
        p.num_activities = env.value("num_activities", p.num_activities);
        p.weights = env.value("weights", p.weights);
        p.penalty = env.value("penalty", p.penalty);
        p.alpha = env.value("alpha", p.alpha);
        p.discount = env.value("discount", p.discount);
        return make_safe_distancing(p);
    }
    if (name == "test") {
        detail::require_keys(env,
                             {"name", "num_states", "num_agents", "num_actions",
                              "discount", "common_payoff", "agent_independent",
                              "coordination", "omega_r", "omega_p", "seed"},
                             "environment");
        TestGameSpec spec;
        spec.num_states = env.value("num_states", spec.num_states);
        spec.num_agents = env.value("num_agents", spec.num_agents);
        spec.num_actions =
            env.value("num_actions", std::vector<int>(spec.num_agents, 2));
        spec.discount = env.value("discount", spec.discount);
        spec.common_payoff = env.value("common_payoff", spec.common_payoff);
        spec.agent_independent = env.value("agent_independent", spec.agent_independent);
        spec.coordination = env.value("coordination", spec.coordination);
        spec.omega_r = env.value("omega_r", spec.omega_r);
        spec.omega_p = env.value("omega_p", spec.omega_p);
        spec.seed = env.value("seed", spec.seed);
        return make_test_game(spec);
    }
    throw ValidationError("unknown environment '" + name + "'");
}

/// Parses and validates a config document (strict: unknown keys are errors),
/// filling defaults so that the result is fully resolved.
inline ExperimentConfig config_from_json(const nlohmann::json& doc) {
    detail::require_keys(doc,
                         {"environment", "algorithm", "seeds", "output_dir",
                          "metric_window", "record_every"},
                         "config");
    if (!doc.contains("environment") || !doc.contains("algorithm"))
        throw ValidationError("config needs 'environment' and 'algorithm' blocks");
    ExperimentConfig cfg;
    cfg.environment = doc.at("environment");
    make_environment(cfg.environment); // validates the block now
    // Resolve environment defaults into the echoed block.
    {
        ResponseMap map = make_environment(cfg.environment);
        nlohmann::json resolved = map.params();
        resolved["name"] = cfg.environment.at("name");
        cfg.environment = resolved;
    }

    const auto& alg = doc.at("algorithm");
    detail::require_keys(alg,
                         {"name", "eta", "lambda_reg", "lambda_occ", "xi", "rounds",
                          "gradient_mode", "episodes_per_round", "visitation_floor"},
                         "algorithm");
    cfg.algorithm.algorithm = algorithm_from_name(alg.at("name").get<std::string>());
    cfg.algorithm.step_size = alg.value("eta", 1e-4);
    cfg.algorithm.rounds = alg.value("rounds", 1000);
    if (alg.contains("gradient_mode")) {
        const std::string mode = alg.at("gradient_mode").get<std::string>();
        if (mode == "exact")
            cfg.algorithm.gradient_mode = GradientMode::Exact;
        else if (mode == "sampled")
            cfg.algorithm.gradient_mode = GradientMode::Sampled;
        else
            throw ValidationError("gradient_mode must be 'exact' or 'sampled'");
    }
    cfg.algorithm.episodes_per_round = alg.value("episodes_per_round", 20);
    cfg.algorithm.visitation_floor = alg.value("visitation_floor", 1e-9);
    if (alg.contains("lambda_reg")) {
        if (cfg.algorithm.algorithm != Algorithm::InpgReg)
            throw ValidationError("lambda_reg is only valid for INPG_REG");
        cfg.algorithm.barrier_weight = alg.at("lambda_reg").get<double>();
    } else if (cfg.algorithm.algorithm == Algorithm::InpgReg) {
        cfg.algorithm.barrier_weight = 0.003;
    }
    if (alg.contains("lambda_occ")) {
        if (cfg.algorithm.algorithm != Algorithm::OccOpt)
            throw ValidationError("lambda_occ is only valid for OCC_OPT");
        cfg.algorithm.occupancy_reg = alg.at("lambda_occ").get<double>();
    }
    if (alg.contains("xi")) {
        if (!(cfg.algorithm.algorithm == Algorithm::IpgaL ||
              cfg.algorithm.algorithm == Algorithm::IpgaD) ||
            cfg.algorithm.gradient_mode != GradientMode::Sampled)
            throw ValidationError("xi is only valid for sampled-mode IPGA");
        cfg.algorithm.exploration_floor = alg.at("xi").get<double>();
    }
    cfg.algorithm.validate();

    cfg.seeds = doc.value("seeds", std::vector<std::uint64_t>{1});
    if (cfg.seeds.empty()) throw ValidationError("need at least one seed");
    std::set<std::uint64_t> unique(cfg.seeds.begin(), cfg.seeds.end());
    if (unique.size() != cfg.seeds.size())
        throw ValidationError("seeds must be distinct");
    cfg.output_dir = doc.value("output_dir", std::string("out"));
    cfg.metric_window = doc.value("metric_window", 10);
    if (cfg.metric_window < 1) throw ValidationError("metric_window must be >= 1");
    cfg.record_every = doc.value("record_every", 1000);
    if (cfg.record_every < 1) throw ValidationError("record_every must be >= 1");
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open config '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return config_from_json(doc);
}

namespace detail {

inline std::string csv_header(int num_agents) {
    std::string header = "round,pse_gap,preg_running,policy_distance";
    for (int i = 0; i < num_agents; ++i)
        header += ",value_agent_" + std::to_string(i);
    header += ",wall_ms";
    return header;
}

inline std::string history_to_csv(const RunHistory& history) {
    if (history.rounds.empty()) throw EmptyHistory("cannot render an empty run");
    const int n = static_cast<int>(history.rounds.front().values.size());
    std::string out = csv_header(n) + "\n";
    double gap_total = 0.0;
    for (const auto& r : history.rounds) {
        gap_total += r.pse_gap;
        out += std::to_string(r.round);
        out += ',';
        out += format_double(r.pse_gap);
        out += ',';
        out += format_double(gap_total / r.round);
        out += ',';
        out += format_double(r.policy_distance);
        for (double v : r.values) {
            out += ',';
            out += format_double(v);
        }
        out += ',';
        out += format_double(r.wall_ms);
        out += '\n';
    }
    return out;
}

/// Strips the trailing wall_ms field from every data row; the only column
/// exempt from determinism checks and checksums.
inline std::string strip_wall_column(const std::string& csv) {
    std::string out;
    out.reserve(csv.size());
    std::size_t start = 0;
    while (start < csv.size()) {
        std::size_t end = csv.find('\n', start);
        if (end == std::string::npos) end = csv.size();
        std::string_view line(csv.data() + start, end - start);
        std::size_t comma = line.rfind(',');
        if (comma != std::string_view::npos) line = line.substr(0, comma);
        out.append(line);
        out.push_back('\n');
        start = end + 1;
    }
    return out;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << content;
}

inline int thread_budget() {
    if (const char* env = std::getenv("PERFMPG_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

} // namespace detail

/// Runs every seed of a config (in parallel worker threads, capped by
/// PERFMPG_THREADS), writing one CSV per seed, optional policy snapshots, a
/// manifest with per-seed checksums (wall-clock column excluded), and an
/// aggregate CSV with per-round mean and standard deviation across seeds.
/// Returns 0 on success, 3 if any seed failed (its partial output is kept
/// under a .partial suffix).
inline int run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    ResponseMap map = make_environment(cfg.environment);
    const std::size_t num_seeds = cfg.seeds.size();
    std::vector<std::string> csv(num_seeds);
    std::vector<std::string> failure(num_seeds);
    std::vector<RunHistory> histories(num_seeds);

    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
        while (true) {
            std::size_t k = cursor.fetch_add(1);
            if (k >= num_seeds) return;
            try {
                AlgoConfig algo = cfg.algorithm;
                algo.seed = cfg.seeds[k];
                RunOptions opts;
                opts.policy_distance_window = cfg.metric_window;
                histories[k] = run(map, algo, opts);
                csv[k] = detail::history_to_csv(histories[k]);
            } catch (const std::exception& e) {
                failure[k] = e.what();
            }
        }
    };
    const int threads =
        std::min<int>(detail::thread_budget(), static_cast<int>(num_seeds));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    bool any_failed = false;
    nlohmann::json checksums = nlohmann::json::object();
    for (std::size_t k = 0; k < num_seeds; ++k) {
        const std::string stem =
            cfg.output_dir + "/seed_" + std::to_string(cfg.seeds[k]);
        if (!failure[k].empty()) {
            any_failed = true;
            detail::write_file(stem + ".csv.partial", "error: " + failure[k] + "\n");
            continue;
        }
        detail::write_file(stem + ".csv", csv[k]);
        const std::string stripped = detail::strip_wall_column(csv[k]);
        char digest[20];
        std::snprintf(digest, sizeof(digest), "%016llx",
                      static_cast<unsigned long long>(
                          fnv1a(stripped.data(), stripped.size())));
        checksums[std::to_string(cfg.seeds[k])] = digest;
        if (cfg.record_every >= 1) {
            std::string snapshots;
            for (const auto& r : histories[k].rounds) {
                if (r.round % cfg.record_every != 0 &&
                    r.round != static_cast<int>(histories[k].rounds.size()))
                    continue;
                nlohmann::json line;
                line["round"] = r.round;
                line["policy"] = r.policy.probs;
                snapshots += line.dump() + "\n";
            }
            detail::write_file(stem + "_policies.jsonl", snapshots);
        }
    }

    nlohmann::json manifest;
    manifest["config"] = cfg.to_json();
    manifest["code_version"] = kCodeVersion;
    manifest["seed_checksums_excl_wall"] = checksums;
    detail::write_file(cfg.output_dir + "/manifest.json", manifest.dump(2) + "\n");

    if (!any_failed) {
        const int n = static_cast<int>(histories[0].rounds.front().values.size());
        const std::size_t rounds = histories[0].rounds.size();
        std::string agg = "round";
        const std::vector<std::string> metrics = {"pse_gap", "preg_running",
                                                  "policy_distance"};
        std::vector<std::string> columns = metrics;
        for (int i = 0; i < n; ++i) columns.push_back("value_agent_" + std::to_string(i));
        for (const auto& c : columns) agg += "," + c + "_mean," + c + "_sd";
        agg += "\n";
        std::vector<double> running(num_seeds, 0.0);
        for (std::size_t t = 0; t < rounds; ++t) {
            std::vector<std::vector<double>> samples(columns.size());
            for (std::size_t k = 0; k < num_seeds; ++k) {
                const auto& r = histories[k].rounds[t];
                running[k] += r.pse_gap;
                samples[0].push_back(r.pse_gap);
                samples[1].push_back(running[k] / r.round);
                samples[2].push_back(r.policy_distance);
                for (int i = 0; i < n; ++i) samples[3 + i].push_back(r.values[i]);
            }
            agg += std::to_string(histories[0].rounds[t].round);
            for (auto& vals : samples) {
                double mean = 0.0;
                for (double v : vals) mean += v;
                mean /= static_cast<double>(vals.size());
                double var = 0.0;
                for (double v : vals) var += (v - mean) * (v - mean);
                var /= static_cast<double>(vals.size());
                agg += "," + detail::format_double(mean) + "," +
                       detail::format_double(std::sqrt(var));
            }
            agg += "\n";
        }
        detail::write_file(cfg.output_dir + "/aggregate.csv", agg);
    }
    return any_failed ? 3 : 0;
}

/// Writes the environment's base game, plus a snapshot deployed at the uniform
/// policy, in the versioned game format. The deployed snapshot lands next to
/// the base file with a ".deployed" infix.
inline int emit_game(const ExperimentConfig& cfg, const std::string& path) {
    ResponseMap map = make_environment(cfg.environment);
    save_game(map.base(), path);
    auto deployed = deploy(map, uniform_policy(map.base().shape()));
    std::string deployed_path = path;
    const std::string suffix = ".json";
    if (deployed_path.size() >= suffix.size() &&
        deployed_path.compare(deployed_path.size() - suffix.size(), suffix.size(),
                              suffix) == 0)
        deployed_path.insert(deployed_path.size() - suffix.size(), ".deployed");
    else
        deployed_path += ".deployed";
    save_game(*deployed, deployed_path);
    return 0;
}

/// Independent verification sweeps for a configured environment: sensitivity
/// estimation, the cross-game value-difference bound over sampled triples
/// (with 1.5x-inflated sensitivities), and, for one-state test fixtures, a
/// brute-force grid search whose certified PSE candidates must satisfy the
/// PSE-to-NE bound. Returns 0 when clean, 4 on any violation; the report is
/// written as JSON when a path is given.
inline int verify_environment(const ExperimentConfig& cfg,
                              const std::string& report_path = "") {
    ResponseMap map = make_environment(cfg.environment);
    const TabularGame& base = map.base();
    nlohmann::json report;
    int violations = 0;

    SensitivityParams sens = estimate_sensitivity(map, 40, 20240);
    report["sensitivity"] = sens.to_json();
    const double inflated_delta =
        sens.inflated_delta(base.discount, base.num_states);
    report["inflated_delta_rp"] = inflated_delta;

    // Cross-game value differences on 50 sampled (pi, pi', pi'') triples.
    Rng rng(derive_seed(31337));
    int checked = 0;
    double worst_margin = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 50; ++trial) {
        JointPolicy pi = detail::random_interior_policy(base.shape(), rng);
        JointPolicy first = detail::random_interior_policy(base.shape(), rng);
        JointPolicy second = detail::random_interior_policy(base.shape(), rng);
        const double dist = detail::policy_l2_distance(first, second);
        if (dist < 1e-12) continue;
        auto g1 = deploy(map, first);
        auto g2 = deploy(map, second);
        EvalResult e1 = policy_evaluation(*g1, pi);
        EvalResult e2 = policy_evaluation(*g2, pi);
        for (int i = 0; i < base.num_agents; ++i) {
            for (int s = 0; s < base.num_states; ++s) {
                const double lhs = std::abs(e1.value[i][s] - e2.value[i][s]);
                const double rhs = inflated_delta * dist;
                worst_margin = std::min(worst_margin, rhs - lhs);
                if (lhs > rhs) ++violations;
            }
        }
        ++checked;
    }
    report["value_bound_triples"] = checked;
    report["value_bound_worst_margin"] = worst_margin;
    report["value_bound_violations"] = violations;

    // Grid equilibrium sweep for small one-state fixtures; candidates stream
    // to CSV (policy digest, gap) next to the report when one is written.
    if (base.num_states == 1 && base.actions.total() <= 16) {
        const double resolution = 0.05;
        const double eps = 0.1;
        auto candidates = brute_force_pse(map, resolution, eps);
        int ne_violations = 0;
        std::string csv = "digest,gap\n";
        for (const auto& cand : candidates) {
            GapReport ne = ne_gap(map, cand.policy, resolution);
            if (ne.max_gap > cand.gap + inflated_delta + ne.grid_slack + 1e-8)
                ++ne_violations;
            std::uint64_t digest = 0;
            for (const auto& table : cand.policy.probs)
                digest = fnv1a(table.data(), table.size() * sizeof(double), digest + 1);
            char hex[20];
            std::snprintf(hex, sizeof(hex), "%016llx",
                          static_cast<unsigned long long>(digest));
            csv += std::string(hex) + "," + detail::format_double(cand.gap) + "\n";
        }
        report["pse_candidates"] = candidates.size();
        report["pse_to_ne_violations"] = ne_violations;
        violations += ne_violations;
        if (!report_path.empty())
            detail::write_file(report_path + ".candidates.csv", csv);
    }

    report["violations"] = violations;
    if (!report_path.empty())
        detail::write_file(report_path, report.dump(2) + "\n");
    return violations == 0 ? 0 : 4;
}

} // namespace perfmpg
