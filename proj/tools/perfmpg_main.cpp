// Batch experiment harness: seeded replications over performative games,
// metric CSVs, manifests and verification sweeps.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "perfmpg/perfmpg.hpp"

namespace {

// Applies "dotted.path=value" overrides onto the raw config document. Values
// parse as JSON when possible and fall back to strings.
void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw perfmpg::ValidationError("override must look like key.path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        value = raw;
    }
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw perfmpg::ValidationError("empty override key");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

nlohmann::json load_raw_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw perfmpg::ParseError("cannot open config '" + path + "'");
    try {
        nlohmann::json doc;
        in >> doc;
        return doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw perfmpg::ParseError(std::string("config: ") + e.what());
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const auto comma = csv.find(',', start);
        const std::string token = csv.substr(start, comma - start);
        if (!token.empty()) seeds.push_back(std::stoull(token));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (seeds.empty()) throw perfmpg::ValidationError("empty seed list");
    return seeds;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"performative Markov potential game experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string out_file;
    std::string seeds_csv;
    std::vector<std::string> overrides;

    auto* run_cmd = app.add_subcommand("run", "run a config over its seeds");
    run_cmd->add_option("--config", config_path, "config JSON path")->required();
    run_cmd->add_option("--out", out_dir, "output directory (overrides config)");
    run_cmd->add_option("--seeds", seeds_csv, "comma-separated seed list");
    run_cmd->add_option("--override", overrides, "key.path=value config override");

    auto* emit_cmd = app.add_subcommand("emit-game", "serialize the environment's game");
    emit_cmd->add_option("--config", config_path, "config JSON path")->required();
    emit_cmd->add_option("--out", out_file, "output game JSON path")->required();
    emit_cmd->add_option("--override", overrides, "key.path=value config override");

    auto* verify_cmd = app.add_subcommand("verify", "run oracle verification sweeps");
    verify_cmd->add_option("--config", config_path, "config JSON path")->required();
    verify_cmd->add_option("--out", out_file, "verification report JSON path");
    verify_cmd->add_option("--override", overrides, "key.path=value config override");

    CLI11_PARSE(app, argc, argv);

    perfmpg::ExperimentConfig cfg;
    try {
        nlohmann::json doc = load_raw_config(config_path);
        for (const auto& assignment : overrides) apply_override(doc, assignment);
        cfg = perfmpg::config_from_json(doc);
        if (!seeds_csv.empty()) cfg.seeds = parse_seed_list(seeds_csv);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }

    try {
        if (run_cmd->parsed()) {
            int status = perfmpg::run_experiment(cfg);
            if (status != 0)
                std::fprintf(stderr, "run failed; partial outputs kept\n");
            return status;
        }
        if (emit_cmd->parsed()) return perfmpg::emit_game(cfg, out_file);
        if (verify_cmd->parsed()) {
            int status = perfmpg::verify_environment(cfg, out_file);
            if (status != 0) std::fprintf(stderr, "verification violations found\n");
            return status;
        }
    } catch (const perfmpg::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
