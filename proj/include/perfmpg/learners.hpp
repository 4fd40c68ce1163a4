#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfmpg/game.hpp"

namespace perfmpg {

enum class Algorithm { IpgaL, IpgaD, Inpg, InpgReg, OccOpt };
enum class GradientMode { Exact, Sampled };

inline std::string algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::IpgaL: return "IPGA_L";
        case Algorithm::IpgaD: return "IPGA_D";
        case Algorithm::Inpg: return "INPG";
        case Algorithm::InpgReg: return "INPG_REG";
        case Algorithm::OccOpt: return "OCC_OPT";
    }
    return "";
}

inline Algorithm algorithm_from_name(const std::string& name) {
    if (name == "IPGA_L") return Algorithm::IpgaL;
    if (name == "IPGA_D") return Algorithm::IpgaD;
    if (name == "INPG") return Algorithm::Inpg;
    if (name == "INPG_REG") return Algorithm::InpgReg;
    if (name == "OCC_OPT") return Algorithm::OccOpt;
    throw ValidationError("unknown algorithm '" + name + "'");
}

/// Learning-run configuration. Step-size and episode defaults follow the
/// experiment tables (eta = 1e-4, 20 episodes per round, lambda = 0.003 for
/// the regularized INPG variant).
struct AlgoConfig {
    Algorithm algorithm = Algorithm::IpgaD;
    double step_size = 1e-4;       // eta
    double barrier_weight = 0.0;   // lambda for INPG_REG
    double occupancy_reg = 0.0;    // lambda for OCC_OPT
    double exploration_floor = 0.0; // xi, sampled IPGA only
    int rounds = 1;                // T
    GradientMode gradient_mode = GradientMode::Exact;
    int episodes_per_round = 20;   // K, sampled mode
    std::uint64_t seed = 0;
    double visitation_floor = 1e-9; // d clamp for the log-barrier term

    void validate() const {
        if (!(step_size > 0.0)) throw ConfigError("step size must be positive");
        if (barrier_weight < 0.0) throw ConfigError("barrier weight must be >= 0");
        if (algorithm == Algorithm::OccOpt && !(occupancy_reg > 0.0))
            throw ConfigError("occupancy regularizer must be positive for OCC_OPT");
        if (exploration_floor < 0.0 || exploration_floor > 0.5)
            throw ConfigError("exploration floor must lie in [0, 1/2]");
        if (rounds < 1) throw ConfigError("round count must be >= 1");
        if (episodes_per_round < 1) throw ConfigError("episode count must be >= 1");
        if (!(visitation_floor > 0.0)) throw ConfigError("visitation floor must be positive");
    }

    /// Emits the algorithm block of the config schema; keys that the strict
    /// parser only accepts for specific algorithms appear only there, so the
    /// result re-parses.
    nlohmann::json to_json() const {
        nlohmann::json doc;
        doc["name"] = algorithm_name(algorithm);
        doc["eta"] = step_size;
        if (algorithm == Algorithm::InpgReg) doc["lambda_reg"] = barrier_weight;
        if (algorithm == Algorithm::OccOpt) doc["lambda_occ"] = occupancy_reg;
        if (exploration_floor > 0.0) doc["xi"] = exploration_floor;
        doc["rounds"] = rounds;
        doc["gradient_mode"] = gradient_mode == GradientMode::Exact ? "exact" : "sampled";
        doc["episodes_per_round"] = episodes_per_round;
        doc["visitation_floor"] = visitation_floor;
        return doc;
    }
};

/// The step size prescribed by the oracle-gradient analysis,
/// (1-gamma)^4 / (8 S^3 n A), rescaled by 1/r_max because the analysis
/// assumes rewards in [0, 1].
inline double theory_step_size(const TabularGame& game) {
    double one_minus = 1.0 - game.discount;
    double denom = 8.0 * std::pow(static_cast<double>(game.num_states), 3) *
                   game.num_agents * static_cast<double>(game.actions.total());
    double eta = std::pow(one_minus, 4) / denom;
    if (game.reward_bound > 0.0) eta /= game.reward_bound;
    return eta;
}

/// Euclidean projection onto the probability simplex by sort-and-threshold.
inline std::vector<double> simplex_project(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) throw NonFinite("cannot project a non-finite vector");
    std::vector<double> sorted(v.begin(), v.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double cum = 0.0;
    double tau = 0.0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        cum += sorted[k];
        double candidate = (cum - 1.0) / static_cast<double>(k + 1);
        if (sorted[k] - candidate > 0.0) tau = candidate;
    }
    std::vector<double> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) out[k] = std::max(v[k] - tau, 0.0);
    return out;
}

enum class IpgaVariant { L, D };

/// Projected-ascent step: pi_i(.|s) <- Proj(pi_i(.|s) + eta g), with
/// g = Qbar_i (variant D) or d(s) Qbar_i (variant L). Simultaneous across
/// agents: all read the same pi.
inline JointPolicy ipga_step(const JointPolicy& pi, const EvalResult& eval, double eta,
                             IpgaVariant variant) {
    JointPolicy out = pi;
    const int n = pi.num_agents();
    for (int i = 0; i < n; ++i) {
        const int A = pi.num_actions[i];
        for (int s = 0; s < pi.num_states; ++s) {
            double weight = variant == IpgaVariant::L ? eval.visitation[s] : 1.0;
            std::vector<double> target(A);
            for (int a = 0; a < A; ++a)
                target[a] = pi.at(i, s, a) +
                            eta * weight *
                                eval.q_marg[i][static_cast<std::size_t>(s) * A + a];
            auto projected = simplex_project(target);
            std::copy(projected.begin(), projected.end(), out.row(i, s).begin());
        }
    }
    return out;
}

/// Diagnostics of one multiplicative step.
struct StepDiagnostics {
    double min_normalizer = std::numeric_limits<double>::infinity();
    int floor_clamps = 0; // rounds the visitation floor was applied
};

namespace detail {

// The multiplicative dynamics keep probabilities positive mathematically, but
// a suppressed action decays exponentially and underflows to exact zero over
// long runs. Clamping at a value far below anything the dynamics can resolve
// keeps the representation interior.
inline constexpr double kPolicyFloor = 1e-300;

/// Shared multiplicative update: pi'(a|s) proportional to pi(a|s) exp(f(a)).
/// The exponent is shifted by its max before exponentiation; by shift
/// invariance the row is unchanged, and the reported normalizer is exact.
inline void exponential_row_update(std::span<const double> pi_row,
                                   std::span<const double> exponent,
                                   std::span<double> out, double& normalizer) {
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < exponent.size(); ++a)
        if (pi_row[a] > 0.0) shift = std::max(shift, exponent[a]);
    double total = 0.0;
    for (std::size_t a = 0; a < exponent.size(); ++a) {
        double w = pi_row[a] > 0.0 ? pi_row[a] * std::exp(exponent[a] - shift) : 0.0;
        out[a] = w;
        total += w;
    }
    for (std::size_t a = 0; a < exponent.size(); ++a)
        out[a] = std::max(out[a] / total, kPolicyFloor);
    normalizer = total * std::exp(shift); // Z = sum_a pi(a) exp(f(a))
}

} // namespace detail

/// Natural-gradient step under the softmax parameterization:
/// pi'(a|s) = pi(a|s) exp(eta/(1-gamma) Abar(s,a)) / Z(s). Requires a strictly
/// interior policy.
inline JointPolicy inpg_step(const JointPolicy& pi, const EvalResult& eval, double eta,
                             double gamma, StepDiagnostics* diag = nullptr) {
    JointPolicy out = pi;
    const int n = pi.num_agents();
    double min_z = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const int A = pi.num_actions[i];
        std::vector<double> exponent(A);
        for (int s = 0; s < pi.num_states; ++s) {
            auto row = pi.row(i, s);
            for (int a = 0; a < A; ++a) {
                if (!(row[a] > 0.0))
                    throw BoundaryPolicy(
                        "multiplicative update needs a strictly interior policy");
                exponent[a] = eta / (1.0 - gamma) *
                              eval.adv_marg[i][static_cast<std::size_t>(s) * A + a];
            }
            double z = 0.0;
            detail::exponential_row_update(row, exponent, out.row(i, s), z);
            min_z = std::min(min_z, z);
        }
    }
    if (diag) diag->min_normalizer = std::min(diag->min_normalizer, min_z);
    return out;
}

/// Log-barrier-regularized natural-gradient step:
/// f(s,a) = Abar/(1-gamma) + lambda/(d(s) pi(a|s)) - lambda A_i / d(s),
/// pi'(a|s) = pi(a|s) exp(eta f(s,a)) / Z(s). Visitation entries below d_floor
/// are clamped (finite-sample estimates can reach 0) and the clamp is counted.
inline JointPolicy inpg_reg_step(const JointPolicy& pi, const EvalResult& eval,
                                 double eta, double lambda, double gamma,
                                 double d_floor = 1e-9,
                                 StepDiagnostics* diag = nullptr) {
    JointPolicy out = pi;
    const int n = pi.num_agents();
    double min_z = std::numeric_limits<double>::infinity();
    int clamps = 0;
    for (int i = 0; i < n; ++i) {
        const int A = pi.num_actions[i];
        std::vector<double> exponent(A);
        for (int s = 0; s < pi.num_states; ++s) {
            auto row = pi.row(i, s);
            double d = eval.visitation[s];
            if (d < d_floor) {
                d = d_floor;
                ++clamps;
            }
            for (int a = 0; a < A; ++a) {
                if (!(row[a] > 0.0))
                    throw BoundaryPolicy(
                        "multiplicative update needs a strictly interior policy");
                double f = eval.adv_marg[i][static_cast<std::size_t>(s) * A + a] /
                               (1.0 - gamma) +
                           lambda / (d * row[a]) - lambda * A / d;
                exponent[a] = eta * f;
            }
            double z = 0.0;
            detail::exponential_row_update(row, exponent, out.row(i, s), z);
            min_z = std::min(min_z, z);
        }
    }
    if (diag) {
        diag->min_normalizer = std::min(diag->min_normalizer, min_z);
        diag->floor_clamps += clamps;
    }
    return out;
}

/// Mix toward uniform: pi'(a|s) = (1-xi) pi(a|s) + xi / A_i.
inline JointPolicy xi_greedy(const JointPolicy& pi, double xi) {
    if (xi < 0.0 || xi > 1.0) throw ConfigError("xi must lie in [0, 1]");
    JointPolicy out = pi;
    for (int i = 0; i < pi.num_agents(); ++i) {
        const double u = xi / pi.num_actions[i];
        for (auto& p : out.probs[i]) p = (1.0 - xi) * p + u;
    }
    return out;
}

} // namespace perfmpg
