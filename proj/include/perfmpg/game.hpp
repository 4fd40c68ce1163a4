#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "perfmpg/errors.hpp"

namespace perfmpg {

inline constexpr double kStructuralTol = 1e-9;

/// Joint action indexing over the product space A_1 x ... x A_n, row-major in
/// agent order (agent 0 slowest, agent n-1 fastest).
class JointActionSpace {
  public:
    JointActionSpace() = default;

    explicit JointActionSpace(std::vector<int> sizes) : sizes_(std::move(sizes)) {
        strides_.assign(sizes_.size(), 1);
        total_ = 1;
        for (int i = static_cast<int>(sizes_.size()) - 1; i >= 0; --i) {
            if (sizes_[i] < 1) throw ValidationError("action set must be nonempty");
            strides_[i] = total_;
            total_ *= static_cast<std::size_t>(sizes_[i]);
        }
    }

    int num_agents() const { return static_cast<int>(sizes_.size()); }
    int size(int agent) const { return sizes_[agent]; }
    const std::vector<int>& sizes() const { return sizes_; }
    std::size_t total() const { return total_; }

    std::size_t index(std::span<const int> actions) const {
        std::size_t j = 0;
        for (std::size_t i = 0; i < sizes_.size(); ++i)
            j += static_cast<std::size_t>(actions[i]) * strides_[i];
        return j;
    }

    int action_of(std::size_t joint, int agent) const {
        return static_cast<int>((joint / strides_[agent]) %
                                static_cast<std::size_t>(sizes_[agent]));
    }

    void decode(std::size_t joint, std::span<int> out) const {
        for (std::size_t i = 0; i < sizes_.size(); ++i)
            out[i] = static_cast<int>((joint / strides_[i]) %
                                      static_cast<std::size_t>(sizes_[i]));
    }

  private:
    std::vector<int> sizes_;
    std::vector<std::size_t> strides_;
    std::size_t total_ = 1;
};

/// Dimensions shared by a game and the policies it accepts.
struct GameShape {
    int num_agents = 0;
    int num_states = 0;
    std::vector<int> num_actions; // per agent

    friend bool operator==(const GameShape&, const GameShape&) = default;
};

/// One concrete deployed game: per-agent reward tables over joint actions, a
/// stochastic kernel, discount and initial distribution. Immutable value after
/// construction; all operations over it are pure.
struct TabularGame {
    int num_agents = 0;
    int num_states = 0;
    std::vector<int> num_actions;
    double discount = 0.0;
    std::vector<double> init_dist;               // [s]
    std::vector<std::vector<double>> rewards;    // [agent][s * A + joint_a]
    std::vector<double> kernel;                  // [(s * A + joint_a) * S + s']
    double reward_bound = 0.0;                   // r_max, bounds |r_i(s,a)|
    JointActionSpace actions;

    GameShape shape() const { return {num_agents, num_states, num_actions}; }

    double reward(int agent, int s, std::size_t joint) const {
        return rewards[agent][static_cast<std::size_t>(s) * actions.total() + joint];
    }
    double& reward(int agent, int s, std::size_t joint) {
        return rewards[agent][static_cast<std::size_t>(s) * actions.total() + joint];
    }
    double transition(int s, std::size_t joint, int next) const {
        return kernel[(static_cast<std::size_t>(s) * actions.total() + joint) *
                          static_cast<std::size_t>(num_states) +
                      next];
    }
    double& transition(int s, std::size_t joint, int next) {
        return kernel[(static_cast<std::size_t>(s) * actions.total() + joint) *
                          static_cast<std::size_t>(num_states) +
                      next];
    }
    std::span<const double> transition_row(int s, std::size_t joint) const {
        return {kernel.data() + (static_cast<std::size_t>(s) * actions.total() + joint) *
                                    static_cast<std::size_t>(num_states),
                static_cast<std::size_t>(num_states)};
    }
};

/// Allocates a zero game with the given dimensions.
inline TabularGame make_zero_game(int agents, int states, std::vector<int> actions,
                                  double discount) {
    TabularGame g;
    g.num_agents = agents;
    g.num_states = states;
    g.num_actions = std::move(actions);
    g.discount = discount;
    g.actions = JointActionSpace(g.num_actions);
    g.init_dist.assign(static_cast<std::size_t>(states), 0.0);
    g.rewards.assign(static_cast<std::size_t>(agents),
                     std::vector<double>(static_cast<std::size_t>(states) * g.actions.total(), 0.0));
    g.kernel.assign(static_cast<std::size_t>(states) * g.actions.total() *
                        static_cast<std::size_t>(states),
                    0.0);
    g.reward_bound = 0.0;
    return g;
}

/// Recomputes reward_bound as max |r_i(s,a)|.
inline void refresh_reward_bound(TabularGame& g) {
    double m = 0.0;
    for (const auto& table : g.rewards)
        for (double r : table) m = std::max(m, std::abs(r));
    g.reward_bound = m;
}

/// Checks every structural invariant of a game; throws ValidationError with the
/// first violated one.
inline void validate_game(const TabularGame& g, double tol = kStructuralTol) {
    if (g.num_agents < 1 || g.num_states < 1)
        throw ValidationError("game needs at least one agent and one state");
    if (static_cast<int>(g.num_actions.size()) != g.num_agents)
        throw ValidationError("per-agent action list does not match agent count");
    if (!(g.discount >= 0.0 && g.discount < 1.0))
        throw ValidationError("discount must satisfy 0 <= gamma < 1");
    const std::size_t joint = g.actions.total();
    if (g.init_dist.size() != static_cast<std::size_t>(g.num_states))
        throw ValidationError("initial distribution has wrong length");
    double rho_sum = 0.0;
    for (double p : g.init_dist) {
        if (!(p >= 0.0)) throw ValidationError("initial distribution must be nonnegative");
        rho_sum += p;
    }
    if (std::abs(rho_sum - 1.0) > tol)
        throw ValidationError("initial distribution must sum to 1");
    if (g.rewards.size() != static_cast<std::size_t>(g.num_agents))
        throw ValidationError("reward tables do not match agent count");
    for (const auto& table : g.rewards) {
        if (table.size() != static_cast<std::size_t>(g.num_states) * joint)
            throw ValidationError("reward table has wrong size");
        for (double r : table) {
            if (!std::isfinite(r)) throw ValidationError("reward entries must be finite");
            if (std::abs(r) > g.reward_bound + tol)
                throw ValidationError("reward exceeds recorded reward bound");
        }
    }
    if (g.kernel.size() !=
        static_cast<std::size_t>(g.num_states) * joint * static_cast<std::size_t>(g.num_states))
        throw ValidationError("kernel has wrong size");
    for (int s = 0; s < g.num_states; ++s) {
        for (std::size_t a = 0; a < joint; ++a) {
            double row_sum = 0.0;
            for (int t = 0; t < g.num_states; ++t) {
                double p = g.transition(s, a, t);
                if (!(p >= 0.0)) throw ValidationError("kernel entries must be nonnegative");
                row_sum += p;
            }
            if (std::abs(row_sum - 1.0) > tol)
                throw ValidationError("kernel row must sum to 1");
        }
    }
}

/// Per-agent stochastic tabular policies with implicit product structure.
struct JointPolicy {
    int num_states = 0;
    std::vector<int> num_actions;
    std::vector<std::vector<double>> probs; // [agent][s * A_i + a]

    int num_agents() const { return static_cast<int>(num_actions.size()); }

    double at(int agent, int s, int a) const {
        return probs[agent][static_cast<std::size_t>(s) * num_actions[agent] + a];
    }
    double& at(int agent, int s, int a) {
        return probs[agent][static_cast<std::size_t>(s) * num_actions[agent] + a];
    }
    std::span<const double> row(int agent, int s) const {
        return {probs[agent].data() + static_cast<std::size_t>(s) * num_actions[agent],
                static_cast<std::size_t>(num_actions[agent])};
    }
    std::span<double> row(int agent, int s) {
        return {probs[agent].data() + static_cast<std::size_t>(s) * num_actions[agent],
                static_cast<std::size_t>(num_actions[agent])};
    }

    GameShape shape() const { return {num_agents(), num_states, num_actions}; }

    friend bool operator==(const JointPolicy&, const JointPolicy&) = default;
};

inline JointPolicy uniform_policy(const GameShape& shape) {
    JointPolicy pi;
    pi.num_states = shape.num_states;
    pi.num_actions = shape.num_actions;
    pi.probs.resize(shape.num_agents);
    for (int i = 0; i < shape.num_agents; ++i)
        pi.probs[i].assign(
            static_cast<std::size_t>(shape.num_states) * shape.num_actions[i],
            1.0 / shape.num_actions[i]);
    return pi;
}

/// Deterministic policy from per-state action indices.
inline JointPolicy deterministic_policy(const GameShape& shape,
                                        const std::vector<std::vector<int>>& choice) {
    JointPolicy pi;
    pi.num_states = shape.num_states;
    pi.num_actions = shape.num_actions;
    pi.probs.resize(shape.num_agents);
    for (int i = 0; i < shape.num_agents; ++i) {
        pi.probs[i].assign(
            static_cast<std::size_t>(shape.num_states) * shape.num_actions[i], 0.0);
        for (int s = 0; s < shape.num_states; ++s) pi.at(i, s, choice[i][s]) = 1.0;
    }
    return pi;
}

inline void validate_policy(const JointPolicy& pi, double tol = kStructuralTol) {
    if (pi.probs.size() != pi.num_actions.size())
        throw ValidationError("policy tables do not match agent count");
    for (int i = 0; i < pi.num_agents(); ++i) {
        if (pi.probs[i].size() !=
            static_cast<std::size_t>(pi.num_states) * pi.num_actions[i])
            throw ValidationError("policy table has wrong size");
        for (int s = 0; s < pi.num_states; ++s) {
            double row_sum = 0.0;
            for (int a = 0; a < pi.num_actions[i]; ++a) {
                double p = pi.at(i, s, a);
                if (!(p >= 0.0))
                    throw ValidationError("policy rows must be nonnegative");
                row_sum += p;
            }
            if (std::abs(row_sum - 1.0) > tol)
                throw ValidationError("policy rows must sum to 1");
        }
    }
}

inline void require_shape_match(const GameShape& game, const GameShape& policy) {
    if (!(game == policy))
        throw ShapeMismatch("policy dimensions do not match the game");
}

namespace detail {

/// Visits every joint action of one state, supplying the full product weight
/// w = prod_j pi_j(a_j|s) and per-agent opponent weights prod_{j != i} pi_j.
/// Prefix/suffix products keep the cost at O(A * n) per state.
template <class F>
void for_each_joint_action(const JointActionSpace& space, const JointPolicy& pi, int s,
                           F&& visit) {
    const int n = space.num_agents();
    std::vector<int> a(n, 0);
    std::vector<double> prefix(n + 1), suffix(n + 1), opp(n);
    const std::size_t total = space.total();
    for (std::size_t j = 0; j < total; ++j) {
        prefix[0] = 1.0;
        for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] * pi.at(i, s, a[i]);
        suffix[n] = 1.0;
        for (int i = n - 1; i >= 0; --i) suffix[i] = suffix[i + 1] * pi.at(i, s, a[i]);
        for (int i = 0; i < n; ++i) opp[i] = prefix[i] * suffix[i + 1];
        visit(j, std::span<const int>(a), prefix[n], std::span<const double>(opp));
        for (int i = n - 1; i >= 0; --i) { // odometer, last agent fastest
            if (++a[i] < space.size(i)) break;
            a[i] = 0;
        }
    }
}

} // namespace detail

/// Exact evaluation quantities for one (game, policy) pair.
struct EvalResult {
    std::vector<std::vector<double>> value;    // V_i [agent][s]
    std::vector<std::vector<double>> q;        // Q_i [agent][s * A + joint]
    std::vector<std::vector<double>> q_marg;   // Qbar_i [agent][s * A_i + a]
    std::vector<std::vector<double>> adv_marg; // Abar_i [agent][s * A_i + a]
    std::vector<double> visitation;            // d(s), sums to 1
    double solve_residual = 0.0;

    double value_at(int agent, std::span<const double> dist) const {
        double v = 0.0;
        for (std::size_t s = 0; s < dist.size(); ++s) v += dist[s] * value[agent][s];
        return v;
    }
};

/// Marginalized Q-value: Qbar_i(s, a_i) = E_{a_-i ~ pi_-i}[Q_i(s, a_i, a_-i)].
inline std::vector<double> marginal_q(const TabularGame& game,
                                      const std::vector<double>& q_i,
                                      const JointPolicy& pi, int agent) {
    require_shape_match(game.shape(), pi.shape());
    if (q_i.size() != static_cast<std::size_t>(game.num_states) * game.actions.total())
        throw ShapeMismatch("Q table has wrong size");
    std::vector<double> out(
        static_cast<std::size_t>(game.num_states) * game.num_actions[agent], 0.0);
    for (int s = 0; s < game.num_states; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * game.actions.total();
        detail::for_each_joint_action(
            game.actions, pi, s,
            [&](std::size_t j, std::span<const int> a, double, std::span<const double> opp) {
                out[static_cast<std::size_t>(s) * game.num_actions[agent] + a[agent]] +=
                    opp[agent] * q_i[base + j];
            });
    }
    return out;
}

/// Marginalized advantage: Abar_i(s, a_i) = Qbar_i(s, a_i) - V_i(s).
inline std::vector<double> marginal_advantage(const TabularGame& game,
                                              const EvalResult& eval, int agent) {
    std::vector<double> out = eval.q_marg[agent];
    for (int s = 0; s < game.num_states; ++s)
        for (int a = 0; a < game.num_actions[agent]; ++a)
            out[static_cast<std::size_t>(s) * game.num_actions[agent] + a] -=
                eval.value[agent][s];
    return out;
}

namespace detail {

/// Policy-marginalized mean rewards r_i^pi(s) and kernel P^pi(s'|s).
struct MarginalizedDynamics {
    std::vector<std::vector<double>> mean_reward; // [agent][s]
    Eigen::MatrixXd kernel;                       // (s, s')
};

inline MarginalizedDynamics marginalize_dynamics(const TabularGame& game,
                                                 const JointPolicy& pi) {
    const int S = game.num_states;
    MarginalizedDynamics out;
    out.mean_reward.assign(game.num_agents, std::vector<double>(S, 0.0));
    out.kernel = Eigen::MatrixXd::Zero(S, S);
    for (int s = 0; s < S; ++s) {
        for_each_joint_action(
            game.actions, pi, s,
            [&](std::size_t j, std::span<const int>, double w, std::span<const double>) {
                if (w == 0.0) return;
                for (int i = 0; i < game.num_agents; ++i)
                    out.mean_reward[i][s] += w * game.reward(i, s, j);
                auto row = game.transition_row(s, j);
                for (int t = 0; t < S; ++t) out.kernel(s, t) += w * row[t];
            });
    }
    return out;
}

/// Solves (I - gamma P) x = b, tracking the max-norm residual.
inline Eigen::VectorXd solve_discounted(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu,
                                        const Eigen::MatrixXd& system,
                                        const Eigen::VectorXd& b, double& residual) {
    Eigen::VectorXd x = lu.solve(b);
    if (!x.allFinite()) throw SolveFailure("discounted linear system is singular");
    residual = std::max(residual, (system * x - b).cwiseAbs().maxCoeff());
    return x;
}

} // namespace detail

/// Discounted state visitation d = (1 - gamma) from^T (I - gamma P^pi)^{-1},
/// normalized to sum to 1.
inline std::vector<double> visitation(const TabularGame& game, const JointPolicy& pi,
                                      std::span<const double> from,
                                      double tol = 1e-9) {
    require_shape_match(game.shape(), pi.shape());
    const int S = game.num_states;
    auto dyn = detail::marginalize_dynamics(game, pi);
    Eigen::MatrixXd system =
        Eigen::MatrixXd::Identity(S, S) - game.discount * dyn.kernel.transpose();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    Eigen::VectorXd b(S);
    for (int s = 0; s < S; ++s) b(s) = (1.0 - game.discount) * from[s];
    double residual = 0.0;
    Eigen::VectorXd d = detail::solve_discounted(lu, system, b, residual);
    if (residual > tol) throw SolveFailure("visitation solve residual exceeds tolerance");
    return {d.data(), d.data() + S};
}

/// Exact policy evaluation: direct dense solve of the Bellman system for every
/// agent, one backup for Q, and the marginalized quantities derived from them.
inline EvalResult policy_evaluation(const TabularGame& game, const JointPolicy& pi,
                                    double tol = 1e-9) {
    require_shape_match(game.shape(), pi.shape());
    if (!(tol > 0.0)) throw ConfigError("tolerance must be positive");
    const int S = game.num_states;
    const int n = game.num_agents;
    const std::size_t A = game.actions.total();

    auto dyn = detail::marginalize_dynamics(game, pi);
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S) - game.discount * dyn.kernel;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    Eigen::MatrixXd system_t = system.transpose();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_t(system_t);

    EvalResult out;
    out.solve_residual = 0.0;
    out.value.assign(n, std::vector<double>(S, 0.0));
    out.q.assign(n, std::vector<double>(static_cast<std::size_t>(S) * A, 0.0));

    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd b(S);
        for (int s = 0; s < S; ++s) b(s) = dyn.mean_reward[i][s];
        Eigen::VectorXd v = detail::solve_discounted(lu, system, b, out.solve_residual);
        for (int s = 0; s < S; ++s) out.value[i][s] = v(s);
        for (int s = 0; s < S; ++s) {
            for (std::size_t j = 0; j < A; ++j) {
                double q = game.reward(i, s, j);
                auto row = game.transition_row(s, j);
                for (int t = 0; t < S; ++t) q += game.discount * row[t] * v(t);
                out.q[i][static_cast<std::size_t>(s) * A + j] = q;
            }
        }
    }

    Eigen::VectorXd rho(S);
    for (int s = 0; s < S; ++s) rho(s) = (1.0 - game.discount) * game.init_dist[s];
    Eigen::VectorXd d = detail::solve_discounted(lu_t, system_t, rho, out.solve_residual);
    out.visitation.assign(d.data(), d.data() + S);

    out.q_marg.resize(n);
    out.adv_marg.resize(n);
    for (int i = 0; i < n; ++i) {
        out.q_marg[i] = marginal_q(game, out.q[i], pi, i);
        out.adv_marg[i] = marginal_advantage(game, out, i);
    }
    if (out.solve_residual > tol)
        throw SolveFailure("policy evaluation residual exceeds tolerance");
    return out;
}

/// Unnormalized occupancy measures mu_i(s, a_i) = d(s) pi_i(a_i|s) / (1 - gamma),
/// one table per agent; each sums to 1 / (1 - gamma).
struct OccupancyMeasure {
    int num_states = 0;
    std::vector<int> num_actions;
    double discount = 0.0;
    std::vector<std::vector<double>> mu; // [agent][s * A_i + a]

    double at(int agent, int s, int a) const {
        return mu[agent][static_cast<std::size_t>(s) * num_actions[agent] + a];
    }
    double& at(int agent, int s, int a) {
        return mu[agent][static_cast<std::size_t>(s) * num_actions[agent] + a];
    }

    /// State marginal alpha(s) = sum_{a_i} mu_i(s, a_i).
    std::vector<double> state_marginal(int agent) const {
        std::vector<double> alpha(num_states, 0.0);
        for (int s = 0; s < num_states; ++s)
            for (int a = 0; a < num_actions[agent]; ++a) alpha[s] += at(agent, s, a);
        return alpha;
    }
};

inline OccupancyMeasure occupancy_from_policy(const TabularGame& game,
                                              const JointPolicy& pi) {
    EvalResult eval = policy_evaluation(game, pi);
    OccupancyMeasure out;
    out.num_states = game.num_states;
    out.num_actions = game.num_actions;
    out.discount = game.discount;
    out.mu.resize(game.num_agents);
    for (int i = 0; i < game.num_agents; ++i) {
        out.mu[i].assign(
            static_cast<std::size_t>(game.num_states) * game.num_actions[i], 0.0);
        for (int s = 0; s < game.num_states; ++s)
            for (int a = 0; a < game.num_actions[i]; ++a)
                out.at(i, s, a) =
                    eval.visitation[s] * pi.at(i, s, a) / (1.0 - game.discount);
    }
    return out;
}

struct MismatchDiagnostics {
    double kappa_hat = std::numeric_limits<double>::quiet_NaN(); // max_s d(s)/rho(s)
    double min_visit = 0.0;                                      // min_s d(s)
};

/// Single-policy estimate of the distribution mismatch coefficient plus the
/// visitation floor; the supremum over all policies is out of reach here.
inline MismatchDiagnostics mismatch_diagnostics(const TabularGame& game,
                                                const JointPolicy& pi,
                                                std::span<const double> rho,
                                                bool compute_kappa = true) {
    std::vector<double> d = visitation(game, pi, rho);
    MismatchDiagnostics out;
    out.min_visit = *std::min_element(d.begin(), d.end());
    if (compute_kappa) {
        double kappa = 0.0;
        for (int s = 0; s < game.num_states; ++s) {
            if (!(rho[s] > 0.0))
                throw DivisionDomain("mismatch coefficient needs rho(s) > 0 everywhere");
            kappa = std::max(kappa, d[s] / rho[s]);
        }
        out.kappa_hat = kappa;
    }
    return out;
}

/// True iff the kernel depends on the state only: P(s'|s,a) = P(s'|s).
inline bool check_agent_independent(const TabularGame& game, double tol = 1e-9) {
    const std::size_t A = game.actions.total();
    for (int s = 0; s < game.num_states; ++s) {
        for (int t = 0; t < game.num_states; ++t) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            for (std::size_t j = 0; j < A; ++j) {
                double p = game.transition(s, j, t);
                lo = std::min(lo, p);
                hi = std::max(hi, p);
            }
            if (hi - lo > tol) return false;
        }
    }
    return true;
}

} // namespace perfmpg
