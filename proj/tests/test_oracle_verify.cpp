#include <catch2/catch_amalgamated.hpp>

#include "perfmpg/environments.hpp"
#include "perfmpg/oracle_verify.hpp"

#include "oracles.hpp"

using namespace perfmpg;

TEST_CASE("delta_rp formula") {
    REQUIRE(delta_rp(0.0, 0.0, 0.9, 4) == 0.0);
    // Frozen from the formula: (1/(1-g))(w_r + g w_p sqrt(S)/(1-g)) at
    // w_r = w_p = 0.03, gamma = 0.99, S = 5.
    REQUIRE(delta_rp(0.03, 0.03, 0.99, 5) ==
            Catch::Approx(667.1121893).margin(0.01));
    // gamma = 0 drops the kernel term entirely.
    REQUIRE(delta_rp(0.25, 7.0, 0.0, 9) == Catch::Approx(0.25).margin(1e-15));
    REQUIRE_THROWS_AS(delta_rp(-0.1, 0.0, 0.5, 2), ConfigError);
}

TEST_CASE("sensitivity estimates vanish for constant responses") {
    oracles::Rng rng(301);
    TabularGame base = oracles::random_game(2, 2, {2, 2}, 0.9, rng, true);
    ResponseMap map = constant_response_map(base, "constant", true);
    SensitivityParams sens = estimate_sensitivity(map, 12, 7);
    REQUIRE(sens.omega_r == 0.0);
    REQUIRE(sens.omega_p == 0.0);
    REQUIRE(sens.zeta_r == 0.0);
    REQUIRE(sens.zeta_p == 0.0);
    REQUIRE(sens.delta == 0.0);
    // A fixed common-payoff game still has a positive gradient-smoothness
    // estimate; it only needs to be finite.
    REQUIRE(sens.beta >= 0.0);
    REQUIRE(std::isfinite(sens.beta));
}

TEST_CASE("congestion sensitivities split by channel") {
    CongestionParams p;
    p.omega_r = 0.03;
    p.omega_p = 0.0;
    ResponseMap map = make_congestion(p);
    SensitivityParams sens = estimate_sensitivity(map, 16, 11);
    REQUIRE(sens.omega_p == 0.0);
    REQUIRE(sens.omega_r > 0.0);

    // The designed reward shift is exactly linear per agent; the aggregate
    // ratio cannot exceed n times the per-agent scale.
    const double scale = 0.03 / ((1.0 - p.discount) * std::sqrt(10.0));
    REQUIRE(sens.omega_r <= p.num_agents * scale + 1e-9);
}

TEST_CASE("inflated delta uses the recorded inflation factor") {
    SensitivityParams sens;
    sens.omega_r = 0.1;
    sens.omega_p = 0.2;
    sens.inflation = 1.5;
    REQUIRE(sens.inflated_delta(0.5, 4) ==
            Catch::Approx(delta_rp(0.15, 0.3, 0.5, 4)).margin(1e-12));
}

TEST_CASE("brute force pse enumeration") {
    TestGameSpec spec;
    spec.coordination = true;
    ResponseMap map = make_test_game(spec);

    // Resolution 0 enumerates exactly the prod_i A_i^S deterministic profiles.
    auto all = brute_force_pse(map, 0.0, 1e9);
    REQUIRE(all.size() == 4);

    // The two matching profiles are exact equilibria and sort first.
    auto equilibria = brute_force_pse(map, 0.0, 1e-8);
    REQUIRE(equilibria.size() == 2);
    for (const auto& cand : equilibria) {
        REQUIRE(cand.gap <= 1e-8);
        REQUIRE(cand.policy.at(0, 0, 0) == cand.policy.at(1, 0, 0));
    }

    // A performative variant still has grid witnesses at modest resolution.
    TestGameSpec shifted = spec;
    shifted.omega_r = 0.05;
    shifted.discount = 0.5;
    ResponseMap smap = make_test_game(shifted);
    auto witnesses = brute_force_pse(smap, 0.05, 0.05);
    REQUIRE_FALSE(witnesses.empty());
    for (std::size_t k = 1; k < witnesses.size(); ++k)
        REQUIRE(witnesses[k - 1].gap <= witnesses[k].gap + 1e-15);

    // Enumeration bounds are enforced.
    TestGameSpec wide;
    wide.num_states = 3;
    wide.num_actions = {3, 3};
    ResponseMap wmap = make_test_game(wide);
    REQUIRE_THROWS_AS(brute_force_pse(wmap, 0.01, 1.0), TooLarge);
}

TEST_CASE("best response dominates every grid deviation") {
    oracles::Rng rng(307);
    TabularGame g = oracles::random_game(2, 2, {2, 2}, 0.8, rng);
    JointPolicy pi = oracles::random_policy(g.shape(), rng);
    for (int i = 0; i < 2; ++i) {
        auto [choice, value] = best_response(g, pi, i);
        auto rows = perfmpg::detail::simplex_grid_rows(2, 0.25);
        for (const auto& row0 : rows) {
            for (const auto& row1 : rows) {
                JointPolicy deviated = pi;
                std::copy(row0.begin(), row0.end(), deviated.row(i, 0).begin());
                std::copy(row1.begin(), row1.end(), deviated.row(i, 1).begin());
                EvalResult eval = policy_evaluation(g, deviated);
                REQUIRE(value >= eval.value_at(i, g.init_dist) - 1e-8);
            }
        }
    }
}

TEST_CASE("finite differences confirm the policy gradient") {
    // gamma = 0: the value is linear in the policy, so the check is exact up
    // to rounding.
    TabularGame bandit = make_zero_game(1, 1, {3}, 0.0);
    bandit.init_dist = {1.0};
    bandit.reward(0, 0, 0) = 0.3;
    bandit.reward(0, 0, 1) = 0.9;
    bandit.reward(0, 0, 2) = 0.1;
    for (int a = 0; a < 3; ++a) bandit.transition(0, a, 0) = 1.0;
    refresh_reward_bound(bandit);
    JointPolicy pi = uniform_policy(bandit.shape());
    REQUIRE(finite_diff_check(bandit, pi, 0) <= 1e-9);

    // Random common-payoff games at h = 1e-5: 1e-5 relative agreement.
    oracles::Rng rng(311);
    for (int trial = 0; trial < 5; ++trial) {
        TabularGame g = oracles::random_game(2, 2, {2, 2}, 0.8, rng, true);
        JointPolicy probe = oracles::random_policy(g.shape(), rng);
        double err = finite_diff_check(g, probe, trial % 2, 1e-5);
        REQUIRE(err <= 1e-5);
    }

    // Central differencing is second order: halving h cuts the error by
    // about 4.
    TabularGame g = oracles::random_game(2, 2, {2, 2}, 0.9, rng, true);
    JointPolicy mixed = uniform_policy(g.shape());
    JointPolicy noise = oracles::random_policy(g.shape(), rng);
    for (std::size_t i = 0; i < mixed.probs.size(); ++i)
        for (std::size_t k = 0; k < mixed.probs[i].size(); ++k)
            mixed.probs[i][k] = 0.5 * mixed.probs[i][k] + 0.5 * noise.probs[i][k];
    double coarse = finite_diff_check(g, mixed, 0, 1e-3);
    double fine = finite_diff_check(g, mixed, 0, 5e-4);
    REQUIRE(coarse / fine >= 3.0);
    REQUIRE(coarse / fine <= 5.0);

    REQUIRE_THROWS_AS(finite_diff_check(g, mixed, 0, 1e-8), ConfigError);
}
