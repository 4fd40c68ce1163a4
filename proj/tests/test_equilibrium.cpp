#include <catch2/catch_amalgamated.hpp>

#include "perfmpg/environments.hpp"
#include "perfmpg/equilibrium.hpp"

#include "oracles.hpp"

using namespace perfmpg;

namespace {

// 1-state 2-agent coordination game: payoff 1 iff actions match.
ResponseMap coordination_map(double gamma = 0.0) {
    TestGameSpec spec;
    spec.coordination = true;
    spec.discount = gamma;
    return make_test_game(spec);
}

JointPolicy matching_profile() {
    return deterministic_policy({2, 1, {2, 2}}, {{0}, {0}});
}

} // namespace

TEST_CASE("best response on a one-state bandit") {
    TabularGame g = make_zero_game(1, 1, {2}, 0.0);
    g.init_dist = {1.0};
    g.reward(0, 0, 0) = 1.0;
    g.reward(0, 0, 1) = 0.0;
    g.transition(0, 0, 0) = 1.0;
    g.transition(0, 1, 0) = 1.0;
    refresh_reward_bound(g);
    JointPolicy pi = uniform_policy(g.shape());
    auto [choice, value] = best_response(g, pi, 0);
    REQUIRE(choice[0] == 0);
    REQUIRE(value == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("best response is a fixed point at an optimum") {
    oracles::Rng rng(51);
    TabularGame g = oracles::random_game(1, 2, {2}, 0.9, rng);
    JointPolicy pi = uniform_policy(g.shape());
    auto [choice, value] = best_response(g, pi, 0);
    JointPolicy best = deterministic_policy(g.shape(), {choice});
    EvalResult eval = policy_evaluation(g, best);
    REQUIRE(value == Catch::Approx(eval.value_at(0, g.init_dist)).margin(1e-8));
    auto [choice2, value2] = best_response(g, best, 0);
    REQUIRE(value2 == Catch::Approx(value).margin(1e-8));
}

TEST_CASE("best response matches exhaustive deterministic enumeration") {
    oracles::Rng rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        TabularGame g = oracles::random_game(2, 2, {2, 2}, 0.85, rng);
        JointPolicy pi = oracles::random_policy(g.shape(), rng);
        for (int i = 0; i < 2; ++i) {
            auto [choice, value] = best_response(g, pi, i);
            double brute = -std::numeric_limits<double>::infinity();
            for (const auto& candidate :
                 oracles::deterministic_choices(g.num_states, g.num_actions[i])) {
                JointPolicy deviated = pi;
                JointPolicy det = deterministic_policy(g.shape(), {candidate, candidate});
                deviated.probs[i] = det.probs[i];
                EvalResult eval = policy_evaluation(g, deviated);
                brute = std::max(brute, eval.value_at(i, g.init_dist));
            }
            REQUIRE(value == Catch::Approx(brute).margin(1e-8));
            // Dominance over the current policy.
            EvalResult current = policy_evaluation(g, pi);
            REQUIRE(value >= current.value_at(i, g.init_dist) - 1e-8);
        }
    }
}

TEST_CASE("pse gap at equilibria and off equilibrium") {
    ResponseMap map = coordination_map();
    // Matching deterministic profile: exact equilibrium, gap 0.
    GapReport at_eq = pse_gap(map, matching_profile());
    REQUIRE(at_eq.max_gap == Catch::Approx(0.0).margin(1e-8));
    for (double gap : at_eq.agent_gaps) REQUIRE(gap >= -1e-8);
    // Uniform profile: every unilateral deviation against a uniform partner
    // earns exactly 0.5, so uniform is itself a (mixed) equilibrium.
    GapReport at_uniform = pse_gap(map, uniform_policy(map.base().shape()));
    REQUIRE(at_uniform.max_gap == Catch::Approx(0.0).margin(1e-8));

    // Off equilibrium: an asymmetric profile has a positive gap, equal to the
    // hand enumeration over the two actions.
    JointPolicy skewed = uniform_policy(map.base().shape());
    skewed.probs[0] = {0.9, 0.1};
    skewed.probs[1] = {0.6, 0.4};
    GapReport off_eq = pse_gap(map, skewed);
    const double current = 0.9 * 0.6 + 0.1 * 0.4;
    const double expected = std::max(0.9 - current, 0.6 - current);
    REQUIRE(off_eq.max_gap == Catch::Approx(expected).margin(1e-8));
    REQUIRE(off_eq.max_gap ==
            *std::max_element(off_eq.agent_gaps.begin(), off_eq.agent_gaps.end()));
}

TEST_CASE("ne gap equals pse gap when the response is constant") {
    oracles::Rng rng(59);
    TabularGame base = oracles::random_game(2, 2, {2, 2}, 0.8, rng);
    ResponseMap map = constant_response_map(base);
    for (int trial = 0; trial < 5; ++trial) {
        JointPolicy pi = oracles::random_policy(base.shape(), rng);
        GapReport pse = pse_gap(map, pi);
        GapReport ne = ne_gap(map, pi);
        REQUIRE(ne.max_gap == Catch::Approx(pse.max_gap).margin(1e-10));
    }
}

TEST_CASE("ne gap equals pse gap on the zero-shift congestion game") {
    CongestionParams p;
    p.omega_r = 0.0;
    p.omega_p = 0.0;
    ResponseMap map = make_congestion(p);
    oracles::Rng rng(61);
    JointPolicy pi = oracles::random_policy(map.base().shape(), rng);
    GapReport pse = pse_gap(map, pi);
    GapReport ne = ne_gap(map, pi);
    REQUIRE(ne.max_gap == Catch::Approx(pse.max_gap).margin(1e-8));
}

TEST_CASE("refining the ne gap grid never lowers the reported gap") {
    TestGameSpec spec;
    spec.coordination = true;
    spec.omega_r = 0.1;
    spec.discount = 0.5;
    ResponseMap map = make_test_game(spec);
    oracles::Rng rng(67);
    JointPolicy pi = oracles::random_policy(map.base().shape(), rng);
    GapReport coarse = ne_gap(map, pi, 0.5);
    GapReport fine = ne_gap(map, pi, 0.25);
    REQUIRE(fine.max_gap >= coarse.max_gap - 1e-10);
    REQUIRE(coarse.grid_resolution == 0.5);
}

TEST_CASE("performative regret over run histories") {
    ResponseMap map = coordination_map();
    RunHistory empty;
    REQUIRE_THROWS_AS(performative_regret(empty), EmptyHistory);

    // Single round at an exact PSE: zero regret.
    RunHistory one;
    RoundRecord record;
    record.round = 1;
    record.policy = matching_profile();
    record.pse_gap = pse_gap(map, record.policy).max_gap;
    one.rounds.push_back(record);
    REQUIRE(performative_regret(one) == Catch::Approx(0.0).margin(1e-9));

    // Constant history: PReg(T) equals the per-round gap for every T.
    JointPolicy uniform = uniform_policy(map.base().shape());
    double gap = pse_gap(map, uniform).max_gap;
    RunHistory constant;
    for (int t = 1; t <= 7; ++t) {
        RoundRecord r;
        r.round = t;
        r.policy = uniform;
        r.pse_gap = gap;
        constant.rounds.push_back(r);
        REQUIRE(performative_regret(constant) == Catch::Approx(gap).margin(1e-12));
    }
    // The average dominates the minimum round gap.
    double min_gap = gap;
    for (const auto& r : constant.rounds) min_gap = std::min(min_gap, r.pse_gap);
    REQUIRE(performative_regret(constant) >= min_gap - 1e-12);
}

TEST_CASE("policy distance") {
    GameShape shape{2, 1, {2, 2}};
    JointPolicy p = uniform_policy(shape);
    JointPolicy q = deterministic_policy(shape, {{0}, {0}});

    // Constant run: zero at every round.
    RunHistory constant;
    for (int t = 1; t <= 5; ++t) {
        RoundRecord r;
        r.round = t;
        r.policy = p;
        constant.rounds.push_back(r);
    }
    for (double d : policy_distance(constant, 10))
        REQUIRE(d == Catch::Approx(0.0).margin(1e-12));

    // Window 1: the final round is compared against itself.
    RunHistory two;
    for (int t = 1; t <= 2; ++t) {
        RoundRecord r;
        r.round = t;
        r.policy = t == 1 ? p : q;
        two.rounds.push_back(r);
    }
    auto dist = policy_distance(two, 1);
    REQUIRE(dist.back() == Catch::Approx(0.0).margin(1e-12));

    // Alternation (p, q, p, q) with window 2: every round sits at the same
    // distance from the mean (p+q)/2.
    RunHistory alternation;
    for (int t = 1; t <= 4; ++t) {
        RoundRecord r;
        r.round = t;
        r.policy = t % 2 == 1 ? p : q;
        alternation.rounds.push_back(r);
    }
    double expected = 0.0;
    for (int i = 0; i < 2; ++i) {
        double sq = 0.0;
        for (std::size_t k = 0; k < p.probs[i].size(); ++k) {
            double diff = p.probs[i][k] - 0.5 * (p.probs[i][k] + q.probs[i][k]);
            sq += diff * diff;
        }
        expected += std::sqrt(sq) / 2.0;
    }
    for (double d : policy_distance(alternation, 2))
        REQUIRE(d == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("potential identity holds for common payoffs and fails otherwise") {
    oracles::Rng rng(71);
    TabularGame common = oracles::random_game(2, 2, {2, 2}, 0.8, rng, true);
    PotentialEval phi = common_payoff_potential();
    for (int trial = 0; trial < 100; ++trial) {
        JointPolicy pi = oracles::random_policy(common.shape(), rng);
        const int i = trial % 2;
        JointPolicy other = oracles::random_policy(common.shape(), rng);
        double err = verify_mpg_identity(common, phi, pi, i, other.probs[i]);
        REQUIRE(err < 1e-8);
    }
    // Null deviation: exactly zero.
    JointPolicy pi = oracles::random_policy(common.shape(), rng);
    REQUIRE(verify_mpg_identity(common, phi, pi, 0, pi.probs[0]) == 0.0);

    // Asymmetric zero-sum-like rewards: the check discriminates.
    TabularGame skew = oracles::random_game(2, 1, {2, 2}, 0.0, rng);
    for (std::size_t j = 0; j < skew.actions.total(); ++j) {
        int a0 = skew.actions.action_of(j, 0);
        int a1 = skew.actions.action_of(j, 1);
        skew.reward(0, 0, j) = a0 == a1 ? 1.0 : 0.0;
        skew.reward(1, 0, j) = a0 == a1 ? 0.0 : 1.0;
    }
    refresh_reward_bound(skew);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        JointPolicy base = oracles::random_policy(skew.shape(), rng);
        JointPolicy other = oracles::random_policy(skew.shape(), rng);
        worst = std::max(worst,
                         verify_mpg_identity(skew, common_payoff_potential(0), base,
                                             1, other.probs[1]));
    }
    REQUIRE(worst > 0.01);
}

TEST_CASE("gap report serialization carries the required fields") {
    ResponseMap map = coordination_map();
    GapReport report = pse_gap(map, uniform_policy(map.base().shape()));
    nlohmann::json doc = report.to_json();
    REQUIRE(doc.contains("agent_gaps"));
    REQUIRE(doc.contains("max_gap"));
    REQUIRE(doc.contains("argmax_agent"));
    REQUIRE_FALSE(doc.contains("grid_resolution"));
    GapReport ne = ne_gap(map, uniform_policy(map.base().shape()), 0.5);
    REQUIRE(ne.to_json().contains("grid_resolution"));
}
