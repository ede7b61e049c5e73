#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "doctest.h"
#include "expertsim/agents.hpp"
#include "expertsim/errors.hpp"
#include "expertsim/rng.hpp"
#include "expertsim/util.hpp"
#include "temp_dir.hpp"

using namespace expertsim;

namespace {

QaPair make_query(const std::string& query_id, const std::string& question) {
    return {query_id, question, {"gold"}, {}, Split::train};
}

std::vector<QaPair> numbered_queries(std::size_t n) {
    std::vector<QaPair> queries;
    for (std::size_t i = 0; i < n; ++i) {
        queries.push_back(make_query("q" + std::to_string(i), "question"));
    }
    return queries;
}

// A reward table where every (query, expert) pair exists.
RewardTable full_rewards(const std::vector<QaPair>& queries,
                         const std::vector<std::string>& experts, double value) {
    RewardTable rewards;
    for (const auto& qa : queries) {
        for (const auto& expert_id : experts) rewards[qa.query_id][expert_id] = value;
    }
    return rewards;
}

std::size_t total_pulls(const BeliefState& belief) {
    std::size_t sum = 0;
    for (const auto& [id, b] : belief.experts) sum += b.pull_count;
    return sum;
}

} // namespace

TEST_CASE("Budget enforces the spending cap as a contract") {
    Budget budget(3);
    CHECK(budget.total() == 3);
    CHECK(budget.remaining() == 3);
    budget.spend();
    budget.spend(2);
    CHECK(budget.spent() == 3);
    CHECK(budget.remaining() == 0);
    CHECK_THROWS_AS(budget.spend(), ContractViolation);
    CHECK(budget.spent() == 3);  // failed spend leaves the state untouched

    Budget zero(0);
    CHECK_THROWS_AS(zero.spend(), ContractViolation);
}

TEST_CASE("strategy names round-trip") {
    for (auto s : {Strategy::random, Strategy::round_robin, Strategy::centroid, Strategy::ucb,
                   Strategy::oracle}) {
        CHECK(strategy_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(strategy_from_string("greedy"), ValidationError);
}

TEST_CASE("build_reward_table scores tuple answers against golds") {
    std::vector<TrainingTuple> tuples;
    TrainingTuple t;
    t.query_id = "q1";
    t.expert_id = "c0";
    t.answer = "aa bb";
    tuples.push_back(t);
    t.expert_id = "c1";
    t.answer = "zz";
    tuples.push_back(t);

    GoldAnswerSet golds;
    golds["q1"] = {"aa bb"};
    auto rewards = build_reward_table(tuples, golds);
    CHECK(rewards.at("q1").at("c0") == doctest::Approx(1.0));
    CHECK(rewards.at("q1").at("c1") == doctest::Approx(0.0));

    SUBCASE("missing gold is a validation error") {
        GoldAnswerSet empty;
        CHECK_THROWS_AS(build_reward_table(tuples, empty), ValidationError);
    }
    SUBCASE("duplicate tuple is a validation error") {
        tuples.push_back(tuples.back());
        CHECK_THROWS_AS(build_reward_table(tuples, golds), ValidationError);
    }
}

TEST_CASE("ucb_select prefers unpulled experts, then the best mean-plus-bonus arm") {
    BeliefState belief;
    belief.experts["c0"];
    belief.experts["c1"];
    belief.experts["c2"];

    SUBCASE("all unpulled: lowest expert id") {
        CHECK(ucb_select(belief, 0) == "c0");
    }
    SUBCASE("unpulled expert outranks any mean") {
        belief.experts["c0"].utility_sum = 5.0;
        belief.experts["c0"].pull_count = 5;
        belief.experts["c2"].utility_sum = 0.9;
        belief.experts["c2"].pull_count = 1;
        CHECK(ucb_select(belief, 6) == "c1");
    }
    SUBCASE("direct formula evaluation on two pulled arms") {
        // c0: mean 0.9, n=5; c1: mean 0.1, n=1; t=6.
        // UCB(c0) = 0.9 + sqrt(2 ln 6 / 5) ~= 1.7466
        // UCB(c1) = 0.1 + sqrt(2 ln 6 / 1) ~= 1.9930  -> c1 wins on the bonus
        BeliefState two;
        two.experts["c0"] = {4.5, 5, 0.0};
        two.experts["c1"] = {0.1, 1, 0.0};
        CHECK(ucb_select(two, 6) == "c1");

        // With enough extra pulls on c1 the exploited arm wins again.
        two.experts["c1"] = {0.5, 5, 0.0};  // mean 0.1, bonus now equal to c0's
        CHECK(ucb_select(two, 10) == "c0");
    }
    SUBCASE("single expert") {
        BeliefState one;
        one.experts["c7"] = {0.0, 3, 0.0};
        CHECK(ucb_select(one, 3) == "c7");
    }
}

TEST_CASE("prepare with zero budget returns a pull-free belief") {
    auto queries = numbered_queries(3);
    std::vector<std::string> experts{"c0", "c1"};
    auto rewards = full_rewards(queries, experts, 0.5);
    for (auto strategy : {Strategy::random, Strategy::round_robin, Strategy::ucb}) {
        Budget budget(0);
        auto belief = prepare(strategy, queries, budget, experts, rewards, 7);
        CHECK(total_pulls(belief) == 0);
        CHECK(budget.spent() == 0);
        CHECK(belief.experts.size() == 2);
    }
}

TEST_CASE("prepare consumes exactly min(budget, available tuples)") {
    auto queries = numbered_queries(4);
    std::vector<std::string> experts{"c0", "c1", "c2"};
    auto rewards = full_rewards(queries, experts, 0.25);  // 12 pairs available

    for (auto strategy : {Strategy::random, Strategy::round_robin, Strategy::ucb}) {
        CAPTURE(to_string(strategy));
        Budget small(5);
        auto belief = prepare(strategy, queries, small, experts, rewards, 11);
        CHECK(small.spent() == 5);
        CHECK(total_pulls(belief) == 5);

        Budget big(100);
        belief = prepare(strategy, queries, big, experts, rewards, 11);
        CHECK(big.spent() == 12);  // only 12 tuples exist
        CHECK(total_pulls(belief) == 12);
        for (const auto& [id, b] : belief.experts) {
            CHECK(b.pull_count == 4);  // without replacement: every pair once
            CHECK(b.utility_mean() == doctest::Approx(0.25));
        }
    }
}

TEST_CASE("prepare round_robin with budget |experts| consults each expert once") {
    auto queries = numbered_queries(3);
    std::vector<std::string> experts{"c2", "c0", "c1"};  // deliberately unsorted
    auto rewards = full_rewards(queries, experts, 1.0);
    Budget budget(3);
    auto belief = prepare(Strategy::round_robin, queries, budget, experts, rewards, 1);
    CHECK(budget.spent() == 3);
    for (const auto& [id, b] : belief.experts) CHECK(b.pull_count == 1);
}

TEST_CASE("prepare round_robin skips experts with no tuples left") {
    auto queries = numbered_queries(3);
    std::vector<std::string> experts{"c0", "c1"};
    RewardTable rewards;
    rewards["q0"]["c0"] = 1.0;  // c0 has one tuple, c1 has three
    rewards["q0"]["c1"] = 0.0;
    rewards["q1"]["c1"] = 0.5;
    rewards["q2"]["c1"] = 0.5;
    Budget budget(4);
    auto belief = prepare(Strategy::round_robin, queries, budget, experts, rewards, 1);
    CHECK(budget.spent() == 4);
    CHECK(belief.experts.at("c0").pull_count == 1);
    CHECK(belief.experts.at("c1").pull_count == 3);
}

TEST_CASE("prepare centroid and oracle consume nothing") {
    auto queries = numbered_queries(5);
    std::vector<std::string> experts{"c0", "c1"};
    auto rewards = full_rewards(queries, experts, 1.0);
    for (auto strategy : {Strategy::centroid, Strategy::oracle}) {
        Budget budget(10);
        auto belief = prepare(strategy, queries, budget, experts, rewards, 3);
        CHECK(budget.spent() == 0);
        CHECK(total_pulls(belief) == 0);
        CHECK(belief.experts.size() == 2);
    }
}

TEST_CASE("prepare ucb replays the hand-simulated two-arm fixture") {
    // Rewards: c0 always 1.0, c1 always 0.0.
    // t=0: both unpulled -> c0 (ascending id). t=1: c1 unpulled -> c1.
    // t=2: UCB(c0) = 1 + sqrt(2 ln 2) > UCB(c1) = 0 + sqrt(2 ln 2) -> c0.
    auto queries = numbered_queries(3);
    std::vector<std::string> experts{"c0", "c1"};
    RewardTable rewards;
    for (const auto& qa : queries) {
        rewards[qa.query_id]["c0"] = 1.0;
        rewards[qa.query_id]["c1"] = 0.0;
    }
    Budget budget(3);
    auto belief = prepare(Strategy::ucb, queries, budget, experts, rewards, 5);
    CHECK(belief.experts.at("c0").pull_count == 2);
    CHECK(belief.experts.at("c0").utility_sum == doctest::Approx(2.0));
    CHECK(belief.experts.at("c1").pull_count == 1);
    CHECK(belief.experts.at("c1").utility_sum == doctest::Approx(0.0));
}

TEST_CASE("prepare ucb spends the whole budget exploring before re-exploiting") {
    // Both arms pay 0; the bandit must still rotate deterministically and
    // never exceed the budget.
    auto queries = numbered_queries(10);
    std::vector<std::string> experts{"c0", "c1", "c2"};
    auto rewards = full_rewards(queries, experts, 0.0);
    Budget budget(9);
    auto belief = prepare(Strategy::ucb, queries, budget, experts, rewards, 5);
    CHECK(budget.spent() == 9);
    CHECK(total_pulls(belief) == 9);
    for (const auto& [id, b] : belief.experts) CHECK(b.pull_count == 3);
}

TEST_CASE("prepare random is deterministic per seed and reshuffles across seeds") {
    auto queries = numbered_queries(6);
    std::vector<std::string> experts{"c0", "c1", "c2"};
    // Pair-specific rewards so utility sums reveal exactly which tuples were
    // consumed.
    RewardTable rewards;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        for (std::size_t ei = 0; ei < experts.size(); ++ei) {
            rewards[queries[qi].query_id][experts[ei]] =
                static_cast<double>(qi * 16 + ei) / 256.0;
        }
    }
    auto signature = [&](uint64_t seed) {
        Budget budget(9);
        auto belief = prepare(Strategy::random, queries, budget, experts, rewards, seed);
        CHECK(budget.spent() == 9);
        std::vector<std::pair<double, std::size_t>> sig;
        for (const auto& [id, b] : belief.experts) sig.emplace_back(b.utility_sum, b.pull_count);
        return sig;
    };

    CHECK(signature(42) == signature(42));

    bool any_diff = false;
    auto base = signature(42);
    for (uint64_t seed : {1, 2, 3, 4}) {
        if (signature(seed) != base) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("prepare rejects an empty expert list") {
    auto queries = numbered_queries(2);
    Budget budget(2);
    CHECK_THROWS_AS(prepare(Strategy::random, queries, budget, {}, {}, 1), ValidationError);
}

TEST_CASE("compute_expert_centroids is invariant under member duplication") {
    DocumentStore store(std::vector<Document>{{"d1", "solar panels convert sunlight", {}},
                                              {"d2", "wind turbines spin", {}},
                                              {"d3", "senate passes the budget law", {}}});
    ClusterAssignment assignment;
    assignment.assign("d1", "c0");
    assignment.assign("d2", "c0");
    assignment.assign("d3", "c1");
    auto centroids = compute_expert_centroids(store, assignment, 64, 9, {});

    DocumentStore doubled(std::vector<Document>{
        {"d1", "solar panels convert sunlight", {}},
        {"d1b", "solar panels convert sunlight", {}},
        {"d2", "wind turbines spin", {}},
        {"d2b", "wind turbines spin", {}},
        {"d3", "senate passes the budget law", {}},
        {"d3b", "senate passes the budget law", {}},
    });
    ClusterAssignment assignment2;
    for (const auto& id : {"d1", "d1b", "d2", "d2b"}) assignment2.assign(id, "c0");
    for (const auto& id : {"d3", "d3b"}) assignment2.assign(id, "c1");
    auto centroids2 = compute_expert_centroids(doubled, assignment2, 64, 9, {});

    for (const auto& [cluster_id, centroid] : centroids) {
        REQUIRE(centroids2.count(cluster_id) == 1);
        for (std::size_t i = 0; i < centroid.size(); ++i) {
            CHECK(centroid[i] == doctest::Approx(centroids2.at(cluster_id)[i]).epsilon(1e-12));
        }
    }
    SUBCASE("member missing from the corpus is a validation error") {
        assignment.assign("ghost", "c1");
        CHECK_THROWS_AS(compute_expert_centroids(store, assignment, 64, 9, {}),
                        ValidationError);
    }
}

TEST_CASE("rank_experts blends learned utility with the centroid prior") {
    DocumentStore store(std::vector<Document>{{"d1", "apple orchard fruit harvest", {}},
                                              {"d2", "carburetor engine piston", {}},
                                              {"d3", "senate vote law chamber", {}}});
    ClusterAssignment assignment;
    assignment.assign("d1", "c0");
    assignment.assign("d2", "c1");
    assignment.assign("d3", "c2");
    auto centroids = compute_expert_centroids(store, assignment, 256, 0, {});

    RankingContext ctx;
    ctx.centroids = &centroids;
    ctx.dim = 256;
    ctx.hash_seed = 0;
    QaPair query = make_query("q1", "apple orchard fruit harvest");

    BeliefState belief;
    belief.experts["c0"];
    belief.experts["c1"] = {1.8, 2, 0.0};  // mean 0.9
    belief.experts["c2"] = {0.2, 2, 0.0};  // mean 0.1

    auto ranked = rank_experts(Strategy::ucb, belief, query, ctx);
    CHECK(ranked.query_id == "q1");
    CHECK(ranked.strategy == "ucb");
    REQUIRE(ranked.ranking.size() == 3);

    // Oracle: recompute each blended score straight from the formula.
    HashVector qvec = hash_vectorize(tokenize(query.question), 256, 0);
    std::map<std::string, double> expected;
    for (const auto& [id, b] : belief.experts) {
        double mean = b.pull_count ? b.utility_sum / b.pull_count : 0.0;
        expected[id] = 0.5 * mean + 0.5 * cosine(qvec, centroids.at(id));
    }
    for (const auto& [id, score] : ranked.ranking) {
        CHECK(score == doctest::Approx(expected.at(id)).epsilon(1e-12));
    }
    for (std::size_t i = 1; i < ranked.ranking.size(); ++i) {
        CHECK(ranked.ranking[i - 1].second >= ranked.ranking[i].second);
    }
    // c0's prior is cosine(query, own centroid) = 1, so it scores 0.5; c1's
    // score is 0.45 + a near-zero prior and cannot reach it.
    CHECK(ranked.ranking[0].first == "c0");

    SUBCASE("lambda = 1 ignores priors entirely") {
        ctx.lambda = 1.0;
        auto pure = rank_experts(Strategy::ucb, belief, query, ctx);
        CHECK(pure.ranking[0].first == "c1");
        CHECK(pure.ranking[0].second == doctest::Approx(0.9));
        CHECK(pure.ranking[1].first == "c2");
        CHECK(pure.ranking[2].first == "c0");  // unpulled -> utility 0
    }
    SUBCASE("zero-budget belief ranks exactly like the pure prior") {
        BeliefState empty;
        for (const auto& [id, b] : belief.experts) empty.experts[id];
        auto blend = rank_experts(Strategy::centroid, empty, query, ctx);
        RankingContext prior_only = ctx;
        prior_only.lambda = 0.0;
        auto pure = rank_experts(Strategy::centroid, empty, query, prior_only);
        for (std::size_t i = 0; i < blend.ranking.size(); ++i) {
            CHECK(blend.ranking[i].first == pure.ranking[i].first);
        }
        CHECK(blend.ranking[0].first == "c0");  // cosine 1.0 with its own centroid
    }
    SUBCASE("missing centroid is a validation error") {
        centroids.erase("c2");
        CHECK_THROWS_AS(rank_experts(Strategy::ucb, belief, query, ctx), ValidationError);
    }
}

TEST_CASE("rank_experts random strategy is a seeded permutation") {
    BeliefState belief;
    for (int i = 0; i < 8; ++i) belief.experts["c" + std::to_string(i)];
    RankingContext ctx;
    ctx.seed = 99;
    QaPair q1 = make_query("q1", "anything");
    QaPair q2 = make_query("q2", "anything");

    auto r1 = rank_experts(Strategy::random, belief, q1, ctx);
    auto r1_again = rank_experts(Strategy::random, belief, q1, ctx);
    auto r2 = rank_experts(Strategy::random, belief, q2, ctx);

    REQUIRE(r1.ranking.size() == 8);
    std::set<std::string> ids;
    for (const auto& [id, score] : r1.ranking) ids.insert(id);
    CHECK(ids.size() == 8);  // permutation completeness

    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(r1.ranking[i].first == r1_again.ranking[i].first);
        CHECK(r1.ranking[i].second == r1_again.ranking[i].second);
    }
    bool differs = false;
    for (std::size_t i = 0; i < 8; ++i) {
        if (r1.ranking[i].first != r2.ranking[i].first) differs = true;
    }
    CHECK(differs);  // per-query stream: q2 draws a different order
}

TEST_CASE("rank_experts oracle strategy ranks by qrels grades") {
    BeliefState belief;
    belief.experts["c0"];
    belief.experts["c1"];
    belief.experts["c2"];
    Qrels qrels;
    qrels.grades["q1"] = {{"c0", 0}, {"c1", 2}, {"c2", 1}};
    RankingContext ctx;
    ctx.qrels = &qrels;

    auto ranked = rank_experts(Strategy::oracle, belief, make_query("q1", "x"), ctx);
    REQUIRE(ranked.ranking.size() == 3);
    CHECK(ranked.ranking[0].first == "c1");
    CHECK(ranked.ranking[1].first == "c2");
    CHECK(ranked.ranking[2].first == "c0");
    CHECK(ranked.ranking[0].second == 2.0);

    SUBCASE("unknown query scores everyone zero in ascending id order") {
        auto cold = rank_experts(Strategy::oracle, belief, make_query("q9", "x"), ctx);
        CHECK(cold.ranking[0].first == "c0");
        CHECK(cold.ranking[0].second == 0.0);
        CHECK(cold.ranking[2].first == "c2");
    }
    SUBCASE("oracle without qrels is a validation error") {
        RankingContext bare;
        CHECK_THROWS_AS(rank_experts(Strategy::oracle, belief, make_query("q1", "x"), bare),
                        ValidationError);
    }
}

TEST_CASE("write_belief_json snapshots the belief") {
    TempDir dir;
    BeliefState belief;
    belief.experts["c0"] = {1.5, 2, 0.75};
    belief.experts["c1"];
    auto path = dir.at("belief.json");
    write_belief_json(belief, path);

    auto doc = nlohmann::json::parse(slurp(path));
    CHECK(doc.at("total_pulls") == 2);
    CHECK(doc.at("experts").at("c0").at("pull_count") == 2);
    CHECK(doc.at("experts").at("c0").at("utility_mean") == doctest::Approx(0.75));
    CHECK(doc.at("experts").at("c0").at("prior_score") == doctest::Approx(0.75));
    CHECK(doc.at("experts").at("c1").at("pull_count") == 0);
    CHECK(doc.at("experts").at("c1").at("utility_mean") == 0.0);
}
