#include "expertsim/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "expertsim/errors.hpp"
#include "expertsim/metrics.hpp"
#include "expertsim/util.hpp"
#include <json.hpp>

namespace expertsim {

using json = nlohmann::ordered_json;

void Budget::spend(std::size_t units) {
    if (spent_ + units > total_) {
        throw ContractViolation("budget exceeded: " + std::to_string(spent_) + " spent + " +
                                std::to_string(units) + " requested > " +
                                std::to_string(total_) + " total");
    }
    spent_ += units;
}

Strategy strategy_from_string(const std::string& name) {
    if (name == "random") return Strategy::random;
    if (name == "round_robin") return Strategy::round_robin;
    if (name == "centroid") return Strategy::centroid;
    if (name == "ucb") return Strategy::ucb;
    if (name == "oracle") return Strategy::oracle;
    throw ValidationError("unknown strategy: " + name);
}

std::string to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::random: return "random";
        case Strategy::round_robin: return "round_robin";
        case Strategy::centroid: return "centroid";
        case Strategy::ucb: return "ucb";
        case Strategy::oracle: return "oracle";
    }
    throw ValidationError("unknown strategy value");
}

RewardTable build_reward_table(const std::vector<TrainingTuple>& tuples,
                               const GoldAnswerSet& golds) {
    RewardTable rewards;
    for (const auto& tuple : tuples) {
        auto gold_it = golds.find(tuple.query_id);
        if (gold_it == golds.end()) {
            throw ValidationError("no gold answers for query " + tuple.query_id);
        }
        auto& per_query = rewards[tuple.query_id];
        if (per_query.count(tuple.expert_id) > 0) {
            throw ValidationError("duplicate tuple for " + tuple.query_id + "/" +
                                  tuple.expert_id);
        }
        per_query[tuple.expert_id] = answer_metrics(tuple.answer, gold_it->second).token_f1;
    }
    return rewards;
}

namespace {

// UCB1 over a subset of the belief's experts. Unpulled arms have an infinite
// upper bound; among equals the ascending expert_id wins (the map iterates in
// that order and updates require a strict improvement).
std::string ucb_select_among(const BeliefState& belief, std::size_t t,
                             const std::vector<std::string>& eligible) {
    if (eligible.empty()) throw ValidationError("ucb_select: no experts");
    std::string best;
    double best_value = -std::numeric_limits<double>::infinity();
    for (const auto& expert_id : eligible) {
        const ExpertBelief& b = belief.experts.at(expert_id);
        if (b.pull_count == 0) return expert_id;
        double bonus = std::sqrt(2.0 * std::log(static_cast<double>(t)) /
                                 static_cast<double>(b.pull_count));
        double value = b.utility_mean() + bonus;
        if (value > best_value) {
            best_value = value;
            best = expert_id;
        }
    }
    return best;
}

} // namespace

std::string ucb_select(const BeliefState& belief, std::size_t t) {
    std::vector<std::string> all;
    all.reserve(belief.experts.size());
    for (const auto& [expert_id, b] : belief.experts) all.push_back(expert_id);
    return ucb_select_among(belief, t, all);
}

namespace {

struct Consultation {
    std::size_t query_index;
    std::string expert_id;
};

void consume(BeliefState& belief, Budget& budget, const std::vector<QaPair>& queries,
             const RewardTable& rewards, const Consultation& c) {
    budget.spend(1);
    double reward = rewards.at(queries[c.query_index].query_id).at(c.expert_id);
    ExpertBelief& b = belief.experts.at(c.expert_id);
    b.utility_sum += reward;
    b.pull_count += 1;
}

bool has_reward(const RewardTable& rewards, const std::string& query_id,
                const std::string& expert_id) {
    auto it = rewards.find(query_id);
    return it != rewards.end() && it->second.count(expert_id) > 0;
}

} // namespace

BeliefState prepare(Strategy strategy, const std::vector<QaPair>& prep_queries, Budget& budget,
                    const std::vector<std::string>& expert_ids, const RewardTable& rewards,
                    uint64_t seed) {
    if (expert_ids.empty()) throw ValidationError("prepare: no experts");
    BeliefState belief;
    for (const auto& expert_id : expert_ids) belief.experts[expert_id];

    // The prior-only strategies never look at tuples, so they spend nothing.
    if (strategy == Strategy::centroid || strategy == Strategy::oracle) return belief;

    std::vector<std::string> experts_sorted = expert_ids;
    std::sort(experts_sorted.begin(), experts_sorted.end());

    if (strategy == Strategy::random) {
        std::vector<Consultation> pool;
        for (std::size_t qi = 0; qi < prep_queries.size(); ++qi) {
            for (const auto& expert_id : experts_sorted) {
                if (has_reward(rewards, prep_queries[qi].query_id, expert_id)) {
                    pool.push_back({qi, expert_id});
                }
            }
        }
        SplitMix64 rng(mix_seed(seed, "prepare-random"));
        for (std::size_t i = pool.size(); i > 1; --i) {  // Fisher-Yates
            std::swap(pool[i - 1], pool[rng.next_below(i)]);
        }
        std::size_t take = std::min<std::size_t>(budget.remaining(), pool.size());
        for (std::size_t i = 0; i < take; ++i) {
            consume(belief, budget, prep_queries, rewards, pool[i]);
        }
        return belief;
    }

    // round_robin and ucb both walk per-expert cursors over the prep queries
    // in order, skipping (query, expert) pairs with no recorded tuple.
    std::map<std::string, std::size_t> cursor;
    for (const auto& expert_id : experts_sorted) cursor[expert_id] = 0;
    auto advance = [&](const std::string& expert_id) {
        std::size_t& pos = cursor[expert_id];
        while (pos < prep_queries.size() &&
               !has_reward(rewards, prep_queries[pos].query_id, expert_id)) {
            ++pos;
        }
        return pos < prep_queries.size();
    };

    if (strategy == Strategy::round_robin) {
        bool any = true;
        while (budget.remaining() > 0 && any) {
            any = false;
            for (const auto& expert_id : experts_sorted) {
                if (budget.remaining() == 0) break;
                if (!advance(expert_id)) continue;
                consume(belief, budget, prep_queries, rewards, {cursor[expert_id], expert_id});
                ++cursor[expert_id];
                any = true;
            }
        }
        return belief;
    }

    // ucb
    std::size_t t = 0;
    while (budget.remaining() > 0) {
        std::vector<std::string> eligible;
        for (const auto& expert_id : experts_sorted) {
            if (advance(expert_id)) eligible.push_back(expert_id);
        }
        if (eligible.empty()) break;
        std::string choice = ucb_select_among(belief, t, eligible);
        consume(belief, budget, prep_queries, rewards, {cursor[choice], choice});
        ++cursor[choice];
        ++t;
    }
    return belief;
}

std::map<std::string, HashVector> compute_expert_centroids(
    const DocumentStore& store, const ClusterAssignment& assignment, std::size_t dim,
    uint64_t hash_seed, const std::vector<std::string>& stopwords) {
    std::map<std::string, HashVector> centroids;
    for (const auto& [cluster_id, members] : assignment.clusters) {
        HashVector sum(dim, 0.0);
        for (const auto& doc_id : members) {
            const Document* doc = store.find(doc_id);
            if (doc == nullptr) throw ValidationError("centroid member not in corpus: " + doc_id);
            HashVector v = hash_vectorize(tokenize(doc->text, stopwords), dim, hash_seed);
            for (std::size_t i = 0; i < dim; ++i) sum[i] += v[i];
        }
        for (double& x : sum) x /= static_cast<double>(members.size());
        centroids[cluster_id] = std::move(sum);
    }
    return centroids;
}

RankedExperts rank_experts(Strategy strategy, const BeliefState& belief, const QaPair& query,
                           const RankingContext& ctx) {
    if (belief.experts.empty()) throw ValidationError("rank_experts: empty belief");

    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(belief.experts.size());

    if (strategy == Strategy::random) {
        SplitMix64 rng(mix_seed(mix_seed(ctx.seed, "rank-random"), query.query_id));
        for (const auto& [expert_id, b] : belief.experts) {
            scored.emplace_back(expert_id, rng.next_double());
        }
    } else if (strategy == Strategy::oracle) {
        if (ctx.qrels == nullptr) throw ValidationError("oracle ranking requires qrels");
        auto q_it = ctx.qrels->grades.find(query.query_id);
        for (const auto& [expert_id, b] : belief.experts) {
            int grade = 0;
            if (q_it != ctx.qrels->grades.end()) {
                auto e_it = q_it->second.find(expert_id);
                if (e_it != q_it->second.end()) grade = e_it->second;
            }
            scored.emplace_back(expert_id, static_cast<double>(grade));
        }
    } else {
        if (ctx.centroids == nullptr) {
            throw ValidationError("ranking strategy " + to_string(strategy) +
                                  " requires centroids");
        }
        HashVector qvec = hash_vectorize(tokenize(query.question, ctx.stopwords), ctx.dim,
                                         ctx.hash_seed);
        for (const auto& [expert_id, b] : belief.experts) {
            auto c_it = ctx.centroids->find(expert_id);
            if (c_it == ctx.centroids->end()) {
                throw ValidationError("no centroid for expert " + expert_id);
            }
            double utility = b.pull_count > 0 ? b.utility_mean() : 0.0;
            double prior = cosine(qvec, c_it->second);
            scored.emplace_back(expert_id, ctx.lambda * utility + (1.0 - ctx.lambda) * prior);
        }
    }

    // The map fed us ascending expert ids, so a stable sort keeps that order
    // within equal scores.
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return RankedExperts{query.query_id, std::move(scored), to_string(strategy)};
}

void write_belief_json(const BeliefState& belief, const std::string& path) {
    json experts = json::object();
    for (const auto& [expert_id, b] : belief.experts) {
        experts[expert_id] = {{"pull_count", b.pull_count},
                              {"utility_sum", b.utility_sum},
                              {"utility_mean", b.utility_mean()},
                              {"prior_score", b.prior_score}};
    }
    json doc = {{"total_pulls", belief.total_pulls()}, {"experts", std::move(experts)}};
    write_file(path, doc.dump() + "\n");
}

} // namespace expertsim
