#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "expertsim/cluster.hpp"
#include "expertsim/collection.hpp"
#include "expertsim/corpus.hpp"
#include "expertsim/hashing.hpp"

namespace expertsim {

// Preparatory-query allowance. One unit = one (query, expert) consultation.
// Spending past the total is a hard contract violation, never a silent
// truncation.
class Budget {
public:
    explicit Budget(std::size_t total) : total_(total) {}
    std::size_t total() const { return total_; }
    std::size_t spent() const { return spent_; }
    std::size_t remaining() const { return total_ - spent_; }
    void spend(std::size_t units = 1);

private:
    std::size_t total_;
    std::size_t spent_ = 0;
};

struct ExpertBelief {
    double utility_sum = 0.0;
    std::size_t pull_count = 0;
    double prior_score = 0.0;  // centroid similarity, filled at ranking time

    double utility_mean() const {
        return pull_count == 0 ? 0.0 : utility_sum / static_cast<double>(pull_count);
    }
};

struct BeliefState {
    std::map<std::string, ExpertBelief> experts;

    std::size_t total_pulls() const {
        std::size_t sum = 0;
        for (const auto& [id, b] : experts) sum += b.pull_count;
        return sum;
    }
};

enum class Strategy { random, round_robin, centroid, ucb, oracle };

Strategy strategy_from_string(const std::string& name);
std::string to_string(Strategy strategy);

// reward[query_id][expert_id]: token-F1 of the recorded tuple answer against
// the query's golds. Built once from the training tuples; prepare never calls
// live experts.
using RewardTable = std::map<std::string, std::map<std::string, double>>;

RewardTable build_reward_table(const std::vector<TrainingTuple>& tuples,
                               const GoldAnswerSet& golds);

// UCB1 pick: argmax of utility_mean + sqrt(2 ln t / pull_count). Unpulled
// experts outrank all pulled ones; ties fall to the ascending expert_id.
std::string ucb_select(const BeliefState& belief, std::size_t t);

// Spends min(budget remaining, tuples available) consultations per the
// strategy, without replacement, updating the belief incrementally. The
// centroid strategy is the zero-cost prior baseline and consumes nothing.
// Deterministic given the seed.
BeliefState prepare(Strategy strategy, const std::vector<QaPair>& prep_queries, Budget& budget,
                    const std::vector<std::string>& expert_ids, const RewardTable& rewards,
                    uint64_t seed);

struct RankedExperts {
    std::string query_id;
    std::vector<std::pair<std::string, double>> ranking;  // scores non-increasing
    std::string strategy;
};

struct RankingContext {
    const std::map<std::string, HashVector>* centroids = nullptr;  // expert -> centroid
    std::size_t dim = 1000;
    uint64_t hash_seed = 0;
    std::vector<std::string> stopwords;  // must match the clustering vectorizer
    double lambda = 0.5;     // blend of learned utility vs centroid prior
    uint64_t seed = 0;       // drives the random strategy
    const Qrels* qrels = nullptr;  // required by the oracle strategy
};

// Mean of the members' L2-normalized hash vectors, one entry per cluster.
// Invariant under duplicating every member of a cluster.
std::map<std::string, HashVector> compute_expert_centroids(
    const DocumentStore& store, const ClusterAssignment& assignment, std::size_t dim,
    uint64_t hash_seed, const std::vector<std::string>& stopwords);

// score(e) = lambda * utility_mean (0 when unpulled) + (1 - lambda) *
// cosine(hash_vectorize(query), centroid(e)). The random strategy scores from
// the (seed, query_id) stream; the oracle scores by qrels grades. Ties break
// by ascending expert_id; output is a permutation of the expert ids.
RankedExperts rank_experts(Strategy strategy, const BeliefState& belief, const QaPair& query,
                           const RankingContext& ctx);

// Belief snapshot: {expert_id: {utility_mean, pull_count}} plus totals.
void write_belief_json(const BeliefState& belief, const std::string& path);

} // namespace expertsim
