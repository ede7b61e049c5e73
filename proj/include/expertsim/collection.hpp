#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "expertsim/cluster.hpp"
#include "expertsim/corpus.hpp"
#include "expertsim/experts.hpp"

namespace expertsim {

// One recorded (query, expert, answer, metadata) interaction.
struct TrainingTuple {
    std::string query_id;
    std::string expert_id;
    std::string answer;
    ResponseMetadata metadata;
};

void write_tuples_jsonl(const std::vector<TrainingTuple>& tuples, const std::string& path);
std::vector<TrainingTuple> load_tuples_jsonl(const std::string& path);

// query_id -> expert_id -> grade in {0, 1, 2}
struct Qrels {
    std::map<std::string, std::map<std::string, int>> grades;
};

struct GradingThresholds {
    double grade2_f1 = 0.8;  // answer F1 at or above this -> grade 2
    double grade1_f1 = 0.3;  // grade 1 via answer F1 or cluster relevance
};

// answers[query_id][expert_id] = the expert's recorded answer
using AnswerTable = std::map<std::string, std::map<std::string, std::string>>;

// grade(q, e) = 2 when token-F1 of the answer vs the golds >= grade2_f1;
// else 1 when e's cluster holds any of q's relevant docs or F1 >= grade1_f1;
// else 0. Every (query, retained expert) pair is graded explicitly so the
// exported collection pins the expert universe. Missing responses violate the
// contract.
Qrels derive_qrels(const std::vector<QaPair>& test_queries,
                   const std::vector<std::string>& expert_ids,
                   const ClusterAssignment& assignment, const AnswerTable& answers,
                   const GradingThresholds& thresholds);

// TREC qrels: `query_id 0 expert_id grade`, queries then experts ascending.
void write_qrels_trec(const Qrels& qrels, const std::string& path);
Qrels load_qrels_trec(const std::string& path);

struct RankedEntry {
    std::string expert_id;
    double score = 0.0;
};

// query_id -> ranking (best first); one shared tag per run file.
struct TrecRun {
    std::map<std::string, std::vector<RankedEntry>> rankings;
    std::string tag = "expertsim";
};

// TREC run: `query_id Q0 expert_id rank score tag`, ranks contiguous from 1.
// Duplicate (query, expert) pairs and rank gaps are validation errors.
void write_run_trec(const TrecRun& run, const std::string& path);
TrecRun load_run_trec(const std::string& path);

using GoldAnswerSet = std::map<std::string, std::vector<std::string>>;

void write_gold_answers_jsonl(const GoldAnswerSet& golds, const std::string& path);
GoldAnswerSet load_gold_answers_jsonl(const std::string& path);

// Runs the simulation callback for every (query, expert) pair, in ascending
// (query_id, expert_id) order. Per-tuple failures are recorded rather than
// aborting the batch.
struct TrainingSetResult {
    std::vector<TrainingTuple> tuples;
    std::vector<std::string> failures;  // "query_id/expert_id: message"
};

using SimulateFn =
    std::function<ExpertResponse(const QaPair& query, const ExpertProfile& expert)>;

TrainingSetResult build_training_set(const std::vector<QaPair>& queries,
                                     const std::vector<ExpertProfile>& experts,
                                     const SimulateFn& simulate);

} // namespace expertsim
