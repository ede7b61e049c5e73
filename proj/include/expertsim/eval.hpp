#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "expertsim/collection.hpp"
#include "expertsim/metrics.hpp"

namespace expertsim {

struct EvalOptions {
    std::vector<std::size_t> ks = {5, 10};
    GainKind gain = GainKind::exponential;
    std::size_t jobs = 1;
};

struct QueryScores {
    std::string query_id;
    bool in_run = true;  // false when the run omitted a graded query (scored 0)
    std::map<std::size_t, double> ndcg;    // k -> value
    double mrr = 0.0;
    std::map<std::size_t, double> recall;  // k -> value
};

// Per-query and mean ranking quality for one run. Aggregates are arithmetic
// means over every graded query; queries the run omits count as zero and are
// flagged. MRR and recall treat grade >= 1 as relevant.
struct RankingReport {
    EvalOptions options;
    std::string strategy;        // from the run tag
    uint64_t seed = 0;           // filled by the caller when known
    std::size_t budget_spent = 0;
    std::vector<QueryScores> per_query;  // ascending query_id
    std::map<std::size_t, double> mean_ndcg;
    double mean_mrr = 0.0;
    std::map<std::size_t, double> mean_recall;
    std::vector<std::string> missing_queries;  // graded but absent from the run
};

// A run query absent from the qrels is a ValidationError naming every
// offender. Experts absent from a query's qrels row score grade 0.
RankingReport evaluate_run(const TrecRun& run, const Qrels& qrels, const EvalOptions& options);
RankingReport evaluate_run_files(const std::string& run_path, const std::string& qrels_path,
                                 const EvalOptions& options);

// Answer quality of the top-ranked expert per query: the answer a user acting
// on the ranking would read first.
struct AnswerReport {
    struct Row {
        std::string query_id;
        std::string expert_id;  // rank-1 expert
        int exact_match = 0;
        double token_f1 = 0.0;
    };
    std::vector<Row> per_query;  // ascending query_id
    double mean_exact_match = 0.0;
    double mean_token_f1 = 0.0;
};

AnswerReport evaluate_answers(const TrecRun& run, const AnswerTable& answers,
                              const GoldAnswerSet& golds);

void write_ranking_report_json(const RankingReport& report, const std::string& path);
void write_answer_report_json(const AnswerReport& report, const std::string& path);

// Aligned-column text table, one row per query plus a mean row.
std::string format_ranking_report(const RankingReport& report);

} // namespace expertsim
