#include "expertsim/eval.hpp"

#include <algorithm>
#include <cstdio>

#include "expertsim/errors.hpp"
#include "expertsim/util.hpp"
#include <json.hpp>

namespace expertsim {

using json = nlohmann::ordered_json;

RankingReport evaluate_run(const TrecRun& run, const Qrels& qrels, const EvalOptions& options) {
    if (options.ks.empty()) throw ValidationError("evaluate_run: empty k list");

    std::vector<std::string> offenders;
    for (const auto& [query_id, ranking] : run.rankings) {
        if (qrels.grades.count(query_id) == 0) offenders.push_back(query_id);
    }
    if (!offenders.empty()) {
        throw ValidationError("run references queries absent from qrels: " +
                              join(offenders, ", "));
    }

    RankingReport report;
    report.options = options;
    report.strategy = run.tag;

    std::vector<const std::pair<const std::string, std::map<std::string, int>>*> graded;
    graded.reserve(qrels.grades.size());
    for (const auto& entry : qrels.grades) graded.push_back(&entry);

    report.per_query.resize(graded.size());
    parallel_chunks(graded.size(), options.jobs,
                    [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& [query_id, row] = *graded[i];
            QueryScores& scores = report.per_query[i];
            scores.query_id = query_id;
            for (std::size_t k : options.ks) {
                scores.ndcg[k] = 0.0;
                scores.recall[k] = 0.0;
            }
            auto run_it = run.rankings.find(query_id);
            if (run_it == run.rankings.end()) {
                scores.in_run = false;  // contributes zero to every mean
                continue;
            }
            std::vector<int> ranked_grades;
            ranked_grades.reserve(run_it->second.size());
            for (const auto& entry : run_it->second) {
                auto g_it = row.find(entry.expert_id);
                ranked_grades.push_back(g_it == row.end() ? 0 : g_it->second);
            }
            for (std::size_t k : options.ks) {
                scores.ndcg[k] = ndcg_at_k(ranked_grades, k, options.gain);
                scores.recall[k] = recall_at_k(ranked_grades, k);
            }
            scores.mrr = mrr(ranked_grades);
        }
    });

    for (const auto& scores : report.per_query) {
        if (!scores.in_run) report.missing_queries.push_back(scores.query_id);
    }

    // Sum first, divide once: the mean of n identical values is that value.
    double n = static_cast<double>(report.per_query.size());
    if (n > 0) {
        for (const auto& scores : report.per_query) {
            for (std::size_t k : options.ks) {
                report.mean_ndcg[k] += scores.ndcg.at(k);
                report.mean_recall[k] += scores.recall.at(k);
            }
            report.mean_mrr += scores.mrr;
        }
        for (std::size_t k : options.ks) {
            report.mean_ndcg[k] /= n;
            report.mean_recall[k] /= n;
        }
        report.mean_mrr /= n;
    }
    return report;
}

RankingReport evaluate_run_files(const std::string& run_path, const std::string& qrels_path,
                                 const EvalOptions& options) {
    return evaluate_run(load_run_trec(run_path), load_qrels_trec(qrels_path), options);
}

AnswerReport evaluate_answers(const TrecRun& run, const AnswerTable& answers,
                              const GoldAnswerSet& golds) {
    AnswerReport report;
    for (const auto& [query_id, ranking] : run.rankings) {
        if (ranking.empty()) throw ValidationError("empty ranking for query " + query_id);
        const std::string& top = ranking.front().expert_id;
        auto a_it = answers.find(query_id);
        if (a_it == answers.end() || a_it->second.count(top) == 0) {
            throw ValidationError("no recorded answer for " + query_id + "/" + top);
        }
        auto g_it = golds.find(query_id);
        if (g_it == golds.end()) {
            throw ValidationError("no gold answers for query " + query_id);
        }
        AnswerScore score = answer_metrics(a_it->second.at(top), g_it->second);
        report.per_query.push_back({query_id, top, score.exact_match, score.token_f1});
    }
    if (!report.per_query.empty()) {
        double n = static_cast<double>(report.per_query.size());
        for (const auto& row : report.per_query) {
            report.mean_exact_match += row.exact_match;
            report.mean_token_f1 += row.token_f1;
        }
        report.mean_exact_match /= n;
        report.mean_token_f1 /= n;
    }
    return report;
}

namespace {

json scores_to_json(const QueryScores& scores, const std::vector<std::size_t>& ks) {
    json ndcg = json::object();
    json recall = json::object();
    for (std::size_t k : ks) {
        ndcg[std::to_string(k)] = scores.ndcg.at(k);
        recall[std::to_string(k)] = scores.recall.at(k);
    }
    return {{"query_id", scores.query_id},
            {"in_run", scores.in_run},
            {"ndcg", std::move(ndcg)},
            {"mrr", scores.mrr},
            {"recall", std::move(recall)}};
}

} // namespace

void write_ranking_report_json(const RankingReport& report, const std::string& path) {
    json ks = json::array();
    for (std::size_t k : report.options.ks) ks.push_back(k);
    json config = {{"ks", std::move(ks)},
                   {"gain", to_string(report.options.gain)},
                   {"relevance_binarization", "grade >= 1"},
                   {"strategy", report.strategy},
                   {"seed", report.seed},
                   {"budget_spent", report.budget_spent}};
    json per_query = json::array();
    for (const auto& scores : report.per_query) {
        per_query.push_back(scores_to_json(scores, report.options.ks));
    }
    json mean_ndcg = json::object();
    json mean_recall = json::object();
    for (std::size_t k : report.options.ks) {
        mean_ndcg[std::to_string(k)] = report.mean_ndcg.at(k);
        mean_recall[std::to_string(k)] = report.mean_recall.at(k);
    }
    json aggregate = {{"queries", report.per_query.size()},
                      {"ndcg", std::move(mean_ndcg)},
                      {"mrr", report.mean_mrr},
                      {"recall", std::move(mean_recall)},
                      {"missing_queries", report.missing_queries}};
    json doc = {{"config", std::move(config)},
                {"per_query", std::move(per_query)},
                {"aggregate", std::move(aggregate)}};
    write_file(path, doc.dump(2) + "\n");
}

void write_answer_report_json(const AnswerReport& report, const std::string& path) {
    json per_query = json::array();
    for (const auto& row : report.per_query) {
        per_query.push_back({{"query_id", row.query_id},
                             {"expert_id", row.expert_id},
                             {"exact_match", row.exact_match},
                             {"token_f1", row.token_f1}});
    }
    json doc = {{"per_query", std::move(per_query)},
                {"aggregate",
                 {{"queries", report.per_query.size()},
                  {"exact_match", report.mean_exact_match},
                  {"token_f1", report.mean_token_f1}}}};
    write_file(path, doc.dump(2) + "\n");
}

std::string format_ranking_report(const RankingReport& report) {
    std::size_t id_width = 5;  // "query"
    for (const auto& scores : report.per_query) {
        id_width = std::max(id_width, scores.query_id.size() + (scores.in_run ? 0 : 1));
    }

    std::vector<std::string> headers;
    for (std::size_t k : report.options.ks) headers.push_back("ndcg@" + std::to_string(k));
    headers.push_back("mrr");
    for (std::size_t k : report.options.ks) headers.push_back("recall@" + std::to_string(k));

    std::string out;
    auto pad = [&](const std::string& cell, std::size_t width) {
        out += cell;
        out.append(width > cell.size() ? width - cell.size() : 0, ' ');
    };
    auto cell = [](double value) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.5f", value);
        return std::string(buf);
    };

    pad("query", id_width + 2);
    for (const auto& h : headers) pad(h, 11);
    out += '\n';

    auto row = [&](const std::string& label, const std::map<std::size_t, double>& ndcg,
                   double mrr_value, const std::map<std::size_t, double>& recall) {
        pad(label, id_width + 2);
        for (std::size_t k : report.options.ks) pad(cell(ndcg.at(k)), 11);
        pad(cell(mrr_value), 11);
        for (std::size_t k : report.options.ks) pad(cell(recall.at(k)), 11);
        out += '\n';
    };

    for (const auto& scores : report.per_query) {
        row(scores.in_run ? scores.query_id : scores.query_id + "*", scores.ndcg, scores.mrr,
            scores.recall);
    }
    row("mean", report.mean_ndcg, report.mean_mrr, report.mean_recall);

    out += "\nstrategy=" + report.strategy + " gain=" + to_string(report.options.gain) +
           " relevant=grade>=1";
    if (!report.missing_queries.empty()) {
        out += "\n* query graded in qrels but missing from the run (scored 0)";
    }
    out += '\n';
    return out;
}

} // namespace expertsim
