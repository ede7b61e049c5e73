#include "expertsim/collection.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "expertsim/errors.hpp"
#include "expertsim/metrics.hpp"

namespace expertsim {

using json = nlohmann::ordered_json;

namespace {

// Shortest round-trip formatting for run scores, stable across reruns.
std::string format_score(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void write_tuples_jsonl(const std::vector<TrainingTuple>& tuples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& t : tuples) {
        json meta;
        meta["confidence"] = t.metadata.confidence;
        meta["pseudo_perplexity"] = t.metadata.pseudo_perplexity;
        meta["retrieval_scores"] = t.metadata.retrieval_scores;
        meta["context_doc_ids"] = t.metadata.context_doc_ids;
        meta["generator_id"] = t.metadata.generator_id;
        json rec;
        rec["query_id"] = t.query_id;
        rec["expert_id"] = t.expert_id;
        rec["answer"] = t.answer;
        rec["metadata"] = meta;
        out << rec.dump() << '\n';
    }
}

std::vector<TrainingTuple> load_tuples_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::vector<TrainingTuple> tuples;
    std::string line;
    std::size_t lineno = 0;
    std::set<std::pair<std::string, std::string>> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json rec = json::parse(line);
            TrainingTuple t;
            t.query_id = rec.at("query_id").get<std::string>();
            t.expert_id = rec.at("expert_id").get<std::string>();
            t.answer = rec.at("answer").get<std::string>();
            const auto& meta = rec.at("metadata");
            t.metadata.confidence = meta.at("confidence").get<double>();
            t.metadata.pseudo_perplexity = meta.at("pseudo_perplexity").get<double>();
            t.metadata.retrieval_scores = meta.at("retrieval_scores").get<std::vector<double>>();
            t.metadata.context_doc_ids =
                meta.at("context_doc_ids").get<std::vector<std::string>>();
            t.metadata.generator_id = meta.at("generator_id").get<std::string>();
            if (!seen.emplace(t.query_id, t.expert_id).second)
                throw ValidationError(path + ": duplicate tuple " + t.query_id + "/" +
                                      t.expert_id);
            tuples.push_back(std::move(t));
        } catch (const json::exception& e) {
            throw ParseError(path + ": " + e.what(), lineno);
        }
    }
    return tuples;
}

Qrels derive_qrels(const std::vector<QaPair>& test_queries,
                   const std::vector<std::string>& expert_ids,
                   const ClusterAssignment& assignment, const AnswerTable& answers,
                   const GradingThresholds& thresholds) {
    if (expert_ids.empty()) throw ValidationError("derive_qrels: no experts");
    Qrels qrels;
    for (const auto& qa : test_queries) {
        if (qa.gold_answers.empty())
            throw ValidationError("derive_qrels: query without gold answers: " + qa.query_id);
        auto query_answers = answers.find(qa.query_id);
        auto& grades = qrels.grades[qa.query_id];
        for (const auto& expert_id : expert_ids) {
            if (query_answers == answers.end() ||
                query_answers->second.find(expert_id) == query_answers->second.end())
                throw ValidationError("derive_qrels: missing response for " + qa.query_id +
                                      "/" + expert_id);
            const std::string& answer = query_answers->second.at(expert_id);
            double f1 = answer_metrics(answer, qa.gold_answers).token_f1;

            int grade = 0;
            if (f1 >= thresholds.grade2_f1) {
                grade = 2;
            } else {
                bool cluster_relevant = false;
                auto cluster = assignment.clusters.find(expert_id);
                if (cluster != assignment.clusters.end()) {
                    for (const auto& doc_id : qa.relevant_doc_ids) {
                        if (std::binary_search(cluster->second.begin(), cluster->second.end(),
                                               doc_id)) {
                            cluster_relevant = true;
                            break;
                        }
                    }
                }
                if (cluster_relevant || f1 >= thresholds.grade1_f1) grade = 1;
            }
            grades[expert_id] = grade;
        }
    }
    return qrels;
}

void write_qrels_trec(const Qrels& qrels, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& [query_id, grades] : qrels.grades)
        for (const auto& [expert_id, grade] : grades)
            out << query_id << " 0 " << expert_id << " " << grade << '\n';
}

Qrels load_qrels_trec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string query_id, zero, expert_id;
        int grade = 0;
        if (!(fields >> query_id >> zero >> expert_id >> grade) || zero != "0")
            throw ParseError(path + ": expected `query_id 0 expert_id grade`", lineno);
        if (grade < 0 || grade > 2)
            throw ParseError(path + ": grade out of range: " + std::to_string(grade), lineno);
        auto [it, inserted] = qrels.grades[query_id].emplace(expert_id, grade);
        (void)it;
        if (!inserted)
            throw ValidationError(path + ": duplicate qrels pair " + query_id + "/" + expert_id);
    }
    return qrels;
}

void write_run_trec(const TrecRun& run, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& [query_id, ranking] : run.rankings) {
        std::set<std::string> seen;
        for (std::size_t i = 0; i < ranking.size(); ++i) {
            if (!seen.insert(ranking[i].expert_id).second)
                throw ValidationError("run: duplicate expert " + ranking[i].expert_id +
                                      " for query " + query_id);
            out << query_id << " Q0 " << ranking[i].expert_id << " " << (i + 1) << " "
                << format_score(ranking[i].score) << " " << run.tag << '\n';
        }
    }
}

TrecRun load_run_trec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    TrecRun run;
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::set<std::string>> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string query_id, q0, expert_id, tag;
        std::size_t rank = 0;
        double score = 0.0;
        if (!(fields >> query_id >> q0 >> expert_id >> rank >> score >> tag) || q0 != "Q0")
            throw ParseError(path + ": expected `query_id Q0 expert_id rank score tag`", lineno);
        auto& ranking = run.rankings[query_id];
        if (rank != ranking.size() + 1)
            throw ValidationError(path + ": non-contiguous rank " + std::to_string(rank) +
                                  " for query " + query_id);
        if (!seen[query_id].insert(expert_id).second)
            throw ValidationError(path + ": duplicate run pair " + query_id + "/" + expert_id);
        ranking.push_back({expert_id, score});
        run.tag = tag;
    }
    return run;
}

void write_gold_answers_jsonl(const GoldAnswerSet& golds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& [query_id, answers] : golds) {
        json rec;
        rec["query_id"] = query_id;
        rec["gold_answers"] = answers;
        out << rec.dump() << '\n';
    }
}

GoldAnswerSet load_gold_answers_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    GoldAnswerSet golds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json rec = json::parse(line);
            auto query_id = rec.at("query_id").get<std::string>();
            if (golds.count(query_id))
                throw ValidationError(path + ": duplicate gold answers for " + query_id);
            golds[query_id] = rec.at("gold_answers").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw ParseError(path + ": " + e.what(), lineno);
        }
    }
    return golds;
}

TrainingSetResult build_training_set(const std::vector<QaPair>& queries,
                                     const std::vector<ExpertProfile>& experts,
                                     const SimulateFn& simulate) {
    if (experts.empty()) throw ValidationError("build_training_set: no experts after pruning");

    std::vector<const QaPair*> ordered;
    ordered.reserve(queries.size());
    for (const auto& q : queries) ordered.push_back(&q);
    std::sort(ordered.begin(), ordered.end(),
              [](const QaPair* a, const QaPair* b) { return a->query_id < b->query_id; });
    std::vector<const ExpertProfile*> expert_order;
    expert_order.reserve(experts.size());
    for (const auto& e : experts) expert_order.push_back(&e);
    std::sort(expert_order.begin(), expert_order.end(),
              [](const ExpertProfile* a, const ExpertProfile* b) {
                  return a->expert_id < b->expert_id;
              });

    TrainingSetResult result;
    result.tuples.reserve(ordered.size() * expert_order.size());
    for (const QaPair* qa : ordered) {
        for (const ExpertProfile* expert : expert_order) {
            try {
                ExpertResponse response = simulate(*qa, *expert);
                result.tuples.push_back(
                    {qa->query_id, expert->expert_id, response.answer, response.metadata});
            } catch (const std::exception& e) {
                result.failures.push_back(qa->query_id + "/" + expert->expert_id + ": " +
                                          e.what());
            }
        }
    }
    return result;
}

} // namespace expertsim
