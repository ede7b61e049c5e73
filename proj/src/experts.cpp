#include "expertsim/experts.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "expertsim/errors.hpp"
#include "expertsim/metrics.hpp"
#include "expertsim/util.hpp"

// httplib is header-only; keep it out of our headers.
#include <httplib.h>

namespace expertsim {

using json = nlohmann::ordered_json;

namespace {

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> sentences;
    std::string current;
    for (char c : text) {
        if (c == '.' || c == '!' || c == '?') {
            if (!current.empty()) sentences.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) sentences.push_back(current);
    return sentences;
}

std::string join_tokens(const TokenSequence& tokens, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

} // namespace

ExtractiveResult extractive_generate(const TokenSequence& query,
                                     const std::vector<ContextDoc>& context,
                                     std::size_t max_span_tokens) {
    ExtractiveResult best;  // span_score 0, empty answer
    if (query.empty() || context.empty() || max_span_tokens == 0) return best;

    std::map<std::string, std::size_t> query_counts;
    for (const auto& t : query) ++query_counts[t];
    const double qlen = static_cast<double>(query.size());

    double best_weighted = 0.0;
    for (const auto& doc : context) {
        const double weight = doc.retrieval_score;
        for (const auto& sentence : split_sentences(doc.text)) {
            TokenSequence tokens = tokenize(sentence);
            if (tokens.empty()) continue;

            // Full sentence first, then spans by (start, end): the first
            // strictly-better candidate wins, which realizes the
            // earliest-document / earliest-offset tie rule.
            auto consider = [&](std::size_t begin, std::size_t end, std::size_t overlap) {
                double f1 = overlap == 0
                                ? 0.0
                                : 2.0 * static_cast<double>(overlap) /
                                      (static_cast<double>(end - begin) + qlen);
                double weighted = f1 * weight;
                if (weighted > best_weighted) {
                    best_weighted = weighted;
                    best.span_score = f1;
                    best.answer = join_tokens(tokens, begin, end);
                }
            };

            // Sliding start with incremental overlap counting.
            std::map<std::string, std::size_t> remaining = query_counts;
            std::size_t full_overlap = 0;
            for (const auto& t : tokens) {
                auto it = remaining.find(t);
                if (it != remaining.end() && it->second > 0) {
                    --it->second;
                    ++full_overlap;
                }
            }
            consider(0, tokens.size(), full_overlap);

            for (std::size_t start = 0; start < tokens.size(); ++start) {
                remaining = query_counts;
                std::size_t overlap = 0;
                std::size_t limit = std::min(tokens.size(), start + max_span_tokens);
                for (std::size_t end = start; end < limit; ++end) {
                    auto it = remaining.find(tokens[end]);
                    if (it != remaining.end() && it->second > 0) {
                        --it->second;
                        ++overlap;
                    }
                    consider(start, end + 1, overlap);
                }
            }
        }
    }
    if (best_weighted <= 0.0) return ExtractiveResult{};
    return best;
}

ResponseMetadata compute_metadata(const std::vector<double>& retrieval_scores,
                                  double span_score) {
    ResponseMetadata meta;
    meta.confidence = std::clamp(span_score, 0.0, 1.0);
    meta.pseudo_perplexity = std::exp(1.0 - meta.confidence);
    meta.retrieval_scores = retrieval_scores;
    return meta;
}

ExpertResponse ExtractiveBackend::generate(const std::string& question,
                                           const std::vector<ContextDoc>& context) const {
    auto result = extractive_generate(tokenize(question), context, max_span_tokens_);
    ExpertResponse response;
    response.answer = result.answer;
    std::vector<double> scores;
    scores.reserve(context.size());
    for (const auto& doc : context) scores.push_back(doc.retrieval_score);
    response.metadata = compute_metadata(scores, result.span_score);
    response.metadata.generator_id = id();
    for (const auto& doc : context) response.metadata.context_doc_ids.push_back(doc.doc_id);
    return response;
}

ExternalBackend::ExternalBackend(Options options) : options_(std::move(options)) {
    // Split endpoint into host part (scheme://host[:port]) and request path.
    const std::string& url = options_.endpoint;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ValidationError("external backend: endpoint must include a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        host_ = url;
        path_ = "/";
    } else {
        host_ = url.substr(0, path_start);
        path_ = url.substr(path_start);
    }
}

ExpertResponse ExternalBackend::generate(const std::string& question,
                                         const std::vector<ContextDoc>& context) const {
    json request;
    request["question"] = question;
    json ctx = json::array();
    for (const auto& doc : context) ctx.push_back(doc.text);
    request["context"] = ctx;
    request["instructions"] = options_.instructions;
    const std::string body = request.dump();

    std::string response_body;
    std::string last_error;
    bool ok = false;
    for (int attempt = 0; attempt <= options_.max_retries && !ok; ++attempt) {
        httplib::Client client(host_);
        client.set_connection_timeout(0, options_.timeout_ms * 1000);
        client.set_read_timeout(0, options_.timeout_ms * 1000);
        httplib::Headers headers;
        if (!options_.auth_token.empty())
            headers.emplace("Authorization", "Bearer " + options_.auth_token);
        auto res = client.Post(path_, headers, body, "application/json");
        if (!res) {
            last_error = "connection failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        response_body = res->body;
        ok = true;
    }
    if (!ok)
        throw TransportError("external backend " + options_.endpoint + ": " + last_error);

    std::string answer;
    std::vector<double> logprobs;
    try {
        json parsed = json::parse(response_body);
        answer = parsed.at("answer").get<std::string>();
        if (parsed.contains("token_logprobs"))
            logprobs = parsed["token_logprobs"].get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw TransportError("external backend " + options_.endpoint +
                             ": malformed response: " + e.what());
    }

    // Groundedness: the best token-F1 any context span achieves against the
    // answer, via the extractive machinery with unit weights.
    double grounding = 0.0;
    if (!answer.empty() && !context.empty()) {
        std::vector<ContextDoc> unit = context;
        for (auto& doc : unit) doc.retrieval_score = 1.0;
        grounding = extractive_generate(tokenize(answer), unit).span_score;
    }

    ExpertResponse response;
    response.answer = answer;
    std::vector<double> scores;
    for (const auto& doc : context) scores.push_back(doc.retrieval_score);
    response.metadata = compute_metadata(scores, grounding);
    if (!logprobs.empty()) {
        double mean = std::accumulate(logprobs.begin(), logprobs.end(), 0.0) /
                      static_cast<double>(logprobs.size());
        response.metadata.pseudo_perplexity = std::exp(-mean);
    }
    response.metadata.generator_id = id();
    for (const auto& doc : context) response.metadata.context_doc_ids.push_back(doc.doc_id);
    return response;
}

ExpertResponse answer_query(const ExpertProfile& expert, const std::string& question,
                            const std::vector<RoutedDoc>& context, const DocumentStore& store,
                            const ClusterAssignment& assignment, const GeneratorBackend& backend) {
    if (context.empty())
        throw ValidationError("answer_query: empty context for expert " + expert.expert_id);

    std::vector<ContextDoc> docs;
    docs.reserve(context.size());
    for (const auto& routed : context) {
        auto it = assignment.doc_to_cluster.find(routed.doc_id);
        if (it == assignment.doc_to_cluster.end() || it->second != expert.cluster_id)
            throw ContractViolation("answer_query: document " + routed.doc_id +
                                    " is not in cluster of expert " + expert.expert_id);
        const Document* doc = store.find(routed.doc_id);
        if (!doc) throw ValidationError("answer_query: unknown document " + routed.doc_id);
        docs.push_back({doc->doc_id, doc->text, routed.score});
    }
    return backend.generate(question, docs);
}

FilterOutcome filter_leaky_queries(const std::vector<QaPair>& queries,
                                   const GeneratorBackend& base_backend) {
    FilterOutcome outcome;
    for (const auto& qa : queries) {
        std::string answer;
        bool undetermined = false;
        try {
            answer = base_backend.generate(qa.question, {}).answer;
        } catch (const TransportError&) {
            undetermined = true;
        }
        if (undetermined) {
            outcome.undetermined_query_ids.push_back(qa.query_id);
            outcome.kept.push_back(qa);
            continue;
        }
        std::string norm = normalize_answer(answer);
        bool leak = false;
        if (!norm.empty()) {
            for (const auto& gold : qa.gold_answers)
                if (normalize_answer(gold) == norm) {
                    leak = true;
                    break;
                }
        }
        if (leak)
            outcome.removed.push_back({qa, "base-model leak"});
        else
            outcome.kept.push_back(qa);
    }
    return outcome;
}

void append_response_log(std::ostream& out, const std::string& query_id,
                         const std::string& expert_id, const ExpertResponse& response) {
    json rec;
    rec["query_id"] = query_id;
    rec["expert_id"] = expert_id;
    rec["answer"] = response.answer;
    rec["confidence"] = response.metadata.confidence;
    rec["pseudo_perplexity"] = response.metadata.pseudo_perplexity;
    rec["context_doc_ids"] = response.metadata.context_doc_ids;
    out << rec.dump() << '\n';
}

} // namespace expertsim
