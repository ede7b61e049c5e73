#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "expertsim/cluster.hpp"
#include "expertsim/corpus.hpp"
#include "expertsim/index.hpp"

namespace expertsim {

// One simulated expert per retained cluster.
struct ExpertProfile {
    std::string expert_id;    // equals cluster_id
    std::string cluster_id;
    std::string generator_id; // "extractive" | "external"
    std::size_t context_size = 5;
};

struct ResponseMetadata {
    double confidence = 0.0;        // in [0, 1]
    double pseudo_perplexity = 1.0; // > 0
    std::vector<double> retrieval_scores;
    std::vector<std::string> context_doc_ids;
    std::string generator_id;
};

struct ExpertResponse {
    std::string answer;
    ResponseMetadata metadata;
};

struct ContextDoc {
    std::string doc_id;
    std::string text;
    double retrieval_score = 0.0;
};

struct ExtractiveResult {
    std::string answer;     // space-joined span tokens; empty when nothing scores
    double span_score = 0.0; // raw token-F1 of the chosen span, in [0, 1]
};

// Extractive span selection. Each context document is split into sentences on
// . ! ?; candidates are every full sentence plus every contiguous token span
// of length <= max_span_tokens. Candidates are ranked by token-F1 against the
// query, weighted by the containing document's retrieval score; the argmax
// wins. Enumeration order (document, then sentence, then full sentence before
// spans by start/end) settles ties, i.e. earliest document then earliest
// offset. A best weighted score of zero yields ("", 0).
ExtractiveResult extractive_generate(const TokenSequence& query,
                                     const std::vector<ContextDoc>& context,
                                     std::size_t max_span_tokens = 8);

// confidence = span_score clamped to [0, 1]; pseudo_perplexity =
// exp(1 - confidence); retrieval scores copied verbatim.
ResponseMetadata compute_metadata(const std::vector<double>& retrieval_scores, double span_score);

class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;
    virtual std::string id() const = 0;
    // `context` may be empty (base-model probing for the leakage filter).
    virtual ExpertResponse generate(const std::string& question,
                                    const std::vector<ContextDoc>& context) const = 0;
};

class ExtractiveBackend : public GeneratorBackend {
public:
    explicit ExtractiveBackend(std::size_t max_span_tokens = 8)
        : max_span_tokens_(max_span_tokens) {}
    std::string id() const override { return "extractive"; }
    ExpertResponse generate(const std::string& question,
                            const std::vector<ContextDoc>& context) const override;

private:
    std::size_t max_span_tokens_;
};

// HTTP generator. POSTs JSON {question, context: [string], instructions} and
// expects {answer, token_logprobs?}. When token_logprobs are present,
// pseudo_perplexity becomes exp(-mean(logprob)); confidence is always the
// groundedness of the answer in the provided context (best-span token-F1).
// Connection/timeout/protocol failures raise TransportError after retries.
class ExternalBackend : public GeneratorBackend {
public:
    struct Options {
        std::string endpoint;  // e.g. http://host:port/generate
        std::string auth_token;
        int timeout_ms = 10000;
        int max_retries = 2;
        std::string instructions =
            "Answer strictly and only from the provided context documents. "
            "If the context does not contain the answer, reply with an empty string.";
    };

    explicit ExternalBackend(Options options);
    std::string id() const override { return "external"; }
    ExpertResponse generate(const std::string& question,
                            const std::vector<ContextDoc>& context) const override;

private:
    Options options_;
    std::string host_;
    std::string path_;
};

// Validates that the routed context belongs to the expert's cluster (throws
// ContractViolation otherwise), resolves document texts, and runs the
// backend. Context must be non-empty.
ExpertResponse answer_query(const ExpertProfile& expert, const std::string& question,
                            const std::vector<RoutedDoc>& context, const DocumentStore& store,
                            const ClusterAssignment& assignment, const GeneratorBackend& backend);

struct FilterOutcome {
    struct Removed {
        QaPair qa;
        std::string reason;
    };
    std::vector<QaPair> kept;
    std::vector<Removed> removed;
    std::vector<std::string> undetermined_query_ids;  // transport failures; kept and flagged
};

// Probes the base backend with an empty context; a query is removed when the
// no-context answer exact-matches (after normalization) any gold answer. An
// empty answer never counts as a leak. Transport errors mark the query
// undetermined: it is kept and flagged rather than dropped.
FilterOutcome filter_leaky_queries(const std::vector<QaPair>& queries,
                                   const GeneratorBackend& base_backend);

// JSONL: {query_id, expert_id, answer, confidence, pseudo_perplexity,
// context_doc_ids}.
void append_response_log(std::ostream& out, const std::string& query_id,
                         const std::string& expert_id, const ExpertResponse& response);

} // namespace expertsim
