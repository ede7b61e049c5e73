#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "expertsim/cluster.hpp"
#include "expertsim/corpus.hpp"

namespace expertsim {

constexpr double kBm25K1 = 1.2;
constexpr double kBm25B = 0.75;

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
    std::string cluster_id;  // empty when the doc is unassigned or unknown
};

// BM25 inverted index over a fixed corpus. Immutable once built; safe for
// concurrent readers.
class InvertedIndex {
public:
    // Throws ValidationError on an empty corpus. Tokenization is parallel
    // over fixed chunks; postings are merged in chunk order, so the result is
    // identical for every `jobs` value.
    static InvertedIndex build(const DocumentStore& store, std::size_t jobs = 1);

    std::size_t num_docs() const { return doc_ids_.size(); }
    double avg_doc_length() const { return avgdl_; }
    std::size_t num_terms() const { return postings_.size(); }
    std::size_t num_postings() const { return num_postings_; }

    // Top-`depth` documents by BM25 (k1, b above, idf = ln(1 + (N - df + 0.5)
    // / (df + 0.5))). Repeated query terms multiply their contribution.
    // Descending score, ties by ascending doc_id. Only matching documents are
    // returned. With a cluster filter, only that cluster's documents are
    // scored and each hit carries its cluster_id.
    std::vector<ScoredDoc> search(const TokenSequence& query, std::size_t depth) const;
    std::vector<ScoredDoc> search(const TokenSequence& query, std::size_t depth,
                                  const ClusterAssignment& assignment,
                                  const std::string& cluster_filter) const;

    // Versioned JSONL postings dump; round-trips losslessly.
    void save(const std::string& path) const;
    static InvertedIndex load(const std::string& path);

private:
    std::vector<std::string> doc_ids_;
    std::unordered_map<std::string, uint32_t> doc_index_;
    std::vector<uint32_t> doc_len_;
    std::map<std::string, std::vector<std::pair<uint32_t, uint32_t>>> postings_;
    double avgdl_ = 0.0;
    std::size_t num_postings_ = 0;

    std::vector<ScoredDoc> search_impl(const TokenSequence& query, std::size_t depth,
                                       const std::vector<char>* allowed,
                                       const std::string& cluster_id) const;
};

struct RoutingConfig {
    std::size_t k = 100;      // global retrieval depth
    std::size_t c = 5;        // per-expert context size
    uint64_t rng_seed = 0;
    bool strict_topk = false; // disable the step-3 fill
};

struct RoutedDoc {
    std::string doc_id;
    double score = 0.0;        // global BM25 score; 0 for random fills
    std::string source;        // "topk" | "fill" | "random"
};

// expert_id (== cluster_id) -> ordered context documents
using RoutingResult = std::map<std::string, std::vector<RoutedDoc>>;

// Four-step routing: (1) global top-k; (2) hits mapped to their clusters;
// (3) each represented cluster keeps its top-min(c, hits) by global score,
// filled to c via cluster-filtered search unless strict_topk; (4) every
// retained cluster absent from the top-k receives one uniformly random
// member, seeded by (cfg.rng_seed, query_id). Every retained expert ends up
// with 1..c documents.
RoutingResult route(const InvertedIndex& index, const ClusterAssignment& assignment,
                    const TokenSequence& query, const std::string& query_id,
                    const RoutingConfig& cfg);

// A/B alternative: one index per retained cluster, searched directly with
// depth c; clusters with no hits fall back to the step-4 random draw.
class PerClusterIndex {
public:
    static PerClusterIndex build(const DocumentStore& store, const ClusterAssignment& assignment,
                                 std::size_t jobs = 1);
    std::size_t num_postings() const;
    const std::map<std::string, InvertedIndex>& indices() const { return indices_; }

private:
    std::map<std::string, InvertedIndex> indices_;
};

RoutingResult route_per_cluster(const PerClusterIndex& index, const ClusterAssignment& assignment,
                                const TokenSequence& query, const std::string& query_id,
                                const RoutingConfig& cfg);

// Debug trace: one JSONL record per (expert, source) group, experts in
// ascending order, sources in topk < fill < random order.
void append_routing_trace(std::ostream& out, const std::string& query_id,
                          const RoutingResult& routing);

} // namespace expertsim
