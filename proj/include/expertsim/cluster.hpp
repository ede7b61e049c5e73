#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "expertsim/hashing.hpp"

namespace expertsim {

// Disjoint partition of a corpus. Every assigned doc_id maps to exactly one
// cluster; docs dropped by pruning move to `unassigned` but stay retrievable.
struct ClusterAssignment {
    std::map<std::string, std::string> doc_to_cluster;
    std::map<std::string, std::vector<std::string>> clusters;  // id -> sorted doc_ids
    std::vector<std::string> unassigned;

    std::size_t retained() const { return clusters.size(); }
    void assign(const std::string& doc_id, const std::string& cluster_id);
    void check_disjoint() const;  // throws RuntimeError on violation
};

struct ClusterMeta {
    std::string cluster_id;
    std::size_t size = 0;
    HashVector centroid;
    std::vector<std::pair<std::string, double>> top_terms;
};

struct KmeansParams {
    std::size_t k = 2000;
    uint64_t seed = 0;
    std::size_t max_iters = 50;
    double tol = 1e-4;
    std::size_t restarts = 5;
    std::size_t jobs = 1;
};

struct KmeansResult {
    ClusterAssignment assignment;
    std::vector<ClusterMeta> meta;          // one per cluster, id order
    std::vector<double> sse_history;        // per-iteration SSE of the winning restart
    double sse = 0.0;
};

// Lloyd iterations from k-means++ initialization; empty clusters repaired by
// reseeding with the point farthest from its centroid; best of `restarts`
// runs by final SSE. Deterministic given inputs and seed.
KmeansResult kmeans(const std::vector<std::pair<std::string, HashVector>>& vectors,
                    const KmeansParams& params);

// Topic-label clustering: documents sharing any semicolon-separated label are
// merged transitively. Cluster id = lexicographically smallest member label.
// Order-independent. Throws ValidationError listing docs without labels.
ClusterAssignment topic_union_find(const std::vector<Document>& docs);

// Drop clusters with size < min_size or > max_size. Their documents become
// unassigned. Throws RuntimeError when nothing survives.
ClusterAssignment prune_clusters(const ClusterAssignment& assignment, std::size_t min_size,
                                 std::size_t max_size);

// Collection-wide term counts backing the tf * icf summaries.
struct CollectionTermStats {
    std::unordered_map<std::string, uint64_t> counts;
    uint64_t total = 0;

    void add(const TokenSequence& tokens);
};

// Top-n terms of a cluster by within-cluster term frequency times inverse
// collection frequency, icf(t) = ln(1 + total_tokens / cf(t)). Ties break
// lexicographically.
std::vector<std::pair<std::string, double>> summarize_cluster(
    const std::vector<TokenSequence>& cluster_docs, const CollectionTermStats& stats,
    std::size_t n);

// TSV "doc_id<TAB>cluster_id", sorted by doc_id.
void write_assignment_tsv(const ClusterAssignment& assignment, const std::string& path);
ClusterAssignment load_assignment_tsv(const std::string& path);

// JSONL per cluster: {cluster_id, size, top_terms: [[term, weight], ...]}.
void write_cluster_meta_jsonl(const std::vector<ClusterMeta>& meta, const std::string& path);

} // namespace expertsim
