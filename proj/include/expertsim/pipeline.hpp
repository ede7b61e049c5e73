#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "expertsim/agents.hpp"
#include "expertsim/collection.hpp"
#include "expertsim/eval.hpp"
#include "expertsim/synth.hpp"

namespace expertsim {

// Declarative description of a full pipeline run. Loaded from a JSON config
// file (a manifest written by a previous run also works: its embedded
// "config" object is picked up), then optionally overridden by CLI flags.
struct PipelineConfig {
    // inputs / outputs
    std::string corpus_path;
    std::string corpus_format = "jsonl";  // "jsonl" | "tsv"
    std::string qa_path;
    std::string out_dir = "out";

    // vectorizer + clustering
    std::vector<std::string> stopwords;
    std::size_t dim = 1000;
    uint64_t hash_seed = 0;
    std::size_t K = 2000;
    bool topic_mode = false;
    std::size_t min_cluster_size = 1;
    std::size_t max_cluster_size = 0;  // 0 = unlimited
    std::size_t kmeans_max_iters = 50;
    double kmeans_tol = 1e-4;
    std::size_t kmeans_restarts = 5;
    std::size_t top_terms = 10;

    // retrieval + routing
    std::size_t k = 100;
    std::size_t c = 5;
    bool strict_topk = false;
    bool per_cluster_index = false;  // A/B: route against per-cluster indices

    // expert backend
    std::string backend = "extractive";  // "extractive" | "external"
    std::string endpoint;                // env EXPERTSIM_ENDPOINT when empty
    std::string auth_token;              // env EXPERTSIM_TOKEN when empty
    int timeout_ms = 10000;
    int max_retries = 2;
    std::size_t max_span_tokens = 8;
    bool leakage_filter = true;

    // grading
    GradingThresholds thresholds;

    // benchmarking + evaluation
    std::vector<std::string> strategies = {"random", "round_robin", "centroid", "ucb",
                                           "oracle"};
    std::vector<std::size_t> budgets = {0};
    double lambda = 0.5;
    std::vector<uint64_t> bench_seeds = {0};
    std::vector<std::size_t> eval_ks = {5, 10};
    std::string gain = "exponential";

    // global
    uint64_t seed = 0;  // routing + any other pipeline-level randomness
    std::size_t jobs = 1;
};

// Strict parse: unknown keys are validation errors so typos cannot silently
// fall back to defaults.
PipelineConfig load_pipeline_config(const std::string& path);

// Range checks shared by every command (paths are checked by the commands
// that read them).
void validate_config(const PipelineConfig& config);

// Artifact paths under config.out_dir.
struct PipelinePaths {
    std::string assignment, cluster_meta, centroids, index, responses, tuples, qrels,
        gold_answers, routing_trace, filtered, manifest, runs_dir, reports_dir, beliefs_dir,
        comparison_json, comparison_txt;
};
PipelinePaths pipeline_paths(const std::string& out_dir);

// tokenize -> hash_vectorize -> kmeans (or topic_union_find) -> prune ->
// summarize. Writes assignment.tsv, cluster_meta.jsonl, centroids.jsonl and
// updates the manifest.
struct ClusterStats {
    std::size_t num_docs = 0;
    std::size_t vectorized = 0;  // docs with at least one token
    std::size_t retained_clusters = 0;
    std::size_t unassigned = 0;
    double sse = 0.0;  // 0 in topic mode
};
ClusterStats cmd_cluster(const PipelineConfig& config);

// Builds and saves the global BM25 index; with per_cluster_index also builds
// the per-cluster variant and records the postings A/B in the manifest.
struct IndexStats {
    std::size_t num_docs = 0;
    std::size_t num_terms = 0;
    std::size_t num_postings = 0;
    std::size_t per_cluster_postings = 0;  // 0 unless per_cluster_index
};
IndexStats cmd_index(const PipelineConfig& config);

// leakage filter -> route -> answer_query per (query, expert) -> exports:
// responses.jsonl, tuples.jsonl, qrels.trec (test split), gold_answers.jsonl,
// routing_trace.jsonl, filtered_queries.jsonl. Undetermined leakage probes
// are kept but must surface as a nonzero exit; the caller checks
// stats.undetermined.
struct SimulateStats {
    std::size_t queries_total = 0;
    std::size_t queries_kept = 0;
    std::size_t removed = 0;
    std::size_t undetermined = 0;
    std::size_t experts = 0;
    std::size_t tuples = 0;
    std::vector<std::string> failures;  // per-pair failures, logged not fatal
};
SimulateStats cmd_simulate(const PipelineConfig& config);

// prepare + rank_experts per (strategy, budget, seed) over the test split;
// writes runs/<tag>.trec, reports/<tag>.json, beliefs/<tag>.json and a
// comparison table (means and standard deviations over seeds).
struct BenchCell {
    std::string strategy;
    std::size_t budget = 0;
    std::map<std::size_t, double> mean_ndcg, std_ndcg;  // k -> over-seed stats
    double mean_mrr = 0.0, std_mrr = 0.0;
    std::size_t num_seeds = 0;
};
struct BenchStats {
    std::size_t runs = 0;
    std::vector<BenchCell> cells;  // strategy-major, budget-minor order
};
BenchStats cmd_bench(const PipelineConfig& config);

// Scores an existing run against qrels; writes <run stem>.eval.json next to
// the run (or under reports/ when the run lives elsewhere) and returns the
// report. When tuples + golds are both given, also writes an answer report
// scoring each query's rank-1 expert.
RankingReport cmd_eval(const PipelineConfig& config, const std::string& run_path,
                       const std::string& qrels_path, const std::string& tuples_path = "",
                       const std::string& golds_path = "");

// Bundled generator: writes corpus.jsonl + qa.jsonl + manifest to out_dir.
void cmd_synth(const SynthParams& params, const std::string& out_dir);

} // namespace expertsim
