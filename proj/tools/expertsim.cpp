// expertsim command-line driver: cluster / index / simulate / bench / eval /
// synth / import-quasart subcommands over a JSON config with flag overrides
// (flags win). Exit codes: 0 success, 1 validation, 2 runtime, 3 transport.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "expertsim/errors.hpp"
#include "expertsim/eval.hpp"
#include "expertsim/pipeline.hpp"
#include "expertsim/util.hpp"

namespace {

using expertsim::PipelineConfig;

// The config file must be loaded before CLI11 applies flag overrides, so the
// --config value is pre-scanned from argv; CLI11 re-consumes it afterwards.
std::string prescan_config_path(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) return argv[i + 1];
        const std::string prefix = "--config=";
        if (arg.rfind(prefix, 0) == 0) return arg.substr(prefix.size());
    }
    return "";
}

void add_common_options(CLI::App* sub, PipelineConfig& cfg, std::string& config_path) {
    sub->add_option("--config", config_path, "JSON config file (flags override it)");
    sub->add_option("--corpus", cfg.corpus_path, "corpus file");
    sub->add_option("--corpus-format", cfg.corpus_format, "jsonl | tsv");
    sub->add_option("--qa", cfg.qa_path, "QA dataset (JSONL with splits)");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--stopwords", cfg.stopwords, "vectorizer stopwords");
    sub->add_option("--dim", cfg.dim, "hashing vectorizer dimension");
    sub->add_option("--hash-seed", cfg.hash_seed, "vectorizer hash seed");
    sub->add_option("--K,--clusters", cfg.K, "number of k-means clusters");
    sub->add_flag("--topic-mode,!--no-topic-mode", cfg.topic_mode,
                  "cluster by topic labels instead of k-means");
    sub->add_option("--min-cluster-size", cfg.min_cluster_size, "prune smaller clusters");
    sub->add_option("--max-cluster-size", cfg.max_cluster_size,
                    "prune larger clusters (0 = unlimited)");
    sub->add_option("--kmeans-max-iters", cfg.kmeans_max_iters, "Lloyd iteration cap");
    sub->add_option("--kmeans-tol", cfg.kmeans_tol, "SSE improvement tolerance");
    sub->add_option("--kmeans-restarts", cfg.kmeans_restarts, "k-means++ restarts");
    sub->add_option("--top-terms", cfg.top_terms, "summary terms per cluster");
    sub->add_option("--k", cfg.k, "global retrieval depth");
    sub->add_option("--c", cfg.c, "per-expert context size");
    sub->add_flag("--strict-topk,!--no-strict-topk", cfg.strict_topk,
                  "disable the routing fill step");
    sub->add_flag("--per-cluster-index,!--no-per-cluster-index", cfg.per_cluster_index,
                  "route against per-cluster indices");
    sub->add_option("--backend", cfg.backend, "extractive | external");
    sub->add_option("--endpoint", cfg.endpoint, "external backend URL");
    sub->add_option("--auth-token", cfg.auth_token, "external backend bearer token");
    sub->add_option("--timeout-ms", cfg.timeout_ms, "external backend timeout");
    sub->add_option("--max-retries", cfg.max_retries, "external backend retries");
    sub->add_option("--max-span-tokens", cfg.max_span_tokens, "extractive span cap");
    sub->add_flag("--leakage-filter,!--no-leakage-filter", cfg.leakage_filter,
                  "probe and drop base-model leaks");
    sub->add_option("--grade2-f1", cfg.thresholds.grade2_f1, "grade-2 answer F1 threshold");
    sub->add_option("--grade1-f1", cfg.thresholds.grade1_f1, "grade-1 answer F1 threshold");
    sub->add_option("--strategies", cfg.strategies,
                    "random | round_robin | centroid | ucb | oracle");
    sub->add_option("--budgets", cfg.budgets, "preparatory budgets b");
    sub->add_option("--lambda", cfg.lambda, "utility vs centroid-prior blend");
    sub->add_option("--bench-seeds", cfg.bench_seeds, "per-run seeds");
    sub->add_option("--eval-ks", cfg.eval_ks, "nDCG/recall cutoffs");
    sub->add_option("--gain", cfg.gain, "exponential | linear");
    sub->add_option("--seed", cfg.seed, "pipeline seed (clustering, routing)");
    sub->add_option("--jobs", cfg.jobs, "worker threads");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"expertsim: cluster a corpus into experts, simulate retrieval-"
                 "constrained answering, and benchmark ranking agents"};
    app.set_version_flag("--version", "expertsim 1.0.0");
    app.require_subcommand(1);

    PipelineConfig cfg;
    std::string config_path = prescan_config_path(argc, argv);
    try {
        if (!config_path.empty()) cfg = expertsim::load_pipeline_config(config_path);
    } catch (const expertsim::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    app.add_option("--config", config_path, "JSON config file (flags override it)");

    int rc = 0;

    CLI::App* cluster = app.add_subcommand("cluster", "partition the corpus into experts");
    add_common_options(cluster, cfg, config_path);
    cluster->callback([&]() {
        expertsim::ClusterStats stats = expertsim::cmd_cluster(cfg);
        std::cout << "cluster: " << stats.num_docs << " docs -> " << stats.retained_clusters
                  << " clusters (" << stats.unassigned << " unassigned)";
        if (!cfg.topic_mode) std::cout << ", sse=" << stats.sse;
        std::cout << '\n';
    });

    CLI::App* index = app.add_subcommand("index", "build the global BM25 index");
    add_common_options(index, cfg, config_path);
    index->callback([&]() {
        expertsim::IndexStats stats = expertsim::cmd_index(cfg);
        std::cout << "index: " << stats.num_docs << " docs, " << stats.num_terms
                  << " terms, " << stats.num_postings << " postings";
        if (cfg.per_cluster_index)
            std::cout << " (per-cluster: " << stats.per_cluster_postings << ")";
        std::cout << '\n';
    });

    CLI::App* simulate =
        app.add_subcommand("simulate", "answer every (query, expert) pair and export "
                                       "the collection");
    add_common_options(simulate, cfg, config_path);
    simulate->callback([&]() {
        expertsim::SimulateStats stats = expertsim::cmd_simulate(cfg);
        std::cout << "simulate: kept " << stats.queries_kept << "/" << stats.queries_total
                  << " queries, " << stats.experts << " experts, " << stats.tuples
                  << " tuples (" << stats.failures.size() << " failures)\n";
        if (stats.undetermined > 0) {
            std::cerr << "simulate: " << stats.undetermined
                      << " leakage probes undetermined (transport failures); queries "
                         "kept but flagged\n";
            rc = 3;
        }
    });

    CLI::App* bench = app.add_subcommand("bench", "run ranking agents over the collection");
    add_common_options(bench, cfg, config_path);
    bench->callback([&]() {
        expertsim::cmd_bench(cfg);
        expertsim::PipelinePaths paths = expertsim::pipeline_paths(cfg.out_dir);
        std::cout << expertsim::read_file(paths.comparison_txt);
    });

    CLI::App* eval = app.add_subcommand("eval", "score a TREC run against qrels");
    add_common_options(eval, cfg, config_path);
    std::string run_path, qrels_path, tuples_path, golds_path;
    eval->add_option("--run", run_path, "TREC run file")->required();
    eval->add_option("--qrels", qrels_path, "TREC qrels file (default: <out>/qrels.trec)");
    eval->add_option("--tuples", tuples_path, "training tuples for answer scoring");
    eval->add_option("--golds", golds_path, "gold answers for answer scoring");
    eval->callback([&]() {
        if (qrels_path.empty())
            qrels_path = expertsim::pipeline_paths(cfg.out_dir).qrels;
        expertsim::RankingReport report =
            expertsim::cmd_eval(cfg, run_path, qrels_path, tuples_path, golds_path);
        std::cout << expertsim::format_ranking_report(report);
    });

    CLI::App* synth = app.add_subcommand("synth", "generate the bundled synthetic corpus");
    expertsim::SynthParams sp;
    std::string synth_out = "synth_data";
    synth->add_option("--out", synth_out, "data directory");
    synth->add_option("--topics", sp.num_topics, "planted topics (includes hubs)");
    synth->add_option("--docs-per-topic", sp.docs_per_topic, "documents per topic");
    synth->add_option("--queries", sp.num_queries, "answerable queries");
    synth->add_option("--hubs", sp.num_hubs, "hub topics holding the planted facts");
    synth->add_option("--filler-vocab", sp.filler_vocab, "per-topic filler vocabulary");
    synth->add_option("--sentences-per-doc", sp.sentences_per_doc, "sentences per document");
    synth->add_option("--tokens-per-sentence", sp.tokens_per_sentence,
                      "tokens per filler sentence");
    synth->add_option("--train", sp.train, "train-split queries");
    synth->add_option("--dev", sp.dev, "dev-split queries");
    synth->add_option("--test", sp.test, "test-split queries");
    synth->add_option("--seed", sp.seed, "generator seed");
    synth->callback([&]() {
        expertsim::cmd_synth(sp, synth_out);
        std::cout << "synth: wrote " << sp.num_topics * sp.docs_per_topic << " docs, "
                  << sp.num_queries << " queries to " << synth_out << '\n';
    });

    CLI::App* quasart =
        app.add_subcommand("import-quasart", "convert a QUASAR-T dataset directory");
    std::string dataset_dir, quasart_out = "quasart";
    quasart->add_option("--dataset-dir", dataset_dir, "QUASAR-T root directory")->required();
    quasart->add_option("--out", quasart_out, "output directory");
    quasart->callback([&]() {
        expertsim::QuasartCounts counts = expertsim::import_quasart(dataset_dir, quasart_out);
        std::cout << "import-quasart: " << counts.train << " train / " << counts.dev
                  << " dev / " << counts.test << " test pairs, " << counts.docs
                  << " context docs\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const expertsim::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const expertsim::TransportError& e) {
        std::cerr << "transport error: " << e.what() << '\n';
        return 3;
    } catch (const expertsim::RuntimeError& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return 2;
    }
    return rc;
}
