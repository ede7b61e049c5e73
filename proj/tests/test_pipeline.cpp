#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "expertsim/pipeline.hpp"

#include "temp_dir.hpp"

using namespace expertsim;
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

SynthParams mini_synth() {
    SynthParams p;
    p.num_topics = 6;
    p.docs_per_topic = 8;
    p.num_queries = 18;
    p.num_hubs = 2;
    p.train = 12;
    p.dev = 2;
    p.test = 4;
    p.seed = 3;
    return p;
}

// Writes the mini synthetic dataset and returns a config pointing at it.
PipelineConfig mini_config(const TempDir& dir) {
    cmd_synth(mini_synth(), dir.at("data"));
    PipelineConfig cfg;
    cfg.corpus_path = dir.at("data/corpus.jsonl");
    cfg.qa_path = dir.at("data/qa.jsonl");
    cfg.out_dir = dir.at("out");
    cfg.dim = 64;
    cfg.K = 6;
    cfg.kmeans_restarts = 2;
    cfg.kmeans_max_iters = 20;
    cfg.k = 20;
    cfg.c = 3;
    cfg.budgets = {0, 10};
    cfg.bench_seeds = {1, 2};
    cfg.eval_ks = {3, 5};
    cfg.seed = 9;
    cfg.jobs = 2;
    return cfg;
}

std::size_t count_lines(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

struct PipelineMockServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;

    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~PipelineMockServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }
    std::string endpoint() const {
        return "http://127.0.0.1:" + std::to_string(port) + "/generate";
    }
};

} // namespace

TEST_CASE("pipeline config round-trips through JSON with strict keys") {
    TempDir dir;
    std::string path = dir.file("config.json", R"({
        "corpus_path": "corpus.jsonl",
        "corpus_format": "tsv",
        "qa_path": "qa.jsonl",
        "out_dir": "artifacts",
        "stopwords": ["the", "of"],
        "dim": 128,
        "hash_seed": 5,
        "K": 12,
        "topic_mode": false,
        "min_cluster_size": 2,
        "max_cluster_size": 100,
        "kmeans_max_iters": 25,
        "kmeans_tol": 0.001,
        "kmeans_restarts": 3,
        "top_terms": 7,
        "k": 40,
        "c": 4,
        "strict_topk": true,
        "per_cluster_index": true,
        "backend": "external",
        "endpoint": "http://host:1234/gen",
        "auth_token": "tok",
        "timeout_ms": 500,
        "max_retries": 1,
        "max_span_tokens": 6,
        "leakage_filter": false,
        "grade2_f1": 0.9,
        "grade1_f1": 0.4,
        "strategies": ["ucb", "oracle"],
        "budgets": [0, 25],
        "lambda": 0.25,
        "bench_seeds": [7, 8],
        "eval_ks": [1, 10],
        "gain": "linear",
        "seed": 99,
        "jobs": 3
    })");
    PipelineConfig c = load_pipeline_config(path);
    CHECK(c.corpus_path == "corpus.jsonl");
    CHECK(c.corpus_format == "tsv");
    CHECK(c.qa_path == "qa.jsonl");
    CHECK(c.out_dir == "artifacts");
    CHECK(c.stopwords == std::vector<std::string>{"the", "of"});
    CHECK(c.dim == 128);
    CHECK(c.hash_seed == 5);
    CHECK(c.K == 12);
    CHECK(c.topic_mode == false);
    CHECK(c.min_cluster_size == 2);
    CHECK(c.max_cluster_size == 100);
    CHECK(c.kmeans_max_iters == 25);
    CHECK(c.kmeans_tol == doctest::Approx(0.001));
    CHECK(c.kmeans_restarts == 3);
    CHECK(c.top_terms == 7);
    CHECK(c.k == 40);
    CHECK(c.c == 4);
    CHECK(c.strict_topk == true);
    CHECK(c.per_cluster_index == true);
    CHECK(c.backend == "external");
    CHECK(c.endpoint == "http://host:1234/gen");
    CHECK(c.auth_token == "tok");
    CHECK(c.timeout_ms == 500);
    CHECK(c.max_retries == 1);
    CHECK(c.max_span_tokens == 6);
    CHECK(c.leakage_filter == false);
    CHECK(c.thresholds.grade2_f1 == doctest::Approx(0.9));
    CHECK(c.thresholds.grade1_f1 == doctest::Approx(0.4));
    CHECK(c.strategies == std::vector<std::string>{"ucb", "oracle"});
    CHECK(c.budgets == std::vector<std::size_t>{0, 25});
    CHECK(c.lambda == doctest::Approx(0.25));
    CHECK(c.bench_seeds == std::vector<uint64_t>{7, 8});
    CHECK(c.eval_ks == std::vector<std::size_t>{1, 10});
    CHECK(c.gain == "linear");
    CHECK(c.seed == 99);
    CHECK(c.jobs == 3);
}

TEST_CASE("pipeline config rejects unknown keys, bad types, and bad ranges") {
    TempDir dir;
    try {
        load_pipeline_config(dir.file("a.json", R"({"dimension": 3})"));
        FAIL("expected a ValidationError for the unknown key");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("unknown key 'dimension'") != std::string::npos);
    }
    CHECK_THROWS_AS(load_pipeline_config(dir.file("b.json", R"({"dim": "wide"})")),
                    ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(dir.file("c.json", R"({"dim": -4})")),
                    ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(dir.file("d.json", R"({"K": 0})")),
                    ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(dir.file("e.json", R"({"lambda": 1.5})")),
                    ValidationError);
    CHECK_THROWS_AS(
        load_pipeline_config(dir.file("f.json", R"({"grade1_f1": 0.9, "grade2_f1": 0.5})")),
        ValidationError);
    CHECK_THROWS_AS(
        load_pipeline_config(dir.file("g.json", R"({"strategies": ["greedy"]})")),
        ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(dir.file("h.json", R"({"gain": "log"})")),
                    ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(dir.file("i.json", "{not json")), ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(dir.at("missing.json")), ValidationError);
}

TEST_CASE("a manifest doubles as a config file via its embedded config object") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cmd_cluster(cfg);
    PipelineConfig reloaded = load_pipeline_config(dir.at("out/manifest.json"));
    CHECK(reloaded.corpus_path == cfg.corpus_path);
    CHECK(reloaded.dim == cfg.dim);
    CHECK(reloaded.K == cfg.K);
    CHECK(reloaded.out_dir == cfg.out_dir);
    CHECK(reloaded.bench_seeds == cfg.bench_seeds);
}

TEST_CASE("cmd_cluster validates K before touching the output directory") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cfg.K = 0;
    CHECK_THROWS_AS(cmd_cluster(cfg), ValidationError);
    CHECK(!fs::exists(cfg.out_dir));
}

TEST_CASE("cmd_cluster k-means path writes the clustering artifacts") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    ClusterStats stats = cmd_cluster(cfg);
    CHECK(stats.num_docs == 48);
    CHECK(stats.vectorized == 48);
    CHECK(stats.retained_clusters == 6);
    CHECK(stats.unassigned == 0);
    CHECK(fs::exists(dir.at("out/assignment.tsv")));
    CHECK(fs::exists(dir.at("out/cluster_meta.jsonl")));
    CHECK(fs::exists(dir.at("out/centroids.jsonl")));
    CHECK(count_lines(dir.at("out/centroids.jsonl")) == 6);

    ClusterAssignment assignment = load_assignment_tsv(dir.at("out/assignment.tsv"));
    CHECK(assignment.retained() == 6);
    std::size_t members = 0;
    for (const auto& [id, docs] : assignment.clusters) members += docs.size();
    CHECK(members == 48);

    ordered_json manifest = ordered_json::parse(slurp(dir.at("out/manifest.json")));
    CHECK(manifest["steps"].contains("cluster"));
    CHECK(manifest["steps"]["cluster"]["retained_clusters"] == 6);
    CHECK(manifest["config"]["dim"] == 64);
}

TEST_CASE("cmd_cluster topic mode recovers the planted topics exactly") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cfg.topic_mode = true;
    ClusterStats stats = cmd_cluster(cfg);
    CHECK(stats.retained_clusters == 6);
    ClusterAssignment assignment = load_assignment_tsv(dir.at("out/assignment.tsv"));
    REQUIRE(assignment.clusters.count("topic00") == 1);
    CHECK(assignment.clusters.at("topic00").size() == 8);
    for (const auto& [doc, cluster] : assignment.doc_to_cluster)
        CHECK(cluster == "topic" + doc.substr(1, 2));
}

TEST_CASE("cmd_index builds, saves, and reports per-cluster postings when asked") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cmd_cluster(cfg);
    cfg.per_cluster_index = true;
    IndexStats stats = cmd_index(cfg);
    CHECK(stats.num_docs == 48);
    CHECK(stats.num_terms > 0);
    CHECK(stats.num_postings > 0);
    CHECK(stats.per_cluster_postings == stats.num_postings);  // disjoint partition
    InvertedIndex loaded = InvertedIndex::load(dir.at("out/index.jsonl"));
    CHECK(loaded.num_docs() == 48);
}

TEST_CASE("cmd_simulate exports the full (query, expert) collection") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cmd_cluster(cfg);
    cmd_index(cfg);
    SimulateStats stats = cmd_simulate(cfg);
    CHECK(stats.queries_total == 18);
    CHECK(stats.queries_kept == 18);  // extractive probe never leaks
    CHECK(stats.removed == 0);
    CHECK(stats.undetermined == 0);
    CHECK(stats.experts == 6);
    CHECK(stats.tuples == 18 * 6);
    CHECK(stats.failures.empty());

    std::vector<TrainingTuple> tuples = load_tuples_jsonl(dir.at("out/tuples.jsonl"));
    CHECK(tuples.size() == 18 * 6);
    for (const auto& t : tuples) CHECK(t.metadata.generator_id == "extractive");
    CHECK(count_lines(dir.at("out/responses.jsonl")) == 18 * 6);
    CHECK(count_lines(dir.at("out/routing_trace.jsonl")) > 0);
    CHECK(count_lines(dir.at("out/filtered_queries.jsonl")) == 0);
    CHECK(count_lines(dir.at("out/gold_answers.jsonl")) == 18);

    Qrels qrels = load_qrels_trec(dir.at("out/qrels.trec"));
    CHECK(qrels.grades.size() == 4);  // test-split queries
    for (const auto& [query, row] : qrels.grades) CHECK(row.size() == 6);
}

TEST_CASE("cmd_simulate with per-cluster routing keeps the same cardinality") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cmd_cluster(cfg);
    cmd_index(cfg);
    cfg.per_cluster_index = true;
    SimulateStats stats = cmd_simulate(cfg);
    CHECK(stats.tuples == 18 * 6);
    CHECK(stats.failures.empty());
}

TEST_CASE("cmd_simulate requires the clustering artifacts") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    CHECK_THROWS_AS(cmd_simulate(cfg), ValidationError);
}

TEST_CASE("cmd_bench writes runs, reports, beliefs, and the comparison table") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cmd_cluster(cfg);
    cmd_index(cfg);
    cmd_simulate(cfg);
    BenchStats stats = cmd_bench(cfg);
    // 5 strategies x 2 budgets x 2 seeds
    CHECK(stats.runs == 20);
    CHECK(stats.cells.size() == 10);
    CHECK(fs::exists(dir.at("out/runs/ucb_b10_s1.trec")));
    CHECK(fs::exists(dir.at("out/reports/ucb_b10_s1.json")));
    CHECK(fs::exists(dir.at("out/beliefs/ucb_b10_s1.json")));
    CHECK(fs::exists(dir.at("out/comparison.json")));
    CHECK(fs::exists(dir.at("out/comparison.txt")));

    // the oracle ranks by qrels grades, so its nDCG is exactly 1 everywhere
    ordered_json report =
        ordered_json::parse(slurp(dir.at("out/reports/oracle_b0_s1.json")));
    for (const auto& q : report["per_query"])
        CHECK(q["ndcg"]["5"].get<double>() == 1.0);
    CHECK(report["aggregate"]["ndcg"]["5"].get<double>() == 1.0);
    CHECK(report["config"]["budget_spent"] == 0);

    // budget larger than the 12 train queries x 6 experts = 72 available
    // tuples consumes exactly the 72 available
    cfg.budgets = {1000};
    cfg.strategies = {"ucb"};
    BenchStats big = cmd_bench(cfg);
    ordered_json ucb_report =
        ordered_json::parse(slurp(dir.at("out/reports/ucb_b1000_s1.json")));
    CHECK(ucb_report["config"]["budget_spent"] == 72);
    CHECK(big.cells.size() == 1);

    ordered_json comparison = ordered_json::parse(slurp(dir.at("out/comparison.json")));
    CHECK(comparison["cells"].size() == 1);
    CHECK(comparison["cells"][0]["strategy"] == "ucb");
}

TEST_CASE("cmd_bench needs a non-empty collection") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    CHECK_THROWS_AS(cmd_bench(cfg), ValidationError);
}

TEST_CASE("cmd_eval scores an existing run and optionally its answers") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cmd_cluster(cfg);
    cmd_index(cfg);
    cmd_simulate(cfg);
    cfg.strategies = {"centroid"};
    cfg.budgets = {0};
    cfg.bench_seeds = {1};
    cmd_bench(cfg);

    std::string run = dir.at("out/runs/centroid_b0_s1.trec");
    RankingReport report = cmd_eval(cfg, run, dir.at("out/qrels.trec"),
                                    dir.at("out/tuples.jsonl"),
                                    dir.at("out/gold_answers.jsonl"));
    CHECK(report.per_query.size() == 4);
    CHECK(fs::exists(dir.at("out/reports/centroid_b0_s1.eval.json")));
    CHECK(fs::exists(dir.at("out/reports/centroid_b0_s1.answers.json")));
    CHECK(!format_ranking_report(report).empty());

    CHECK_THROWS_AS(
        cmd_eval(cfg, run, dir.at("out/qrels.trec"), dir.at("out/tuples.jsonl"), ""),
        ValidationError);
}

TEST_CASE("identical configs reproduce byte-identical artifacts") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cmd_cluster(cfg);
    cmd_index(cfg);
    cmd_simulate(cfg);
    cfg.strategies = {"ucb", "oracle"};
    cfg.budgets = {10};
    cfg.bench_seeds = {1};
    cmd_bench(cfg);

    PipelineConfig cfg2 = cfg;
    cfg2.out_dir = dir.at("out_b");
    cmd_cluster(cfg2);
    cmd_index(cfg2);
    cmd_simulate(cfg2);
    cmd_bench(cfg2);

    for (const std::string name :
         {"assignment.tsv", "cluster_meta.jsonl", "centroids.jsonl", "index.jsonl",
          "tuples.jsonl", "qrels.trec", "gold_answers.jsonl", "responses.jsonl",
          "routing_trace.jsonl", "runs/ucb_b10_s1.trec", "reports/ucb_b10_s1.json",
          "runs/oracle_b10_s1.trec", "comparison.json", "comparison.txt"}) {
        CAPTURE(name);
        CHECK(slurp(dir.at("out/" + name)) == slurp(dir.at("out_b/" + name)));
    }
}

TEST_CASE("cmd_simulate drives an external backend over HTTP, leaks removed") {
    TempDir dir;
    PipelineConfig cfg = mini_config(dir);
    cmd_cluster(cfg);
    cmd_index(cfg);

    // The mock leaks exactly one query from parametric knowledge: a probe with
    // empty context gets the gold answer for that question, otherwise the
    // server behaves extractively enough to ground its answer in the context.
    std::vector<QaPair> train = load_qa_dataset(dir.at("data/qa.jsonl"), Split::train);
    const std::string leaky_question = train.front().question;
    const std::string leaky_gold = train.front().gold_answers.front();

    PipelineMockServer mock;
    mock.server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
        ordered_json body = ordered_json::parse(req.body);
        const std::string question = body["question"].get<std::string>();
        const bool empty_context = body["context"].empty();
        ordered_json out;
        if (empty_context)
            out["answer"] = question == leaky_question ? leaky_gold : "";
        else
            out["answer"] = body["context"][0].get<std::string>().substr(0, 40);
        res.set_content(out.dump(), "application/json");
    });
    mock.start();

    cfg.backend = "external";
    cfg.endpoint = mock.endpoint();
    SimulateStats stats = cmd_simulate(cfg);
    CHECK(stats.removed == 1);
    CHECK(stats.undetermined == 0);
    CHECK(stats.queries_kept == 17);
    CHECK(stats.tuples == 17 * 6);

    std::vector<ordered_json> filtered;
    {
        std::ifstream in(dir.at("out/filtered_queries.jsonl"));
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) filtered.push_back(ordered_json::parse(line));
    }
    REQUIRE(filtered.size() == 1);
    CHECK(filtered[0]["query_id"] == train.front().query_id);
    CHECK(filtered[0]["status"] == "removed");
    CHECK(filtered[0]["reason"] == "base-model leak");

    std::vector<TrainingTuple> tuples = load_tuples_jsonl(dir.at("out/tuples.jsonl"));
    for (const auto& t : tuples) {
        CHECK(t.metadata.generator_id == "external");
        CHECK(t.query_id != train.front().query_id);
    }
}
