#include "expertsim/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>

#include <json.hpp>

#include "expertsim/errors.hpp"
#include "expertsim/experts.hpp"
#include "expertsim/index.hpp"
#include "expertsim/util.hpp"

namespace expertsim {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

CorpusFormat parse_corpus_format(const std::string& s) {
    if (s == "jsonl") return CorpusFormat::jsonl;
    if (s == "tsv") return CorpusFormat::tsv;
    throw ValidationError("config: corpus_format must be 'jsonl' or 'tsv', got '" + s + "'");
}

std::string as_string(const ordered_json& v, const std::string& key) {
    if (!v.is_string()) throw ValidationError("config: '" + key + "' must be a string");
    return v.get<std::string>();
}

bool as_bool(const ordered_json& v, const std::string& key) {
    if (!v.is_boolean()) throw ValidationError("config: '" + key + "' must be a boolean");
    return v.get<bool>();
}

double as_double(const ordered_json& v, const std::string& key) {
    if (!v.is_number()) throw ValidationError("config: '" + key + "' must be a number");
    return v.get<double>();
}

uint64_t as_u64(const ordered_json& v, const std::string& key) {
    if (v.is_number_unsigned()) return v.get<uint64_t>();
    if (v.is_number_integer() && v.get<int64_t>() >= 0)
        return static_cast<uint64_t>(v.get<int64_t>());
    throw ValidationError("config: '" + key + "' must be a non-negative integer");
}

std::size_t as_size(const ordered_json& v, const std::string& key) {
    return static_cast<std::size_t>(as_u64(v, key));
}

int as_int(const ordered_json& v, const std::string& key) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
        throw ValidationError("config: '" + key + "' must be an integer");
    return static_cast<int>(v.get<int64_t>());
}

template <typename T, typename Fn>
std::vector<T> as_list(const ordered_json& v, const std::string& key, Fn elem) {
    if (!v.is_array()) throw ValidationError("config: '" + key + "' must be an array");
    std::vector<T> out;
    out.reserve(v.size());
    for (const auto& e : v) out.push_back(elem(e, key));
    return out;
}

PipelineConfig config_from_json(const ordered_json& j) {
    if (!j.is_object()) throw ValidationError("config: expected a JSON object");
    PipelineConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const ordered_json& v = it.value();
        if (key == "corpus_path") c.corpus_path = as_string(v, key);
        else if (key == "corpus_format") c.corpus_format = as_string(v, key);
        else if (key == "qa_path") c.qa_path = as_string(v, key);
        else if (key == "out_dir") c.out_dir = as_string(v, key);
        else if (key == "stopwords") c.stopwords = as_list<std::string>(v, key, as_string);
        else if (key == "dim") c.dim = as_size(v, key);
        else if (key == "hash_seed") c.hash_seed = as_u64(v, key);
        else if (key == "K") c.K = as_size(v, key);
        else if (key == "topic_mode") c.topic_mode = as_bool(v, key);
        else if (key == "min_cluster_size") c.min_cluster_size = as_size(v, key);
        else if (key == "max_cluster_size") c.max_cluster_size = as_size(v, key);
        else if (key == "kmeans_max_iters") c.kmeans_max_iters = as_size(v, key);
        else if (key == "kmeans_tol") c.kmeans_tol = as_double(v, key);
        else if (key == "kmeans_restarts") c.kmeans_restarts = as_size(v, key);
        else if (key == "top_terms") c.top_terms = as_size(v, key);
        else if (key == "k") c.k = as_size(v, key);
        else if (key == "c") c.c = as_size(v, key);
        else if (key == "strict_topk") c.strict_topk = as_bool(v, key);
        else if (key == "per_cluster_index") c.per_cluster_index = as_bool(v, key);
        else if (key == "backend") c.backend = as_string(v, key);
        else if (key == "endpoint") c.endpoint = as_string(v, key);
        else if (key == "auth_token") c.auth_token = as_string(v, key);
        else if (key == "timeout_ms") c.timeout_ms = as_int(v, key);
        else if (key == "max_retries") c.max_retries = as_int(v, key);
        else if (key == "max_span_tokens") c.max_span_tokens = as_size(v, key);
        else if (key == "leakage_filter") c.leakage_filter = as_bool(v, key);
        else if (key == "grade2_f1") c.thresholds.grade2_f1 = as_double(v, key);
        else if (key == "grade1_f1") c.thresholds.grade1_f1 = as_double(v, key);
        else if (key == "strategies") c.strategies = as_list<std::string>(v, key, as_string);
        else if (key == "budgets") c.budgets = as_list<std::size_t>(v, key, as_size);
        else if (key == "lambda") c.lambda = as_double(v, key);
        else if (key == "bench_seeds") c.bench_seeds = as_list<uint64_t>(v, key, as_u64);
        else if (key == "eval_ks") c.eval_ks = as_list<std::size_t>(v, key, as_size);
        else if (key == "gain") c.gain = as_string(v, key);
        else if (key == "seed") c.seed = as_u64(v, key);
        else if (key == "jobs") c.jobs = as_size(v, key);
        else throw ValidationError("config: unknown key '" + key + "'");
    }
    return c;
}

ordered_json config_to_json(const PipelineConfig& c) {
    ordered_json j;
    j["corpus_path"] = c.corpus_path;
    j["corpus_format"] = c.corpus_format;
    j["qa_path"] = c.qa_path;
    j["out_dir"] = c.out_dir;
    j["stopwords"] = c.stopwords;
    j["dim"] = c.dim;
    j["hash_seed"] = c.hash_seed;
    j["K"] = c.K;
    j["topic_mode"] = c.topic_mode;
    j["min_cluster_size"] = c.min_cluster_size;
    j["max_cluster_size"] = c.max_cluster_size;
    j["kmeans_max_iters"] = c.kmeans_max_iters;
    j["kmeans_tol"] = c.kmeans_tol;
    j["kmeans_restarts"] = c.kmeans_restarts;
    j["top_terms"] = c.top_terms;
    j["k"] = c.k;
    j["c"] = c.c;
    j["strict_topk"] = c.strict_topk;
    j["per_cluster_index"] = c.per_cluster_index;
    j["backend"] = c.backend;
    j["endpoint"] = c.endpoint;
    j["auth_token"] = c.auth_token.empty() ? "" : "<redacted>";
    j["timeout_ms"] = c.timeout_ms;
    j["max_retries"] = c.max_retries;
    j["max_span_tokens"] = c.max_span_tokens;
    j["leakage_filter"] = c.leakage_filter;
    j["grade2_f1"] = c.thresholds.grade2_f1;
    j["grade1_f1"] = c.thresholds.grade1_f1;
    j["strategies"] = c.strategies;
    j["budgets"] = c.budgets;
    j["lambda"] = c.lambda;
    j["bench_seeds"] = c.bench_seeds;
    j["eval_ks"] = c.eval_ks;
    j["gain"] = c.gain;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    return j;
}

ordered_json load_or_init_manifest(const std::string& path) {
    if (fs::exists(path)) {
        ordered_json m;
        try {
            m = ordered_json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("manifest " + path + ": " + e.what());
        }
        if (!m.is_object()) throw ValidationError("manifest " + path + ": expected an object");
        return m;
    }
    ordered_json m;
    m["tool"] = "expertsim";
    m["format_version"] = 1;
    m["steps"] = ordered_json::object();
    return m;
}

void record_step(const PipelineConfig& config, const std::string& step, ordered_json stats) {
    PipelinePaths paths = pipeline_paths(config.out_dir);
    fs::create_directories(config.out_dir);
    ordered_json m = load_or_init_manifest(paths.manifest);
    m["config"] = config_to_json(config);
    if (!m.contains("steps") || !m["steps"].is_object()) m["steps"] = ordered_json::object();
    m["steps"][step] = std::move(stats);
    write_file(paths.manifest, m.dump(2) + "\n");
}

std::unique_ptr<GeneratorBackend> make_backend(const PipelineConfig& config) {
    if (config.backend == "extractive")
        return std::make_unique<ExtractiveBackend>(config.max_span_tokens);
    if (config.backend == "external") {
        ExternalBackend::Options opt;
        opt.endpoint = !config.endpoint.empty() ? config.endpoint
                                                : env_or_empty("EXPERTSIM_ENDPOINT");
        opt.auth_token = !config.auth_token.empty() ? config.auth_token
                                                    : env_or_empty("EXPERTSIM_TOKEN");
        opt.timeout_ms = config.timeout_ms;
        opt.max_retries = config.max_retries;
        if (opt.endpoint.empty())
            throw ValidationError(
                "backend=external needs an endpoint (config key 'endpoint' or "
                "EXPERTSIM_ENDPOINT)");
        return std::make_unique<ExternalBackend>(std::move(opt));
    }
    throw ValidationError("config: backend must be 'extractive' or 'external', got '" +
                          config.backend + "'");
}

void write_centroids_jsonl(const std::map<std::string, HashVector>& centroids,
                           const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& [id, centroid] : centroids) {
        ordered_json j;
        j["cluster_id"] = id;
        j["centroid"] = centroid;
        out << j.dump() << '\n';
    }
}

std::map<std::string, HashVector> load_centroids_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open centroids file: " + path);
    std::map<std::string, HashVector> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": " + e.what(), lineno);
        }
        if (!j.contains("cluster_id") || !j["cluster_id"].is_string() ||
            !j.contains("centroid") || !j["centroid"].is_array())
            throw ParseError(path + ": record needs cluster_id and centroid", lineno);
        HashVector v;
        for (const auto& x : j["centroid"]) v.push_back(x.get<double>());
        if (!out.emplace(j["cluster_id"].get<std::string>(), std::move(v)).second)
            throw ValidationError(path + ": duplicate cluster_id at line " +
                                  std::to_string(lineno));
    }
    if (out.empty()) throw ValidationError(path + ": no centroids");
    return out;
}

std::vector<QaPair> load_all_splits(const std::string& qa_path) {
    std::vector<QaPair> all;
    for (Split s : {Split::train, Split::dev, Split::test}) {
        std::vector<QaPair> part = load_qa_dataset(qa_path, s);
        all.insert(all.end(), std::make_move_iterator(part.begin()),
                   std::make_move_iterator(part.end()));
    }
    return all;
}

double sample_stddev(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

} // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
    if (!fs::exists(path)) throw ValidationError("config file not found: " + path);
    ordered_json j;
    try {
        j = ordered_json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    // A manifest from a previous run embeds the config; accept it directly.
    if (j.is_object() && j.contains("config") && j["config"].is_object()) j = j["config"];
    PipelineConfig c = config_from_json(j);
    validate_config(c);
    return c;
}

void validate_config(const PipelineConfig& c) {
    if (c.dim == 0) throw ValidationError("config: dim must be >= 1");
    if (!c.topic_mode && c.K == 0) throw ValidationError("config: K must be >= 1");
    if (c.kmeans_max_iters == 0) throw ValidationError("config: kmeans_max_iters must be >= 1");
    if (c.kmeans_restarts == 0) throw ValidationError("config: kmeans_restarts must be >= 1");
    if (!(c.kmeans_tol >= 0.0)) throw ValidationError("config: kmeans_tol must be >= 0");
    if (c.max_cluster_size != 0 && c.max_cluster_size < c.min_cluster_size)
        throw ValidationError("config: max_cluster_size must be 0 or >= min_cluster_size");
    if (c.top_terms == 0) throw ValidationError("config: top_terms must be >= 1");
    if (c.k == 0) throw ValidationError("config: k must be >= 1");
    if (c.c == 0) throw ValidationError("config: c must be >= 1");
    if (c.jobs == 0) throw ValidationError("config: jobs must be >= 1");
    if (c.max_span_tokens == 0) throw ValidationError("config: max_span_tokens must be >= 1");
    if (c.timeout_ms <= 0) throw ValidationError("config: timeout_ms must be > 0");
    if (c.max_retries < 0) throw ValidationError("config: max_retries must be >= 0");
    if (!(c.thresholds.grade1_f1 >= 0.0 && c.thresholds.grade1_f1 <= 1.0) ||
        !(c.thresholds.grade2_f1 >= 0.0 && c.thresholds.grade2_f1 <= 1.0))
        throw ValidationError("config: grading thresholds must lie in [0, 1]");
    if (c.thresholds.grade1_f1 > c.thresholds.grade2_f1)
        throw ValidationError("config: grade1_f1 must not exceed grade2_f1");
    if (!(c.lambda >= 0.0 && c.lambda <= 1.0))
        throw ValidationError("config: lambda must lie in [0, 1]");
    if (c.backend != "extractive" && c.backend != "external")
        throw ValidationError("config: backend must be 'extractive' or 'external', got '" +
                              c.backend + "'");
    parse_corpus_format(c.corpus_format);
    gain_from_string(c.gain);
    if (c.strategies.empty()) throw ValidationError("config: strategies must be non-empty");
    for (const auto& s : c.strategies) strategy_from_string(s);
    if (c.budgets.empty()) throw ValidationError("config: budgets must be non-empty");
    if (c.bench_seeds.empty()) throw ValidationError("config: bench_seeds must be non-empty");
    if (c.eval_ks.empty()) throw ValidationError("config: eval_ks must be non-empty");
    for (std::size_t k : c.eval_ks)
        if (k == 0) throw ValidationError("config: eval_ks entries must be >= 1");
}

PipelinePaths pipeline_paths(const std::string& out_dir) {
    PipelinePaths p;
    p.assignment = out_dir + "/assignment.tsv";
    p.cluster_meta = out_dir + "/cluster_meta.jsonl";
    p.centroids = out_dir + "/centroids.jsonl";
    p.index = out_dir + "/index.jsonl";
    p.responses = out_dir + "/responses.jsonl";
    p.tuples = out_dir + "/tuples.jsonl";
    p.qrels = out_dir + "/qrels.trec";
    p.gold_answers = out_dir + "/gold_answers.jsonl";
    p.routing_trace = out_dir + "/routing_trace.jsonl";
    p.filtered = out_dir + "/filtered_queries.jsonl";
    p.manifest = out_dir + "/manifest.json";
    p.runs_dir = out_dir + "/runs";
    p.reports_dir = out_dir + "/reports";
    p.beliefs_dir = out_dir + "/beliefs";
    p.comparison_json = out_dir + "/comparison.json";
    p.comparison_txt = out_dir + "/comparison.txt";
    return p;
}

ClusterStats cmd_cluster(const PipelineConfig& config) {
    validate_config(config);
    PipelinePaths paths = pipeline_paths(config.out_dir);
    std::vector<Document> docs =
        load_documents(config.corpus_path, parse_corpus_format(config.corpus_format));
    if (docs.empty()) throw ValidationError("cluster: corpus is empty: " + config.corpus_path);

    std::vector<TokenSequence> tokens(docs.size());
    std::vector<HashVector> vectors(config.topic_mode ? 0 : docs.size());
    parallel_chunks(docs.size(), config.jobs,
                    [&](std::size_t, std::size_t begin, std::size_t end) {
                        for (std::size_t i = begin; i < end; ++i) {
                            tokens[i] = tokenize(docs[i].text, config.stopwords);
                            if (!config.topic_mode)
                                vectors[i] =
                                    hash_vectorize(tokens[i], config.dim, config.hash_seed);
                        }
                    });

    ClusterStats stats;
    stats.num_docs = docs.size();
    for (const auto& t : tokens)
        if (!t.empty()) ++stats.vectorized;

    const std::size_t max_size =
        config.max_cluster_size == 0 ? std::numeric_limits<std::size_t>::max()
                                     : config.max_cluster_size;
    ClusterAssignment pruned;
    std::vector<std::string> empty_docs;
    if (config.topic_mode) {
        pruned = prune_clusters(topic_union_find(docs), config.min_cluster_size, max_size);
    } else {
        // Documents with no tokens have a zero vector and no direction; they
        // skip clustering and stay retrievable as unassigned.
        std::vector<std::pair<std::string, HashVector>> input;
        input.reserve(docs.size());
        for (std::size_t i = 0; i < docs.size(); ++i) {
            if (tokens[i].empty())
                empty_docs.push_back(docs[i].doc_id);
            else
                input.emplace_back(docs[i].doc_id, std::move(vectors[i]));
        }
        if (input.empty())
            throw ValidationError("cluster: every document tokenized to nothing");
        KmeansParams params;
        params.k = config.K;
        params.seed = config.seed;
        params.max_iters = config.kmeans_max_iters;
        params.tol = config.kmeans_tol;
        params.restarts = config.kmeans_restarts;
        params.jobs = config.jobs;
        KmeansResult result = kmeans(input, params);
        stats.sse = result.sse;
        pruned = prune_clusters(result.assignment, config.min_cluster_size, max_size);
    }
    for (auto& id : empty_docs) pruned.unassigned.push_back(std::move(id));
    std::sort(pruned.unassigned.begin(), pruned.unassigned.end());
    pruned.check_disjoint();
    stats.retained_clusters = pruned.retained();
    stats.unassigned = pruned.unassigned.size();

    std::map<std::string, std::size_t> doc_index;
    for (std::size_t i = 0; i < docs.size(); ++i) doc_index[docs[i].doc_id] = i;
    CollectionTermStats term_stats;
    for (const auto& t : tokens) term_stats.add(t);

    DocumentStore store(std::move(docs));
    std::map<std::string, HashVector> centroids = compute_expert_centroids(
        store, pruned, config.dim, config.hash_seed, config.stopwords);

    std::vector<ClusterMeta> meta;
    meta.reserve(pruned.clusters.size());
    for (const auto& [cluster_id, members] : pruned.clusters) {
        ClusterMeta m;
        m.cluster_id = cluster_id;
        m.size = members.size();
        m.centroid = centroids.at(cluster_id);
        std::vector<TokenSequence> member_tokens;
        member_tokens.reserve(members.size());
        for (const auto& doc_id : members) member_tokens.push_back(tokens[doc_index.at(doc_id)]);
        m.top_terms = summarize_cluster(member_tokens, term_stats, config.top_terms);
        meta.push_back(std::move(m));
    }

    fs::create_directories(config.out_dir);
    write_assignment_tsv(pruned, paths.assignment);
    write_cluster_meta_jsonl(meta, paths.cluster_meta);
    write_centroids_jsonl(centroids, paths.centroids);

    ordered_json step;
    step["mode"] = config.topic_mode ? "topic" : "kmeans";
    step["num_docs"] = stats.num_docs;
    step["vectorized"] = stats.vectorized;
    step["retained_clusters"] = stats.retained_clusters;
    step["unassigned"] = stats.unassigned;
    step["sse"] = stats.sse;
    step["artifacts"] = {"assignment.tsv", "cluster_meta.jsonl", "centroids.jsonl"};
    record_step(config, "cluster", std::move(step));
    return stats;
}

IndexStats cmd_index(const PipelineConfig& config) {
    validate_config(config);
    PipelinePaths paths = pipeline_paths(config.out_dir);
    DocumentStore store(
        load_documents(config.corpus_path, parse_corpus_format(config.corpus_format)));
    InvertedIndex index = InvertedIndex::build(store, config.jobs);

    IndexStats stats;
    stats.num_docs = index.num_docs();
    stats.num_terms = index.num_terms();
    stats.num_postings = index.num_postings();

    fs::create_directories(config.out_dir);
    index.save(paths.index);

    ordered_json step;
    step["num_docs"] = stats.num_docs;
    step["num_terms"] = stats.num_terms;
    step["num_postings"] = stats.num_postings;
    if (config.per_cluster_index) {
        ClusterAssignment assignment = load_assignment_tsv(paths.assignment);
        PerClusterIndex per_cluster = PerClusterIndex::build(store, assignment, config.jobs);
        stats.per_cluster_postings = per_cluster.num_postings();
        step["per_cluster_postings"] = stats.per_cluster_postings;
    }
    step["artifacts"] = {"index.jsonl"};
    record_step(config, "index", std::move(step));
    return stats;
}

SimulateStats cmd_simulate(const PipelineConfig& config) {
    validate_config(config);
    PipelinePaths paths = pipeline_paths(config.out_dir);
    DocumentStore store(
        load_documents(config.corpus_path, parse_corpus_format(config.corpus_format)));
    ClusterAssignment assignment = load_assignment_tsv(paths.assignment);
    if (assignment.clusters.empty())
        throw ValidationError("simulate: assignment has no clusters: " + paths.assignment);

    std::vector<std::string> expert_ids;
    for (const auto& [id, members] : assignment.clusters) expert_ids.push_back(id);

    std::vector<QaPair> queries = load_all_splits(config.qa_path);
    if (queries.empty()) throw ValidationError("simulate: no queries in " + config.qa_path);

    std::unique_ptr<GeneratorBackend> backend = make_backend(config);

    SimulateStats stats;
    stats.queries_total = queries.size();
    stats.experts = expert_ids.size();

    FilterOutcome outcome;
    if (config.leakage_filter) {
        outcome = filter_leaky_queries(queries, *backend);
    } else {
        outcome.kept = std::move(queries);
    }
    stats.queries_kept = outcome.kept.size();
    stats.removed = outcome.removed.size();
    stats.undetermined = outcome.undetermined_query_ids.size();
    if (stats.undetermined == stats.queries_total && stats.queries_total > 0)
        throw TransportError("simulate: every leakage probe failed; backend endpoint "
                             "unreachable?");

    fs::create_directories(config.out_dir);
    {
        std::ofstream filtered(paths.filtered);
        if (!filtered) throw RuntimeError("cannot write file: " + paths.filtered);
        for (const auto& r : outcome.removed) {
            ordered_json j;
            j["query_id"] = r.qa.query_id;
            j["status"] = "removed";
            j["reason"] = r.reason;
            filtered << j.dump() << '\n';
        }
        for (const auto& id : outcome.undetermined_query_ids) {
            ordered_json j;
            j["query_id"] = id;
            j["status"] = "undetermined";
            filtered << j.dump() << '\n';
        }
    }

    // Route every kept query up front (pure, so parallel), then drive the
    // simulation in the collection module's canonical order.
    RoutingConfig rcfg;
    rcfg.k = config.k;
    rcfg.c = config.c;
    rcfg.rng_seed = config.seed;
    rcfg.strict_topk = config.strict_topk;
    std::vector<RoutingResult> routing(outcome.kept.size());
    if (config.per_cluster_index) {
        PerClusterIndex per_cluster = PerClusterIndex::build(store, assignment, config.jobs);
        parallel_chunks(outcome.kept.size(), config.jobs,
                        [&](std::size_t, std::size_t begin, std::size_t end) {
                            for (std::size_t i = begin; i < end; ++i)
                                routing[i] = route_per_cluster(
                                    per_cluster, assignment,
                                    tokenize(outcome.kept[i].question),
                                    outcome.kept[i].query_id, rcfg);
                        });
    } else {
        InvertedIndex index = InvertedIndex::load(paths.index);
        parallel_chunks(outcome.kept.size(), config.jobs,
                        [&](std::size_t, std::size_t begin, std::size_t end) {
                            for (std::size_t i = begin; i < end; ++i)
                                routing[i] =
                                    route(index, assignment, tokenize(outcome.kept[i].question),
                                          outcome.kept[i].query_id, rcfg);
                        });
    }
    {
        std::ofstream trace(paths.routing_trace);
        if (!trace) throw RuntimeError("cannot write file: " + paths.routing_trace);
        for (std::size_t i = 0; i < outcome.kept.size(); ++i)
            append_routing_trace(trace, outcome.kept[i].query_id, routing[i]);
    }

    std::map<std::string, std::size_t> query_index;
    for (std::size_t i = 0; i < outcome.kept.size(); ++i)
        query_index[outcome.kept[i].query_id] = i;

    std::vector<ExpertProfile> profiles;
    profiles.reserve(expert_ids.size());
    for (const auto& id : expert_ids)
        profiles.push_back(ExpertProfile{id, id, backend->id(), config.c});

    std::size_t transport_failures = 0;
    TrainingSetResult training = build_training_set(
        outcome.kept, profiles, [&](const QaPair& query, const ExpertProfile& expert) {
            const RoutingResult& routed = routing[query_index.at(query.query_id)];
            try {
                return answer_query(expert, query.question, routed.at(expert.expert_id),
                                    store, assignment, *backend);
            } catch (const TransportError&) {
                ++transport_failures;
                throw;  // recorded as a per-pair failure by build_training_set
            }
        });
    if (!training.failures.empty() && transport_failures == training.failures.size() &&
        training.tuples.empty())
        throw TransportError("simulate: every (query, expert) pair failed with a "
                             "transport error; backend endpoint unreachable?");
    stats.tuples = training.tuples.size();
    stats.failures = training.failures;
    for (const auto& f : training.failures) std::cerr << "simulate: failed pair " << f << '\n';

    {
        std::ofstream responses(paths.responses);
        if (!responses) throw RuntimeError("cannot write file: " + paths.responses);
        for (const auto& t : training.tuples) {
            ExpertResponse response{t.answer, t.metadata};
            append_response_log(responses, t.query_id, t.expert_id, response);
        }
    }
    write_tuples_jsonl(training.tuples, paths.tuples);

    AnswerTable answers;
    for (const auto& t : training.tuples) answers[t.query_id][t.expert_id] = t.answer;

    std::vector<QaPair> test_kept;
    for (const auto& qa : outcome.kept)
        if (qa.split == Split::test) test_kept.push_back(qa);
    Qrels qrels =
        derive_qrels(test_kept, expert_ids, assignment, answers, config.thresholds);
    write_qrels_trec(qrels, paths.qrels);

    GoldAnswerSet golds;
    for (const auto& qa : outcome.kept) golds[qa.query_id] = qa.gold_answers;
    write_gold_answers_jsonl(golds, paths.gold_answers);

    ordered_json step;
    step["backend"] = backend->id();
    step["queries_total"] = stats.queries_total;
    step["queries_kept"] = stats.queries_kept;
    step["removed"] = stats.removed;
    step["undetermined"] = outcome.undetermined_query_ids;
    step["experts"] = stats.experts;
    step["tuples"] = stats.tuples;
    step["failures"] = stats.failures;
    step["test_queries_graded"] = qrels.grades.size();
    step["artifacts"] = {"responses.jsonl",     "tuples.jsonl",   "qrels.trec",
                         "gold_answers.jsonl",  "routing_trace.jsonl",
                         "filtered_queries.jsonl"};
    record_step(config, "simulate", std::move(step));
    return stats;
}

BenchStats cmd_bench(const PipelineConfig& config) {
    validate_config(config);
    PipelinePaths paths = pipeline_paths(config.out_dir);
    Qrels qrels = load_qrels_trec(paths.qrels);
    if (qrels.grades.empty())
        throw ValidationError("bench: qrels is empty: " + paths.qrels);
    std::vector<TrainingTuple> tuples = load_tuples_jsonl(paths.tuples);
    GoldAnswerSet golds = load_gold_answers_jsonl(paths.gold_answers);
    std::map<std::string, HashVector> centroids = load_centroids_jsonl(paths.centroids);

    std::vector<std::string> expert_ids;
    for (const auto& [id, centroid] : centroids) expert_ids.push_back(id);

    std::vector<QaPair> prep = load_qa_dataset(config.qa_path, Split::train);
    std::vector<QaPair> test;
    for (auto& qa : load_qa_dataset(config.qa_path, Split::test))
        if (qrels.grades.count(qa.query_id)) test.push_back(std::move(qa));
    if (test.empty()) throw ValidationError("bench: no graded test queries");

    RewardTable rewards = build_reward_table(tuples, golds);
    std::size_t available = 0;
    for (const auto& qa : prep) {
        auto row = rewards.find(qa.query_id);
        if (row == rewards.end()) continue;
        for (const auto& e : expert_ids) available += row->second.count(e);
    }

    EvalOptions options;
    options.ks = config.eval_ks;
    options.gain = gain_from_string(config.gain);
    options.jobs = config.jobs;

    fs::create_directories(paths.runs_dir);
    fs::create_directories(paths.reports_dir);
    fs::create_directories(paths.beliefs_dir);

    BenchStats stats;
    for (const auto& strategy_name : config.strategies) {
        Strategy strategy = strategy_from_string(strategy_name);
        const bool consumes = strategy != Strategy::centroid && strategy != Strategy::oracle;
        for (std::size_t b : config.budgets) {
            BenchCell cell;
            cell.strategy = strategy_name;
            cell.budget = b;
            std::map<std::size_t, std::vector<double>> ndcgs;
            std::vector<double> mrrs;
            for (uint64_t seed : config.bench_seeds) {
                if (consumes && b > available)
                    std::cerr << "bench: warning: budget " << b << " exceeds the "
                              << available << " available tuples; consuming all\n";
                Budget budget(b);
                BeliefState belief =
                    prepare(strategy, prep, budget, expert_ids, rewards, seed);
                RankingContext ctx;
                ctx.centroids = &centroids;
                ctx.dim = config.dim;
                ctx.hash_seed = config.hash_seed;
                ctx.stopwords = config.stopwords;
                ctx.lambda = config.lambda;
                ctx.seed = seed;
                ctx.qrels = &qrels;
                std::string tag = strategy_name + "_b" + std::to_string(b) + "_s" +
                                  std::to_string(seed);
                TrecRun run;
                run.tag = tag;
                for (const auto& qa : test) {
                    RankedExperts ranked = rank_experts(strategy, belief, qa, ctx);
                    std::vector<RankedEntry> entries;
                    entries.reserve(ranked.ranking.size());
                    for (const auto& [expert, score] : ranked.ranking)
                        entries.push_back(RankedEntry{expert, score});
                    run.rankings[qa.query_id] = std::move(entries);
                }
                write_run_trec(run, paths.runs_dir + "/" + tag + ".trec");
                RankingReport report = evaluate_run(run, qrels, options);
                report.strategy = strategy_name;
                report.seed = seed;
                report.budget_spent = budget.spent();
                write_ranking_report_json(report, paths.reports_dir + "/" + tag + ".json");
                write_belief_json(belief, paths.beliefs_dir + "/" + tag + ".json");
                for (const auto& [k, v] : report.mean_ndcg) ndcgs[k].push_back(v);
                mrrs.push_back(report.mean_mrr);
                ++stats.runs;
            }
            cell.num_seeds = config.bench_seeds.size();
            for (const auto& [k, values] : ndcgs) {
                double mean = 0.0;
                for (double v : values) mean += v;
                mean /= static_cast<double>(values.size());
                cell.mean_ndcg[k] = mean;
                cell.std_ndcg[k] = sample_stddev(values, mean);
            }
            double mean_mrr = 0.0;
            for (double v : mrrs) mean_mrr += v;
            mean_mrr /= static_cast<double>(mrrs.size());
            cell.mean_mrr = mean_mrr;
            cell.std_mrr = sample_stddev(mrrs, mean_mrr);
            stats.cells.push_back(std::move(cell));
        }
    }

    ordered_json comparison;
    comparison["metric_ks"] = config.eval_ks;
    comparison["num_seeds"] = config.bench_seeds.size();
    comparison["cells"] = ordered_json::array();
    for (const auto& cell : stats.cells) {
        ordered_json c;
        c["strategy"] = cell.strategy;
        c["budget"] = cell.budget;
        ordered_json nd = ordered_json::object();
        for (const auto& [k, v] : cell.mean_ndcg) {
            ordered_json entry;
            entry["mean"] = v;
            entry["std"] = cell.std_ndcg.at(k);
            nd[std::to_string(k)] = std::move(entry);
        }
        c["ndcg"] = std::move(nd);
        c["mrr"] = {{"mean", cell.mean_mrr}, {"std", cell.std_mrr}};
        comparison["cells"].push_back(std::move(c));
    }
    write_file(paths.comparison_json, comparison.dump(2) + "\n");

    // Aligned text table, one row per (strategy, budget).
    {
        auto cellfmt = [](double mean, double sd) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.5f (%.5f)", mean, sd);
            return std::string(buf);
        };
        std::vector<std::string> header = {"strategy", "b", "seeds"};
        for (std::size_t k : config.eval_ks) header.push_back("ndcg@" + std::to_string(k));
        header.push_back("mrr");
        std::vector<std::vector<std::string>> rows;
        for (const auto& cell : stats.cells) {
            std::vector<std::string> row = {cell.strategy, std::to_string(cell.budget),
                                            std::to_string(cell.num_seeds)};
            for (std::size_t k : config.eval_ks)
                row.push_back(cellfmt(cell.mean_ndcg.at(k), cell.std_ndcg.at(k)));
            row.push_back(cellfmt(cell.mean_mrr, cell.std_mrr));
            rows.push_back(std::move(row));
        }
        std::vector<std::size_t> widths(header.size());
        for (std::size_t i = 0; i < header.size(); ++i) widths[i] = header[i].size();
        for (const auto& row : rows)
            for (std::size_t i = 0; i < row.size(); ++i)
                widths[i] = std::max(widths[i], row[i].size());
        std::string table;
        auto emit = [&](const std::vector<std::string>& row) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                std::string padded = row[i];
                padded.resize(widths[i], ' ');
                table += padded;
                table += i + 1 < row.size() ? "  " : "";
            }
            while (!table.empty() && table.back() == ' ') table.pop_back();
            table += '\n';
        };
        emit(header);
        for (const auto& row : rows) emit(row);
        table += "values are mean (stddev) over seeds\n";
        write_file(paths.comparison_txt, table);
    }

    ordered_json step;
    step["strategies"] = config.strategies;
    step["budgets"] = config.budgets;
    step["seeds"] = config.bench_seeds;
    step["runs"] = stats.runs;
    step["available_tuples"] = available;
    step["artifacts"] = {"runs/", "reports/", "beliefs/", "comparison.json",
                         "comparison.txt"};
    record_step(config, "bench", std::move(step));
    return stats;
}

RankingReport cmd_eval(const PipelineConfig& config, const std::string& run_path,
                       const std::string& qrels_path, const std::string& tuples_path,
                       const std::string& golds_path) {
    validate_config(config);
    PipelinePaths paths = pipeline_paths(config.out_dir);
    EvalOptions options;
    options.ks = config.eval_ks;
    options.gain = gain_from_string(config.gain);
    options.jobs = config.jobs;
    RankingReport report = evaluate_run_files(run_path, qrels_path, options);

    fs::create_directories(paths.reports_dir);
    std::string stem = fs::path(run_path).stem().string();
    std::string report_path = paths.reports_dir + "/" + stem + ".eval.json";
    write_ranking_report_json(report, report_path);

    ordered_json step;
    step["run"] = run_path;
    step["qrels"] = qrels_path;
    step["report"] = report_path;
    if (!tuples_path.empty() || !golds_path.empty()) {
        if (tuples_path.empty() || golds_path.empty())
            throw ValidationError("eval: answer scoring needs both tuples and gold answers");
        TrecRun run = load_run_trec(run_path);
        AnswerTable answers;
        for (const auto& t : load_tuples_jsonl(tuples_path))
            answers[t.query_id][t.expert_id] = t.answer;
        GoldAnswerSet golds = load_gold_answers_jsonl(golds_path);
        AnswerReport answer_report = evaluate_answers(run, answers, golds);
        std::string answers_path = paths.reports_dir + "/" + stem + ".answers.json";
        write_answer_report_json(answer_report, answers_path);
        step["answer_report"] = answers_path;
    }
    record_step(config, "eval", std::move(step));
    return report;
}

void cmd_synth(const SynthParams& params, const std::string& out_dir) {
    SynthCollection collection = generate_synthetic(params);
    write_synthetic(collection, out_dir);
    ordered_json m = load_or_init_manifest(out_dir + "/manifest.json");
    ordered_json s;
    s["num_topics"] = params.num_topics;
    s["docs_per_topic"] = params.docs_per_topic;
    s["num_queries"] = params.num_queries;
    s["num_hubs"] = params.num_hubs;
    s["filler_vocab"] = params.filler_vocab;
    s["sentences_per_doc"] = params.sentences_per_doc;
    s["tokens_per_sentence"] = params.tokens_per_sentence;
    s["train"] = params.train;
    s["dev"] = params.dev;
    s["test"] = params.test;
    s["seed"] = params.seed;
    s["docs"] = collection.docs.size();
    s["queries"] = collection.queries.size();
    s["artifacts"] = {"corpus.jsonl", "qa.jsonl"};
    m["synth"] = std::move(s);
    write_file(out_dir + "/manifest.json", m.dump(2) + "\n");
}

} // namespace expertsim
