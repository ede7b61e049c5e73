#include "expertsim/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "expertsim/errors.hpp"
#include "expertsim/rng.hpp"
#include "expertsim/util.hpp"

namespace expertsim {

using json = nlohmann::ordered_json;

InvertedIndex InvertedIndex::build(const DocumentStore& store, std::size_t jobs) {
    if (store.size() == 0) throw ValidationError("index build: empty corpus");

    InvertedIndex index;
    const std::size_t n = store.size();
    index.doc_ids_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        index.doc_ids_.push_back(store.at(i).doc_id);
        index.doc_index_.emplace(store.at(i).doc_id, static_cast<uint32_t>(i));
    }
    index.doc_len_.assign(n, 0);

    // Per-chunk term counts, merged in chunk order.
    const std::size_t chunks = chunk_count(n);
    std::vector<std::map<std::string, std::vector<std::pair<uint32_t, uint32_t>>>> partial(chunks);
    std::vector<uint64_t> chunk_tokens(chunks, 0);
    parallel_chunks(n, jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        auto& local = partial[chunk];
        uint64_t tokens = 0;
        std::map<std::string, uint32_t> counts;
        for (std::size_t i = begin; i < end; ++i) {
            counts.clear();
            for (auto& t : tokenize(store.at(i).text)) ++counts[t];
            uint32_t len = 0;
            for (const auto& [term, tf] : counts) {
                local[term].emplace_back(static_cast<uint32_t>(i), tf);
                len += tf;
            }
            index.doc_len_[i] = len;
            tokens += len;
        }
        chunk_tokens[chunk] = tokens;
    });
    uint64_t total_tokens = 0;
    for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
        total_tokens += chunk_tokens[chunk];
        for (auto& [term, posts] : partial[chunk]) {
            auto& dest = index.postings_[term];
            dest.insert(dest.end(), posts.begin(), posts.end());
        }
    }
    for (const auto& [term, posts] : index.postings_) index.num_postings_ += posts.size();
    index.avgdl_ = static_cast<double>(total_tokens) / static_cast<double>(n);
    return index;
}

std::vector<ScoredDoc> InvertedIndex::search(const TokenSequence& query,
                                             std::size_t depth) const {
    return search_impl(query, depth, nullptr, "");
}

std::vector<ScoredDoc> InvertedIndex::search(const TokenSequence& query, std::size_t depth,
                                             const ClusterAssignment& assignment,
                                             const std::string& cluster_filter) const {
    auto it = assignment.clusters.find(cluster_filter);
    if (it == assignment.clusters.end())
        throw ValidationError("search: unknown cluster filter: " + cluster_filter);
    std::vector<char> allowed(doc_ids_.size(), 0);
    for (const auto& d : it->second) {
        auto pos = doc_index_.find(d);
        if (pos != doc_index_.end()) allowed[pos->second] = 1;
    }
    return search_impl(query, depth, &allowed, cluster_filter);
}

std::vector<ScoredDoc> InvertedIndex::search_impl(const TokenSequence& query, std::size_t depth,
                                                  const std::vector<char>* allowed,
                                                  const std::string& cluster_id) const {
    if (query.empty()) throw ValidationError("search: empty query");
    if (depth < 1) throw ValidationError("search: depth must be >= 1");

    const double n = static_cast<double>(num_docs());
    std::vector<double> scores(doc_ids_.size(), 0.0);
    std::vector<uint32_t> touched;

    // Each distinct term contributes once, multiplied by its query count;
    // terms are processed in first-occurrence order.
    std::set<std::string> done;
    for (std::size_t qi = 0; qi < query.size(); ++qi) {
        const std::string& term = query[qi];
        if (!done.insert(term).second) continue;
        auto post = postings_.find(term);
        if (post == postings_.end()) continue;
        double qtf = static_cast<double>(std::count(query.begin(), query.end(), term));
        double df = static_cast<double>(post->second.size());
        double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (const auto& [doc, tf] : post->second) {
            if (allowed && !(*allowed)[doc]) continue;
            double dl = static_cast<double>(doc_len_[doc]);
            double tf_part = (static_cast<double>(tf) * (kBm25K1 + 1.0)) /
                             (static_cast<double>(tf) +
                              kBm25K1 * (1.0 - kBm25B + kBm25B * dl / avgdl_));
            if (scores[doc] == 0.0) touched.push_back(doc);
            scores[doc] += qtf * idf * tf_part;
        }
    }

    std::sort(touched.begin(), touched.end(), [&](uint32_t a, uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return doc_ids_[a] < doc_ids_[b];
    });
    if (touched.size() > depth) touched.resize(depth);

    std::vector<ScoredDoc> hits;
    hits.reserve(touched.size());
    for (uint32_t doc : touched) hits.push_back({doc_ids_[doc], scores[doc], cluster_id});
    return hits;
}

void InvertedIndex::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    json header;
    header["format"] = "bm25-index";
    header["version"] = 1;
    header["num_docs"] = doc_ids_.size();
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
        json d;
        d["doc_id"] = doc_ids_[i];
        d["len"] = doc_len_[i];
        out << d.dump() << '\n';
    }
    for (const auto& [term, posts] : postings_) {
        json p = json::array();
        for (const auto& [doc, tf] : posts) p.push_back({doc, tf});
        json t;
        t["term"] = term;
        t["postings"] = p;
        out << t.dump() << '\n';
    }
}

InvertedIndex InvertedIndex::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(path + ": missing index header", 1);
    ++lineno;
    InvertedIndex index;
    std::size_t num_docs = 0;
    try {
        json header = json::parse(line);
        if (header.at("format") != "bm25-index" || header.at("version") != 1)
            throw ValidationError(path + ": unsupported index format/version");
        num_docs = header.at("num_docs").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what(), lineno);
    }
    uint64_t total_tokens = 0;
    for (std::size_t i = 0; i < num_docs; ++i) {
        if (!std::getline(in, line)) throw ParseError(path + ": truncated doc table", lineno);
        ++lineno;
        try {
            json d = json::parse(line);
            index.doc_ids_.push_back(d.at("doc_id").get<std::string>());
            index.doc_index_.emplace(index.doc_ids_.back(),
                                     static_cast<uint32_t>(index.doc_ids_.size() - 1));
            index.doc_len_.push_back(d.at("len").get<uint32_t>());
            total_tokens += index.doc_len_.back();
        } catch (const json::exception& e) {
            throw ParseError(path + ": " + e.what(), lineno);
        }
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json t = json::parse(line);
            auto& posts = index.postings_[t.at("term").get<std::string>()];
            for (const auto& p : t.at("postings"))
                posts.emplace_back(p.at(0).get<uint32_t>(), p.at(1).get<uint32_t>());
        } catch (const json::exception& e) {
            throw ParseError(path + ": " + e.what(), lineno);
        }
    }
    if (index.doc_ids_.empty()) throw ValidationError(path + ": empty index");
    for (const auto& [term, posts] : index.postings_) index.num_postings_ += posts.size();
    index.avgdl_ = static_cast<double>(total_tokens) / static_cast<double>(index.doc_ids_.size());
    return index;
}

namespace {

SplitMix64 routing_rng(uint64_t seed, const std::string& query_id) {
    return SplitMix64(mix_seed(mix_seed(seed, "route"), query_id));
}

void check_routing(const RoutingResult& routing, const ClusterAssignment& assignment,
                   std::size_t c) {
    if (routing.size() != assignment.clusters.size())
        throw RuntimeError("routing: expert coverage violated");
    for (const auto& [expert, docs] : routing) {
        if (docs.empty() || docs.size() > c)
            throw RuntimeError("routing: context size out of range for " + expert);
        for (const auto& d : docs) {
            auto it = assignment.doc_to_cluster.find(d.doc_id);
            if (it == assignment.doc_to_cluster.end() || it->second != expert)
                throw RuntimeError("routing: foreign document " + d.doc_id + " for " + expert);
        }
    }
}

} // namespace

RoutingResult route(const InvertedIndex& index, const ClusterAssignment& assignment,
                    const TokenSequence& query, const std::string& query_id,
                    const RoutingConfig& cfg) {
    if (cfg.k < 1 || cfg.c < 1) throw ValidationError("routing: k and c must be >= 1");
    if (assignment.clusters.empty()) throw ValidationError("routing: empty assignment");

    // Step 1: global top-k.
    auto global = index.search(query, cfg.k);

    // Step 2: map hits to clusters, keeping global (score, doc_id) order.
    std::map<std::string, std::vector<ScoredDoc>> per_cluster;
    for (auto& hit : global) {
        auto it = assignment.doc_to_cluster.find(hit.doc_id);
        if (it == assignment.doc_to_cluster.end()) continue;  // pruned doc
        hit.cluster_id = it->second;
        per_cluster[it->second].push_back(hit);
    }

    RoutingResult routing;

    // Step 3: top-min(c, hits) per represented cluster, optionally filled to
    // c via cluster-filtered search.
    for (const auto& [cluster_id, hits] : per_cluster) {
        auto& docs = routing[cluster_id];
        std::unordered_set<std::string> taken;
        for (std::size_t i = 0; i < hits.size() && docs.size() < cfg.c; ++i) {
            docs.push_back({hits[i].doc_id, hits[i].score, "topk"});
            taken.insert(hits[i].doc_id);
        }
        if (!cfg.strict_topk && docs.size() < cfg.c) {
            for (const auto& hit : index.search(query, cfg.c, assignment, cluster_id)) {
                if (docs.size() >= cfg.c) break;
                if (taken.count(hit.doc_id)) continue;
                docs.push_back({hit.doc_id, hit.score, "fill"});
            }
        }
    }

    // Step 4: one random member for every absent retained cluster, drawn in
    // ascending cluster order from the (seed, query_id) stream.
    SplitMix64 rng = routing_rng(cfg.rng_seed, query_id);
    for (const auto& [cluster_id, members] : assignment.clusters) {
        if (routing.count(cluster_id)) continue;
        const auto& doc = members[rng.next_below(members.size())];
        routing[cluster_id].push_back({doc, 0.0, "random"});
    }

    check_routing(routing, assignment, cfg.c);
    return routing;
}

PerClusterIndex PerClusterIndex::build(const DocumentStore& store,
                                       const ClusterAssignment& assignment, std::size_t jobs) {
    PerClusterIndex out;
    for (const auto& [cluster_id, members] : assignment.clusters) {
        std::vector<Document> docs;
        docs.reserve(members.size());
        for (const auto& d : members) {
            const Document* doc = store.find(d);
            if (!doc) throw ValidationError("per-cluster index: unknown doc " + d);
            docs.push_back(*doc);
        }
        out.indices_.emplace(cluster_id, InvertedIndex::build(DocumentStore(std::move(docs)), jobs));
    }
    return out;
}

std::size_t PerClusterIndex::num_postings() const {
    std::size_t total = 0;
    for (const auto& [id, index] : indices_) total += index.num_postings();
    return total;
}

RoutingResult route_per_cluster(const PerClusterIndex& index, const ClusterAssignment& assignment,
                                const TokenSequence& query, const std::string& query_id,
                                const RoutingConfig& cfg) {
    if (cfg.k < 1 || cfg.c < 1) throw ValidationError("routing: k and c must be >= 1");
    RoutingResult routing;
    SplitMix64 rng = routing_rng(cfg.rng_seed, query_id);
    for (const auto& [cluster_id, members] : assignment.clusters) {
        auto it = index.indices().find(cluster_id);
        if (it == index.indices().end())
            throw ValidationError("routing: no index for cluster " + cluster_id);
        auto hits = it->second.search(query, cfg.c);
        auto& docs = routing[cluster_id];
        for (const auto& hit : hits) docs.push_back({hit.doc_id, hit.score, "topk"});
        if (docs.empty()) {
            const auto& doc = members[rng.next_below(members.size())];
            docs.push_back({doc, 0.0, "random"});
        }
    }
    check_routing(routing, assignment, cfg.c);
    return routing;
}

void append_routing_trace(std::ostream& out, const std::string& query_id,
                          const RoutingResult& routing) {
    for (const auto& [expert, docs] : routing) {
        for (const char* source : {"topk", "fill", "random"}) {
            json ids = json::array();
            for (const auto& d : docs)
                if (d.source == source) ids.push_back(d.doc_id);
            if (ids.empty()) continue;
            json rec;
            rec["query_id"] = query_id;
            rec["expert_id"] = expert;
            rec["doc_ids"] = ids;
            rec["source"] = source;
            out << rec.dump() << '\n';
        }
    }
}

} // namespace expertsim
