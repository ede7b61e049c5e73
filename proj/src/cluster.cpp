#include "expertsim/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "expertsim/errors.hpp"
#include "expertsim/util.hpp"

namespace expertsim {

using json = nlohmann::ordered_json;

void ClusterAssignment::assign(const std::string& doc_id, const std::string& cluster_id) {
    doc_to_cluster[doc_id] = cluster_id;
    auto& members = clusters[cluster_id];
    members.insert(std::lower_bound(members.begin(), members.end(), doc_id), doc_id);
}

void ClusterAssignment::check_disjoint() const {
    std::set<std::string> seen;
    for (const auto& [cid, docs] : clusters) {
        if (docs.empty()) throw RuntimeError("empty retained cluster: " + cid);
        for (const auto& d : docs) {
            if (!seen.insert(d).second)
                throw RuntimeError("doc assigned to more than one cluster: " + d);
            auto it = doc_to_cluster.find(d);
            if (it == doc_to_cluster.end() || it->second != cid)
                throw RuntimeError("doc_to_cluster out of sync for " + d);
        }
    }
    if (seen.size() != doc_to_cluster.size())
        throw RuntimeError("doc_to_cluster out of sync with cluster membership");
}

namespace {

std::string make_cluster_id(std::size_t idx, std::size_t k) {
    std::size_t width = 1;
    for (std::size_t v = (k > 0 ? k - 1 : 0); v >= 10; v /= 10) ++width;
    std::string digits = std::to_string(idx);
    return "c" + std::string(width - digits.size(), '0') + digits;
}

struct KmeansRun {
    std::vector<std::size_t> assign;
    std::vector<HashVector> centers;
    std::vector<double> sse_history;
    double sse = std::numeric_limits<double>::infinity();
};

double sq_dist(const HashVector& a, const HashVector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// SSE of a fixed assignment against the given centers, merged in chunk order.
double fixed_sse(const std::vector<HashVector>& points, const std::vector<HashVector>& centers,
                 const std::vector<std::size_t>& assign, std::size_t jobs) {
    const std::size_t n = points.size();
    std::vector<double> chunk_sse(chunk_count(n), 0.0);
    parallel_chunks(n, jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        double local = 0.0;
        for (std::size_t i = begin; i < end; ++i) local += sq_dist(points[i], centers[assign[i]]);
        chunk_sse[chunk] = local;
    });
    double sse = 0.0;
    for (double s : chunk_sse) sse += s;
    return sse;
}

// Assignment step. Writes nearest-center index per point (ties to the lower
// center index) and returns the SSE against the given centers.
double assign_points(const std::vector<HashVector>& points,
                     const std::vector<HashVector>& centers, std::size_t jobs,
                     std::vector<std::size_t>& assign) {
    const std::size_t n = points.size();
    std::vector<double> chunk_sse(chunk_count(n), 0.0);
    parallel_chunks(n, jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        double local = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_c = 0;
            for (std::size_t c = 0; c < centers.size(); ++c) {
                double d = sq_dist(points[i], centers[c]);
                if (d < best) {
                    best = d;
                    best_c = c;
                }
            }
            assign[i] = best_c;
            local += best;
        }
        chunk_sse[chunk] = local;
    });
    // Fixed-order merge keeps the sum identical for every job count.
    double sse = 0.0;
    for (double s : chunk_sse) sse += s;
    return sse;
}

// Recompute centers as means of their members; chunked partial sums merged in
// chunk order for determinism.
void update_centers(const std::vector<HashVector>& points, const std::vector<std::size_t>& assign,
                    std::size_t k, std::size_t jobs, std::vector<HashVector>& centers,
                    std::vector<std::size_t>& counts) {
    const std::size_t n = points.size();
    const std::size_t dim = points.empty() ? 0 : points[0].size();
    const std::size_t chunks = chunk_count(n);
    std::vector<std::vector<HashVector>> partial_sums(chunks);
    std::vector<std::vector<std::size_t>> partial_counts(chunks);
    parallel_chunks(n, jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        auto& sums = partial_sums[chunk];
        auto& cnts = partial_counts[chunk];
        sums.assign(k, HashVector(dim, 0.0));
        cnts.assign(k, 0);
        for (std::size_t i = begin; i < end; ++i) {
            std::size_t c = assign[i];
            ++cnts[c];
            const HashVector& p = points[i];
            HashVector& s = sums[c];
            for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
        }
    });
    counts.assign(k, 0);
    std::vector<HashVector> sums(k, HashVector(dim, 0.0));
    for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
        for (std::size_t c = 0; c < k; ++c) {
            counts[c] += partial_counts[chunk][c];
            for (std::size_t d = 0; d < dim; ++d) sums[c][d] += partial_sums[chunk][c][d];
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;  // repaired by the caller
        HashVector& ctr = centers[c];
        for (std::size_t d = 0; d < dim; ++d)
            ctr[d] = sums[c][d] / static_cast<double>(counts[c]);
    }
}

// Move the globally farthest point into each empty cluster; affected centers
// are recomputed. Keeps every cluster non-empty without increasing SSE.
void repair_empty_clusters(const std::vector<HashVector>& points, std::vector<std::size_t>& assign,
                           std::vector<HashVector>& centers, std::vector<std::size_t>& counts) {
    for (;;) {
        std::size_t empty_c = counts.size();
        for (std::size_t c = 0; c < counts.size(); ++c)
            if (counts[c] == 0) {
                empty_c = c;
                break;
            }
        if (empty_c == counts.size()) return;

        double far_d = -1.0;
        std::size_t far_i = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (counts[assign[i]] <= 1) continue;  // do not empty another cluster
            double d = sq_dist(points[i], centers[assign[i]]);
            if (d > far_d) {
                far_d = d;
                far_i = i;
            }
        }
        if (far_d < 0.0) throw RuntimeError("kmeans: cannot repair empty cluster");

        std::size_t src = assign[far_i];
        assign[far_i] = empty_c;
        counts[src] -= 1;
        counts[empty_c] = 1;
        centers[empty_c] = points[far_i];
        // Source center becomes the mean of its remaining members.
        const std::size_t dim = points[0].size();
        HashVector sum(dim, 0.0);
        for (std::size_t i = 0; i < points.size(); ++i)
            if (assign[i] == src)
                for (std::size_t d = 0; d < dim; ++d) sum[d] += points[i][d];
        for (std::size_t d = 0; d < dim; ++d)
            centers[src][d] = sum[d] / static_cast<double>(counts[src]);
    }
}

std::vector<HashVector> kmeans_pp_init(const std::vector<HashVector>& points, std::size_t k,
                                       SplitMix64& rng) {
    const std::size_t n = points.size();
    std::vector<HashVector> centers;
    centers.reserve(k);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<bool> chosen(n, false);

    std::size_t first = rng.next_below(n);
    centers.push_back(points[first]);
    chosen[first] = true;

    while (centers.size() < k) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = sq_dist(points[i], centers.back());
            if (d < d2[i]) d2[i] = d;
            sum += d2[i];
        }
        std::size_t pick = n;
        if (sum > 0.0) {
            double r = rng.next_double() * sum;
            double cum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (cum > r && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) {  // float round-off at the tail
                for (std::size_t i = n; i-- > 0;)
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
            }
        }
        if (pick == n) {  // all remaining points coincide with chosen centers
            for (std::size_t i = 0; i < n; ++i)
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
        }
        if (pick == n) throw RuntimeError("kmeans++: ran out of candidate points");
        chosen[pick] = true;
        centers.push_back(points[pick]);
    }
    return centers;
}

KmeansRun kmeans_single(const std::vector<HashVector>& points, const KmeansParams& params,
                        uint64_t run_seed) {
    const std::size_t n = points.size();
    const std::size_t k = params.k;
    SplitMix64 rng(run_seed);

    KmeansRun run;
    run.assign.assign(n, 0);
    run.centers = kmeans_pp_init(points, k, rng);
    std::vector<std::size_t> counts(k, 0);

    double prev_sse = std::numeric_limits<double>::infinity();
    for (std::size_t iter = 0; iter < params.max_iters; ++iter) {
        double sse = assign_points(points, run.centers, params.jobs, run.assign);
        if (sse > prev_sse * (1.0 + 1e-12) + 1e-12)
            throw RuntimeError("kmeans: SSE increased across iterations");
        run.sse_history.push_back(sse);
        prev_sse = sse;

        std::vector<HashVector> old_centers = run.centers;
        update_centers(points, run.assign, k, params.jobs, run.centers, counts);
        repair_empty_clusters(points, run.assign, run.centers, counts);

        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            shift = std::max(shift, std::sqrt(sq_dist(old_centers[c], run.centers[c])));
        if (shift < params.tol) break;
    }
    // Final SSE of the returned (assignment, centers) pair. A fresh nearest-
    // center pass could re-empty a cluster repair just filled, so the
    // assignment is kept as-is.
    run.sse = fixed_sse(points, run.centers, run.assign, params.jobs);
    if (run.sse > prev_sse * (1.0 + 1e-12) + 1e-12)
        throw RuntimeError("kmeans: SSE increased at final assignment");
    run.sse_history.push_back(run.sse);
    return run;
}

std::size_t count_distinct(const std::vector<HashVector>& points) {
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < order.size(); ++i)
        if (i == 0 || points[order[i]] != points[order[i - 1]]) ++distinct;
    return distinct;
}

} // namespace

KmeansResult kmeans(const std::vector<std::pair<std::string, HashVector>>& vectors,
                    const KmeansParams& params) {
    if (params.k == 0) throw ValidationError("kmeans: K must be >= 1");
    if (params.max_iters == 0) throw ValidationError("kmeans: max_iters must be >= 1");
    if (vectors.empty()) throw ValidationError("kmeans: no vectors");

    std::vector<HashVector> points;
    points.reserve(vectors.size());
    for (const auto& [id, v] : vectors) {
        (void)id;
        points.push_back(v);
    }
    if (count_distinct(points) < params.k)
        throw ValidationError("kmeans: K exceeds the number of distinct vectors");

    KmeansRun best;
    std::size_t restarts = std::max<std::size_t>(1, params.restarts);
    for (std::size_t r = 0; r < restarts; ++r) {
        KmeansRun run = kmeans_single(points, params, mix_seed(params.seed, r));
        if (run.sse < best.sse) best = std::move(run);
    }

    KmeansResult result;
    result.sse = best.sse;
    result.sse_history = best.sse_history;
    result.meta.resize(params.k);
    for (std::size_t c = 0; c < params.k; ++c) {
        result.meta[c].cluster_id = make_cluster_id(c, params.k);
        result.meta[c].centroid = best.centers[c];
    }
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        const std::string& cid = result.meta[best.assign[i]].cluster_id;
        result.assignment.assign(vectors[i].first, cid);
        result.meta[best.assign[i]].size += 1;
    }
    for (auto& [cid, docs] : result.assignment.clusters) std::sort(docs.begin(), docs.end());
    result.assignment.check_disjoint();
    return result;
}

ClusterAssignment topic_union_find(const std::vector<Document>& docs) {
    // Union-find over labels; docs join the component of any of their labels.
    std::map<std::string, std::size_t> label_idx;
    std::vector<std::size_t> parent;
    auto find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    auto unite = [&](std::size_t a, std::size_t b) { parent[find(a)] = find(b); };
    auto intern = [&](const std::string& label) {
        auto it = label_idx.find(label);
        if (it != label_idx.end()) return it->second;
        std::size_t idx = parent.size();
        parent.push_back(idx);
        label_idx.emplace(label, idx);
        return idx;
    };

    std::vector<std::vector<std::size_t>> doc_labels(docs.size());
    std::vector<std::string> unlabeled;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (docs[i].topic_label) {
            const std::string& raw = *docs[i].topic_label;
            std::size_t start = 0;
            while (start <= raw.size()) {
                std::size_t sep = raw.find(';', start);
                std::string label = raw.substr(
                    start, sep == std::string::npos ? std::string::npos : sep - start);
                while (!label.empty() && label.front() == ' ') label.erase(label.begin());
                while (!label.empty() && label.back() == ' ') label.pop_back();
                if (!label.empty()) doc_labels[i].push_back(intern(label));
                if (sep == std::string::npos) break;
                start = sep + 1;
            }
        }
        if (doc_labels[i].empty()) unlabeled.push_back(docs[i].doc_id);
    }
    if (!unlabeled.empty()) {
        std::sort(unlabeled.begin(), unlabeled.end());
        throw ValidationError("topic_union_find: documents without topic label: " +
                              join(unlabeled, ", "));
    }
    for (const auto& labels : doc_labels)
        for (std::size_t j = 1; j < labels.size(); ++j) unite(labels[0], labels[j]);

    // Component id = lexicographically smallest member label. label_idx is
    // sorted, so the first label hitting a root names it.
    std::unordered_map<std::size_t, std::string> root_name;
    for (const auto& [label, idx] : label_idx) {
        std::size_t root = find(idx);
        if (!root_name.count(root)) root_name[root] = label;
    }

    ClusterAssignment assignment;
    for (std::size_t i = 0; i < docs.size(); ++i)
        assignment.assign(docs[i].doc_id, root_name[find(doc_labels[i][0])]);
    for (auto& [cid, members] : assignment.clusters) std::sort(members.begin(), members.end());
    assignment.check_disjoint();
    return assignment;
}

ClusterAssignment prune_clusters(const ClusterAssignment& assignment, std::size_t min_size,
                                 std::size_t max_size) {
    if (min_size > max_size) throw ValidationError("prune_clusters: min_size > max_size");
    ClusterAssignment out;
    out.unassigned = assignment.unassigned;
    for (const auto& [cid, docs] : assignment.clusters) {
        if (docs.size() < min_size || docs.size() > max_size) {
            out.unassigned.insert(out.unassigned.end(), docs.begin(), docs.end());
            continue;
        }
        out.clusters[cid] = docs;
        for (const auto& d : docs) out.doc_to_cluster[d] = cid;
    }
    if (out.clusters.empty())
        throw RuntimeError("prune_clusters: all clusters pruned, ecosystem is empty");
    std::sort(out.unassigned.begin(), out.unassigned.end());
    return out;
}

void CollectionTermStats::add(const TokenSequence& tokens) {
    for (const auto& t : tokens) {
        ++counts[t];
        ++total;
    }
}

std::vector<std::pair<std::string, double>> summarize_cluster(
    const std::vector<TokenSequence>& cluster_docs, const CollectionTermStats& stats,
    std::size_t n) {
    if (n == 0) throw ValidationError("summarize_cluster: n must be >= 1");
    if (cluster_docs.empty()) throw ValidationError("summarize_cluster: empty cluster");
    std::map<std::string, uint64_t> tf;
    for (const auto& doc : cluster_docs)
        for (const auto& t : doc) ++tf[t];
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(tf.size());
    for (const auto& [term, count] : tf) {
        auto it = stats.counts.find(term);
        uint64_t cf = it == stats.counts.end() ? count : it->second;
        double icf = std::log(1.0 + static_cast<double>(stats.total) / static_cast<double>(cf));
        scored.emplace_back(term, static_cast<double>(count) * icf);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (scored.size() > n) scored.resize(n);
    return scored;
}

void write_assignment_tsv(const ClusterAssignment& assignment, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& [doc_id, cid] : assignment.doc_to_cluster)
        out << doc_id << '\t' << cid << '\n';
}

ClusterAssignment load_assignment_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    ClusterAssignment assignment;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError(path + ": expected doc_id<TAB>cluster_id", lineno);
        assignment.assign(line.substr(0, tab), line.substr(tab + 1));
    }
    for (auto& [cid, docs] : assignment.clusters) std::sort(docs.begin(), docs.end());
    assignment.check_disjoint();
    return assignment;
}

void write_cluster_meta_jsonl(const std::vector<ClusterMeta>& meta, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& m : meta) {
        json terms = json::array();
        for (const auto& [term, weight] : m.top_terms) terms.push_back({term, weight});
        json j;
        j["cluster_id"] = m.cluster_id;
        j["size"] = m.size;
        j["top_terms"] = terms;
        out << j.dump() << '\n';
    }
}

} // namespace expertsim
