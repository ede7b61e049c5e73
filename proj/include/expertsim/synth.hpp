#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "expertsim/corpus.hpp"

namespace expertsim {

// Synthetic benchmark with planted expertise. Topics get disjoint vocabulary;
// a handful of "hub" topics additionally hold one planted fact sentence per
// query. The fact sentence is three globally unique subject tokens followed
// by the source topic's three topic words, and doubles verbatim as the query
// text and gold answer. Every document of a topic opens with that topic's
// three topic words, so the topic's own expert can always extract a partial
// (grade-1) answer while only the hub holding the fact can answer exactly.
struct SynthParams {
    std::size_t num_topics = 50;      // includes the hubs
    std::size_t docs_per_topic = 100;
    std::size_t num_queries = 500;
    std::size_t num_hubs = 3;         // topics 0..num_hubs-1
    std::size_t filler_vocab = 30;    // per-topic filler pool size
    std::size_t sentences_per_doc = 5;
    std::size_t tokens_per_sentence = 6;
    std::size_t train = 350;
    std::size_t dev = 50;
    std::size_t test = 100;           // train + dev + test == num_queries
    uint64_t seed = 0;
};

struct SynthCollection {
    std::vector<Document> docs;
    std::vector<QaPair> queries;
};

SynthCollection generate_synthetic(const SynthParams& params);

// Writes corpus.jsonl and qa.jsonl under out_dir.
void write_synthetic(const SynthCollection& collection, const std::string& out_dir);

} // namespace expertsim
