#include "expertsim/synth.hpp"

#include <filesystem>

#include "expertsim/errors.hpp"
#include "expertsim/rng.hpp"

namespace expertsim {

namespace {

std::string zpad(std::size_t value, int width) {
    std::string s = std::to_string(value);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

std::string topic_word(std::size_t topic, int j) {
    return "tw" + zpad(topic, 3) + static_cast<char>('a' + j);
}

std::string subject_word(std::size_t fact, int j) {
    return "subj" + zpad(fact, 4) + static_cast<char>('a' + j);
}

std::string join(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

} // namespace

SynthCollection generate_synthetic(const SynthParams& p) {
    if (p.num_topics < 2) throw ValidationError("synth: num_topics must be >= 2");
    if (p.num_hubs == 0 || p.num_hubs >= p.num_topics)
        throw ValidationError("synth: num_hubs must be in [1, num_topics)");
    if (p.docs_per_topic == 0) throw ValidationError("synth: docs_per_topic must be > 0");
    if (p.filler_vocab == 0) throw ValidationError("synth: filler_vocab must be > 0");
    if (p.sentences_per_doc < 2)
        throw ValidationError("synth: sentences_per_doc must be >= 2");
    if (p.tokens_per_sentence < 6)
        throw ValidationError("synth: tokens_per_sentence must be >= 6");
    if (p.train + p.dev + p.test != p.num_queries)
        throw ValidationError("synth: train + dev + test must equal num_queries");

    const std::size_t source_topics = p.num_topics - p.num_hubs;
    constexpr std::size_t kSharedVocab = 16;

    // Plan one fact per query: which topic it speaks about, which hub document
    // holds it, and the sentence itself (three unique subjects + topic words).
    struct Fact {
        std::size_t source_topic;
        std::size_t hub;
        std::size_t hub_doc;  // index within the hub topic's documents
        std::string sentence; // == question == gold answer
    };
    std::vector<Fact> facts(p.num_queries);
    // fact sentences keyed by (hub topic, doc index)
    std::vector<std::vector<std::vector<std::string>>> planted(
        p.num_hubs, std::vector<std::vector<std::string>>(p.docs_per_topic));
    for (std::size_t i = 0; i < p.num_queries; ++i) {
        Fact& f = facts[i];
        f.source_topic = p.num_hubs + (i % source_topics);
        f.hub = i % p.num_hubs;
        f.hub_doc = (i / p.num_hubs) % p.docs_per_topic;
        std::vector<std::string> tokens;
        for (int j = 0; j < 3; ++j) tokens.push_back(subject_word(i, j));
        for (int j = 0; j < 3; ++j) tokens.push_back(topic_word(f.source_topic, j));
        f.sentence = join(tokens);
        planted[f.hub][f.hub_doc].push_back(f.sentence);
    }

    SplitMix64 rng(mix_seed(p.seed, "synth-filler"));
    auto filler_token = [&](std::size_t topic) {
        if (rng.next_below(8) == 0)
            return "shared" + zpad(rng.next_below(kSharedVocab), 2);
        return "fl" + zpad(topic, 3) + "r" + zpad(rng.next_below(p.filler_vocab), 3);
    };

    SynthCollection out;
    out.docs.reserve(p.num_topics * p.docs_per_topic);
    for (std::size_t t = 0; t < p.num_topics; ++t) {
        for (std::size_t d = 0; d < p.docs_per_topic; ++d) {
            Document doc;
            doc.doc_id = "t" + zpad(t, 2) + "d" + zpad(d, 3);
            doc.topic_label = "topic" + zpad(t, 2);
            std::vector<std::string> sentences;
            std::vector<std::string> first;
            for (int j = 0; j < 3; ++j) first.push_back(topic_word(t, j));
            for (int j = 0; j < 3; ++j)
                first.push_back("dv" + zpad(t, 2) + "d" + zpad(d, 3) +
                                static_cast<char>('a' + j));
            sentences.push_back(join(first));
            if (t < p.num_hubs)
                for (const auto& fact : planted[t][d]) sentences.push_back(fact);
            for (std::size_t s = 1; s < p.sentences_per_doc; ++s) {
                std::vector<std::string> tokens;
                for (std::size_t j = 0; j < p.tokens_per_sentence; ++j)
                    tokens.push_back(filler_token(t));
                sentences.push_back(join(tokens));
            }
            std::string text;
            for (const auto& s : sentences) {
                text += s;
                text += ". ";
            }
            if (!text.empty()) text.pop_back();  // drop the trailing space
            doc.text = std::move(text);
            out.docs.push_back(std::move(doc));
        }
    }

    out.queries.reserve(p.num_queries);
    for (std::size_t i = 0; i < p.num_queries; ++i) {
        const Fact& f = facts[i];
        QaPair qa;
        qa.query_id = "q" + zpad(i, 4);
        qa.question = f.sentence;
        qa.gold_answers = {f.sentence};
        qa.relevant_doc_ids = {"t" + zpad(f.hub, 2) + "d" + zpad(f.hub_doc, 3)};
        qa.split = i < p.train            ? Split::train
                   : i < p.train + p.dev ? Split::dev
                                         : Split::test;
        out.queries.push_back(std::move(qa));
    }
    return out;
}

void write_synthetic(const SynthCollection& collection, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_documents_jsonl(collection.docs, out_dir + "/corpus.jsonl");
    write_qa_jsonl(collection.queries, out_dir + "/qa.jsonl");
}

} // namespace expertsim
