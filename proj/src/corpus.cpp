#include "expertsim/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace expertsim {

using json = nlohmann::ordered_json;

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split: " + s);
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "train";
}

TokenSequence tokenize(std::string_view text) {
    TokenSequence out;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            if (cur.size() >= 2) out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (cur.size() >= 2) out.push_back(std::move(cur));
    return out;
}

TokenSequence tokenize(std::string_view text, const std::vector<std::string>& stopwords) {
    TokenSequence toks = tokenize(text);
    if (stopwords.empty()) return toks;
    std::unordered_set<std::string> stop(stopwords.begin(), stopwords.end());
    TokenSequence out;
    out.reserve(toks.size());
    for (auto& t : toks)
        if (!stop.count(t)) out.push_back(std::move(t));
    return out;
}

namespace {

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    return in;
}

json parse_line(const std::string& line, std::size_t lineno, const std::string& path) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what(), lineno);
    }
}

std::string require_string(const json& j, const char* key, std::size_t lineno,
                           const std::string& path) {
    if (!j.contains(key) || !j[key].is_string())
        throw ParseError(path + ": missing or non-string field '" + key + "'", lineno);
    return j[key].get<std::string>();
}

} // namespace

void load_documents(const std::string& path, CorpusFormat format,
                    const std::function<void(Document&&)>& sink) {
    std::ifstream in = open_or_throw(path);
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Document doc;
        if (format == CorpusFormat::jsonl) {
            json j = parse_line(line, lineno, path);
            doc.doc_id = require_string(j, "doc_id", lineno, path);
            doc.text = require_string(j, "text", lineno, path);
            if (j.contains("topic") && j["topic"].is_string())
                doc.topic_label = j["topic"].get<std::string>();
        } else {
            auto tab1 = line.find('\t');
            if (tab1 == std::string::npos)
                throw ParseError(path + ": expected doc_id<TAB>text", lineno);
            doc.doc_id = line.substr(0, tab1);
            auto tab2 = line.find('\t', tab1 + 1);
            if (tab2 == std::string::npos) {
                doc.text = line.substr(tab1 + 1);
            } else {
                doc.text = line.substr(tab1 + 1, tab2 - tab1 - 1);
                doc.topic_label = line.substr(tab2 + 1);
            }
        }
        if (doc.doc_id.empty()) throw ParseError(path + ": empty doc_id", lineno);
        if (!seen.insert(doc.doc_id).second)
            throw ValidationError("duplicate doc_id '" + doc.doc_id + "' at line " +
                                  std::to_string(lineno) + " of " + path);
        sink(std::move(doc));
    }
}

std::vector<Document> load_documents(const std::string& path, CorpusFormat format) {
    std::vector<Document> docs;
    load_documents(path, format, [&](Document&& d) { docs.push_back(std::move(d)); });
    return docs;
}

void write_documents_jsonl(const std::vector<Document>& docs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& d : docs) {
        json j;
        j["doc_id"] = d.doc_id;
        j["text"] = d.text;
        if (d.topic_label) j["topic"] = *d.topic_label;
        out << j.dump() << '\n';
    }
}

std::vector<QaPair> load_qa_dataset(const std::string& path, Split split) {
    std::ifstream in = open_or_throw(path);
    std::vector<QaPair> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_line(line, lineno, path);
        QaPair qa;
        qa.query_id = require_string(j, "query_id", lineno, path);
        qa.question = require_string(j, "question", lineno, path);
        if (!j.contains("gold_answers") || !j["gold_answers"].is_array() ||
            j["gold_answers"].empty())
            throw ParseError(path + ": gold_answers missing or empty for " + qa.query_id,
                             lineno);
        for (const auto& a : j["gold_answers"]) qa.gold_answers.push_back(a.get<std::string>());
        if (j.contains("relevant_doc_ids"))
            for (const auto& d : j["relevant_doc_ids"])
                qa.relevant_doc_ids.push_back(d.get<std::string>());
        qa.split = j.contains("split") ? split_from_string(j["split"].get<std::string>()) : split;
        if (qa.split != split) continue;
        if (!seen.insert(qa.query_id).second)
            throw ValidationError("duplicate query_id '" + qa.query_id + "' in split " +
                                  to_string(split) + " of " + path);
        out.push_back(std::move(qa));
    }
    return out;
}

void write_qa_jsonl(const std::vector<QaPair>& pairs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write file: " + path);
    for (const auto& qa : pairs) {
        json j;
        j["query_id"] = qa.query_id;
        j["question"] = qa.question;
        j["gold_answers"] = qa.gold_answers;
        if (!qa.relevant_doc_ids.empty()) j["relevant_doc_ids"] = qa.relevant_doc_ids;
        j["split"] = to_string(qa.split);
        out << j.dump() << '\n';
    }
}

DocumentStore::DocumentStore(std::vector<Document> docs) : docs_(std::move(docs)) {
    by_id_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (!by_id_.emplace(docs_[i].doc_id, i).second)
            throw ValidationError("duplicate doc_id in store: " + docs_[i].doc_id);
    }
}

const Document* DocumentStore::find(const std::string& doc_id) const {
    auto it = by_id_.find(doc_id);
    return it == by_id_.end() ? nullptr : &docs_[it->second];
}

std::size_t DocumentStore::index_of(const std::string& doc_id) const {
    auto it = by_id_.find(doc_id);
    if (it == by_id_.end()) throw ValidationError("unknown doc_id: " + doc_id);
    return it->second;
}

namespace {

std::string lowercase_copy(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

struct QuasartSplitResult {
    std::vector<QaPair> pairs;
    std::vector<Document> docs;
};

QuasartSplitResult import_quasart_split(const std::string& dir, Split split) {
    const std::string name = to_string(split);
    const std::string qpath = dir + "/" + name + "_questions.json";
    const std::string cpath = dir + "/" + name + "_contexts.json";

    // uid -> (question, answer), in file order
    std::vector<std::pair<std::string, std::pair<std::string, std::string>>> questions;
    {
        std::ifstream in = open_or_throw(qpath);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            json j = parse_line(line, lineno, qpath);
            std::string uid = require_string(j, "uid", lineno, qpath);
            std::string question = require_string(j, "question", lineno, qpath);
            std::string answer = require_string(j, "answer", lineno, qpath);
            questions.emplace_back(std::move(uid), std::make_pair(std::move(question),
                                                                  std::move(answer)));
        }
    }
    std::unordered_map<std::string, std::size_t> qidx;
    for (std::size_t i = 0; i < questions.size(); ++i) qidx[questions[i].first] = i;

    QuasartSplitResult res;
    res.pairs.resize(questions.size());
    for (std::size_t i = 0; i < questions.size(); ++i) {
        res.pairs[i].query_id = questions[i].first;
        res.pairs[i].question = questions[i].second.first;
        res.pairs[i].gold_answers = {questions[i].second.second};
        res.pairs[i].split = split;
    }

    std::ifstream in = open_or_throw(cpath);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_line(line, lineno, cpath);
        std::string uid = require_string(j, "uid", lineno, cpath);
        auto it = qidx.find(uid);
        if (it == qidx.end())
            throw ParseError(cpath + ": context uid without question: " + uid, lineno);
        QaPair& qa = res.pairs[it->second];
        const std::string answer_lc = lowercase_copy(qa.gold_answers.front());
        if (!j.contains("contexts") || !j["contexts"].is_array())
            throw ParseError(cpath + ": missing contexts array", lineno);
        std::size_t k = 0;
        for (const auto& ctx : j["contexts"]) {
            // contexts are [score, text] pairs
            if (!ctx.is_array() || ctx.size() < 2)
                throw ParseError(cpath + ": context entry is not [score, text]", lineno);
            Document doc;
            doc.doc_id = uid + "_ctx" + std::to_string(k++);
            doc.text = ctx[1].get<std::string>();
            if (lowercase_copy(doc.text).find(answer_lc) != std::string::npos)
                qa.relevant_doc_ids.push_back(doc.doc_id);
            res.docs.push_back(std::move(doc));
        }
    }
    return res;
}

} // namespace

QuasartCounts import_quasart(const std::string& dataset_dir, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    QuasartCounts counts;
    std::vector<Document> all_docs;
    std::vector<QaPair> all_pairs;
    for (Split split : {Split::train, Split::dev, Split::test}) {
        QuasartSplitResult res = import_quasart_split(dataset_dir, split);
        std::size_t n = res.pairs.size();
        if (split == Split::train) counts.train = n;
        if (split == Split::dev) counts.dev = n;
        if (split == Split::test) counts.test = n;
        all_pairs.insert(all_pairs.end(), res.pairs.begin(), res.pairs.end());
        all_docs.insert(all_docs.end(), res.docs.begin(), res.docs.end());
    }
    counts.docs = all_docs.size();
    write_documents_jsonl(all_docs, out_dir + "/corpus.jsonl");
    write_qa_jsonl(all_pairs, out_dir + "/qa.jsonl");
    return counts;
}

} // namespace expertsim
