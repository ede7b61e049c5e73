#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "expertsim/errors.hpp"

namespace expertsim {

struct Document {
    std::string doc_id;
    std::string text;
    std::optional<std::string> topic_label;
};

enum class Split { train, dev, test };

Split split_from_string(const std::string& s);
std::string to_string(Split s);

struct QaPair {
    std::string query_id;
    std::string question;
    std::vector<std::string> gold_answers;      // non-empty
    std::vector<std::string> relevant_doc_ids;  // may be empty
    Split split = Split::train;
};

// Lowercased tokens, length >= 2, order preserved.
using TokenSequence = std::vector<std::string>;

// Lowercase, split on every non-alphanumeric byte, drop tokens shorter than
// two characters. ASCII-only by design; multibyte UTF-8 acts as a separator.
TokenSequence tokenize(std::string_view text);
TokenSequence tokenize(std::string_view text, const std::vector<std::string>& stopwords);

enum class CorpusFormat { jsonl, tsv };

// Streams documents in file order. Throws ParseError on malformed records and
// ValidationError on duplicate doc ids.
void load_documents(const std::string& path, CorpusFormat format,
                    const std::function<void(Document&&)>& sink);

std::vector<Document> load_documents(const std::string& path, CorpusFormat format);

void write_documents_jsonl(const std::vector<Document>& docs, const std::string& path);

std::vector<QaPair> load_qa_dataset(const std::string& path, Split split);

void write_qa_jsonl(const std::vector<QaPair>& pairs, const std::string& path);

// In-memory collection with id lookup. Immutable once built.
class DocumentStore {
public:
    DocumentStore() = default;
    explicit DocumentStore(std::vector<Document> docs);

    const std::vector<Document>& docs() const { return docs_; }
    std::size_t size() const { return docs_.size(); }
    const Document& at(std::size_t idx) const { return docs_[idx]; }
    const Document* find(const std::string& doc_id) const;
    std::size_t index_of(const std::string& doc_id) const;  // throws if unknown

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

// QUASAR-T import. Reads the dataset's {split}_questions.json and
// {split}_contexts.json files (gunzipped JSON lines) and emits our QA JSONL
// plus a corpus JSONL of context pseudo-documents.
//
// Mapping, since the source has no document ids of its own:
//   - pseudo-doc id = "<uid>_ctx<k>" for the k-th context of question uid
//   - gold_answers  = [answer]
//   - relevant_doc_ids = pseudo-docs whose text contains the answer
//     (case-insensitive substring)
struct QuasartCounts {
    std::size_t train = 0, dev = 0, test = 0, docs = 0;
};
QuasartCounts import_quasart(const std::string& dataset_dir, const std::string& out_dir);

} // namespace expertsim
