#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "expertsim/corpus.hpp"

namespace expertsim {

// Answer normalization: lowercase, delete punctuation, collapse whitespace,
// drop the articles {a, an, the}. Shared by exact match, answer F1, and the
// leakage filter so all answer comparisons agree.
std::string normalize_answer(std::string_view text);
TokenSequence normalize_answer_tokens(std::string_view text);

// Unigram-overlap F1 between two token multisets (counts capped by multiset
// intersection). Either side empty -> 0.
double token_f1(const TokenSequence& a, const TokenSequence& b);

struct AnswerScore {
    int exact_match = 0;   // 1 iff normalized pred equals any normalized gold
    double token_f1 = 0.0; // max over golds; EM = 1 implies F1 = 1
};

// Empty golds -> ValidationError. Empty normalized prediction scores (0, 0).
AnswerScore answer_metrics(const std::string& pred, const std::vector<std::string>& golds);

// nDCG gain function: exponential (2^g - 1, the default) or linear (g).
enum class GainKind { exponential, linear };

std::string to_string(GainKind gain);
GainKind gain_from_string(const std::string& name);

// Graded ranking metrics. `ranked_grades` lists the grade of the expert at
// each rank, rank 1 first. nDCG uses gain 2^g - 1 and log2(rank+1) discounts;
// IDCG is computed over the same grades sorted descending, truncated at k.
// All grades zero -> 0. MRR and recall binarize at grade >= 1.
double ndcg_at_k(const std::vector<int>& ranked_grades, std::size_t k,
                 GainKind gain = GainKind::exponential);
double mrr(const std::vector<int>& ranked_grades);
double recall_at_k(const std::vector<int>& ranked_grades, std::size_t k);

} // namespace expertsim
