#include "expertsim/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "expertsim/errors.hpp"

namespace expertsim {

TokenSequence normalize_answer_tokens(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char c : text) {
        if (c < 0x80 && std::ispunct(c)) continue;  // deleted, not a separator
        cleaned.push_back(c < 0x80 ? static_cast<char>(std::tolower(c))
                                   : static_cast<char>(c));
    }
    TokenSequence tokens;
    std::string current;
    auto flush = [&]() {
        if (!current.empty() && current != "a" && current != "an" && current != "the")
            tokens.push_back(current);
        current.clear();
    };
    for (unsigned char c : cleaned) {
        if (c < 0x80 && std::isspace(c))
            flush();
        else
            current.push_back(static_cast<char>(c));
    }
    flush();
    return tokens;
}

std::string normalize_answer(std::string_view text) {
    auto tokens = normalize_answer_tokens(text);
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

double token_f1(const TokenSequence& a, const TokenSequence& b) {
    if (a.empty() || b.empty()) return 0.0;
    std::map<std::string, std::size_t> counts;
    for (const auto& t : a) ++counts[t];
    std::size_t overlap = 0;
    for (const auto& t : b) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    double precision = static_cast<double>(overlap) / static_cast<double>(a.size());
    double recall = static_cast<double>(overlap) / static_cast<double>(b.size());
    return 2.0 * precision * recall / (precision + recall);
}

AnswerScore answer_metrics(const std::string& pred, const std::vector<std::string>& golds) {
    if (golds.empty()) throw ValidationError("answer_metrics: empty gold answer list");
    AnswerScore score;
    auto pred_tokens = normalize_answer_tokens(pred);
    if (pred_tokens.empty()) return score;  // empty prediction scores zero
    std::string pred_norm = normalize_answer(pred);
    for (const auto& gold : golds) {
        if (normalize_answer(gold) == pred_norm) score.exact_match = 1;
        score.token_f1 = std::max(score.token_f1,
                                  token_f1(pred_tokens, normalize_answer_tokens(gold)));
    }
    return score;
}

std::string to_string(GainKind gain) {
    return gain == GainKind::exponential ? "exponential" : "linear";
}

GainKind gain_from_string(const std::string& name) {
    if (name == "exponential") return GainKind::exponential;
    if (name == "linear") return GainKind::linear;
    throw ValidationError("unknown gain function: " + name);
}

double ndcg_at_k(const std::vector<int>& ranked_grades, std::size_t k, GainKind gain) {
    if (k < 1) throw ValidationError("ndcg_at_k: k must be >= 1");
    auto dcg = [&](const std::vector<int>& grades) {
        double sum = 0.0;
        for (std::size_t r = 0; r < std::min(k, grades.size()); ++r) {
            double g = gain == GainKind::exponential ? std::pow(2.0, grades[r]) - 1.0
                                                     : static_cast<double>(grades[r]);
            sum += g / std::log2(static_cast<double>(r) + 2.0);
        }
        return sum;
    };
    std::vector<int> ideal = ranked_grades;
    std::sort(ideal.begin(), ideal.end(), std::greater<int>());
    double idcg = dcg(ideal);
    if (idcg == 0.0) return 0.0;
    return dcg(ranked_grades) / idcg;
}

double mrr(const std::vector<int>& ranked_grades) {
    for (std::size_t r = 0; r < ranked_grades.size(); ++r)
        if (ranked_grades[r] >= 1) return 1.0 / static_cast<double>(r + 1);
    return 0.0;
}

double recall_at_k(const std::vector<int>& ranked_grades, std::size_t k) {
    if (k < 1) throw ValidationError("recall_at_k: k must be >= 1");
    std::size_t relevant = 0, hit = 0;
    for (std::size_t r = 0; r < ranked_grades.size(); ++r) {
        if (ranked_grades[r] >= 1) {
            ++relevant;
            if (r < k) ++hit;
        }
    }
    if (relevant == 0) return 0.0;
    return static_cast<double>(hit) / static_cast<double>(relevant);
}

} // namespace expertsim
