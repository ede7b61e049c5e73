#pragma once

#include <cstdint>
#include <vector>

#include "expertsim/corpus.hpp"
#include "expertsim/rng.hpp"

namespace expertsim {

// Fixed-length signed term-frequency projection. L2 norm is 1 unless the
// token input was empty, in which case the vector is all-zero.
using HashVector = std::vector<double>;

// Hash of a token as used by the vectorizer: FNV-1a over the token's UTF-8
// bytes, xor'd with the seed. Bucket is H mod dim, sign comes from bit 63.
inline uint64_t token_hash(std::string_view token, uint64_t seed) {
    return fnv1a64(token) ^ seed;
}

HashVector hash_vectorize(const TokenSequence& tokens, std::size_t dim, uint64_t hash_seed);

double dot(const HashVector& a, const HashVector& b);
double l2_norm(const HashVector& v);
double cosine(const HashVector& a, const HashVector& b);  // 0 when either is all-zero

} // namespace expertsim
