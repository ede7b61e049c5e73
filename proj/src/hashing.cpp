#include "expertsim/hashing.hpp"

#include <cmath>
#include <map>

#include "expertsim/errors.hpp"

namespace expertsim {

HashVector hash_vectorize(const TokenSequence& tokens, std::size_t dim, uint64_t hash_seed) {
    if (dim == 0) throw ValidationError("hash_vectorize: dim must be >= 1");
    HashVector v(dim, 0.0);
    // Accumulate per distinct token so the result is independent of token order.
    std::map<std::string_view, uint64_t> counts;
    for (const auto& t : tokens) ++counts[t];
    bool any = false;
    for (const auto& [tok, count] : counts) {
        uint64_t h = token_hash(tok, hash_seed);
        double sign = (h >> 63) ? -1.0 : 1.0;
        v[h % dim] += sign * static_cast<double>(count);
        any = true;
    }
    if (!any) return v;
    double norm = l2_norm(v);
    if (norm > 0.0)
        for (double& x : v) x /= norm;
    return v;
}

double dot(const HashVector& a, const HashVector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const HashVector& v) {
    return std::sqrt(dot(v, v));
}

double cosine(const HashVector& a, const HashVector& b) {
    double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

} // namespace expertsim
