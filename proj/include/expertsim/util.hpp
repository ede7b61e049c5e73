#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace expertsim {

// Fixed-size chunking so parallel reductions merge partials in a stable order:
// results are byte-identical for any job count.
constexpr std::size_t kChunkSize = 1024;

inline std::size_t chunk_count(std::size_t n) { return (n + kChunkSize - 1) / kChunkSize; }

// Runs fn(chunk_index, begin, end) over fixed chunks of [0, n) with at most
// `jobs` worker threads. fn must only write to chunk-owned state.
void parallel_chunks(std::size_t n, std::size_t jobs,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

std::string join(const std::vector<std::string>& parts, const std::string& sep);

} // namespace expertsim
