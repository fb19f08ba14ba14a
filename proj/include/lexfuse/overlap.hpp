#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lexfuse/embedding.hpp"

namespace lexfuse {

// Index pairs (i, j) of byte-identical tokens between a source and a
// target vocabulary. One-to-one by construction; ordered by ascending i.
struct OverlapDictionary {
    std::vector<std::pair<std::int32_t, std::int32_t>> pairs;
    std::size_t source_size = 0;
    std::size_t target_size = 0;
};

struct OverlapOptions {
    // Treat the sentencepiece word-boundary marker U+2581 as a plain
    // space when comparing surfaces. Off by default: overlap means
    // literal token identity.
    bool fold_space_marker = false;
};

OverlapDictionary build_overlap(const Vocabulary& source, const Vocabulary& target,
                                const OverlapOptions& opts = {});

enum class RateRelativeTo { source, target };

double overlap_rate(const OverlapDictionary& dict, RateRelativeTo relative_to);

} // namespace lexfuse
