#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lexfuse/engine.hpp"
#include "lexfuse/mapping.hpp"

namespace lexfuse {

// Levenshtein distance with unit insert/delete/substitute costs over
// Unicode scalar values. Invalid UTF-8 bytes count as one unit each.
std::size_t edit_distance(const std::string& a, const std::string& b);

// One model's probability-ordered candidate tokens at one decode position.
struct TopList {
    std::string model;
    std::vector<std::string> tokens;
};

struct DiversityReport {
    // Pooled over all positions and models.
    std::vector<std::pair<int, double>> per_n;
    // Per-model breakdown, same n order.
    std::map<std::string, std::vector<std::pair<int, double>>> per_model;
    std::size_t sample_count = 0;   // top lists examined
    std::size_t truncated_lists = 0;  // lists shorter than the largest n
};

// Token diversity as the mean edit distance between the rank-2..n tokens
// and the rank-1 token, averaged over positions and models. Lists shorter
// than n contribute their available ranks.
DiversityReport diversity(const std::vector<TopList>& lists, const std::vector<int>& n_values);

// Pull the native top lists out of decode step logs.
std::vector<TopList> collect_top_lists(const std::vector<DecodeState>& states);

struct SimilarityHistogram {
    std::vector<double> edges;       // ascending; bin i is [edges[i], edges[i+1]),
                                     // the last bin closed on the right
    std::vector<std::size_t> bin_counts;
    std::size_t underflow = 0;
    std::size_t overflow = 0;
    std::size_t dropped_empty_rows = 0;
    std::size_t dropped_variance_rows = 0;
    std::size_t aligned_rows = 0;

    std::size_t total() const;
};

// Histogram of the retained pre-normalization scores in a mapping.
SimilarityHistogram similarity_bins(const SparseMapping& mapping,
                                    const std::vector<double>& edges = {0.1, 0.4, 0.6, 1.0});

} // namespace lexfuse
