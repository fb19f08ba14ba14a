#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lexfuse/mapping.hpp"

namespace lexfuse {

enum class DistSpace { native, pivot };

// A sparse probability vector over one model's vocabulary at one decode
// step. Entries are (token id, probability), sorted by id, all positive.
struct TokenDistribution {
    std::string model_id;
    DistSpace space = DistSpace::native;
    std::vector<std::pair<std::int32_t, double>> probs;

    double sum() const;
    void normalize();  // rescale to sum 1; throws on zero or negative mass
    void sort_by_id();
    void validate() const;

    // Ids ordered by probability descending, ties by ascending id.
    std::vector<std::int32_t> top_ids(std::size_t n) const;
    std::int32_t argmax() const;  // -1 when empty
    double prob_of(std::int32_t id) const;

    static TokenDistribution from_dense(const std::string& model_id,
                                        const std::vector<double>& dense);
};

// Zero all but the k most probable entries, then renormalize. Ties at the
// cutoff keep the lower token id.
TokenDistribution topk_truncate(const TokenDistribution& dist, int k);

// Project a native distribution into the pivot space through the sparse
// mapping. Mass landing on dropped rows is lost and the result is
// renormalized; nullopt when the entire support is unmapped, which the
// engine treats as the model sitting this step out.
std::optional<TokenDistribution> project(const TokenDistribution& dist, const SparseMapping& mapping);

// Eq-style consistency filter: model l survives when its top-1 token is
// inside some other model's top-n set. Sets use probability order with
// ascending-id tie-break.
std::vector<int> filter_models(const std::vector<TokenDistribution>& dists, int n);

// Arithmetic mean of the surviving distributions. At least one survivor
// is required.
TokenDistribution fuse(const std::vector<TokenDistribution>& dists, const std::vector<int>& keep);

} // namespace lexfuse
