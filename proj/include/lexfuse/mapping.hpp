#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lexfuse/digest.hpp"
#include "lexfuse/embedding.hpp"
#include "lexfuse/similarity.hpp"

namespace lexfuse {

// Knobs for the three noise-reduction passes applied to each similarity
// row: keep the top-t scores, drop scores below the threshold, and zero
// whole rows whose surviving scores are too uniform to mean anything
// (low variance over at least c entries, the special-token pattern).
struct NoiseConfig {
    int t = 10;
    double threshold = 0.1;
    double sigma = 1e-4;
    int c = 5;
    bool population_variance = true;  // divide by n rather than n - 1
    bool row_normalize = true;        // rescale surviving rows to sum 1

    void validate() const;
};

enum class RowKind : std::uint8_t { aligned = 0, dropped_empty = 1, dropped_variance = 2 };

struct MappingEntry {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    float score = 0.0f;   // retained similarity, before normalization
    double weight = 0.0;  // projection weight (score / row sum when normalizing)
};

// The sparse projection matrix from a source vocabulary onto the target
// (pivot) vocabulary. Entries are COO sorted by (row, col), at most t per
// row. Provenance digests tie the mapping to the vocabularies, embedding
// sets, and transform it was derived from.
struct SparseMapping {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    NoiseConfig config;
    std::vector<MappingEntry> entries;
    std::vector<RowKind> row_kind;

    Digest source_vocab_digest{};
    Digest target_vocab_digest{};
    Digest source_emb_digest{};
    Digest target_emb_digest{};
    Digest transform_digest{};
    std::uint32_t csls_k = 0;

    std::size_t nnz() const { return entries.size(); }
    std::span<const MappingEntry> row_entries(std::int64_t row) const;
    std::size_t count_kind(RowKind kind) const;

    void rebuild_row_index();  // also recomputes weights from scores
    void validate() const;

private:
    std::vector<std::int64_t> row_ptr_;
};

// The three row passes, exposed separately so they can be checked against
// a single-pass reference. Each takes and returns a dense score row;
// zeroed positions mean "not retained".

// Keep the t largest entries; ties keep the lower column id.
Eigen::VectorXd top_t_truncate(const Eigen::VectorXd& row, int t);

// Zero entries strictly below the threshold (equality is retained).
Eigen::VectorXd threshold_truncate(const Eigen::VectorXd& row, double threshold);

// Zero the whole row when the variance of its nonzero entries is <= sigma
// and there are at least c of them.
Eigen::VectorXd variance_truncate(const Eigen::VectorXd& row, double sigma, int c,
                                  bool population_variance = true);

struct BuildOptions {
    std::int64_t block_rows = 1024;
    unsigned threads = 1;
};

// Stream the similarity source through the three passes and assemble the
// sparse mapping. Rows are independent; the result does not depend on the
// thread count.
SparseMapping build_mapping(const SimilaritySource& sim, const NoiseConfig& cfg,
                            const BuildOptions& opts = {});

// "EVAM" file: header (version, vocabulary digests, noise config, shape,
// csls k, embedding/transform digests, dropped-variance row ids), then
// nnz (u32 row, u32 col, f32 score) triples sorted by (row, col).
// Normalized weights are recomputed from the stored scores on load, so
// the round trip is lossless.
void save_mapping(const SparseMapping& mapping, const std::string& path);
SparseMapping load_mapping(const std::string& path);

// Refuse to use a mapping against vocabularies it was not built from.
void verify_mapping_vocabs(const SparseMapping& mapping, const Vocabulary& source,
                           const Vocabulary& target, bool force = false);

} // namespace lexfuse
