#pragma once

#include <Eigen/Core>

#include <cstdint>

#include "lexfuse/embedding.hpp"

namespace lexfuse {

// Row-streamed view of a |V_src| x |V_tgt| similarity matrix. The full
// matrix is never materialized; consumers pull row blocks.
class SimilaritySource {
public:
    virtual ~SimilaritySource() = default;
    virtual std::int64_t rows() const = 0;
    virtual std::int64_t cols() const = 0;
    // Scores for rows [begin, end), shape (end - begin) x cols().
    virtual Eigen::MatrixXd block(std::int64_t begin, std::int64_t end) const = 0;
};

// CSLS between mapped source rows and target rows:
//   score(x, y) = 2 cos(x, y) - r_tgt(x) - r_src(y)
// where r_tgt(x) is the mean cosine of x to its k nearest target rows and
// r_src(y) the mean cosine of y to its k nearest mapped source rows. The
// penalties discount hub points that are near-neighbors of everything.
//
// Rows are renormalized internally; zero rows have cosine 0 everywhere.
// Construction makes one streamed pass to collect the two penalty
// vectors; block() then recomputes cosine blocks on demand.
class CslsScorer : public SimilaritySource {
public:
    CslsScorer(const EmbeddingSet& mapped, const EmbeddingSet& target, int k,
               std::int64_t block_rows = 1024, unsigned threads = 1);

    std::int64_t rows() const override { return source_.rows(); }
    std::int64_t cols() const override { return target_.rows(); }
    Eigen::MatrixXd block(std::int64_t begin, std::int64_t end) const override;

    int k_neighbors() const { return k_; }
    const Eigen::VectorXd& target_penalty() const { return r_tgt_; }  // indexed by source row
    const Eigen::VectorXd& source_penalty() const { return r_src_; }  // indexed by target row

private:
    Eigen::MatrixXd source_;  // unit rows
    Eigen::MatrixXd target_;  // unit rows
    Eigen::VectorXd r_tgt_;
    Eigen::VectorXd r_src_;
    int k_;
    std::int64_t block_rows_;
};

} // namespace lexfuse
