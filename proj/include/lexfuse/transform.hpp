#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "lexfuse/digest.hpp"
#include "lexfuse/embedding.hpp"
#include "lexfuse/overlap.hpp"

namespace lexfuse {

struct TransformConfig {
    bool whiten = true;
    // Exponent on the singular values applied to the source side. When
    // unset, defaults to 0.5 with whitening on and to 0 with whitening
    // off, so the unwhitened pipeline is plain orthogonal Procrustes.
    std::optional<double> reweight;
    bool dewhiten = true;

    double effective_reweight() const { return reweight.value_or(whiten ? 0.5 : 0.0); }
};

// The learned d_src x d_tgt matrix mapping source embeddings into the
// target space, plus the pipeline settings and input digests it came from.
struct LinearTransform {
    Eigen::MatrixXd matrix;
    struct Meta {
        bool whiten = true;
        double reweight = 0.5;
        bool dewhiten = true;
        Digest source_digest{};  // digests of the embedding sets used for learning
        Digest target_digest{};
    } meta;
};

// Solve for the transform that carries dictionary-paired source rows onto
// their target rows: whiten both sides, solve the orthogonal alignment by
// SVD of the cross-covariance, scale by the singular values to the
// configured power, then de-whiten into the target space. With whitening
// off this reduces to the closed-form Procrustes solution.
//
// Both sets must be preprocessed. Supervision below max(d_src, d_tgt)
// pairs and floored eigenvalues are reported through `warnings`.
LinearTransform learn_transform(const EmbeddingSet& source, const EmbeddingSet& target,
                                const OverlapDictionary& dict, const TransformConfig& cfg,
                                std::vector<std::string>* warnings = nullptr);

// Right-multiply the embedding rows by the transform. The result is marked
// mapped and loses the preprocessed flag (rows are no longer unit norm).
EmbeddingSet apply_transform(const EmbeddingSet& set, const LinearTransform& transform);

// Sum of squared residuals over the dictionary pairs (the alignment
// objective the learner minimizes).
double alignment_residual(const EmbeddingSet& source, const EmbeddingSet& target,
                          const OverlapDictionary& dict, const Eigen::MatrixXd& transform);

// "EVAT" file: header with pipeline settings and input digests, then the
// matrix as row-major little-endian float64.
void save_transform(const LinearTransform& transform, const std::string& path);
LinearTransform load_transform(const std::string& path);

} // namespace lexfuse
