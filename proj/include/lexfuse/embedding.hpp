#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lexfuse/digest.hpp"

namespace lexfuse {

// An ordered token list with its inverse index. Immutable once built.
class Vocabulary {
public:
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(std::size_t id) const { return tokens_[id]; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // -1 when absent.
    std::int64_t id_of(const std::string& token) const;

    // Content digest: token count, then each token length-prefixed.
    Digest digest() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int64_t> index_;
};

using VocabularyPtr = std::shared_ptr<const Vocabulary>;

// A vocabulary plus one embedding row per token. Rows are stored as f32,
// matching the on-disk format; numeric pipelines promote to double.
struct EmbeddingSet {
    VocabularyPtr vocab;
    Eigen::MatrixXf matrix;   // |V| x dim
    int dim = 0;
    bool preprocessed = false;
    bool mapped = false;      // set by apply_transform

    std::size_t size() const { return vocab ? vocab->size() : 0; }
    void validate() const;    // shape, finiteness, unit norms when preprocessed
    Digest digest() const;
};

enum class EmbeddingFormat { word2vec_text, binary_native };

// word2vec text: header "<count> <dim>", then "<token> <v1> ... <vd>" rows,
// single-space separated, UTF-8 tokens without space or newline.
//
// binary native ("EVAE"): magic, u32 version = 1, u64 vocab size, u32 dim,
// length-prefixed UTF-8 tokens (u32 length), then row-major LE f32 values.
EmbeddingSet load_embeddings(const std::string& path, EmbeddingFormat format);
void save_embeddings(const EmbeddingSet& set, const std::string& path);

struct PreprocessResult {
    EmbeddingSet set;
    std::vector<std::int64_t> zero_rows;  // rows left untouched, surfaced as warnings
};

// Length-normalize rows, subtract the column mean, normalize again.
// All-zero rows pass through unchanged. Already-preprocessed input is
// returned as-is, making repeated application a no-op.
PreprocessResult preprocess(const EmbeddingSet& set);

} // namespace lexfuse
