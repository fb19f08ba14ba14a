#include "lexfuse/embedding.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "lexfuse/binio.hpp"
#include "lexfuse/errors.hpp"

namespace lexfuse {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'A', 'E'};
constexpr std::uint32_t kVersion = 1;

// Unit-norm tolerance used by EmbeddingSet::validate.
constexpr double kNormTol = 1e-6;

} // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2)
        throw validation_error("vocabulary must contain at least 2 tokens, got " +
                               std::to_string(tokens_.size()));
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, inserted] = index_.emplace(tokens_[i], static_cast<std::int64_t>(i));
        if (!inserted)
            throw validation_error("duplicate token '" + tokens_[i] + "' at ids " +
                                   std::to_string(it->second) + " and " + std::to_string(i));
    }
}

std::int64_t Vocabulary::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

Digest Vocabulary::digest() const {
    Sha256 h;
    h.update_u64(tokens_.size());
    for (const auto& t : tokens_) h.update_string(t);
    return h.finish();
}

void EmbeddingSet::validate() const {
    if (!vocab) throw validation_error("embedding set has no vocabulary");
    if (matrix.rows() != static_cast<Eigen::Index>(vocab->size()))
        throw validation_error("embedding row count " + std::to_string(matrix.rows()) +
                               " does not match vocabulary size " + std::to_string(vocab->size()));
    if (matrix.cols() != dim || dim <= 0)
        throw validation_error("embedding dim mismatch");
    if (!matrix.allFinite()) throw validation_error("embedding matrix contains non-finite values");
    if (preprocessed) {
        for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
            double n = matrix.row(i).cast<double>().norm();
            if (n != 0.0 && std::abs(n - 1.0) > kNormTol)
                throw validation_error("preprocessed row " + std::to_string(i) +
                                       " is not unit norm (|r| = " + std::to_string(n) + ")");
        }
    }
}

Digest EmbeddingSet::digest() const {
    Sha256 h;
    Digest vd = vocab->digest();
    h.update(vd.data(), vd.size());
    h.update_u32(static_cast<std::uint32_t>(dim));
    h.update_u32(preprocessed ? 1u : 0u);
    h.update_u32(mapped ? 1u : 0u);
    for (Eigen::Index i = 0; i < matrix.rows(); ++i)
        for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
            float v = matrix(i, j);
            h.update(&v, sizeof(v));
        }
    return h.finish();
}

namespace {

EmbeddingSet load_word2vec_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open embeddings file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw io_error("empty embeddings file: " + path);

    std::uint64_t count = 0;
    int dim = 0;
    {
        std::istringstream header(line);
        std::string extra;
        if (!(header >> count >> dim) || dim <= 0 || (header >> extra))
            throw io_error(path + ":1: malformed header, expected \"<count> <dim>\"");
    }

    std::vector<std::string> tokens;
    tokens.reserve(count);
    std::unordered_map<std::string, std::size_t> seen;  // token -> first line
    Eigen::MatrixXf matrix(static_cast<Eigen::Index>(count), dim);

    std::uint64_t row = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() && row == count) break;  // tolerate one trailing blank line
        if (row >= count)
            throw io_error(path + ":" + std::to_string(line_no) + ": more rows than the header's " +
                           std::to_string(count));
        auto sp = line.find(' ');
        if (sp == std::string::npos || sp == 0)
            throw io_error(path + ":" + std::to_string(line_no) + ": expected \"<token> <values...>\"");
        std::string token = line.substr(0, sp);
        auto [it, inserted] = seen.emplace(token, line_no);
        if (!inserted)
            throw io_error(path + ":" + std::to_string(line_no) + ": duplicate token '" + token +
                           "', first seen on line " + std::to_string(it->second));
        tokens.push_back(std::move(token));

        const char* p = line.c_str() + sp;
        for (int j = 0; j < dim; ++j) {
            char* end = nullptr;
            float v = std::strtof(p, &end);
            if (end == p)
                throw io_error(path + ":" + std::to_string(line_no) + ": dimension mismatch, got " +
                               std::to_string(j) + " values, expected " + std::to_string(dim));
            if (!std::isfinite(v))
                throw io_error(path + ":" + std::to_string(line_no) + ": non-finite value in column " +
                               std::to_string(j));
            matrix(static_cast<Eigen::Index>(row), j) = v;
            p = end;
        }
        while (*p == ' ') ++p;
        if (*p != '\0' && *p != '\r')
            throw io_error(path + ":" + std::to_string(line_no) +
                           ": dimension mismatch, row has more than " + std::to_string(dim) + " values");
        ++row;
    }
    if (row != count)
        throw io_error(path + ": header promised " + std::to_string(count) + " rows, found " +
                       std::to_string(row));

    VocabularyPtr vocab;
    try {
        vocab = std::make_shared<Vocabulary>(std::move(tokens));
    } catch (const validation_error& e) {
        throw io_error(path + ": " + e.what());
    }
    return EmbeddingSet{std::move(vocab), std::move(matrix), dim, false, false};
}

EmbeddingSet load_binary_native(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open embeddings file: " + path);

    expect_magic(in, kMagic, "binary-native embeddings");
    auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kVersion)
        throw io_error(path + ": unsupported embeddings format version " + std::to_string(version));
    auto count = read_pod<std::uint64_t>(in, "vocab size");
    auto dim = read_pod<std::uint32_t>(in, "dim");
    if (dim == 0) throw io_error(path + ": zero embedding dimension");
    // A plausibility bound on the header, so a corrupt file fails cleanly
    // instead of attempting a huge allocation.
    if (count > (1ull << 31) || dim > (1u << 20) || count * dim > (1ull << 33))
        throw io_error(path + ": implausible embedding shape " + std::to_string(count) + " x " +
                       std::to_string(dim));

    std::vector<std::string> tokens;
    tokens.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) tokens.push_back(read_string(in, "token"));

    Eigen::MatrixXf matrix(static_cast<Eigen::Index>(count), static_cast<int>(dim));
    for (Eigen::Index i = 0; i < matrix.rows(); ++i)
        for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
            float v = read_pod<float>(in, "embedding value");
            if (!std::isfinite(v))
                throw io_error(path + ": non-finite value at row " + std::to_string(i));
            matrix(i, j) = v;
        }

    VocabularyPtr vocab;
    try {
        vocab = std::make_shared<Vocabulary>(std::move(tokens));
    } catch (const validation_error& e) {
        throw io_error(path + ": " + e.what());
    }
    return EmbeddingSet{std::move(vocab), std::move(matrix), static_cast<int>(dim), false, false};
}

} // namespace

EmbeddingSet load_embeddings(const std::string& path, EmbeddingFormat format) {
    EmbeddingSet set = format == EmbeddingFormat::word2vec_text ? load_word2vec_text(path)
                                                                : load_binary_native(path);
    set.validate();
    return set;
}

void save_embeddings(const EmbeddingSet& set, const std::string& path) {
    set.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open file for writing: " + path);

    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint64_t>(out, set.vocab->size());
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim));
    for (const auto& t : set.vocab->tokens()) write_string(out, t);
    for (Eigen::Index i = 0; i < set.matrix.rows(); ++i)
        for (Eigen::Index j = 0; j < set.matrix.cols(); ++j)
            write_pod<float>(out, set.matrix(i, j));
    if (!out) throw io_error("write failed: " + path);
}

PreprocessResult preprocess(const EmbeddingSet& set) {
    set.validate();
    if (set.preprocessed) return PreprocessResult{set, {}};

    const Eigen::Index rows = set.matrix.rows();
    const Eigen::Index cols = set.matrix.cols();
    Eigen::MatrixXd work = set.matrix.cast<double>();

    std::vector<std::int64_t> zero_rows;
    std::vector<bool> is_zero(static_cast<std::size_t>(rows), false);
    for (Eigen::Index i = 0; i < rows; ++i) {
        double n = work.row(i).norm();
        if (n == 0.0) {
            is_zero[static_cast<std::size_t>(i)] = true;
            zero_rows.push_back(i);
        } else {
            work.row(i) /= n;
        }
    }

    // Column mean over the nonzero rows only, so zero rows stay zero.
    const auto n_nonzero = static_cast<double>(rows) - static_cast<double>(zero_rows.size());
    if (n_nonzero > 0) {
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            if (!is_zero[static_cast<std::size_t>(i)]) mean += work.row(i);
        mean /= n_nonzero;
        for (Eigen::Index i = 0; i < rows; ++i) {
            if (is_zero[static_cast<std::size_t>(i)]) continue;
            work.row(i) -= mean;
            double n = work.row(i).norm();
            if (n != 0.0) work.row(i) /= n;
        }
    }

    EmbeddingSet out;
    out.vocab = set.vocab;
    out.matrix = work.cast<float>();
    out.dim = set.dim;
    out.preprocessed = true;
    out.mapped = set.mapped;
    return PreprocessResult{std::move(out), std::move(zero_rows)};
}

} // namespace lexfuse
