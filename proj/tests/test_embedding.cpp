#include <doctest.h>

#include "helpers.hpp"
#include "lexfuse/embedding.hpp"
#include "lexfuse/errors.hpp"

using namespace lexfuse;
using testutil::TempDir;
using testutil::write_file;

TEST_CASE("word2vec text parsing") {
    TempDir dir("w2v");

    SUBCASE("three rows, two dims") {
        auto path = dir.file("ok.vec");
        write_file(path, "3 2\na 1 0\nb 0 1\nc 1 1\n");
        auto set = load_embeddings(path, EmbeddingFormat::word2vec_text);
        CHECK(set.size() == 3);
        CHECK(set.dim == 2);
        CHECK(set.vocab->token(0) == "a");
        CHECK(set.vocab->id_of("c") == 2);
        CHECK(set.matrix(2, 0) == 1.0f);
        CHECK_FALSE(set.preprocessed);
    }
    SUBCASE("dimension mismatch reports the line") {
        auto path = dir.file("bad_dim.vec");
        write_file(path, "2 2\na 1 0\nb 0 1 7\n");
        CHECK_THROWS_WITH_AS(load_embeddings(path, EmbeddingFormat::word2vec_text),
                             doctest::Contains(":3:"), io_error);
    }
    SUBCASE("short row reports the line") {
        auto path = dir.file("short.vec");
        write_file(path, "2 3\na 1 0 0\nb 0 1\n");
        CHECK_THROWS_AS(load_embeddings(path, EmbeddingFormat::word2vec_text), io_error);
    }
    SUBCASE("duplicate token rejected with its line number") {
        auto path = dir.file("dup.vec");
        write_file(path, "3 2\na 1 0\nb 0 1\na 2 2\n");
        CHECK_THROWS_WITH_AS(load_embeddings(path, EmbeddingFormat::word2vec_text),
                             doctest::Contains(":4: duplicate token 'a'"), io_error);
    }
    SUBCASE("malformed header") {
        auto path = dir.file("head.vec");
        write_file(path, "banana\na 1 0\n");
        CHECK_THROWS_WITH_AS(load_embeddings(path, EmbeddingFormat::word2vec_text),
                             doctest::Contains("malformed header"), io_error);
    }
    SUBCASE("non-finite value rejected") {
        auto path = dir.file("inf.vec");
        write_file(path, "2 2\na 1 0\nb inf 1\n");
        CHECK_THROWS_WITH_AS(load_embeddings(path, EmbeddingFormat::word2vec_text),
                             doctest::Contains("non-finite"), io_error);
    }
    SUBCASE("row count mismatch") {
        auto path = dir.file("count.vec");
        write_file(path, "3 2\na 1 0\nb 0 1\n");
        CHECK_THROWS_AS(load_embeddings(path, EmbeddingFormat::word2vec_text), io_error);
    }
}

TEST_CASE("binary native round trip is bit-exact") {
    TempDir dir("native");
    std::mt19937_64 rng(7);
    std::normal_distribution<float> gauss(0.0f, 2.5f);
    Eigen::MatrixXf m(5, 3);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = gauss(rng);
    auto set = testutil::make_set(m);

    auto path = dir.file("set.evae");
    save_embeddings(set, path);
    auto loaded = load_embeddings(path, EmbeddingFormat::binary_native);

    REQUIRE(loaded.size() == set.size());
    REQUIRE(loaded.dim == set.dim);
    CHECK(loaded.vocab->tokens() == set.vocab->tokens());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) CHECK(loaded.matrix(i, j) == m(i, j));

    SUBCASE("truncated file is a corrupt-file error") {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
        CHECK_THROWS_AS(load_embeddings(path, EmbeddingFormat::binary_native), io_error);
    }
    SUBCASE("digest is stable across a round trip") {
        CHECK(loaded.digest() == set.digest());
    }
}

TEST_CASE("preprocess") {
    SUBCASE("hand-computed two-row case") {
        Eigen::MatrixXf m(2, 2);
        m << 2, 0, 0, 2;
        auto result = preprocess(testutil::make_set(m));
        CHECK(result.zero_rows.empty());
        CHECK(result.set.preprocessed);
        const double inv_sqrt2 = 0.70710678;
        CHECK(result.set.matrix(0, 0) == doctest::Approx(inv_sqrt2).epsilon(1e-4));
        CHECK(result.set.matrix(0, 1) == doctest::Approx(-inv_sqrt2).epsilon(1e-4));
        CHECK(result.set.matrix(1, 0) == doctest::Approx(-inv_sqrt2).epsilon(1e-4));
        CHECK(result.set.matrix(1, 1) == doctest::Approx(inv_sqrt2).epsilon(1e-4));
    }
    SUBCASE("unit-norm zero-mean matrix is a fixed point") {
        Eigen::MatrixXf m(2, 2);
        float v = static_cast<float>(1.0 / std::sqrt(2.0));
        m << v, -v, -v, v;
        auto result = preprocess(testutil::make_set(m));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                CHECK(std::abs(static_cast<double>(result.set.matrix(i, j)) - m(i, j)) < 1e-9);
    }
    SUBCASE("zero rows survive and get reported") {
        Eigen::MatrixXf m(3, 2);
        m << 1, 0, 0, 0, 0, 1;
        auto result = preprocess(testutil::make_set(m));
        REQUIRE(result.zero_rows == std::vector<std::int64_t>{1});
        CHECK(result.set.matrix.row(1).norm() == 0.0f);
        CHECK(result.set.matrix.row(0).norm() == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("re-applying to its own output is a no-op") {
        auto m = testutil::random_unit_rows(20, 6, 11);
        auto once = preprocess(testutil::make_set(m));
        auto twice = preprocess(once.set);
        CHECK(twice.set.matrix == once.set.matrix);
        CHECK(twice.zero_rows.empty());
    }
    SUBCASE("shape and vocabulary are preserved") {
        auto m = testutil::random_unit_rows(13, 4, 3);
        auto set = testutil::make_set(m);
        auto result = preprocess(set);
        CHECK(result.set.matrix.rows() == m.rows());
        CHECK(result.set.matrix.cols() == m.cols());
        CHECK(result.set.vocab == set.vocab);
    }
}

TEST_CASE("vocabulary invariants") {
    CHECK_THROWS_AS(Vocabulary({"only"}), validation_error);
    CHECK_THROWS_WITH_AS(Vocabulary({"x", "y", "x"}), doctest::Contains("duplicate"),
                         validation_error);
    Vocabulary v({"alpha", "beta"});
    CHECK(v.id_of("beta") == 1);
    CHECK(v.id_of("gamma") == -1);
}
