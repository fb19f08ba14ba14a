// Acceptance suite: one self-contained check per criterion, one PASS/FAIL
// line each, nonzero exit when anything fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "helpers.hpp"
#include "lexfuse/analysis.hpp"
#include "lexfuse/clients.hpp"
#include "lexfuse/engine.hpp"
#include "lexfuse/errors.hpp"
#include "lexfuse/mapping.hpp"
#include "lexfuse/overlap.hpp"
#include "lexfuse/similarity.hpp"
#include "lexfuse/transform.hpp"

#ifndef LEXFUSE_FIXTURE_DIR
#define LEXFUSE_FIXTURE_DIR "tests/fixtures"
#endif

using namespace lexfuse;
namespace fs = std::filesystem;

namespace {

struct check_failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw check_failure(what);
}

template <typename T>
std::string str(const T& v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------- 1
// Procrustes recovery: rotated noisy embeddings, 300-pair supervision,
// CSLS precision@1 on 200 held-out identical pairs, 5 seeds, < 10 s.
void criterion_1() {
    auto start = std::chrono::steady_clock::now();
    const int dim = 16;
    const std::size_t n = 1000;

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Eigen::MatrixXd target = testutil::random_unit_rows(n, dim, seed * 100).cast<double>();
        Eigen::MatrixXd rotation = testutil::random_orthogonal(dim, seed * 100 + 1);
        Eigen::MatrixXd source = target * rotation.transpose();
        std::mt19937_64 rng(seed * 100 + 2);
        std::normal_distribution<double> noise(0.0, 0.01);
        for (Eigen::Index i = 0; i < source.rows(); ++i)
            for (Eigen::Index j = 0; j < source.cols(); ++j) source(i, j) += noise(rng);

        auto src = preprocess(testutil::make_set(source.cast<float>())).set;
        auto tgt = preprocess(testutil::make_set(target.cast<float>())).set;

        OverlapDictionary dict;
        dict.source_size = dict.target_size = n;
        for (std::int32_t i = 0; i < 300; ++i) dict.pairs.emplace_back(i, i);

        auto transform = learn_transform(src, tgt, dict, TransformConfig{});
        auto mapped = apply_transform(src, transform);

        CslsScorer scorer(mapped, tgt, /*k=*/10, /*block_rows=*/256);
        auto scores = scorer.block(300, 500);
        int hits = 0;
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            Eigen::Index best;
            scores.row(r).maxCoeff(&best);
            hits += best == 300 + r;
        }
        double precision = hits / 200.0;
        require(precision >= 0.95,
                "seed " + str(seed) + ": precision@1 = " + str(precision) + " < 0.95");
    }
    double elapsed = seconds_since(start);
    require(elapsed < 10.0, "runtime " + str(elapsed) + "s exceeds 10s");
}

// ---------------------------------------------------------------- 2
// Identity pipeline: identical 200-token sets through align -> csls ->
// build-map with the default noise settings; per-row argmax is the
// identity for every non-dropped row. < 5 s.
void criterion_2() {
    auto start = std::chrono::steady_clock::now();
    auto raw = testutil::make_set(testutil::random_unit_rows(200, 16, 777));
    auto set = preprocess(raw).set;

    auto dict = build_overlap(*set.vocab, *set.vocab);
    require(dict.pairs.size() == 200, "self overlap must be complete");

    auto transform = learn_transform(set, set, dict, TransformConfig{});
    auto mapped = apply_transform(set, transform);
    CslsScorer scorer(mapped, set, /*k=*/10);
    auto mapping = build_mapping(scorer, NoiseConfig{});  // t=10 thr=0.1 sigma=1e-4 c=5

    std::size_t aligned = 0;
    for (std::int64_t i = 0; i < mapping.rows; ++i) {
        auto row = mapping.row_entries(i);
        if (row.empty()) continue;
        ++aligned;
        auto best = std::max_element(row.begin(), row.end(),
                                     [](const MappingEntry& a, const MappingEntry& b) {
                                         return a.weight < b.weight;
                                     });
        require(best->col == static_cast<std::uint32_t>(i),
                "row " + str(i) + " maps to " + str(best->col));
    }
    require(aligned > 0, "every row was dropped");
    double elapsed = seconds_since(start);
    require(elapsed < 5.0, "runtime " + str(elapsed) + "s exceeds 5s");
}

// ---------------------------------------------------------------- 3
// Scripted three-model replay: filter verdicts (0,1,1) with n=3 and the
// fused argmax "und"; plain averaging yields "_Typ"; fused probabilities
// within 1e-9 of hand-computed values.
void criterion_3() {
    const std::string dir = std::string(LEXFUSE_FIXTURE_DIR) + "/replay3";
    auto vocab = std::make_shared<Vocabulary>(
        std::vector<std::string>{"_Des", "_Typ", "und", "_Ver", "_Anw", "<eos>"});
    auto spec_with = [&](int n) {
        EnsembleSpec spec;
        spec.models = {{"q1", std::make_shared<ReplayClient>(vocab, dir + "/q1.jsonl"), nullptr},
                       {"q2", std::make_shared<ReplayClient>(vocab, dir + "/q2.jsonl"), nullptr},
                       {"q3", std::make_shared<ReplayClient>(vocab, dir + "/q3.jsonl"), nullptr}};
        spec.pivot_index = 1;
        spec.filter_n = n;
        spec.max_len = 4;
        spec.stop_ids = {static_cast<std::int32_t>(vocab->id_of("<eos>"))};
        return spec;
    };

    {
        auto spec = spec_with(3);
        spec.validate();
        DecodeState state;
        auto outcome = decode_step(spec, state);
        require(outcome.indicators == std::vector<int>{0, 1, 1},
                "filter verdicts are not (0, 1, 1)");
        require(vocab->token(static_cast<std::size_t>(outcome.chosen_id)) == "und",
                "filtered argmax is not 'und'");

        const std::vector<std::pair<std::string, double>> expected = {
            {"und", 0.35}, {"_Typ", 0.325}, {"_Ver", 0.135}, {"_Anw", 0.125}, {"_Des", 0.065}};
        for (const auto& [token, prob] : expected) {
            double got = outcome.fused.prob_of(static_cast<std::int32_t>(vocab->id_of(token)));
            require(std::abs(got - prob) <= 1e-9,
                    "fused p(" + token + ") = " + str(got) + ", expected " + str(prob));
        }
        auto full = decode(spec_with(3), "");
        require(full.text == "und", "decoded text is '" + full.text + "', expected 'und'");
    }
    {
        auto unfiltered = decode(spec_with(0), "");
        require(unfiltered.text == "_Typ",
                "unfiltered text is '" + unfiltered.text + "', expected '_Typ'");
    }
}

// ---------------------------------------------------------------- 4
// 10,000 random rows through top-t / threshold / variance equal a
// single-pass reference: same zero pattern, values within 1e-12.
void criterion_4() {
    auto reference = [](const Eigen::VectorXd& row, const NoiseConfig& cfg) {
        const auto n = row.size();
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return row[a] > row[b]; });
        std::vector<bool> kept(static_cast<std::size_t>(n), false);
        for (Eigen::Index r = 0; r < std::min<Eigen::Index>(cfg.t, n); ++r)
            if (row[order[static_cast<std::size_t>(r)]] >= cfg.threshold)
                kept[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = true;
        std::vector<double> nz;
        for (Eigen::Index i = 0; i < n; ++i)
            if (kept[static_cast<std::size_t>(i)] && row[i] != 0.0) nz.push_back(row[i]);
        bool drop = false;
        if (static_cast<int>(nz.size()) >= cfg.c) {
            double mean = std::accumulate(nz.begin(), nz.end(), 0.0) / nz.size();
            double ss = 0.0;
            for (double v : nz) ss += (v - mean) * (v - mean);
            drop = ss / static_cast<double>(nz.size()) <= cfg.sigma;
        }
        Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
        if (!drop)
            for (Eigen::Index i = 0; i < n; ++i)
                if (kept[static_cast<std::size_t>(i)]) out[i] = row[i];
        return out;
    };

    std::mt19937_64 rng(4444);
    std::uniform_int_distribution<int> len_dist(1, 50);
    std::uniform_int_distribution<int> t_dist(1, 15);
    std::uniform_int_distribution<int> c_dist(1, 8);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double grid[] = {0.0, 0.05, 0.1, 0.25, 0.5, 0.77, 0.9};

    for (int trial = 0; trial < 10000; ++trial) {
        NoiseConfig cfg;
        cfg.t = t_dist(rng);
        cfg.threshold = grid[static_cast<std::size_t>(trial % 7)];
        cfg.sigma = trial % 3 == 0 ? 0.0 : unit(rng) * 0.02;
        cfg.c = c_dist(rng);

        Eigen::VectorXd row(len_dist(rng));
        for (Eigen::Index i = 0; i < row.size(); ++i)
            row[i] = trial % 2 == 0 ? grid[rng() % 7] : unit(rng) * 1.3 - 0.15;

        Eigen::VectorXd mine = variance_truncate(
            threshold_truncate(top_t_truncate(row, cfg.t), cfg.threshold), cfg.sigma, cfg.c);
        Eigen::VectorXd ref = reference(row, cfg);
        for (Eigen::Index i = 0; i < row.size(); ++i) {
            require((mine[i] == 0.0) == (ref[i] == 0.0),
                    "trial " + str(trial) + ": zero pattern differs at " + str(i));
            require(std::abs(mine[i] - ref[i]) <= 1e-12,
                    "trial " + str(trial) + ": value differs at " + str(i));
        }
    }
}

// ---------------------------------------------------------------- 5
// Streamed CSLS on 200x16 vs 300x16 equals the dense brute force within
// 1e-6 for k in {1, 5, 10}.
void criterion_5() {
    auto src = testutil::make_set(testutil::random_unit_rows(200, 16, 5001), "s");
    auto tgt = testutil::make_set(testutil::random_unit_rows(300, 16, 5002), "t");

    Eigen::MatrixXd src_d = src.matrix.cast<double>();
    Eigen::MatrixXd tgt_d = tgt.matrix.cast<double>();
    Eigen::MatrixXd cos = src_d * tgt_d.transpose();  // rows already unit

    for (int k : {1, 5, 10}) {
        Eigen::VectorXd r_tgt(200), r_src(300);
        for (Eigen::Index i = 0; i < 200; ++i) {
            std::vector<double> row(300);
            for (Eigen::Index j = 0; j < 300; ++j) row[static_cast<std::size_t>(j)] = cos(i, j);
            std::sort(row.begin(), row.end(), std::greater<>());
            r_tgt[i] = std::accumulate(row.begin(), row.begin() + k, 0.0) / k;
        }
        for (Eigen::Index j = 0; j < 300; ++j) {
            std::vector<double> col(200);
            for (Eigen::Index i = 0; i < 200; ++i) col[static_cast<std::size_t>(i)] = cos(i, j);
            std::sort(col.begin(), col.end(), std::greater<>());
            r_src[j] = std::accumulate(col.begin(), col.begin() + k, 0.0) / k;
        }
        Eigen::MatrixXd ref = 2.0 * cos;
        ref.colwise() -= r_tgt;
        ref.rowwise() -= r_src.transpose();

        CslsScorer scorer(src, tgt, k, /*block_rows=*/64);
        Eigen::MatrixXd streamed(200, 300);
        for (std::int64_t b = 0; b < 200; b += 64) {
            auto e = std::min<std::int64_t>(200, b + 64);
            streamed.middleRows(b, e - b) = scorer.block(b, e);
        }
        double max_diff = (streamed - ref).cwiseAbs().maxCoeff();
        require(max_diff <= 1e-6, "k=" + str(k) + ": max deviation " + str(max_diff));
    }
}

// ---------------------------------------------------------------- 6
// 1,000 fuzzed decode steps: fused output is a distribution (sum 1 +- 1e-9,
// no negatives); the clone-ensemble no-op invariant holds exactly.
void criterion_6() {
    std::mt19937_64 rng(6006);
    std::uniform_int_distribution<int> n_models_dist(2, 5);
    std::uniform_int_distribution<int> vocab_dist(4, 24);
    std::uniform_real_distribution<double> unit(0.001, 1.0);

    class OneShotClient : public ModelClient {
    public:
        OneShotClient(VocabularyPtr vocab, std::vector<std::pair<std::int32_t, double>> probs)
            : vocab_(std::move(vocab)), probs_(std::move(probs)) {}
        const Vocabulary& vocabulary() const override { return *vocab_; }
        TokenDistribution next_distribution(const std::string&) override {
            TokenDistribution d;
            d.space = DistSpace::native;
            d.probs = probs_;
            d.normalize();
            return d;
        }
        std::string detokenize(std::span<const std::int32_t> ids) const override {
            std::string out;
            for (auto id : ids) out += vocab_->token(static_cast<std::size_t>(id));
            return out;
        }

    private:
        VocabularyPtr vocab_;
        std::vector<std::pair<std::int32_t, double>> probs_;
    };

    auto random_mapping = [&](std::int64_t rows, std::int64_t cols) {
        auto m = std::make_shared<SparseMapping>();
        m->rows = rows;
        m->cols = cols;
        m->config.row_normalize = true;
        m->row_kind.assign(static_cast<std::size_t>(rows), RowKind::dropped_empty);
        for (std::uint32_t i = 0; i < rows; ++i) {
            if (rng() % 5 == 0) continue;  // dropped row
            m->row_kind[i] = RowKind::aligned;
            int fanout = 1 + static_cast<int>(rng() % 3);
            std::vector<std::uint32_t> cols_used;
            for (int f = 0; f < fanout; ++f) {
                auto c = static_cast<std::uint32_t>(rng() % cols);
                if (std::find(cols_used.begin(), cols_used.end(), c) != cols_used.end()) continue;
                cols_used.push_back(c);
            }
            std::sort(cols_used.begin(), cols_used.end());
            for (auto c : cols_used)
                m->entries.push_back({i, c, static_cast<float>(0.2 + unit(rng)), 0.0});
        }
        m->rebuild_row_index();
        return m;
    };

    const auto pivot_vocab_size = 16;
    auto pivot_vocab = std::make_shared<Vocabulary>(testutil::make_tokens(pivot_vocab_size, "p"));

    int executed = 0;
    for (int trial = 0; executed < 1000; ++trial) {
        int n_models = n_models_dist(rng);
        EnsembleSpec spec;
        for (int mi = 0; mi < n_models; ++mi) {
            bool is_pivot_slot = mi == 0;
            VocabularyPtr vocab = is_pivot_slot
                                      ? pivot_vocab
                                      : std::make_shared<Vocabulary>(testutil::make_tokens(
                                            vocab_dist(rng), "m" + str(mi) + "_"));
            std::vector<std::pair<std::int32_t, double>> probs;
            for (std::size_t w = 0; w < vocab->size(); ++w)
                if (rng() % 3 != 0) probs.emplace_back(static_cast<std::int32_t>(w), unit(rng));
            if (probs.empty()) probs.emplace_back(0, 1.0);
            EnsembleMember member;
            member.name = "m" + str(mi);
            member.client = std::make_shared<OneShotClient>(vocab, std::move(probs));
            member.mapping = is_pivot_slot
                                 ? nullptr
                                 : random_mapping(static_cast<std::int64_t>(vocab->size()),
                                                  pivot_vocab_size);
            spec.models.push_back(std::move(member));
        }
        spec.pivot_index = 0;
        spec.top_k = 1 + static_cast<int>(rng() % 12);
        spec.filter_n = static_cast<int>(rng() % 5);  // sometimes disabled
        spec.max_len = 1;

        DecodeState state;
        StepOutcome outcome;
        try {
            outcome = decode_step(spec, state);
        } catch (const stage_error&) {
            continue;  // every model lost its mass to dropped rows; not a step
        }
        ++executed;

        double sum = outcome.fused.sum();
        require(std::abs(sum - 1.0) <= 1e-9, "fused sum " + str(sum) + " at trial " + str(trial));
        for (const auto& [id, p] : outcome.fused.probs) {
            require(p >= 0.0, "negative fused probability");
            require(id >= 0 && id < pivot_vocab_size, "fused id out of the pivot space");
        }
        // Support shrinks into the surviving models' supports.
        for (const auto& [id, p] : outcome.fused.probs) {
            bool covered = false;
            for (std::size_t mi = 0; mi < spec.models.size() && !covered; ++mi) {
                if (!outcome.indicators[mi] && !(outcome.fallback_pivot && mi == 0)) continue;
                const auto& log = state.step_log[0].models[mi];
                for (const auto& [token, prob] : log.top_pivot)
                    if (pivot_vocab->id_of(token) == id) covered = true;
                // top_pivot is trimmed; fall back to accepting when the
                // model is included (full support not logged).
                covered = covered || log.included == 1 || (outcome.fallback_pivot && mi == 0);
            }
            require(covered, "fused support leaked outside surviving models");
        }
    }

    // Clone-ensemble no-op, exact: same client twice with identity
    // mappings decodes exactly like single-model greedy.
    std::uniform_real_distribution<double> prob(0.01, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
        auto vocab = std::make_shared<Vocabulary>(testutil::make_tokens(12, "c"));
        std::vector<std::vector<std::pair<std::int32_t, double>>> script;
        for (int s = 0; s < 6; ++s) {
            std::vector<std::pair<std::int32_t, double>> step;
            for (int w = 0; w < 12; ++w) step.emplace_back(w, prob(rng));
            script.push_back(std::move(step));
        }
        class ScriptClient : public ModelClient {
        public:
            ScriptClient(VocabularyPtr vocab,
                         std::vector<std::vector<std::pair<std::int32_t, double>>> steps)
                : vocab_(std::move(vocab)), steps_(std::move(steps)) {}
            const Vocabulary& vocabulary() const override { return *vocab_; }
            TokenDistribution next_distribution(const std::string&) override {
                TokenDistribution d;
                d.space = DistSpace::native;
                d.probs = steps_[cursor_++ % steps_.size()];
                d.normalize();
                return d;
            }
            std::string detokenize(std::span<const std::int32_t> ids) const override {
                std::string out;
                for (auto id : ids) out += vocab_->token(static_cast<std::size_t>(id));
                return out;
            }

        private:
            VocabularyPtr vocab_;
            std::vector<std::vector<std::pair<std::int32_t, double>>> steps_;
            std::size_t cursor_ = 0;
        };

        EnsembleSpec spec;
        spec.models = {{"a", std::make_shared<ScriptClient>(vocab, script), nullptr},
                       {"b", std::make_shared<ScriptClient>(vocab, script), nullptr}};
        spec.pivot_index = 0;
        spec.filter_n = 3;
        spec.max_len = 6;
        auto ensemble = decode(spec, "");

        // Reference: plain greedy argmax over the same script.
        std::string expected;
        for (const auto& step : script) {
            std::int32_t best = -1;
            double best_p = -1.0;
            for (const auto& [id, p] : step)
                if (p > best_p || (p == best_p && id < best)) best = id, best_p = p;
            expected += vocab->token(static_cast<std::size_t>(best));
        }
        require(ensemble.text == expected,
                "clone ensemble text '" + ensemble.text + "' != greedy '" + expected + "'");
    }
}

// ---------------------------------------------------------------- 7
// Two toy n-gram models, each trained hard on a disjoint half of 200
// prompts and only weakly elsewhere; with n=3 filtering the ensemble
// answers at least as well as the best individual and >= 0.95 overall.
void criterion_7() {
    const int n_keys = 200;
    const int n_answers = 50;

    std::vector<std::string> tokens = {"ask", "<eos>"};
    for (int k = 0; k < n_keys; ++k) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "k%03d", k);
        tokens.push_back(buf);
    }
    for (int w = 0; w < n_answers; ++w) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "w%02d", w);
        tokens.push_back(buf);
    }
    auto vocab = std::make_shared<Vocabulary>(tokens);

    auto key = [](int k) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "k%03d", k);
        return std::string(buf);
    };
    auto answer = [&](int k) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "w%02d", k % n_answers);
        return std::string(buf);
    };
    auto decoy = [&](int k) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "w%02d", (k + 7) % n_answers);
        return std::string(buf);
    };

    auto build_client = [&](int strong_begin, int strong_end) {
        auto client = std::make_shared<ToyNgramClient>(vocab, 3, TokenLevel::word);
        std::string strong, weak_decoy, weak_true;
        for (int k = 0; k < n_keys; ++k) {
            std::string truth = "ask " + key(k) + " " + answer(k) + " <eos>\n";
            if (k >= strong_begin && k < strong_end) strong += truth;
            weak_decoy += "ask " + key(k) + " " + decoy(k) + " <eos>\n";
            weak_true += truth;
        }
        client->train(strong, 50);
        client->train(weak_decoy, 2);
        client->train(weak_true, 1);
        return client;
    };
    auto model_a = build_client(0, 100);
    auto model_b = build_client(100, 200);

    // Individual greedy accuracy, measured directly on each client.
    auto individual_accuracy = [&](const std::shared_ptr<ToyNgramClient>& client) {
        int correct = 0;
        for (int k = 0; k < n_keys; ++k) {
            std::string prefix = "ask " + key(k);
            std::string out;
            for (int step = 0; step < 3; ++step) {
                auto d = client->next_distribution(prefix);
                auto id = d.argmax();
                const auto& token = vocab->token(static_cast<std::size_t>(id));
                if (token == "<eos>") break;
                out += (out.empty() ? "" : " ") + token;
                prefix += " " + token;
            }
            correct += out == answer(k);
        }
        return correct / static_cast<double>(n_keys);
    };
    double acc_a = individual_accuracy(model_a);
    double acc_b = individual_accuracy(model_b);
    // The construction makes each model wrong on its weak half.
    require(acc_a < 0.95 && acc_b < 0.95,
            "individuals unexpectedly strong: " + str(acc_a) + ", " + str(acc_b));

    EnsembleSpec spec;
    spec.models = {{"a", model_a, nullptr}, {"b", model_b, nullptr}};
    spec.pivot_index = 0;
    spec.top_k = 320;
    spec.filter_n = 3;
    spec.max_len = 3;
    spec.stop_ids = {static_cast<std::int32_t>(vocab->id_of("<eos>"))};

    int correct = 0;
    for (int k = 0; k < n_keys; ++k) {
        auto result = decode(spec, "ask " + key(k));
        std::string text = result.text;
        // Word detokenization prefixes a space.
        if (!text.empty() && text.front() == ' ') text.erase(0, 1);
        correct += text == answer(k);
    }
    double ensemble_acc = correct / static_cast<double>(n_keys);
    require(ensemble_acc >= std::max(acc_a, acc_b),
            "ensemble " + str(ensemble_acc) + " below best individual " +
                str(std::max(acc_a, acc_b)));
    require(ensemble_acc >= 0.95, "ensemble accuracy " + str(ensemble_acc) + " < 0.95");
}

// ---------------------------------------------------------------- 8
// Serialization: bit-exact round trips, provenance mismatch detection,
// and the sparse-mapping size bound at the criterion-1 scale.
void criterion_8() {
    testutil::TempDir dir("acceptance8");

    // Criterion-1-scale artifacts (one seed).
    const int dim = 16;
    const std::size_t n = 1000;
    Eigen::MatrixXd target = testutil::random_unit_rows(n, dim, 800).cast<double>();
    Eigen::MatrixXd rotation = testutil::random_orthogonal(dim, 801);
    Eigen::MatrixXd source = target * rotation.transpose();
    std::mt19937_64 rng(802);
    std::normal_distribution<double> noise(0.0, 0.01);
    for (Eigen::Index i = 0; i < source.rows(); ++i)
        for (Eigen::Index j = 0; j < source.cols(); ++j) source(i, j) += noise(rng);

    auto src = preprocess(testutil::make_set(source.cast<float>(), "s")).set;
    auto tgt = preprocess(testutil::make_set(target.cast<float>(), "t")).set;
    OverlapDictionary dict;
    dict.source_size = dict.target_size = n;
    for (std::int32_t i = 0; i < 300; ++i) dict.pairs.emplace_back(i, i);

    auto transform = learn_transform(src, tgt, dict, TransformConfig{});
    auto t_path = dir.file("t.evat");
    save_transform(transform, t_path);
    auto t_loaded = load_transform(t_path);
    require(t_loaded.matrix == transform.matrix, "transform round trip changed the matrix");
    auto t_path2 = dir.file("t2.evat");
    save_transform(t_loaded, t_path2);
    require(sha256_file(t_path) == sha256_file(t_path2), "transform files differ byte-wise");

    NoiseConfig noise_cfg;
    auto mapped = apply_transform(src, transform);
    CslsScorer scorer(mapped, tgt, 10, 256);
    auto mapping = build_mapping(scorer, noise_cfg);
    mapping.source_vocab_digest = src.vocab->digest();
    mapping.target_vocab_digest = tgt.vocab->digest();
    mapping.csls_k = 10;

    auto m_path = dir.file("m.evam");
    save_mapping(mapping, m_path);
    auto m_loaded = load_mapping(m_path);
    auto m_path2 = dir.file("m2.evam");
    save_mapping(m_loaded, m_path2);
    require(sha256_file(m_path) == sha256_file(m_path2), "mapping files differ byte-wise");

    // Provenance: same-shaped vocabularies with different tokens refuse.
    Vocabulary other_src(testutil::make_tokens(n, "x"));
    Vocabulary other_tgt(testutil::make_tokens(n, "y"));
    bool refused = false;
    try {
        verify_mapping_vocabs(m_loaded, other_src, other_tgt);
    } catch (const validation_error&) {
        refused = true;
    }
    require(refused, "vocabulary digest mismatch was not detected");
    require(m_loaded.source_vocab_digest == src.vocab->digest(), "stored digest corrupted");

    // Size bound: nnz <= t * rows, and the whole file fits in the triple
    // budget plus a header allowance.
    auto file_size = fs::file_size(m_path);
    require(mapping.nnz() <= static_cast<std::size_t>(noise_cfg.t) * n,
            "nnz " + str(mapping.nnz()) + " exceeds t * rows");
    std::uintmax_t budget = static_cast<std::uintmax_t>(noise_cfg.t) * n * 12 + 256 + 4 * n;
    require(file_size <= budget,
            "file size " + str(file_size) + " exceeds the bound " + str(budget));
}

// ---------------------------------------------------------------- 9
// Diversity: a peaked client whose candidates are spelling variants of
// its top token against a near-uniform client spread over far-apart
// words; the mean edit distance must be strictly ordered at every n.
void criterion_9() {
    std::vector<std::string> tokens = {"old"};
    const std::string inserts = "abcefghijk";  // avoid o, l, d
    for (char c : inserts)
        for (std::size_t pos = 0; pos <= 3; ++pos) {
            std::string w = "old";
            w.insert(pos, 1, c);
            tokens.push_back(w);  // 40 near variants, distance 1
        }
    for (int j = 0; j < 40; ++j) {
        std::string w(static_cast<std::size_t>(6 + j % 4), static_cast<char>('a' + j % 26));
        tokens.push_back(w);  // 40 far words, distance >= 5
    }
    auto vocab = std::make_shared<Vocabulary>(tokens);

    auto low_entropy = std::make_shared<ToyNgramClient>(vocab, 1, TokenLevel::word);
    {
        std::string corpus;
        for (int rep = 0; rep < 400; ++rep) corpus += "old\n";
        for (int i = 1; i <= 40; ++i)
            for (int rep = 0; rep < 41 - i; ++rep) corpus += tokens[static_cast<std::size_t>(i)] + "\n";
        low_entropy->train(corpus);
    }
    auto high_entropy = std::make_shared<ToyNgramClient>(vocab, 1, TokenLevel::word);
    {
        std::string corpus;
        for (int rep = 0; rep < 12; ++rep) corpus += "old\n";
        for (int j = 41; j <= 80; ++j)
            for (int rep = 0; rep < 10 + j % 2; ++rep)
                corpus += tokens[static_cast<std::size_t>(j)] + "\n";
        high_entropy->train(corpus);
    }

    auto trace_of = [&](const std::shared_ptr<ToyNgramClient>& client) {
        EnsembleSpec spec;
        spec.models = {{"x", client, nullptr}, {"y", client, nullptr}};
        spec.pivot_index = 0;
        spec.filter_n = 3;
        spec.max_len = 3;
        spec.log_top = 48;
        auto result = decode(spec, "old");
        return collect_top_lists({result.state});
    };

    const std::vector<int> n_values = {3, 5, 10, 20, 40};
    auto low = diversity(trace_of(low_entropy), n_values);
    auto high = diversity(trace_of(high_entropy), n_values);

    for (std::size_t i = 0; i < n_values.size(); ++i) {
        double lo = low.per_n[i].second;
        double hi = high.per_n[i].second;
        require(hi > lo, "n=" + str(n_values[i]) + ": high " + str(hi) + " !> low " + str(lo));
    }
}

} // namespace

int main() {
    struct Criterion {
        int number;
        const char* name;
        std::function<void()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "rotated-embedding recovery, CSLS precision@1 >= 0.95 over 5 seeds", criterion_1},
        {2, "identity pipeline maps every surviving row to itself", criterion_2},
        {3, "three-model replay: verdicts (0,1,1), 'und' vs '_Typ'", criterion_3},
        {4, "truncation chain equals the single-pass oracle on 10k rows", criterion_4},
        {5, "streamed CSLS equals dense brute force for k in {1,5,10}", criterion_5},
        {6, "fused outputs are distributions; clone ensemble is a no-op", criterion_6},
        {7, "complementary toy models: ensemble >= best individual, >= 0.95", criterion_7},
        {8, "bit-exact serialization, provenance checks, size bound", criterion_8},
        {9, "diversity metric strictly ordered at every n", criterion_9},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        auto start = std::chrono::steady_clock::now();
        try {
            c.run();
            std::cout << "PASS criterion " << c.number << " (" << c.name << ") ["
                      << str(seconds_since(start)) << "s]\n";
        } catch (const std::exception& e) {
            ++failures;
            std::cout << "FAIL criterion " << c.number << " (" << c.name << "): " << e.what()
                      << "\n";
        }
    }
    if (failures) std::cout << failures << " criterion(s) failed\n";
    return failures == 0 ? 0 : 1;
}
