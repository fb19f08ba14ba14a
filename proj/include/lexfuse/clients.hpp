#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lexfuse/engine.hpp"

namespace lexfuse {

// Deterministic backend replaying pre-scripted distributions, one JSONL
// line per step: {"step": s, "dist": [["token", prob], ...]}. The prefix
// is ignored; each call consumes the next line.
class ReplayClient : public ModelClient {
public:
    ReplayClient(VocabularyPtr vocab, const std::string& jsonl_path);

    const Vocabulary& vocabulary() const override { return *vocab_; }
    TokenDistribution next_distribution(const std::string& text_prefix) override;
    std::string detokenize(std::span<const std::int32_t> ids) const override;

    void reset() { cursor_ = 0; }
    std::size_t script_length() const { return script_.size(); }

private:
    VocabularyPtr vocab_;
    std::vector<std::vector<std::pair<std::int32_t, double>>> script_;
    std::atomic<std::size_t> cursor_{0};
};

enum class TokenLevel { word, character };

// A small smoothed n-gram model over its own vocabulary; a deterministic
// desk-scale stand-in for an LLM backend. Word mode splits on
// whitespace and detokenizes with a leading space per token; character
// mode works on single bytes.
class ToyNgramClient : public ModelClient {
public:
    ToyNgramClient(VocabularyPtr vocab, int order, TokenLevel level = TokenLevel::word);

    // Count n-grams from the text, one sequence per line. Unknown tokens
    // are an error; build the vocabulary to cover the corpus.
    void train(const std::string& text, int repetitions = 1);

    const Vocabulary& vocabulary() const override { return *vocab_; }
    TokenDistribution next_distribution(const std::string& text_prefix) override;
    std::string detokenize(std::span<const std::int32_t> ids) const override;

    std::vector<std::int32_t> tokenize(const std::string& text) const;

private:
    VocabularyPtr vocab_;
    int order_;
    TokenLevel level_;
    // context key (ids joined) -> per-token counts
    std::unordered_map<std::string, std::unordered_map<std::int32_t, std::uint64_t>> counts_;
    std::unordered_map<std::string, std::uint64_t> context_totals_;
};

// Backend speaking the logits-server wire protocol:
//   POST <base>/v1/next_dist  {"prefix": string, "top_k": int}
//   -> {"tokens": [string], "probs": [float]}
// Probabilities need not be normalized. Tokens outside the client's
// vocabulary are skipped (their mass is dropped before normalizing).
class RemoteClient : public ModelClient {
public:
    RemoteClient(VocabularyPtr vocab, const std::string& base_url, int top_k = 320,
                 double timeout_seconds = 30.0);
    ~RemoteClient() override;

    const Vocabulary& vocabulary() const override { return *vocab_; }
    TokenDistribution next_distribution(const std::string& text_prefix) override;
    std::string detokenize(std::span<const std::int32_t> ids) const override;

private:
    VocabularyPtr vocab_;
    std::string base_url_;
    int top_k_;
    double timeout_seconds_;
};

} // namespace lexfuse
