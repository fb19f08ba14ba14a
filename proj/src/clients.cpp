#include "lexfuse/clients.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

#include "lexfuse/errors.hpp"

namespace lexfuse {

using nlohmann::json;

// --- replay ---

ReplayClient::ReplayClient(VocabularyPtr vocab, const std::string& jsonl_path)
    : vocab_(std::move(vocab)) {
    std::ifstream in(jsonl_path);
    if (!in) throw io_error("cannot open replay script: " + jsonl_path);

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw io_error(jsonl_path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        if (!j.contains("step") || !j.contains("dist"))
            throw io_error(jsonl_path + ":" + std::to_string(line_no) +
                           ": expected {\"step\": s, \"dist\": [[token, prob], ...]}");
        auto step = j["step"].get<std::size_t>();
        if (step != script_.size())
            throw io_error(jsonl_path + ":" + std::to_string(line_no) + ": step " +
                           std::to_string(step) + " out of order, expected " +
                           std::to_string(script_.size()));
        std::vector<std::pair<std::int32_t, double>> dist;
        for (const auto& pair : j["dist"]) {
            auto token = pair.at(0).get<std::string>();
            auto prob = pair.at(1).get<double>();
            auto id = vocab_->id_of(token);
            if (id < 0)
                throw io_error(jsonl_path + ":" + std::to_string(line_no) + ": token '" + token +
                               "' is not in the vocabulary");
            dist.emplace_back(static_cast<std::int32_t>(id), prob);
        }
        script_.push_back(std::move(dist));
    }
    if (script_.empty()) throw io_error(jsonl_path + ": empty replay script");
}

TokenDistribution ReplayClient::next_distribution(const std::string&) {
    std::size_t step = cursor_.fetch_add(1);
    if (step >= script_.size())
        throw client_error("replay script exhausted after " + std::to_string(script_.size()) +
                           " steps");
    TokenDistribution d;
    d.space = DistSpace::native;
    d.probs = script_[step];
    d.sort_by_id();
    d.normalize();
    return d;
}

std::string ReplayClient::detokenize(std::span<const std::int32_t> ids) const {
    std::string out;
    for (auto id : ids) out += vocab_->token(static_cast<std::size_t>(id));
    return out;
}

// --- toy n-gram ---

namespace {

std::string context_key(std::span<const std::int32_t> ids) {
    std::string key;
    for (auto id : ids) {
        key += std::to_string(id);
        key += ',';
    }
    return key;
}

} // namespace

ToyNgramClient::ToyNgramClient(VocabularyPtr vocab, int order, TokenLevel level)
    : vocab_(std::move(vocab)), order_(order), level_(level) {
    if (order_ < 1) throw validation_error("n-gram order must be >= 1");
}

std::vector<std::int32_t> ToyNgramClient::tokenize(const std::string& text) const {
    std::vector<std::int32_t> ids;
    if (level_ == TokenLevel::word) {
        std::istringstream in(text);
        std::string word;
        while (in >> word) {
            auto id = vocab_->id_of(word);
            if (id < 0) throw client_error("word '" + word + "' is not in the vocabulary");
            ids.push_back(static_cast<std::int32_t>(id));
        }
    } else {
        for (char ch : text) {
            auto id = vocab_->id_of(std::string(1, ch));
            if (id < 0) throw client_error(std::string("character '") + ch + "' is not in the vocabulary");
            ids.push_back(static_cast<std::int32_t>(id));
        }
    }
    return ids;
}

void ToyNgramClient::train(const std::string& text, int repetitions) {
    if (repetitions < 1) return;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        auto ids = tokenize(line);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            std::size_t ctx_len = std::min<std::size_t>(static_cast<std::size_t>(order_ - 1), i);
            auto key = context_key({ids.data() + (i - ctx_len), ctx_len});
            counts_[key][ids[i]] += static_cast<std::uint64_t>(repetitions);
            context_totals_[key] += static_cast<std::uint64_t>(repetitions);
        }
    }
}

TokenDistribution ToyNgramClient::next_distribution(const std::string& text_prefix) {
    auto ids = tokenize(text_prefix);
    std::size_t ctx_len = std::min<std::size_t>(static_cast<std::size_t>(order_ - 1), ids.size());
    auto key = context_key({ids.data() + (ids.size() - ctx_len), ctx_len});

    const auto vocab_size = static_cast<double>(vocab_->size());
    auto total_it = context_totals_.find(key);
    double total = total_it == context_totals_.end() ? 0.0 : static_cast<double>(total_it->second);
    const auto* ctx_counts = counts_.count(key) ? &counts_.at(key) : nullptr;

    // Add-one smoothing over the whole vocabulary.
    TokenDistribution d;
    d.space = DistSpace::native;
    d.probs.reserve(vocab_->size());
    for (std::size_t w = 0; w < vocab_->size(); ++w) {
        double count = 0.0;
        if (ctx_counts) {
            auto it = ctx_counts->find(static_cast<std::int32_t>(w));
            if (it != ctx_counts->end()) count = static_cast<double>(it->second);
        }
        d.probs.emplace_back(static_cast<std::int32_t>(w), (count + 1.0) / (total + vocab_size));
    }
    return d;
}

std::string ToyNgramClient::detokenize(std::span<const std::int32_t> ids) const {
    std::string out;
    for (auto id : ids) {
        if (level_ == TokenLevel::word) out += ' ';
        out += vocab_->token(static_cast<std::size_t>(id));
    }
    return out;
}

} // namespace lexfuse
