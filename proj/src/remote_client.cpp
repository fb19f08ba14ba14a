#include "lexfuse/clients.hpp"
#include "lexfuse/errors.hpp"

// httplib drags in resolv.h, whose _res macro breaks Eigen if it comes first.
#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>

namespace lexfuse {

using nlohmann::json;

RemoteClient::RemoteClient(VocabularyPtr vocab, const std::string& base_url, int top_k,
                           double timeout_seconds)
    : vocab_(std::move(vocab)),
      base_url_(base_url),
      top_k_(top_k),
      timeout_seconds_(timeout_seconds) {
    if (top_k_ < 1) throw validation_error("remote client top_k must be >= 1");
}

RemoteClient::~RemoteClient() = default;

TokenDistribution RemoteClient::next_distribution(const std::string& text_prefix) {
    // A client per call keeps concurrent step queries independent.
    httplib::Client http(base_url_);
    auto timeout = std::chrono::milliseconds(static_cast<long>(timeout_seconds_ * 1000));
    http.set_connection_timeout(timeout);
    http.set_read_timeout(timeout);

    json request = {{"prefix", text_prefix}, {"top_k", top_k_}};
    auto res = http.Post("/v1/next_dist", request.dump(), "application/json");
    if (!res)
        throw client_error("request to " + base_url_ + " failed: " +
                           httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw client_error(base_url_ + " returned HTTP " + std::to_string(res->status));

    json body;
    try {
        body = json::parse(res->body);
    } catch (const json::exception& e) {
        throw client_error("bad JSON from " + base_url_ + ": " + e.what());
    }
    if (!body.contains("tokens") || !body.contains("probs") ||
        body["tokens"].size() != body["probs"].size())
        throw client_error(base_url_ + ": response must carry parallel tokens/probs arrays");

    TokenDistribution d;
    d.space = DistSpace::native;
    for (std::size_t i = 0; i < body["tokens"].size(); ++i) {
        auto token = body["tokens"][i].get<std::string>();
        auto prob = body["probs"][i].get<double>();
        if (!std::isfinite(prob) || prob < 0.0)
            throw client_error(base_url_ + ": negative or non-finite probability for '" + token + "'");
        auto id = vocab_->id_of(token);
        if (id < 0) continue;  // unknown token, mass dropped
        d.probs.emplace_back(static_cast<std::int32_t>(id), prob);
    }
    d.sort_by_id();
    // Merge duplicate token entries if the server repeats any.
    std::vector<std::pair<std::int32_t, double>> merged;
    for (const auto& [id, p] : d.probs) {
        if (!merged.empty() && merged.back().first == id)
            merged.back().second += p;
        else
            merged.emplace_back(id, p);
    }
    d.probs = std::move(merged);
    if (d.probs.empty())
        throw client_error(base_url_ + ": no response token is in the vocabulary");
    d.normalize();
    return d;
}

std::string RemoteClient::detokenize(std::span<const std::int32_t> ids) const {
    std::string out;
    for (auto id : ids) out += vocab_->token(static_cast<std::size_t>(id));
    return out;
}

} // namespace lexfuse
