#include "lexfuse/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "lexfuse/errors.hpp"

namespace lexfuse {

double TokenDistribution::sum() const {
    double s = 0.0;
    for (const auto& [id, p] : probs) s += p;
    return s;
}

void TokenDistribution::normalize() {
    double s = sum();
    if (!(s > 0.0)) throw stage_error("cannot normalize a distribution with mass " + std::to_string(s));
    for (auto& [id, p] : probs) p /= s;
}

void TokenDistribution::sort_by_id() {
    std::sort(probs.begin(), probs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
}

void TokenDistribution::validate() const {
    std::int32_t prev = -1;
    for (const auto& [id, p] : probs) {
        if (id <= prev) throw validation_error("distribution ids not strictly ascending");
        if (!(p >= 0.0) || !std::isfinite(p))
            throw validation_error("distribution has a negative or non-finite probability");
        prev = id;
    }
    double s = sum();
    if (!(s > 0.0) || s > 1.0 + 1e-9)
        throw validation_error("distribution mass " + std::to_string(s) + " outside (0, 1]");
}

std::vector<std::int32_t> TokenDistribution::top_ids(std::size_t n) const {
    std::vector<std::size_t> order(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) order[i] = i;
    n = std::min(n, probs.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (probs[a].second != probs[b].second)
                              return probs[a].second > probs[b].second;
                          return probs[a].first < probs[b].first;
                      });
    std::vector<std::int32_t> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(probs[order[i]].first);
    return ids;
}

std::int32_t TokenDistribution::argmax() const {
    auto ids = top_ids(1);
    return ids.empty() ? -1 : ids[0];
}

double TokenDistribution::prob_of(std::int32_t id) const {
    auto it = std::lower_bound(probs.begin(), probs.end(), id,
                               [](const auto& e, std::int32_t v) { return e.first < v; });
    return it != probs.end() && it->first == id ? it->second : 0.0;
}

TokenDistribution TokenDistribution::from_dense(const std::string& model_id,
                                                const std::vector<double>& dense) {
    TokenDistribution d;
    d.model_id = model_id;
    for (std::size_t i = 0; i < dense.size(); ++i)
        if (dense[i] > 0.0) d.probs.emplace_back(static_cast<std::int32_t>(i), dense[i]);
    return d;
}

TokenDistribution topk_truncate(const TokenDistribution& dist, int k) {
    if (k < 1) throw validation_error("top-k truncation requires k >= 1");
    if (dist.space != DistSpace::native)
        throw validation_error("top-k truncation applies to native distributions");
    if (static_cast<std::size_t>(k) >= dist.probs.size()) {
        TokenDistribution out = dist;
        out.normalize();
        return out;
    }
    auto keep_ids = dist.top_ids(static_cast<std::size_t>(k));
    std::unordered_set<std::int32_t> keep(keep_ids.begin(), keep_ids.end());

    TokenDistribution out;
    out.model_id = dist.model_id;
    out.space = dist.space;
    for (const auto& [id, p] : dist.probs)
        if (keep.count(id)) out.probs.emplace_back(id, p);
    out.normalize();
    return out;
}

std::optional<TokenDistribution> project(const TokenDistribution& dist, const SparseMapping& mapping) {
    if (dist.space != DistSpace::native)
        throw validation_error("project expects a native-space distribution");

    // Gather contributions, then sort-merge by target id. Deterministic
    // regardless of mapping row layout.
    std::vector<std::pair<std::int32_t, double>> contrib;
    for (const auto& [id, p] : dist.probs) {
        if (id < 0 || id >= mapping.rows)
            throw validation_error("token id " + std::to_string(id) +
                                   " outside the mapping's " + std::to_string(mapping.rows) + " rows");
        for (const auto& e : mapping.row_entries(id))
            contrib.emplace_back(static_cast<std::int32_t>(e.col), p * e.weight);
    }
    if (contrib.empty()) return std::nullopt;

    std::sort(contrib.begin(), contrib.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    TokenDistribution out;
    out.model_id = dist.model_id;
    out.space = DistSpace::pivot;
    for (const auto& [j, mass] : contrib) {
        if (!out.probs.empty() && out.probs.back().first == j)
            out.probs.back().second += mass;
        else
            out.probs.emplace_back(j, mass);
    }
    double s = out.sum();
    if (!(s > 0.0)) return std::nullopt;
    out.normalize();
    return out;
}

std::vector<int> filter_models(const std::vector<TokenDistribution>& dists, int n) {
    if (dists.size() < 2) throw validation_error("filtering needs at least 2 distributions");
    if (n < 1) throw validation_error("filter width n must be >= 1");

    std::vector<std::int32_t> top1(dists.size());
    std::vector<std::unordered_set<std::int32_t>> topn(dists.size());
    for (std::size_t l = 0; l < dists.size(); ++l) {
        top1[l] = dists[l].argmax();
        auto ids = dists[l].top_ids(static_cast<std::size_t>(n));
        topn[l] = {ids.begin(), ids.end()};
    }
    std::vector<int> keep(dists.size(), 0);
    for (std::size_t l = 0; l < dists.size(); ++l)
        for (std::size_t o = 0; o < dists.size(); ++o) {
            if (o == l) continue;
            if (topn[o].count(top1[l])) {
                keep[l] = 1;
                break;
            }
        }
    return keep;
}

TokenDistribution fuse(const std::vector<TokenDistribution>& dists, const std::vector<int>& keep) {
    if (dists.size() != keep.size())
        throw validation_error("fuse: indicator length does not match distribution count");
    int survivors = 0;
    for (int k : keep) survivors += k != 0;
    if (survivors == 0) throw stage_error("fuse called with no surviving models");

    // Sort-merge accumulation in model order; dividing by the survivor
    // count keeps the result normalized to the inputs' precision.
    std::vector<std::pair<std::int32_t, double>> acc;
    for (std::size_t l = 0; l < dists.size(); ++l) {
        if (!keep[l]) continue;
        std::vector<std::pair<std::int32_t, double>> merged;
        merged.reserve(acc.size() + dists[l].probs.size());
        auto a = acc.begin();
        auto b = dists[l].probs.begin();
        while (a != acc.end() || b != dists[l].probs.end()) {
            if (b == dists[l].probs.end() || (a != acc.end() && a->first < b->first))
                merged.push_back(*a++);
            else if (a == acc.end() || b->first < a->first)
                merged.push_back(*b++);
            else {
                merged.emplace_back(a->first, a->second + b->second);
                ++a;
                ++b;
            }
        }
        acc = std::move(merged);
    }
    TokenDistribution out;
    out.space = DistSpace::pivot;
    out.model_id = "ensemble";
    out.probs = std::move(acc);
    for (auto& [id, p] : out.probs) p /= survivors;
    return out;
}

} // namespace lexfuse
