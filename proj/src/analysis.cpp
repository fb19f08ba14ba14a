#include "lexfuse/analysis.hpp"

#include <algorithm>
#include <numeric>

#include "lexfuse/errors.hpp"

namespace lexfuse {

namespace {

// Decode UTF-8 into scalar values; each invalid byte becomes one unit.
std::vector<std::uint32_t> to_scalars(const std::string& s) {
    std::vector<std::uint32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        std::uint32_t cp = b0;
        if (b0 >= 0xF0)
            len = 4, cp = b0 & 0x07u;
        else if (b0 >= 0xE0)
            len = 3, cp = b0 & 0x0Fu;
        else if (b0 >= 0xC0)
            len = 2, cp = b0 & 0x1Fu;

        if (len == 1 || i + len > s.size()) {
            out.push_back(b0);
            ++i;
            continue;
        }
        bool valid = true;
        std::uint32_t acc = cp;
        for (std::size_t k = 1; k < len; ++k) {
            auto bk = static_cast<unsigned char>(s[i + k]);
            if ((bk & 0xC0u) != 0x80u) {
                valid = false;
                break;
            }
            acc = (acc << 6) | (bk & 0x3Fu);
        }
        if (valid) {
            out.push_back(acc);
            i += len;
        } else {
            out.push_back(b0);
            ++i;
        }
    }
    return out;
}

} // namespace

std::size_t edit_distance(const std::string& a, const std::string& b) {
    auto u = to_scalars(a);
    auto v = to_scalars(b);
    if (u.size() < v.size()) std::swap(u, v);

    // Two-row DP over the shorter string.
    std::vector<std::size_t> prev(v.size() + 1), cur(v.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= u.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= v.size(); ++j) {
            std::size_t sub = prev[j - 1] + (u[i - 1] == v[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[v.size()];
}

DiversityReport diversity(const std::vector<TopList>& lists, const std::vector<int>& n_values) {
    std::vector<int> ns = n_values;
    std::sort(ns.begin(), ns.end());

    DiversityReport report;
    report.sample_count = lists.size();
    int max_n = ns.empty() ? 0 : ns.back();

    struct Acc {
        double sum = 0.0;
        std::size_t count = 0;
    };
    std::map<std::string, std::vector<Acc>> per_model;
    std::vector<Acc> pooled(ns.size());

    for (const auto& list : lists) {
        if (list.tokens.empty()) continue;
        if (static_cast<int>(list.tokens.size()) < max_n) ++report.truncated_lists;
        auto& model_acc = per_model.try_emplace(list.model, ns.size()).first->second;

        const std::string& top1 = list.tokens.front();
        // Distances are cumulative over ranks, so each n extends the
        // previous one instead of recomputing.
        double dist_sum = 0.0;
        std::size_t rank = 1;
        for (std::size_t ni = 0; ni < ns.size(); ++ni) {
            auto limit = static_cast<std::size_t>(ns[ni]);
            while (rank < limit && rank < list.tokens.size()) {
                dist_sum += static_cast<double>(edit_distance(list.tokens[rank], top1));
                ++rank;
            }
            if (rank == 0 || limit < 2) continue;
            std::size_t pairs = std::min(rank, limit) - 1;
            if (pairs == 0) continue;
            double mean = dist_sum / static_cast<double>(pairs);
            pooled[ni].sum += mean;
            ++pooled[ni].count;
            model_acc[ni].sum += mean;
            ++model_acc[ni].count;
        }
    }

    for (std::size_t ni = 0; ni < ns.size(); ++ni)
        report.per_n.emplace_back(ns[ni], pooled[ni].count ? pooled[ni].sum / pooled[ni].count : 0.0);
    for (auto& [model, accs] : per_model) {
        auto& out = report.per_model[model];
        for (std::size_t ni = 0; ni < ns.size(); ++ni)
            out.emplace_back(ns[ni], accs[ni].count ? accs[ni].sum / accs[ni].count : 0.0);
    }
    return report;
}

std::vector<TopList> collect_top_lists(const std::vector<DecodeState>& states) {
    std::vector<TopList> lists;
    for (const auto& state : states)
        for (const auto& step : state.step_log)
            for (const auto& m : step.models) {
                if (m.top_native.empty()) continue;
                TopList list;
                list.model = m.name;
                list.tokens.reserve(m.top_native.size());
                for (const auto& [token, prob] : m.top_native) list.tokens.push_back(token);
                lists.push_back(std::move(list));
            }
    return lists;
}

std::size_t SimilarityHistogram::total() const {
    std::size_t t = underflow + overflow;
    for (auto c : bin_counts) t += c;
    return t;
}

SimilarityHistogram similarity_bins(const SparseMapping& mapping, const std::vector<double>& edges) {
    if (edges.size() < 2) throw validation_error("similarity_bins needs at least 2 edges");
    if (!std::is_sorted(edges.begin(), edges.end()))
        throw validation_error("similarity_bins edges must be ascending");

    SimilarityHistogram h;
    h.edges = edges;
    h.bin_counts.assign(edges.size() - 1, 0);
    h.aligned_rows = mapping.count_kind(RowKind::aligned);
    h.dropped_empty_rows = mapping.count_kind(RowKind::dropped_empty);
    h.dropped_variance_rows = mapping.count_kind(RowKind::dropped_variance);

    for (const auto& e : mapping.entries) {
        double s = static_cast<double>(e.score);
        if (s < edges.front()) {
            ++h.underflow;
        } else if (s > edges.back()) {
            ++h.overflow;
        } else {
            // Last bin is closed on the right.
            auto it = std::upper_bound(edges.begin(), edges.end(), s);
            std::size_t idx = static_cast<std::size_t>(it - edges.begin());
            idx = idx >= edges.size() ? edges.size() - 2 : idx - 1;
            ++h.bin_counts[idx];
        }
    }
    return h;
}

} // namespace lexfuse
