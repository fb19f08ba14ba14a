#include "lexfuse/overlap.hpp"

#include <unordered_map>
#include <unordered_set>

namespace lexfuse {

namespace {

// U+2581 LOWER ONE EIGHTH BLOCK in UTF-8.
const std::string kSpaceMarker = "\xe2\x96\x81";

std::string fold_marker(const std::string& token) {
    std::string out;
    out.reserve(token.size());
    for (std::size_t i = 0; i < token.size();) {
        if (token.compare(i, kSpaceMarker.size(), kSpaceMarker) == 0) {
            out += ' ';
            i += kSpaceMarker.size();
        } else {
            out += token[i];
            ++i;
        }
    }
    return out;
}

} // namespace

OverlapDictionary build_overlap(const Vocabulary& source, const Vocabulary& target,
                                const OverlapOptions& opts) {
    OverlapDictionary dict;
    dict.source_size = source.size();
    dict.target_size = target.size();

    // Marker folding can merge surfaces; keep the smallest target id and
    // let the first source claimant win, so matching stays one-to-one.
    std::unordered_map<std::string, std::int32_t> target_index;
    target_index.reserve(target.size());
    for (std::size_t j = 0; j < target.size(); ++j) {
        std::string key = opts.fold_space_marker ? fold_marker(target.token(j)) : target.token(j);
        auto it = target_index.find(key);
        if (it == target_index.end()) target_index.emplace(std::move(key), static_cast<std::int32_t>(j));
    }

    std::unordered_set<std::int32_t> used_targets;
    for (std::size_t i = 0; i < source.size(); ++i) {
        std::string key = opts.fold_space_marker ? fold_marker(source.token(i)) : source.token(i);
        auto it = target_index.find(key);
        if (it == target_index.end()) continue;
        if (opts.fold_space_marker && !used_targets.insert(it->second).second) continue;
        dict.pairs.emplace_back(static_cast<std::int32_t>(i), it->second);
    }
    return dict;
}

double overlap_rate(const OverlapDictionary& dict, RateRelativeTo relative_to) {
    std::size_t denom = relative_to == RateRelativeTo::source ? dict.source_size : dict.target_size;
    if (denom == 0) return 0.0;
    return static_cast<double>(dict.pairs.size()) / static_cast<double>(denom);
}

} // namespace lexfuse
