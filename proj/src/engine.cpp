#include "lexfuse/engine.hpp"

#include <algorithm>
#include <future>

#include "lexfuse/errors.hpp"

namespace lexfuse {

void EnsembleSpec::validate() const {
    if (models.size() < 2) throw validation_error("ensemble needs at least 2 models");
    if (pivot_index >= models.size()) throw validation_error("pivot index out of range");
    if (top_k < 1) throw validation_error("top-k must be >= 1");
    if (filter_n < 0) throw validation_error("filter n must be >= 0 (0 disables filtering)");
    if (max_len < 1) throw validation_error("max length must be >= 1");
    if (log_top < 1) throw validation_error("log_top must be >= 1");

    const auto pivot_size = pivot().client->vocabulary().size();
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto& m = models[i];
        if (!m.client) throw validation_error("model '" + m.name + "' has no client");
        if (i == pivot_index) continue;
        const auto own_size = m.client->vocabulary().size();
        if (!m.mapping) {
            if (own_size != pivot_size)
                throw validation_error("model '" + m.name +
                                       "' has no mapping and its vocabulary size differs from the pivot's");
            continue;
        }
        if (m.mapping->rows != static_cast<std::int64_t>(own_size) ||
            m.mapping->cols != static_cast<std::int64_t>(pivot_size))
            throw validation_error("mapping shape for model '" + m.name + "' is " +
                                   std::to_string(m.mapping->rows) + "x" +
                                   std::to_string(m.mapping->cols) + ", expected " +
                                   std::to_string(own_size) + "x" + std::to_string(pivot_size));
    }
}

std::size_t select_pivot(const std::vector<EnsembleMember>& models) {
    if (models.empty()) throw validation_error("cannot select a pivot from an empty model list");
    std::size_t best = 0;
    for (std::size_t i = 1; i < models.size(); ++i) {
        const auto a = models[i].client->vocabulary().size();
        const auto b = models[best].client->vocabulary().size();
        if (a > b || (a == b && models[i].name < models[best].name)) best = i;
    }
    return best;
}

namespace {

std::vector<std::pair<std::string, double>> top_list(const TokenDistribution& dist,
                                                     const Vocabulary& vocab, int n) {
    std::vector<std::pair<std::string, double>> out;
    for (auto id : dist.top_ids(static_cast<std::size_t>(n)))
        out.emplace_back(vocab.token(static_cast<std::size_t>(id)), dist.prob_of(id));
    return out;
}

} // namespace

StepOutcome decode_step(const EnsembleSpec& spec, DecodeState& state) {
    if (state.terminated) throw stage_error("decode_step called on a terminated state");
    const auto n_models = spec.models.size();
    const Vocabulary& pivot_vocab = spec.pivot().client->vocabulary();

    StepRecord record;
    record.step = static_cast<int>(state.step_log.size());
    record.models.resize(n_models);

    // Query all clients on the shared text prefix. The queries are
    // independent; fusion is a barrier joined in model order.
    std::vector<TokenDistribution> native(n_models);
    std::vector<bool> answered(n_models, false);
    auto query = [&](std::size_t i) {
        native[i] = spec.models[i].client->next_distribution(state.text_prefix);
        native[i].model_id = spec.models[i].name;
        native[i].sort_by_id();
        native[i].validate();
        const auto own_size = static_cast<std::int32_t>(spec.models[i].client->vocabulary().size());
        if (!native[i].probs.empty() &&
            (native[i].probs.front().first < 0 || native[i].probs.back().first >= own_size))
            throw client_error("distribution contains token ids outside the client's vocabulary");
    };
    if (spec.parallel_clients && n_models > 1) {
        std::vector<std::future<void>> futures;
        futures.reserve(n_models);
        for (std::size_t i = 0; i < n_models; ++i)
            futures.push_back(std::async(std::launch::async, query, i));
        for (std::size_t i = 0; i < n_models; ++i) {
            try {
                futures[i].get();
                answered[i] = true;
            } catch (const std::exception& e) {
                if (spec.on_failure == FailurePolicy::abort)
                    throw stage_error("model '" + spec.models[i].name + "' failed: " + e.what());
                record.models[i].error = e.what();
            }
        }
    } else {
        for (std::size_t i = 0; i < n_models; ++i) {
            try {
                query(i);
                answered[i] = true;
            } catch (const std::exception& e) {
                if (spec.on_failure == FailurePolicy::abort)
                    throw stage_error("model '" + spec.models[i].name + "' failed: " + e.what());
                record.models[i].error = e.what();
            }
        }
    }

    // Truncate natively, then project into the pivot space.
    std::vector<TokenDistribution> pivot_dists(n_models);
    std::vector<bool> available(n_models, false);
    for (std::size_t i = 0; i < n_models; ++i) {
        auto& log = record.models[i];
        log.name = spec.models[i].name;
        if (!answered[i]) continue;

        TokenDistribution truncated = topk_truncate(native[i], spec.top_k);
        log.top_native = top_list(truncated, spec.models[i].client->vocabulary(), spec.log_top);

        if (spec.models[i].mapping) {
            auto projected = project(truncated, *spec.models[i].mapping);
            if (!projected) {
                log.error = "no projected mass: top-k support is entirely unmapped";
                continue;
            }
            pivot_dists[i] = std::move(*projected);
        } else {
            pivot_dists[i] = std::move(truncated);
            pivot_dists[i].space = DistSpace::pivot;
        }
        available[i] = true;
        log.available = true;
        log.top_pivot = top_list(pivot_dists[i], pivot_vocab, std::max(spec.filter_n, 5));
    }

    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n_models; ++i)
        if (available[i]) active.push_back(i);
    if (active.empty()) throw stage_error("no model produced a usable distribution this step");

    // Consistency filter over the available models.
    std::vector<int> keep(n_models, 0);
    if (spec.filter_n > 0 && active.size() >= 2) {
        std::vector<TokenDistribution> actives;
        actives.reserve(active.size());
        for (auto i : active) actives.push_back(pivot_dists[i]);
        auto verdict = filter_models(actives, spec.filter_n);
        for (std::size_t a = 0; a < active.size(); ++a) keep[active[a]] = verdict[a];
    } else {
        for (auto i : active) keep[i] = 1;
    }
    for (std::size_t i = 0; i < n_models; ++i) record.models[i].included = keep[i];

    StepOutcome outcome;
    outcome.indicators = keep;

    int survivors = 0;
    for (int k : keep) survivors += k;
    if (survivors > 0) {
        std::vector<TokenDistribution> all(n_models);
        for (auto i : active) all[i] = pivot_dists[i];
        outcome.fused = fuse(all, keep);
    } else if (available[spec.pivot_index]) {
        // Everyone filtered out; the pivot defines the output space, so
        // fall back to its own distribution.
        outcome.fused = pivot_dists[spec.pivot_index];
        outcome.fallback_pivot = true;
    } else {
        // Degenerate: no survivors and no pivot either. Average what is
        // available rather than failing the step.
        std::vector<int> all_avail(n_models, 0);
        for (auto i : active) all_avail[i] = 1;
        outcome.fused = fuse(pivot_dists, all_avail);
        outcome.fallback_pivot = true;
    }

    outcome.chosen_id = outcome.fused.argmax();
    record.fallback_pivot = outcome.fallback_pivot;
    record.chosen_id = outcome.chosen_id;
    record.chosen_text = pivot_vocab.token(static_cast<std::size_t>(outcome.chosen_id));
    record.fused_top = top_list(outcome.fused, pivot_vocab, spec.log_top);

    const std::int32_t chosen = outcome.chosen_id;
    const bool is_stop = std::find(spec.stop_ids.begin(), spec.stop_ids.end(), chosen) !=
                         spec.stop_ids.end();
    if (!is_stop)
        state.text_prefix += spec.pivot().client->detokenize(std::span<const std::int32_t>(&chosen, 1));
    else
        state.terminated = true;
    state.step_log.push_back(std::move(record));
    return outcome;
}

DecodeResult decode(const EnsembleSpec& spec, const std::string& prompt) {
    spec.validate();
    DecodeState state;
    state.text_prefix = prompt;

    while (!state.terminated && static_cast<int>(state.step_log.size()) < spec.max_len)
        decode_step(spec, state);

    DecodeResult result;
    result.text = state.text_prefix.substr(prompt.size());
    result.state = std::move(state);
    return result;
}

} // namespace lexfuse
