#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lexfuse/distribution.hpp"
#include "lexfuse/embedding.hpp"
#include "lexfuse/mapping.hpp"

namespace lexfuse {

// A generative model backend. The engine only ever hands clients a text
// prefix and expects a normalized distribution over the client's own
// vocabulary; tokenization of the prefix is entirely the client's
// business. Implementations must tolerate concurrent calls on distinct
// prefixes.
class ModelClient {
public:
    virtual ~ModelClient() = default;
    virtual const Vocabulary& vocabulary() const = 0;
    virtual TokenDistribution next_distribution(const std::string& text_prefix) = 0;
    virtual std::string detokenize(std::span<const std::int32_t> ids) const = 0;
};

struct EnsembleMember {
    std::string name;
    std::shared_ptr<ModelClient> client;
    // Projection into the pivot vocabulary; null means identity (the
    // pivot itself, or a model sharing the pivot vocabulary).
    std::shared_ptr<const SparseMapping> mapping;
};

enum class FailurePolicy { drop_for_step, abort };

struct EnsembleSpec {
    std::vector<EnsembleMember> models;
    std::size_t pivot_index = 0;
    int top_k = 320;          // native top-k truncation
    int filter_n = 40;        // 0 disables the consistency filter
    int max_len = 64;
    std::vector<std::int32_t> stop_ids;  // pivot-vocabulary ids
    int log_top = 64;         // native entries kept per model in the step log
    FailurePolicy on_failure = FailurePolicy::drop_for_step;
    bool parallel_clients = true;

    void validate() const;
    const EnsembleMember& pivot() const { return models[pivot_index]; }
};

struct ModelStepLog {
    std::string name;
    bool available = false;   // client answered and projected to nonzero mass
    int included = 0;         // filter indicator I
    std::string error;        // failure reason when not available
    std::vector<std::pair<std::string, double>> top_native;  // token, prob
    std::vector<std::pair<std::string, double>> top_pivot;
};

struct StepRecord {
    int step = 0;
    std::int32_t chosen_id = -1;
    std::string chosen_text;
    bool fallback_pivot = false;  // every model filtered out
    std::vector<ModelStepLog> models;
    std::vector<std::pair<std::string, double>> fused_top;
};

struct DecodeState {
    std::string text_prefix;
    std::vector<StepRecord> step_log;
    bool terminated = false;
};

// Everything decode_step produced, including the full fused distribution
// (the step log only keeps trimmed top lists).
struct StepOutcome {
    std::int32_t chosen_id = -1;
    TokenDistribution fused;
    std::vector<int> indicators;
    bool fallback_pivot = false;
};

// One ensemble step: query every client on the current prefix (in
// parallel when allowed), truncate natively, project into the pivot
// space, filter outliers, fuse, and pick the argmax. The chosen pivot
// token's text is appended to the state's prefix and the step is logged.
StepOutcome decode_step(const EnsembleSpec& spec, DecodeState& state);

struct DecodeResult {
    std::string text;  // generated continuation, stop token excluded
    DecodeState state;
};

// Greedy loop over decode_step until a stop token or max_len.
DecodeResult decode(const EnsembleSpec& spec, const std::string& prompt);

// The default pivot rule: the member with the largest vocabulary, ties
// by ascending name.
std::size_t select_pivot(const std::vector<EnsembleMember>& models);

} // namespace lexfuse
