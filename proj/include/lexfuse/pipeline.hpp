#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lexfuse/analysis.hpp"
#include "lexfuse/config.hpp"
#include "lexfuse/engine.hpp"

namespace lexfuse {

enum class Stage { align, build_map, decode, stats };

const char* stage_name(Stage s);

struct StageReport {
    Stage stage;
    bool ran = false;     // computation happened
    bool cached = false;  // outputs were already fresh
    std::vector<std::string> outputs;
    std::vector<std::string> notes;
};

struct PipelineOptions {
    std::vector<std::string> prompts;
    std::string trace_path;              // default <work_dir>/trace.jsonl
    std::string stats_path;              // default <work_dir>/stats.json
    std::string csv_path;                // optional diversity CSV
    std::vector<int> n_values = {3, 5, 10, 20, 40};
    bool force = false;                  // recompute and ignore provenance mismatches
};

struct PipelineReport {
    std::vector<StageReport> stages;
    std::vector<std::string> decode_outputs;  // one generated text per prompt
};

// Loads and caches the per-model resources a session needs: embeddings,
// vocabularies, preprocessed matrices, clients. Everything is loaded at
// most once and shared by the stages.
class Session {
public:
    explicit Session(SessionConfig cfg);

    const SessionConfig& config() const { return cfg_; }
    std::size_t model_count() const { return cfg_.models.size(); }
    std::size_t pivot_index();

    bool has_embeddings(std::size_t i) const { return !cfg_.models[i].embeddings.empty(); }
    const EmbeddingSet& raw_embeddings(std::size_t i);
    const EmbeddingSet& preprocessed(std::size_t i);
    VocabularyPtr vocabulary(std::size_t i);
    std::shared_ptr<ModelClient> client(std::size_t i);

    // Assemble the decode-time ensemble (clients, mappings, scalars).
    EnsembleSpec make_ensemble_spec(bool force);

private:
    SessionConfig cfg_;
    std::optional<std::size_t> pivot_;
    std::vector<std::optional<EmbeddingSet>> raw_;
    std::vector<std::optional<EmbeddingSet>> pre_;
    std::vector<VocabularyPtr> vocabs_;
    std::vector<std::shared_ptr<ModelClient>> clients_;
};

// Execute the requested stages in dependency order (align -> build-map ->
// decode -> stats; requesting a later stage implies the earlier ones).
// Stages whose outputs are fresh under the embedded input digests are
// skipped.
PipelineReport run_pipeline(const SessionConfig& cfg, const std::vector<Stage>& stages,
                            const PipelineOptions& opts = {});
PipelineReport run_pipeline(Session& session, const std::vector<Stage>& stages,
                            const PipelineOptions& opts = {});

// Decode trace access for the stats stage and external tooling.
struct TraceData {
    std::string input_digest;
    std::vector<std::string> outputs;
    std::vector<TopList> top_lists;
};
TraceData read_trace(const std::string& path);

} // namespace lexfuse
