#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lexfuse/mapping.hpp"
#include "lexfuse/transform.hpp"

namespace lexfuse {

struct ClientConfig {
    std::string kind;          // "replay" | "toy-ngram" | "remote" | "none"
    std::string script;        // replay: JSONL path
    std::string corpus;        // toy-ngram: training text path
    int order = 3;             // toy-ngram
    std::string level = "word";  // toy-ngram: "word" | "char"
    int repeat = 1;            // toy-ngram: corpus repetitions
    std::string url;           // remote
    int top_k = 320;           // remote request width
    double timeout = 30.0;     // remote, seconds
};

struct ModelEntry {
    std::string name;
    std::string embeddings;    // embedding file; optional for decode-only models
    std::string format;        // "binary-native" | "word2vec-text" | "" = sniff
    std::string vocab_file;    // plain token list; alternative vocabulary source
    ClientConfig client;
    std::string mapping;       // "" = from work dir, "identity", or a file path
};

struct DecodeConfig {
    int top_k = 320;
    int filter_n = 40;         // 0 disables filtering
    int max_len = 64;
    std::vector<std::string> stop_tokens;
    int log_top = 64;
    std::string on_failure = "drop";  // "drop" | "strict"
    bool parallel = true;
};

struct SessionConfig {
    std::vector<ModelEntry> models;
    std::string pivot = "auto";
    TransformConfig transform;
    int csls_k = 10;
    std::int64_t block_rows = 1024;
    NoiseConfig noise;
    DecodeConfig decode;
    std::string work_dir = "lexfuse-out";
    unsigned threads = 0;      // 0 = hardware concurrency

    std::string base_dir;      // directory paths are resolved against

    std::string resolve_path(const std::string& path) const;
    std::string transform_path(const std::string& model_name) const;
    std::string mapping_path(const std::string& model_name) const;
};

// Load the session document (JSON) and apply environment overrides:
// LEXFUSE_<PATH> with "__" separating levels, e.g. LEXFUSE_NOISE__T=12
// or LEXFUSE_DECODE__MAX_LEN=8. Values are parsed as JSON when possible.
SessionConfig load_session_config(const std::string& path);

// Every problem at once; empty means valid.
std::vector<std::string> validate_config(const SessionConfig& cfg);

// Resolved pivot index ("auto" = largest vocabulary, ties by name).
// Requires vocabularies, so it lives with the pipeline session; declared
// here for the validator's range checks only.
extern const char* const kEnvPrefix;

} // namespace lexfuse
