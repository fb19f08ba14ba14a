#include "lexfuse/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>

#include "lexfuse/errors.hpp"

extern char** environ;

namespace lexfuse {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kEnvPrefix = "LEXFUSE_";

std::string SessionConfig::resolve_path(const std::string& path) const {
    if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
    return (fs::path(base_dir) / path).string();
}

std::string SessionConfig::transform_path(const std::string& model_name) const {
    return (fs::path(resolve_path(work_dir)) / ("transform_" + model_name + ".evat")).string();
}

std::string SessionConfig::mapping_path(const std::string& model_name) const {
    return (fs::path(resolve_path(work_dir)) / ("mapping_" + model_name + ".evam")).string();
}

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

void apply_env_overrides(json& doc) {
    for (char** env = environ; *env != nullptr; ++env) {
        std::string entry(*env);
        if (entry.rfind(kEnvPrefix, 0) != 0) continue;
        auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(std::string(kEnvPrefix).size(), eq - std::string(kEnvPrefix).size());
        std::string value = entry.substr(eq + 1);

        // Double underscore separates nesting levels; single underscores
        // stay inside key names (MAX_LEN).
        std::vector<std::string> parts;
        std::size_t pos = 0;
        while (pos <= key.size()) {
            auto sep = key.find("__", pos);
            if (sep == std::string::npos) {
                parts.push_back(lower(key.substr(pos)));
                break;
            }
            parts.push_back(lower(key.substr(pos, sep - pos)));
            pos = sep + 2;
        }
        if (parts.empty()) continue;

        json* node = &doc;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;  // plain string
        }
        (*node)[parts.back()] = parsed;
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ClientConfig parse_client(const json& j) {
    ClientConfig c;
    read_field(j, "kind", c.kind);
    read_field(j, "script", c.script);
    read_field(j, "corpus", c.corpus);
    read_field(j, "order", c.order);
    read_field(j, "level", c.level);
    read_field(j, "repeat", c.repeat);
    read_field(j, "url", c.url);
    read_field(j, "top_k", c.top_k);
    read_field(j, "timeout", c.timeout);
    return c;
}

} // namespace

SessionConfig load_session_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    json doc;
    try {
        doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw validation_error(path + ": invalid JSON: " + e.what());
    }
    apply_env_overrides(doc);

    SessionConfig cfg;
    cfg.base_dir = fs::path(path).parent_path().string();
    try {
        if (doc.contains("models"))
            for (const auto& m : doc["models"]) {
                ModelEntry e;
                read_field(m, "name", e.name);
                read_field(m, "embeddings", e.embeddings);
                read_field(m, "format", e.format);
                read_field(m, "vocab", e.vocab_file);
                read_field(m, "mapping", e.mapping);
                if (m.contains("client")) e.client = parse_client(m["client"]);
                cfg.models.push_back(std::move(e));
            }
        read_field(doc, "pivot", cfg.pivot);
        if (doc.contains("transform")) {
            const auto& t = doc["transform"];
            read_field(t, "whiten", cfg.transform.whiten);
            if (t.contains("reweight") && !t["reweight"].is_null())
                cfg.transform.reweight = t["reweight"].get<double>();
            read_field(t, "dewhiten", cfg.transform.dewhiten);
            read_field(t, "csls_k", cfg.csls_k);
            read_field(t, "block_rows", cfg.block_rows);
        }
        if (doc.contains("noise")) {
            const auto& n = doc["noise"];
            read_field(n, "t", cfg.noise.t);
            read_field(n, "threshold", cfg.noise.threshold);
            read_field(n, "sigma", cfg.noise.sigma);
            read_field(n, "c", cfg.noise.c);
            read_field(n, "population_variance", cfg.noise.population_variance);
            read_field(n, "row_normalize", cfg.noise.row_normalize);
        }
        if (doc.contains("decode")) {
            const auto& d = doc["decode"];
            read_field(d, "k", cfg.decode.top_k);
            read_field(d, "n", cfg.decode.filter_n);
            read_field(d, "max_len", cfg.decode.max_len);
            read_field(d, "stop_tokens", cfg.decode.stop_tokens);
            read_field(d, "log_top", cfg.decode.log_top);
            read_field(d, "on_failure", cfg.decode.on_failure);
            read_field(d, "parallel", cfg.decode.parallel);
        }
        if (doc.contains("paths")) read_field(doc["paths"], "work_dir", cfg.work_dir);
        read_field(doc, "threads", cfg.threads);
    } catch (const json::exception& e) {
        throw validation_error(path + ": config field has the wrong type: " + e.what());
    }
    return cfg;
}

std::vector<std::string> validate_config(const SessionConfig& cfg) {
    std::vector<std::string> problems;
    auto complain = [&](const std::string& msg) { problems.push_back(msg); };

    if (cfg.models.size() < 2)
        complain("models: at least 2 models are required, got " + std::to_string(cfg.models.size()));

    std::set<std::string> names;
    for (std::size_t i = 0; i < cfg.models.size(); ++i) {
        const auto& m = cfg.models[i];
        const std::string where = "models[" + std::to_string(i) + "]";
        if (m.name.empty()) complain(where + ".name: must not be empty");
        if (!names.insert(m.name).second) complain(where + ".name: duplicate model name '" + m.name + "'");

        if (m.embeddings.empty() && m.vocab_file.empty())
            complain(where + ": needs 'embeddings' or 'vocab' to define the vocabulary");
        if (!m.embeddings.empty() && !fs::exists(cfg.resolve_path(m.embeddings)))
            complain(where + ".embeddings: file does not exist: " + cfg.resolve_path(m.embeddings));
        if (!m.vocab_file.empty() && !fs::exists(cfg.resolve_path(m.vocab_file)))
            complain(where + ".vocab: file does not exist: " + cfg.resolve_path(m.vocab_file));
        if (!m.format.empty() && m.format != "binary-native" && m.format != "word2vec-text")
            complain(where + ".format: unknown format '" + m.format + "'");

        const auto& c = m.client;
        if (c.kind.empty() || c.kind == "none") {
            // embedding-only model entry; fine for align / build-map
        } else if (c.kind == "replay") {
            if (c.script.empty())
                complain(where + ".client.script: replay client needs a script path");
            else if (!fs::exists(cfg.resolve_path(c.script)))
                complain(where + ".client.script: file does not exist: " + cfg.resolve_path(c.script));
        } else if (c.kind == "toy-ngram") {
            if (c.order < 1) complain(where + ".client.order: must be >= 1");
            if (c.level != "word" && c.level != "char")
                complain(where + ".client.level: must be 'word' or 'char'");
            if (!c.corpus.empty() && !fs::exists(cfg.resolve_path(c.corpus)))
                complain(where + ".client.corpus: file does not exist: " + cfg.resolve_path(c.corpus));
        } else if (c.kind == "remote") {
            if (c.url.empty()) complain(where + ".client.url: remote client needs a url");
            if (c.top_k < 1) complain(where + ".client.top_k: must be >= 1");
        } else {
            complain(where + ".client.kind: unknown kind '" + c.kind + "'");
        }

        if (!m.mapping.empty() && m.mapping != "identity" &&
            !fs::exists(cfg.resolve_path(m.mapping)))
            complain(where + ".mapping: file does not exist: " + cfg.resolve_path(m.mapping));
    }

    if (cfg.pivot != "auto" && !names.count(cfg.pivot))
        complain("pivot: no model named '" + cfg.pivot + "'");

    if (cfg.csls_k < 1) complain("transform.csls_k: must be >= 1");
    if (cfg.block_rows < 1) complain("transform.block_rows: must be >= 1");
    try {
        cfg.noise.validate();
    } catch (const validation_error& e) {
        complain(e.what());
    }
    if (cfg.decode.top_k < 1) complain("decode.k: must be >= 1");
    if (cfg.decode.filter_n < 0) complain("decode.n: must be >= 0");
    if (cfg.decode.max_len < 1) complain("decode.max_len: must be >= 1");
    if (cfg.decode.log_top < 1) complain("decode.log_top: must be >= 1");
    if (cfg.decode.on_failure != "drop" && cfg.decode.on_failure != "strict")
        complain("decode.on_failure: must be 'drop' or 'strict'");
    return problems;
}

} // namespace lexfuse
