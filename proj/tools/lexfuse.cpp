#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "lexfuse/analysis.hpp"
#include "lexfuse/errors.hpp"
#include "lexfuse/overlap.hpp"
#include "lexfuse/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lexfuse;

namespace {

enum LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };
LogLevel g_log_level = kInfo;

void log_line(LogLevel level, const std::string& msg) {
    if (level >= g_log_level) std::cerr << msg << '\n';
}

void print_report(const PipelineReport& report) {
    for (const auto& sr : report.stages) {
        std::string status = sr.ran ? "ran" : (sr.cached ? "cached" : "skipped");
        log_line(kInfo, std::string("[") + stage_name(sr.stage) + "] " + status);
        for (const auto& note : sr.notes) log_line(kDebug, std::string("  ") + note);
        for (const auto& out : sr.outputs) log_line(kDebug, "  -> " + out);
    }
}

EmbeddingFormat sniff(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    char magic[4] = {};
    in.read(magic, 4);
    return std::string(magic, 4) == "EVAE" ? EmbeddingFormat::binary_native
                                           : EmbeddingFormat::word2vec_text;
}

VocabularyPtr vocab_from_arg(const std::string& arg, std::optional<Session>& session) {
    if (session) {
        const auto& models = session->config().models;
        for (std::size_t i = 0; i < models.size(); ++i)
            if (models[i].name == arg) return session->vocabulary(i);
    }
    if (!fs::exists(arg))
        throw validation_error("'" + arg + "' is neither a configured model name nor a file");
    return load_embeddings(arg, sniff(arg)).vocab;
}

json digest_hex(const Digest& d) { return to_hex(d); }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"lexfuse: vocabulary alignment and per-step ensemble decoding"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string log_level = "info";
    unsigned threads = 0;
    bool json_errors = false;
    app.add_option("--config", config_path, "session config file (JSON)");
    app.add_option("--threads", threads, "worker threads (0 = auto)");
    app.add_option("--log-level", log_level, "debug|info|warn|error")
        ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
    app.add_flag("--json-errors", json_errors, "emit errors as JSON on stdout");

    // align
    auto* align_cmd = app.add_subcommand("align", "learn embedding-space transforms");
    std::string align_source, align_target, align_out;
    bool no_whiten = false, no_dewhiten = false, force = false;
    std::optional<double> reweight;
    align_cmd->add_option("--source", align_source, "source embeddings (standalone mode)");
    align_cmd->add_option("--target", align_target, "target embeddings (standalone mode)");
    align_cmd->add_option("--out", align_out, "output transform file (standalone mode)");
    align_cmd->add_flag("--no-whiten", no_whiten, "disable whitening (plain Procrustes)");
    align_cmd->add_flag("--no-dewhiten", no_dewhiten, "keep the mapped space whitened");
    double reweight_value = 0.0;
    auto* reweight_opt =
        align_cmd->add_option("--reweight", reweight_value, "singular-value exponent");
    align_cmd->add_flag("--force", force, "recompute even when outputs are fresh");

    // build-map
    auto* map_cmd = app.add_subcommand("build-map", "build sparse projection mappings");
    map_cmd->add_flag("--force", force, "recompute even when outputs are fresh");

    // inspect-overlap
    auto* overlap_cmd = app.add_subcommand("inspect-overlap", "report shared tokens");
    std::string ov_source, ov_target;
    bool fold_marker = false;
    overlap_cmd->add_option("--source", ov_source, "model name or embeddings file")->required();
    overlap_cmd->add_option("--target", ov_target, "model name or embeddings file")->required();
    overlap_cmd->add_flag("--fold-space-marker", fold_marker,
                          "treat U+2581 as a plain space when matching");

    // inspect-map
    auto* inspect_cmd = app.add_subcommand("inspect-map", "report mapping statistics and provenance");
    std::string map_path, map_model;
    inspect_cmd->add_option("--map", map_path, "mapping file");
    inspect_cmd->add_option("--model", map_model, "configured model whose mapping to inspect");

    // decode
    auto* decode_cmd = app.add_subcommand("decode", "ensemble greedy decoding");
    std::string spec_path, prompt_file, trace_path;
    std::vector<std::string> prompts;
    int opt_n = -1, opt_k = -1, opt_max_len = -1;
    decode_cmd->add_option("--spec", spec_path, "session config file (same as --config)");
    decode_cmd->add_option("--prompt", prompts, "prompt text (repeatable)");
    decode_cmd->add_option("--prompt-file", prompt_file, "file with one prompt per line");
    decode_cmd->add_option("--n", opt_n, "filter width (0 disables filtering)");
    decode_cmd->add_option("--k", opt_k, "native top-k truncation");
    decode_cmd->add_option("--max-len", opt_max_len, "maximum generated tokens");
    decode_cmd->add_option("--trace", trace_path, "step-log JSONL output path");
    decode_cmd->add_flag("--force", force, "redecode even when the trace is fresh");

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "diversity and mapping reports");
    std::string stats_trace, stats_map, stats_out, stats_csv;
    std::vector<int> n_values = {3, 5, 10, 20, 40};
    stats_cmd->add_option("--trace", stats_trace, "decode trace (standalone mode)");
    stats_cmd->add_option("--map", stats_map, "mapping file (standalone mode)");
    stats_cmd->add_option("--out", stats_out, "report output path (default stdout/work dir)");
    stats_cmd->add_option("--csv", stats_csv, "also write a diversity CSV");
    stats_cmd->add_option("--n-values", n_values, "top-n widths for the diversity metric");
    stats_cmd->add_flag("--force", force, "recompute even when the report is fresh");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    if (log_level == "debug") g_log_level = kDebug;
    else if (log_level == "warn") g_log_level = kWarn;
    else if (log_level == "error") g_log_level = kError;

    try {
        if (reweight_opt->count() > 0) reweight = reweight_value;
        if (!spec_path.empty()) config_path = spec_path;

        std::optional<Session> session;
        auto need_session = [&]() -> Session& {
            if (!session) {
                if (config_path.empty())
                    throw validation_error("this command needs --config <session file>");
                auto cfg = load_session_config(config_path);
                if (threads != 0) cfg.threads = threads;
                session.emplace(std::move(cfg));
            }
            return *session;
        };
        auto try_session = [&]() {
            if (!session && !config_path.empty()) need_session();
        };

        if (align_cmd->parsed()) {
            if (!align_source.empty() || !align_target.empty()) {
                if (align_source.empty() || align_target.empty() || align_out.empty())
                    throw validation_error("standalone align needs --source, --target and --out");
                TransformConfig tc;
                tc.whiten = !no_whiten;
                tc.dewhiten = !no_dewhiten;
                tc.reweight = reweight;
                auto src = preprocess(load_embeddings(align_source, sniff(align_source))).set;
                auto tgt = preprocess(load_embeddings(align_target, sniff(align_target))).set;
                auto dict = build_overlap(*src.vocab, *tgt.vocab);
                std::vector<std::string> warnings;
                auto t = learn_transform(src, tgt, dict, tc, &warnings);
                for (const auto& w : warnings) log_line(kWarn, "warning: " + w);
                save_transform(t, align_out);
                log_line(kInfo, "wrote " + align_out);
            } else {
                auto& s = need_session();
                PipelineOptions opts;
                opts.force = force;
                print_report(run_pipeline(s, {Stage::align}, opts));
            }
        } else if (map_cmd->parsed()) {
            auto& s = need_session();
            PipelineOptions opts;
            opts.force = force;
            print_report(run_pipeline(s, {Stage::build_map}, opts));
        } else if (overlap_cmd->parsed()) {
            try_session();
            auto source = vocab_from_arg(ov_source, session);
            auto target = vocab_from_arg(ov_target, session);
            auto dict = build_overlap(*source, *target, OverlapOptions{fold_marker});
            json pairs = json::array();
            for (const auto& [i, j] : dict.pairs) pairs.push_back(json::array({i, j}));
            json out = {{"pairs", std::move(pairs)},
                        {"count", dict.pairs.size()},
                        {"rate_source", overlap_rate(dict, RateRelativeTo::source)},
                        {"rate_target", overlap_rate(dict, RateRelativeTo::target)}};
            std::cout << out.dump(2) << '\n';
        } else if (inspect_cmd->parsed()) {
            try_session();
            if (map_path.empty()) {
                if (map_model.empty())
                    throw validation_error("inspect-map needs --map <file> or --model <name>");
                map_path = need_session().config().mapping_path(map_model);
            }
            auto mapping = load_mapping(map_path);
            auto bins = similarity_bins(mapping);
            json out = {{"file", map_path},
                        {"rows", mapping.rows},
                        {"cols", mapping.cols},
                        {"nnz", mapping.nnz()},
                        {"csls_k", mapping.csls_k},
                        {"noise",
                         {{"t", mapping.config.t},
                          {"threshold", mapping.config.threshold},
                          {"sigma", mapping.config.sigma},
                          {"c", mapping.config.c},
                          {"population_variance", mapping.config.population_variance},
                          {"row_normalize", mapping.config.row_normalize}}},
                        {"bins",
                         {{"edges", bins.edges},
                          {"counts", bins.bin_counts},
                          {"underflow", bins.underflow},
                          {"overflow", bins.overflow}}},
                        {"rows_by_kind",
                         {{"aligned", bins.aligned_rows},
                          {"dropped_empty", bins.dropped_empty_rows},
                          {"dropped_variance", bins.dropped_variance_rows}}},
                        {"digests",
                         {{"source_vocab", digest_hex(mapping.source_vocab_digest)},
                          {"target_vocab", digest_hex(mapping.target_vocab_digest)},
                          {"source_embeddings", digest_hex(mapping.source_emb_digest)},
                          {"target_embeddings", digest_hex(mapping.target_emb_digest)},
                          {"transform", digest_hex(mapping.transform_digest)}}}};

            if (session) {
                json prov = json::object();
                auto& s = *session;
                std::string source_model = "(unknown)", target_model = "(unknown)";
                for (std::size_t i = 0; i < s.model_count(); ++i) {
                    auto d = s.vocabulary(i)->digest();
                    if (d == mapping.source_vocab_digest) source_model = s.config().models[i].name;
                    if (d == mapping.target_vocab_digest) target_model = s.config().models[i].name;
                }
                prov["source_model"] = source_model;
                prov["target_model"] = target_model;
                prov["vocab_digests_match_session"] =
                    source_model != "(unknown)" && target_model != "(unknown)";
                if (source_model != "(unknown)") {
                    auto tf = s.config().transform_path(source_model);
                    if (fs::exists(tf))
                        prov["transform_digest_matches"] =
                            sha256_file(tf) == mapping.transform_digest;
                }
                const auto& want = s.config().noise;
                prov["noise_config_matches_session"] =
                    mapping.config.t == want.t && mapping.config.threshold == want.threshold &&
                    mapping.config.sigma == want.sigma && mapping.config.c == want.c &&
                    mapping.config.population_variance == want.population_variance &&
                    mapping.config.row_normalize == want.row_normalize;
                prov["csls_k_matches_session"] =
                    mapping.csls_k == static_cast<std::uint32_t>(s.config().csls_k);
                out["provenance"] = std::move(prov);
            }
            std::cout << out.dump(2) << '\n';
        } else if (decode_cmd->parsed()) {
            auto& s0 = need_session();
            SessionConfig cfg = s0.config();
            if (opt_n >= 0) cfg.decode.filter_n = opt_n;
            if (opt_k >= 0) cfg.decode.top_k = opt_k;
            if (opt_max_len > 0) cfg.decode.max_len = opt_max_len;
            Session s(cfg);

            PipelineOptions opts;
            opts.force = force;
            opts.trace_path = trace_path;
            opts.prompts = prompts;
            if (!prompt_file.empty()) {
                std::ifstream in(prompt_file);
                if (!in) throw io_error("cannot open prompt file: " + prompt_file);
                std::string line;
                while (std::getline(in, line))
                    if (!line.empty()) opts.prompts.push_back(line);
            }
            auto report = run_pipeline(s, {Stage::decode}, opts);
            print_report(report);
            for (const auto& text : report.decode_outputs) std::cout << text << '\n';
        } else if (stats_cmd->parsed()) {
            if (config_path.empty()) {
                // Standalone: operate directly on the given files.
                json out = json::object();
                if (stats_trace.empty() && stats_map.empty())
                    throw validation_error("standalone stats needs --trace and/or --map");
                if (!stats_trace.empty()) {
                    auto trace = read_trace(stats_trace);
                    auto div = diversity(trace.top_lists, n_values);
                    json pooled = json::array();
                    for (const auto& [n, mean] : div.per_n) pooled.push_back(json::array({n, mean}));
                    json per_model = json::object();
                    for (const auto& [model, values] : div.per_model) {
                        json arr = json::array();
                        for (const auto& [n, mean] : values) arr.push_back(json::array({n, mean}));
                        per_model[model] = std::move(arr);
                    }
                    out["diversity"] = {{"sample_count", div.sample_count},
                                        {"truncated_lists", div.truncated_lists},
                                        {"pooled", std::move(pooled)},
                                        {"per_model", std::move(per_model)}};
                    if (!stats_csv.empty()) {
                        std::ofstream csv(stats_csv, std::ios::trunc);
                        if (!csv) throw io_error("cannot open CSV file for writing: " + stats_csv);
                        csv << "model,n,mean_edit_distance\n";
                        for (const auto& [n, mean] : div.per_n)
                            csv << "__pooled__," << n << ',' << mean << '\n';
                        for (const auto& [model, values] : div.per_model)
                            for (const auto& [n, mean] : values)
                                csv << model << ',' << n << ',' << mean << '\n';
                    }
                }
                if (!stats_map.empty()) {
                    auto mapping = load_mapping(stats_map);
                    auto bins = similarity_bins(mapping);
                    out["mapping"] = {{"file", stats_map},
                                      {"edges", bins.edges},
                                      {"bin_counts", bins.bin_counts},
                                      {"underflow", bins.underflow},
                                      {"overflow", bins.overflow},
                                      {"nnz", mapping.nnz()},
                                      {"aligned_rows", bins.aligned_rows},
                                      {"dropped_empty_rows", bins.dropped_empty_rows},
                                      {"dropped_variance_rows", bins.dropped_variance_rows}};
                }
                if (stats_out.empty()) {
                    std::cout << out.dump(2) << '\n';
                } else {
                    std::ofstream file(stats_out, std::ios::trunc);
                    if (!file) throw io_error("cannot open stats file for writing: " + stats_out);
                    file << out.dump(2) << '\n';
                }
            } else {
                auto& s = need_session();
                PipelineOptions opts;
                opts.force = force;
                opts.trace_path = stats_trace;
                opts.stats_path = stats_out;
                opts.csv_path = stats_csv;
                opts.n_values = n_values;
                print_report(run_pipeline(s, {Stage::stats}, opts));
            }
        }
        return 0;
    } catch (const std::exception& e) {
        std::string type = "stage";
        int code = 3;
        if (dynamic_cast<const validation_error*>(&e)) type = "validation", code = 2;
        else if (dynamic_cast<const io_error*>(&e)) type = "io", code = 4;
        if (json_errors) {
            json err = {{"error", {{"type", type}, {"message", e.what()}}}};
            std::cout << err.dump() << '\n';
        } else {
            std::cerr << "error (" << type << "): " << e.what() << '\n';
        }
        return code;
    }
}
