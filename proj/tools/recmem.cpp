#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recmem/backend.hpp"
#include "recmem/cache.hpp"
#include "recmem/chat.hpp"
#include "recmem/dataset.hpp"
#include "recmem/errors.hpp"
#include "recmem/harness.hpp"
#include "recmem/memory_engine.hpp"
#include "recmem/prompts.hpp"
#include "recmem/textio.hpp"

namespace {

using namespace recmem;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTransport = 4;

// Flags shared by every subcommand that talks to a backend. The API key
// is read from an environment variable inside HttpBackend, never from a
// flag.
struct BackendFlags {
    std::string kind = "mock";
    std::string model;
    std::string endpoint;
    std::string cache_dir;
    int context_limit = 4096;
    CLI::Option* kind_opt = nullptr;

    void attach(CLI::App* cmd) {
        kind_opt = cmd->add_option("--backend", kind, "Backend kind: mock or http")
                       ->check(CLI::IsMember({"mock", "http"}));
        cmd->add_option("--model", model, "Model id for the http backend");
        cmd->add_option("--endpoint", endpoint, "Base URL of an OpenAI-compatible endpoint");
        cmd->add_option("--cache-dir", cache_dir, "Directory for the response cache");
        cmd->add_option("--context-limit", context_limit, "Prompt token budget");
    }

    bool kind_given() const { return kind_opt != nullptr && kind_opt->count() > 0; }

    std::shared_ptr<CompletionBackend> make() const {
        std::shared_ptr<CompletionBackend> raw;
        if (kind == "mock") {
            raw = std::make_shared<MockBackend>(context_limit);
        } else {
            HttpBackendConfig config;
            config.endpoint = endpoint;
            config.model_id = model;
            config.context_limit = context_limit;
            if (endpoint.empty()) throw ConfigError("--endpoint is required with --backend http");
            if (model.empty()) throw ConfigError("--model is required with --backend http");
            raw = std::make_shared<HttpBackend>(config);
        }
        if (cache_dir.empty()) return raw;
        return std::make_shared<CachedBackend>(raw, std::make_shared<DiskCache>(cache_dir));
    }
};

int run_stats(const std::string& path, const std::string& split_name, bool strict,
              bool from_upstream, const std::string& save_path) {
    std::optional<Split> split;
    if (!split_name.empty()) split = split_from_string(split_name);

    LoadResult loaded;
    if (from_upstream) {
        if (!split) throw ConfigError("--from-upstream requires --split");
        loaded = adapt_upstream(path, *split, strict);
    } else {
        loaded = load_episodes(path, LoadOptions{strict, split});
    }
    for (const LoadIssue& issue : loaded.issues) {
        std::cerr << "line " << issue.line << ": " << issue.message << "\n";
    }
    if (loaded.episodes.empty()) throw DataError("no episodes loaded from " + path);
    if (!save_path.empty()) {
        save_episodes(save_path, loaded.episodes);
        std::cout << "wrote " << loaded.episodes.size() << " episodes to " << save_path << "\n";
    }

    const DatasetStats stats = compute_stats(loaded.episodes);
    std::cout << "Session  Episodes  Utterances  AvgContextTokens\n";
    for (const SessionStats& row : stats.rows) {
        std::printf("%7d  %8lld  %10lld  %16.2f\n", row.session_index,
                    static_cast<long long>(row.episodes), static_cast<long long>(row.utterances),
                    row.avg_context_tokens);
    }
    return kExitOk;
}

int run_experiment(const std::string& config_path, const BackendFlags& backend,
                   const std::string& output_dir, std::optional<std::uint64_t> seed,
                   std::optional<int> sample_n, std::optional<int> shots, bool dry_run,
                   bool strict) {
    ExperimentConfig config = ExperimentConfig::from_file(config_path);
    if (!backend.cache_dir.empty()) config.cache_dir = backend.cache_dir;
    if (backend.kind_given()) config.backend.kind = backend.kind;
    if (!backend.model.empty()) config.backend.model_id = backend.model;
    if (!backend.endpoint.empty()) config.backend.endpoint = backend.endpoint;
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (seed) config.seed = *seed;
    if (sample_n) config.sample_n = *sample_n;
    if (shots) config.shots = *shots;
    if (strict) config.strict = true;

    Harness harness(config);
    if (dry_run) {
        std::cout << harness.dry_run().to_text();
        return kExitOk;
    }
    const ExperimentResult result = harness.run();
    std::cout << render_report(result);
    std::cout << "\nartifacts in " << config.output_dir << "\n";
    return kExitOk;
}

int run_compare(const std::vector<std::string>& dirs) {
    std::vector<ExperimentResult> results;
    for (const std::string& dir : dirs) results.push_back(load_result(dir));
    std::cout << compare(results);
    return kExitOk;
}

int run_chain(const std::string& dataset, const std::string& episode_id,
              const std::string& split_name, int through, const BackendFlags& backend,
              const std::string& template_version, const std::string& out_path) {
    std::optional<Split> split;
    if (!split_name.empty()) split = split_from_string(split_name);
    const LoadResult loaded = load_episodes(dataset, LoadOptions{false, split});
    const Episode* episode = nullptr;
    for (const Episode& e : loaded.episodes) {
        if (e.id == episode_id) episode = &e;
    }
    if (episode == nullptr) {
        throw DataError("episode \"" + episode_id + "\" not found in " + dataset);
    }
    const int last = through > 0 ? through : static_cast<int>(episode->sessions.size());
    const TemplateSet templates = default_templates(template_version);
    const auto completion = backend.make();
    const MemoryChain chain =
        build_chain(*episode, last, templates.memory_update.with_exemplar(""), *completion);
    const std::string text = chain.to_json() + "\n";
    if (out_path.empty()) {
        std::cout << text;
    } else {
        write_text_file(out_path, text);
        std::cout << "wrote chain for \"" << episode_id << "\" to " << out_path << "\n";
    }
    return kExitOk;
}

int run_repl(const BackendFlags& backend, const std::string& template_version,
             const std::string& transcript_out, const std::string& chain_out) {
    const auto completion = backend.make();
    TemplateSet templates = default_templates(template_version);
    templates.memory_update = templates.memory_update.with_exemplar("");
    templates.respond_with_memory = templates.respond_with_memory.with_exemplar("");
    ChatOptions options;
    options.model_id = backend.model.empty() ? backend.kind : backend.model;
    options.transcript_path = transcript_out;
    options.chain_path = chain_out;
    run_chat(std::cin, std::cout, *completion, templates, options);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-term dialogue memory via recursive summarization"};
    app.require_subcommand(1);

    // stats
    auto* stats = app.add_subcommand("stats", "Load a dataset and print per-session statistics");
    std::string stats_path, stats_split, stats_save;
    bool stats_strict = false, stats_upstream = false;
    stats->add_option("path", stats_path, "Dataset JSONL file")->required();
    stats->add_option("--split", stats_split, "Filter to one split: train, valid, or test");
    stats->add_flag("--strict", stats_strict, "Treat parse warnings as errors");
    stats->add_flag("--from-upstream", stats_upstream,
                    "Input is in the upstream multi-session export layout");
    stats->add_option("--save", stats_save, "Write the loaded episodes back out as canonical JSONL");

    // run
    auto* run = app.add_subcommand("run", "Execute an experiment described by a config file");
    std::string run_config, run_output;
    BackendFlags run_backend;
    std::optional<std::uint64_t> run_seed;
    std::optional<int> run_sample, run_shots;
    bool run_dry = false, run_strict = false;
    run->add_option("--config", run_config, "Experiment config JSON file")->required();
    run_backend.attach(run);
    run->add_option("--output-dir", run_output, "Override the config's output directory");
    run->add_option("--seed", run_seed, "Override the run seed");
    run->add_option("--sample-n", run_sample, "Override turns sampled per session");
    run->add_option("--shots", run_shots, "Override exemplar count (0 or 1)")
        ->check(CLI::IsMember({0, 1}));
    run->add_flag("--dry-run", run_dry, "Print call and token estimates without running");
    run->add_flag("--strict", run_strict, "Treat dataset warnings as errors");

    // compare
    auto* cmp = app.add_subcommand("compare", "Tabulate several result directories side by side");
    std::vector<std::string> cmp_dirs;
    cmp->add_option("dirs", cmp_dirs, "Output directories of completed runs")
        ->required()
        ->expected(-1);

    // chain
    auto* chain = app.add_subcommand("chain", "Build the memory chain for one episode");
    std::string chain_dataset, chain_episode, chain_split, chain_tmpl = "v1", chain_out;
    int chain_through = 0;
    BackendFlags chain_backend;
    chain->add_option("dataset", chain_dataset, "Dataset JSONL file")->required();
    chain->add_option("episode", chain_episode, "Episode id")->required();
    chain->add_option("--split", chain_split, "Filter to one split before searching");
    chain->add_option("--through", chain_through, "Last session to fold (default: all)");
    chain->add_option("--template-version", chain_tmpl, "Prompt template version");
    chain->add_option("--out", chain_out, "Write the chain JSON here instead of stdout");
    chain_backend.attach(chain);

    // chat
    auto* chat = app.add_subcommand("chat", "Interactive session with live memory updates");
    std::string chat_tmpl = "v1", chat_transcript, chat_chain;
    BackendFlags chat_backend;
    chat->add_option("--template-version", chat_tmpl, "Prompt template version");
    chat->add_option("--transcript-out", chat_transcript, "Save the transcript here on exit");
    chat->add_option("--chain-out", chat_chain, "Save the memory chain here on exit");
    chat_backend.attach(chat);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (stats->parsed()) {
            return run_stats(stats_path, stats_split, stats_strict, stats_upstream, stats_save);
        }
        if (run->parsed()) {
            return run_experiment(run_config, run_backend, run_output, run_seed, run_sample,
                                  run_shots, run_dry, run_strict);
        }
        if (cmp->parsed()) return run_compare(cmp_dirs);
        if (chain->parsed()) {
            return run_chain(chain_dataset, chain_episode, chain_split, chain_through,
                             chain_backend, chain_tmpl, chain_out);
        }
        if (chat->parsed()) {
            return run_repl(chat_backend, chat_tmpl, chat_transcript, chat_chain);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ComparisonError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitOk;
}
