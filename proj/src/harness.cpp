#include "recmem/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <nlohmann/json.hpp>

#include "recmem/cache.hpp"
#include "recmem/errors.hpp"
#include "recmem/prompts.hpp"
#include "recmem/rng.hpp"
#include "recmem/sha256.hpp"
#include "recmem/textio.hpp"

namespace recmem {

namespace fs = std::filesystem;

namespace {

void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* key : allowed) {
            if (it.key() == key) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("unknown config key \"" +
                              (where.empty() ? it.key() : where + "." + it.key()) + "\"");
        }
    }
}

template <typename T>
T typed(const nlohmann::json& value, const std::string& key) {
    try {
        return value.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field \"" + key + "\" has the wrong type");
    }
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return fallback;
    return typed<T>(*it, key);
}

const nlohmann::json& require_key(const nlohmann::json& obj, const char* key) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
        throw ConfigError("config is missing required field \"" + std::string(key) + "\"");
    }
    return *it;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset_path.empty()) throw ConfigError("dataset path must be set");
    if (sessions.empty()) throw ConfigError("sessions must name at least one target session");
    for (std::size_t i = 0; i < sessions.size(); ++i) {
        if (sessions[i] < 2 || sessions[i] > 5) {
            throw ConfigError("target sessions must lie in 2..5, got " +
                              std::to_string(sessions[i]));
        }
        if (i > 0 && sessions[i] <= sessions[i - 1]) {
            throw ConfigError("target sessions must be strictly ascending");
        }
    }
    if (shots != 0 && shots != 1) {
        throw ConfigError("shots must be 0 or 1, got " + std::to_string(shots));
    }
    if (sample_n && *sample_n < 1) {
        throw ConfigError("sample_n must be at least 1 when present");
    }
    if (backend.kind != "mock" && backend.kind != "http") {
        throw ConfigError("backend kind must be \"mock\" or \"http\", got \"" + backend.kind +
                          "\"");
    }
    if (backend.kind == "http" && backend.endpoint.empty()) {
        throw ConfigError("the http backend requires an endpoint URL");
    }
    if (backend.kind == "http" && backend.model_id.empty()) {
        throw ConfigError("the http backend requires a model id");
    }
    if (backend.context_limit <= 0) {
        throw ConfigError("backend context_limit must be positive");
    }
    default_templates(template_version);  // throws ConfigError when unknown
    if (labels.user.empty() || labels.bot.empty() || labels.user == labels.bot) {
        throw ConfigError("speaker labels must be non-empty and distinct");
    }
    if (response_max_tokens <= 0 || memory_max_tokens <= 0) {
        throw ConfigError("max token budgets must be positive");
    }
    if (chunk_turns < 0) throw ConfigError("chunk_turns must be >= 0");
    if (cache_dir.empty()) throw ConfigError("cache_dir must be set");
    if (output_dir.empty()) throw ConfigError("output_dir must be set");
    if (workers < 1) throw ConfigError("workers must be at least 1");
}

std::string ExperimentConfig::identity_json() const {
    nlohmann::json doc{
        {"backend",
         {{"kind", backend.kind},
          {"model_id", backend.model_id},
          {"endpoint", backend.endpoint},
          {"context_limit", backend.context_limit}}},
        {"chunk_turns", chunk_turns},
        {"dataset", dataset_path},
        {"exemplar_dataset", exemplar_dataset_path},
        {"labels", {{"user", labels.user}, {"bot", labels.bot}}},
        {"memory_max_tokens", memory_max_tokens},
        {"response_max_tokens", response_max_tokens},
        {"seed", seed},
        {"sessions", sessions},
        {"shots", shots},
        {"split", split_to_string(split)},
        {"strategy", strategy_to_string(strategy)},
        {"template_version", template_version},
    };
    if (sample_n) {
        doc["sample_n"] = *sample_n;
    } else {
        doc["sample_n"] = nullptr;
    }
    return doc.dump();
}

std::string ExperimentConfig::digest() const { return sha256_hex(identity_json()); }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    check_keys(j,
               {"dataset", "split", "strategy", "shots", "sessions", "backend", "seed", "sample_n",
                "template_version", "labels", "response_max_tokens", "memory_max_tokens",
                "chunk_turns", "exemplar_dataset", "cache_dir", "output_dir", "workers", "strict"},
               "");

    ExperimentConfig config;
    config.dataset_path = typed<std::string>(require_key(j, "dataset"), "dataset");
    try {
        config.split = split_from_string(get_or<std::string>(j, "split", "test"));
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    }
    try {
        config.strategy =
            strategy_from_string(typed<std::string>(require_key(j, "strategy"), "strategy"));
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    }
    config.shots = get_or<int>(j, "shots", 0);
    config.sessions = typed<std::vector<int>>(require_key(j, "sessions"), "sessions");
    std::sort(config.sessions.begin(), config.sessions.end());
    config.sessions.erase(std::unique(config.sessions.begin(), config.sessions.end()),
                          config.sessions.end());

    if (const auto it = j.find("backend"); it != j.end()) {
        check_keys(*it,
                   {"kind", "model_id", "endpoint", "context_limit", "api_key_env",
                    "requests_per_second", "timeout_s"},
                   "backend");
        config.backend.kind = get_or<std::string>(*it, "kind", "mock");
        config.backend.model_id = get_or<std::string>(*it, "model_id", config.backend.kind);
        config.backend.endpoint = get_or<std::string>(*it, "endpoint", "");
        config.backend.context_limit = get_or<int>(*it, "context_limit", 4096);
        config.backend.api_key_env = get_or<std::string>(*it, "api_key_env", "OPENAI_API_KEY");
        config.backend.requests_per_second = get_or<double>(*it, "requests_per_second", 0.0);
        config.backend.timeout_s = get_or<int>(*it, "timeout_s", 120);
    }
    config.seed = get_or<std::uint64_t>(j, "seed", 0);
    if (const auto it = j.find("sample_n"); it != j.end() && !it->is_null()) {
        config.sample_n = typed<int>(*it, "sample_n");
    }
    config.template_version = get_or<std::string>(j, "template_version", "v1");
    if (const auto it = j.find("labels"); it != j.end()) {
        check_keys(*it, {"user", "bot"}, "labels");
        config.labels.user = get_or<std::string>(*it, "user", "User");
        config.labels.bot = get_or<std::string>(*it, "bot", "Assistant");
    }
    config.response_max_tokens = get_or<int>(j, "response_max_tokens", 128);
    config.memory_max_tokens = get_or<int>(j, "memory_max_tokens", 512);
    config.chunk_turns = get_or<int>(j, "chunk_turns", 0);
    config.exemplar_dataset_path = get_or<std::string>(j, "exemplar_dataset", "");
    config.cache_dir = get_or<std::string>(j, "cache_dir", "");
    config.output_dir = get_or<std::string>(j, "output_dir", "");
    config.workers = get_or<int>(j, "workers", 1);
    config.strict = get_or<bool>(j, "strict", false);
    return config;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
    try {
        return from_json(read_text_file(path));
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config file: ") + e.what());
    }
}

namespace {

using PositionKey = std::tuple<std::string, int, int>;  // episode, session, turn

nlohmann::json record_to_json(const RunRecord& r) {
    return {{"strategy", r.strategy},
            {"shots", r.shots},
            {"episode_id", r.episode_id},
            {"session_index", r.session_index},
            {"turn_index", r.turn_index},
            {"prompt", r.prompt},
            {"response", r.response},
            {"reference", r.reference},
            {"cache_key", r.cache_key},
            {"dropped_utterances", r.dropped_utterances}};
}

RunRecord record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.strategy = j.at("strategy").get<std::string>();
    r.shots = j.at("shots").get<int>();
    r.episode_id = j.at("episode_id").get<std::string>();
    r.session_index = j.at("session_index").get<int>();
    r.turn_index = j.at("turn_index").get<int>();
    r.prompt = j.at("prompt").get<std::string>();
    r.response = j.at("response").get<std::string>();
    r.reference = j.at("reference").get<std::string>();
    r.cache_key = j.at("cache_key").get<std::string>();
    r.dropped_utterances = j.at("dropped_utterances").get<int>();
    return r;
}

// Tolerates a torn final line from an interrupted run; everything else
// must parse.
std::vector<RunRecord> read_record_log(const fs::path& path) {
    std::vector<RunRecord> records;
    std::ifstream in(path, std::ios::binary);
    if (!in) return records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception&) {
            continue;
        }
    }
    return records;
}

std::shared_ptr<CompletionBackend> make_raw_backend(const ExperimentConfig& config) {
    if (config.backend.kind == "mock") {
        return std::make_shared<MockBackend>(config.backend.context_limit);
    }
    HttpBackendConfig http;
    http.endpoint = config.backend.endpoint;
    http.model_id = config.backend.model_id;
    http.api_key_env = config.backend.api_key_env;
    http.context_limit = config.backend.context_limit;
    http.requests_per_second = config.backend.requests_per_second;
    http.timeout_s = config.backend.timeout_s;
    return std::make_shared<HttpBackend>(http);
}

std::vector<Episode> load_dataset(const std::string& path, Split split, bool strict) {
    LoadResult loaded = load_episodes(path, LoadOptions{strict, split});
    if (loaded.episodes.empty()) {
        throw DataError("no " + split_to_string(split) + "-split episodes in " + path);
    }
    return loaded.episodes;
}

bool usable_exemplar(const Episode& episode) {
    if (!episode.has_session(1) || !episode.has_session(2)) return false;
    const Session& first = episode.session(1);
    if (!first.gold_summary || first.gold_summary->empty()) return false;
    for (const Utterance& u : episode.session(2).utterances) {
        if (u.role == Role::Bot) return true;
    }
    return false;
}

// The one-shot exemplar is drawn from the valid split with the run seed,
// after filtering to episodes that can demonstrate both the memory
// update and the response. Candidates are ordered by id so file order
// cannot leak into the draw.
const Episode& pick_exemplar(const std::vector<Episode>& valid_episodes, std::uint64_t seed) {
    std::vector<const Episode*> candidates;
    for (const Episode& e : valid_episodes) {
        if (usable_exemplar(e)) candidates.push_back(&e);
    }
    if (candidates.empty()) {
        throw DataError(
            "no valid-split episode is usable as a one-shot exemplar (needs a gold summary "
            "for session 1 and a bot turn in session 2)");
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Episode* a, const Episode* b) { return a->id < b->id; });
    std::mt19937_64 rng(seed);
    return *candidates[static_cast<std::size_t>(uniform_below(rng, candidates.size()))];
}

struct WorkItem {
    const Episode* episode = nullptr;
    std::vector<std::pair<int, int>> positions;  // (session, turn), ascending
};

// Positions are planned per session across the whole split: all bot
// turns of the target session, optionally sampled down to sample_n with
// seed+session (the per-session sampling choice is part of the result's
// identity).
std::vector<WorkItem> plan_work(const std::vector<Episode>& episodes,
                                const ExperimentConfig& config) {
    std::map<std::string, const Episode*> by_id;
    for (const Episode& e : episodes) by_id.emplace(e.id, &e);

    std::map<std::string, std::vector<std::pair<int, int>>> per_episode;
    for (int s : config.sessions) {
        std::vector<Position> positions;
        for (const Episode& e : episodes) {
            if (!e.has_session(s)) continue;
            for (const Utterance& u : e.session(s).utterances) {
                if (u.role == Role::Bot) positions.push_back({e.id, s, u.turn_index});
            }
        }
        if (config.sample_n) {
            positions = sample_positions(positions, static_cast<std::size_t>(*config.sample_n),
                                         config.seed + static_cast<std::uint64_t>(s));
        }
        for (const Position& p : positions) {
            per_episode[p.episode_id].push_back({p.session, p.turn});
        }
    }

    std::vector<WorkItem> work;
    for (const Episode& e : episodes) {  // keep file order for work scheduling
        const auto it = per_episode.find(e.id);
        if (it == per_episode.end()) continue;
        std::sort(it->second.begin(), it->second.end());
        work.push_back(WorkItem{by_id.at(e.id), std::move(it->second)});
    }
    return work;
}

std::string fmt_score(double value) {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%.2f", value * 100.0);
    return buffer;
}

std::string pad_left(const std::string& text, std::size_t width) {
    if (text.size() >= width) return text;
    return std::string(width - text.size(), ' ') + text;
}

std::string pad_right(const std::string& text, std::size_t width) {
    if (text.size() >= width) return text;
    return text + std::string(width - text.size(), ' ');
}

std::string sanitize_filename(const std::string& id) {
    std::string out;
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
        out += ok ? c : '_';
    }
    return out.empty() ? std::string("episode") : out;
}

nlohmann::json result_to_json(const ExperimentResult& result) {
    nlohmann::json evaluations = nlohmann::json::array();
    for (const SessionEvaluation& eval : result.evaluations) {
        nlohmann::json row{{"session", eval.session},
                           {"n", eval.scores.n_evaluated},
                           {"bleu1", eval.scores.bleu1},
                           {"bleu2", eval.scores.bleu2},
                           {"f1", eval.scores.f1},
                           {"dist1", eval.scores.dist1},
                           {"dist2", eval.scores.dist2}};
        if (eval.memory) {
            row["memory"] = {{"n", eval.memory->n},           {"precision", eval.memory->precision},
                             {"recall", eval.memory->recall}, {"f1", eval.memory->f1},
                             {"bleu1", eval.memory->bleu1},   {"bleu2", eval.memory->bleu2}};
        } else {
            row["memory"] = nullptr;
        }
        evaluations.push_back(std::move(row));
    }
    return {{"config", nlohmann::json::parse(result.config.identity_json())},
            {"config_digest", result.config_digest},
            {"dataset_digest", result.dataset_digest},
            {"exemplar_id", result.exemplar_id},
            {"evaluations", std::move(evaluations)}};
}

}  // namespace

std::vector<MemoryEvalRow> evaluate_memory_chains(const std::vector<MemoryChain>& chains,
                                                  const std::vector<Episode>& episodes,
                                                  const std::vector<int>& sessions) {
    if (chains.empty()) throw PreconditionError("no memory chains to evaluate");
    if (sessions.empty()) throw PreconditionError("no sessions to evaluate memories for");
    std::map<std::string, const Episode*> by_id;
    for (const Episode& e : episodes) by_id.emplace(e.id, &e);

    // All missing annotations are collected first so the error names
    // every offending episode at once.
    std::set<std::string> missing;
    for (const MemoryChain& chain : chains) {
        const auto it = by_id.find(chain.episode_id());
        if (it == by_id.end()) {
            throw DataError("chain refers to unknown episode \"" + chain.episode_id() + "\"");
        }
        for (int s : sessions) {
            if (!it->second->has_session(s)) continue;
            try {
                gold_memory_text(*it->second, s);
            } catch (const DataError&) {
                missing.insert(chain.episode_id());
            }
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const std::string& id : missing) {
            if (!list.empty()) list += ", ";
            list += "\"" + id + "\"";
        }
        throw DataError("episodes missing gold summaries needed for memory evaluation: " + list);
    }

    std::vector<MemoryEvalRow> rows;
    for (int s : sessions) {
        MemoryEvalRow row;
        row.session = s;
        for (const MemoryChain& chain : chains) {
            const Episode& episode = *by_id.at(chain.episode_id());
            if (!episode.has_session(s)) continue;
            if (chain.size() < s - 1) {
                throw PreconditionError("chain for episode \"" + chain.episode_id() +
                                        "\" covers only " + std::to_string(chain.size()) +
                                        " sessions; session " + std::to_string(s) +
                                        " needs coverage of " + std::to_string(s - 1));
            }
            const std::string& predicted = chain.memory(s - 1).text;
            const std::string gold = gold_memory_text(episode, s);
            const MemoryScores scores = memory_scores(predicted, gold);
            row.precision += scores.precision;
            row.recall += scores.recall;
            row.f1 += scores.f1;
            row.bleu1 += bleu_n(normalize(predicted), normalize(gold), 1);
            row.bleu2 += bleu_n(normalize(predicted), normalize(gold), 2);
            row.n += 1;
        }
        if (row.n > 0) {
            row.precision /= row.n;
            row.recall /= row.n;
            row.f1 /= row.n;
            row.bleu1 /= row.n;
            row.bleu2 /= row.n;
        }
        rows.push_back(row);
    }
    return rows;
}

Harness::Harness(ExperimentConfig config, std::shared_ptr<CompletionBackend> raw_backend_override)
    : config_(std::move(config)), override_(std::move(raw_backend_override)) {
    config_.validate();
}

DryRunReport Harness::dry_run() const {
    const std::vector<Episode> episodes =
        load_dataset(config_.dataset_path, config_.split, config_.strict);
    TemplateSet templates = default_templates(config_.template_version);
    if (config_.shots == 1) {
        const std::vector<Episode> valid = load_dataset(
            config_.exemplar_dataset_path.empty() ? config_.dataset_path
                                                  : config_.exemplar_dataset_path,
            Split::Valid, config_.strict);
        const Episode& exemplar = pick_exemplar(valid, config_.seed);
        templates.memory_update =
            inject_exemplar(templates.memory_update, exemplar, 1, config_.labels);
        templates.respond_with_memory =
            inject_exemplar(templates.respond_with_memory, exemplar, 1, config_.labels);
        templates.respond_without_memory =
            inject_exemplar(templates.respond_without_memory, exemplar, 1, config_.labels);
    } else {
        templates.memory_update = templates.memory_update.with_exemplar("");
        templates.respond_with_memory = templates.respond_with_memory.with_exemplar("");
        templates.respond_without_memory = templates.respond_without_memory.with_exemplar("");
    }

    const std::vector<WorkItem> work = plan_work(episodes, config_);
    const bool predicted = config_.strategy == StrategyKind::PredictedMemory;
    const PromptTemplate& respond_tmpl = uses_memory(config_.strategy)
                                             ? templates.respond_with_memory
                                             : templates.respond_without_memory;

    DryRunReport report;
    const UpdateOptions update_options{config_.labels, config_.memory_max_tokens,
                                       config_.backend.model_id, config_.chunk_turns};
    for (const WorkItem& item : work) {
        const Episode& episode = *item.episode;
        if (predicted) {
            // One fold per completed session (or per chunk when chunked);
            // memory texts are unknown before the calls, so token totals
            // use an empty previous memory and are approximate.
            for (const Session& session : episode.sessions) {
                if (session.utterances.empty()) continue;
                if (config_.chunk_turns <= 0) {
                    report.memory_calls += 1;
                    report.approx_prompt_tokens += token_count(
                        build_update_request(Memory{}, session.utterances,
                                             templates.memory_update, update_options)
                            .user_text);
                } else {
                    const std::size_t step = static_cast<std::size_t>(config_.chunk_turns);
                    for (std::size_t begin = 0; begin < session.utterances.size(); begin += step) {
                        const std::size_t end =
                            std::min(begin + step, session.utterances.size());
                        const std::vector<Utterance> chunk(
                            session.utterances.begin() + static_cast<std::ptrdiff_t>(begin),
                            session.utterances.begin() + static_cast<std::ptrdiff_t>(end));
                        report.memory_calls += 1;
                        report.approx_prompt_tokens +=
                            token_count(build_update_request(Memory{}, chunk,
                                                             templates.memory_update,
                                                             update_options)
                                            .user_text);
                    }
                }
            }
        }
        for (const auto& [s, t] : item.positions) {
            report.response_calls += 1;
            ContextWindow window;
            if (config_.strategy == StrategyKind::AllContext) {
                window = history_before(episode, s, t);
            } else {
                const Session& session = episode.session(s);
                window.utterances.assign(session.utterances.begin(),
                                         session.utterances.begin() + t);
            }
            std::string memory_text;
            if (config_.strategy == StrategyKind::GoldMemory) {
                memory_text = gold_memory_text(episode, s);
            }
            report.approx_prompt_tokens += token_count(
                respond_tmpl.render(memory_text, render_transcript(window, config_.labels), ""));
        }
    }
    return report;
}

std::string DryRunReport::to_text() const {
    std::ostringstream out;
    out << "Dry run\n";
    out << "  memory update calls:  " << memory_calls << "\n";
    out << "  response calls:       " << response_calls << "\n";
    out << "  total backend calls:  " << total_calls() << "\n";
    out << "  approx prompt tokens: " << approx_prompt_tokens << "\n";
    out << "No files were written and no backend was contacted.\n";
    return out.str();
}

ExperimentResult Harness::run() {
    const auto started = std::chrono::steady_clock::now();
    const fs::path out_dir(config_.output_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    }

    // A directory carries the digest of the config that produced it, so a
    // resume with a different configuration fails instead of mixing
    // records.
    const std::string digest = config_.digest();
    const fs::path echo_path = out_dir / "config_echo.json";
    if (fs::exists(echo_path)) {
        try {
            const nlohmann::json echo = nlohmann::json::parse(read_text_file(echo_path));
            if (echo.at("config_digest").get<std::string>() != digest) {
                throw ConfigError("output directory " + out_dir.string() +
                                  " holds records for a different configuration");
            }
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("output directory " + out_dir.string() +
                              " holds an unreadable config_echo.json");
        }
    } else {
        const nlohmann::json echo{{"config", nlohmann::json::parse(config_.identity_json())},
                                  {"config_digest", digest}};
        write_text_file(echo_path, echo.dump(2) + "\n");
    }

    const std::vector<Episode> episodes =
        load_dataset(config_.dataset_path, config_.split, config_.strict);
    const std::string dataset_digest = sha256_hex(episodes_to_jsonl(episodes));

    TemplateSet templates = default_templates(config_.template_version);
    std::string exemplar_id;
    if (config_.shots == 1) {
        const std::vector<Episode> valid = load_dataset(
            config_.exemplar_dataset_path.empty() ? config_.dataset_path
                                                  : config_.exemplar_dataset_path,
            Split::Valid, config_.strict);
        const Episode& exemplar = pick_exemplar(valid, config_.seed);
        exemplar_id = exemplar.id;
        templates.memory_update =
            inject_exemplar(templates.memory_update, exemplar, 1, config_.labels);
        templates.respond_with_memory =
            inject_exemplar(templates.respond_with_memory, exemplar, 1, config_.labels);
        templates.respond_without_memory =
            inject_exemplar(templates.respond_without_memory, exemplar, 1, config_.labels);
    } else {
        templates.memory_update = templates.memory_update.with_exemplar("");
        templates.respond_with_memory = templates.respond_with_memory.with_exemplar("");
        templates.respond_without_memory = templates.respond_without_memory.with_exemplar("");
    }

    auto cache = std::make_shared<DiskCache>(config_.cache_dir);
    std::shared_ptr<CompletionBackend> raw = override_ ? override_ : make_raw_backend(config_);
    auto backend = std::make_shared<CachedBackend>(raw, cache);

    const fs::path records_path = out_dir / "records.jsonl";
    const std::vector<RunRecord> resumed = read_record_log(records_path);
    std::set<PositionKey> done;
    for (const RunRecord& r : resumed) {
        done.insert({r.episode_id, r.session_index, r.turn_index});
    }

    const std::vector<WorkItem> work = plan_work(episodes, config_);
    const bool predicted = config_.strategy == StrategyKind::PredictedMemory;
    const UpdateOptions update_options{config_.labels, config_.memory_max_tokens,
                                       config_.backend.model_id, config_.chunk_turns};
    const GenerateOptions generate_options{config_.labels, config_.response_max_tokens,
                                           config_.backend.model_id};
    const Strategy strategy{config_.strategy, config_.shots};

    std::ofstream record_log(records_path, std::ios::binary | std::ios::app);
    if (!record_log) {
        throw IoError("cannot open " + records_path.string() + " for appending");
    }

    std::mutex sink_mu;
    std::vector<RunRecord> fresh;
    std::map<std::string, MemoryChain> chains;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mu;

    const auto worker = [&] {
        for (;;) {
            if (failed.load()) return;
            const std::size_t index = next.fetch_add(1);
            if (index >= work.size()) return;
            const WorkItem& item = work[index];
            try {
                std::optional<MemoryChain> chain;
                if (predicted) {
                    chain = build_chain(*item.episode,
                                        static_cast<int>(item.episode->sessions.size()),
                                        templates.memory_update, *backend, update_options);
                }
                std::vector<RunRecord> local;
                for (const auto& [s, t] : item.positions) {
                    if (done.count({item.episode->id, s, t}) != 0) continue;
                    local.push_back(generate(*item.episode, s, t, strategy, templates, *backend,
                                             chain ? &*chain : nullptr, generate_options));
                }
                std::lock_guard<std::mutex> lock(sink_mu);
                for (const RunRecord& r : local) {
                    record_log << record_to_json(r).dump() << '\n';
                }
                record_log.flush();
                fresh.insert(fresh.end(), local.begin(), local.end());
                if (chain) chains.emplace(item.episode->id, std::move(*chain));
            } catch (...) {
                {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                }
                failed.store(true);
                return;
            }
        }
    };

    const std::size_t thread_count =
        std::min<std::size_t>(static_cast<std::size_t>(config_.workers),
                              std::max<std::size_t>(work.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < thread_count; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);

    // Merge resumed and fresh records; the plan dictates the final set.
    std::map<PositionKey, RunRecord> merged;
    for (const RunRecord& r : resumed) {
        merged.emplace(PositionKey{r.episode_id, r.session_index, r.turn_index}, r);
    }
    for (const RunRecord& r : fresh) {
        merged.insert_or_assign(PositionKey{r.episode_id, r.session_index, r.turn_index}, r);
    }

    ExperimentResult result;
    result.config = config_;
    result.config_digest = digest;
    result.dataset_digest = dataset_digest;
    result.exemplar_id = exemplar_id;
    for (const WorkItem& item : work) {
        for (const auto& [s, t] : item.positions) {
            const auto it = merged.find(PositionKey{item.episode->id, s, t});
            if (it == merged.end()) {
                throw Error("internal: no record for episode \"" + item.episode->id +
                            "\" position (" + std::to_string(s) + ", " + std::to_string(t) + ")");
            }
            result.records.push_back(it->second);
        }
    }
    std::sort(result.records.begin(), result.records.end(),
              [](const RunRecord& a, const RunRecord& b) {
                  return std::tie(a.episode_id, a.session_index, a.turn_index) <
                         std::tie(b.episode_id, b.session_index, b.turn_index);
              });

    std::vector<MemoryEvalRow> memory_rows;
    if (predicted && !chains.empty()) {
        std::vector<MemoryChain> chain_list;
        for (const auto& [id, chain] : chains) chain_list.push_back(chain);
        memory_rows = evaluate_memory_chains(chain_list, episodes, config_.sessions);
    }
    for (int s : config_.sessions) {
        SessionEvaluation eval;
        eval.session = s;
        std::vector<RunRecord> of_session;
        for (const RunRecord& r : result.records) {
            if (r.session_index == s) of_session.push_back(r);
        }
        if (!of_session.empty()) {
            eval.scores = aggregate(of_session);
        }
        for (const MemoryEvalRow& row : memory_rows) {
            if (row.session == s) eval.memory = row;
        }
        result.evaluations.push_back(std::move(eval));
    }

    // Finalize artifacts. records.jsonl is rewritten in sorted order so a
    // resumed run and an uninterrupted run produce identical bytes.
    std::string sorted_log;
    for (const RunRecord& r : result.records) {
        sorted_log += record_to_json(r).dump();
        sorted_log += '\n';
    }
    const fs::path tmp = records_path.string() + ".tmp";
    write_text_file(tmp, sorted_log);
    fs::rename(tmp, records_path, ec);
    if (ec) {
        throw IoError("cannot finalize " + records_path.string() + ": " + ec.message());
    }

    write_text_file(out_dir / "result.json", result_to_json(result).dump(2) + "\n");
    write_text_file(out_dir / "report.txt", render_report(result));

    if (!chains.empty()) {
        const fs::path chain_dir = out_dir / "chains";
        fs::create_directories(chain_dir, ec);
        if (ec) {
            throw IoError("cannot create " + chain_dir.string() + ": " + ec.message());
        }
        for (const auto& [id, chain] : chains) {
            write_text_file(chain_dir / (sanitize_filename(id) + ".json"), chain.to_json() + "\n");
        }
    }

    const auto elapsed = std::chrono::steady_clock::now() - started;
    const nlohmann::json meta{
        {"backend_calls", raw->calls()},
        {"cache_hits", backend->cache_hits()},
        {"records_fresh", fresh.size()},
        {"records_resumed", resumed.size()},
        {"wall_clock_ms",
         std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count()},
        {"note", "volatile run metadata; not covered by the determinism guarantee"}};
    write_text_file(out_dir / "meta.json", meta.dump(2) + "\n");

    return result;
}

ExperimentResult load_result(const fs::path& output_dir) {
    const std::string text = read_text_file(output_dir / "result.json");
    try {
        const nlohmann::json doc = nlohmann::json::parse(text);
        ExperimentResult result;
        result.config = ExperimentConfig::from_json(doc.at("config").dump());
        result.config_digest = doc.at("config_digest").get<std::string>();
        result.dataset_digest = doc.at("dataset_digest").get<std::string>();
        result.exemplar_id = doc.at("exemplar_id").get<std::string>();
        for (const nlohmann::json& row : doc.at("evaluations")) {
            SessionEvaluation eval;
            eval.session = row.at("session").get<int>();
            eval.scores.n_evaluated = row.at("n").get<int>();
            eval.scores.bleu1 = row.at("bleu1").get<double>();
            eval.scores.bleu2 = row.at("bleu2").get<double>();
            eval.scores.f1 = row.at("f1").get<double>();
            eval.scores.dist1 = row.at("dist1").get<double>();
            eval.scores.dist2 = row.at("dist2").get<double>();
            if (!row.at("memory").is_null()) {
                MemoryEvalRow memory;
                memory.session = eval.session;
                memory.n = row.at("memory").at("n").get<int>();
                memory.precision = row.at("memory").at("precision").get<double>();
                memory.recall = row.at("memory").at("recall").get<double>();
                memory.f1 = row.at("memory").at("f1").get<double>();
                memory.bleu1 = row.at("memory").at("bleu1").get<double>();
                memory.bleu2 = row.at("memory").at("bleu2").get<double>();
                eval.memory = memory;
            }
            result.evaluations.push_back(std::move(eval));
        }
        result.records = read_record_log(output_dir / "records.jsonl");
        return result;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed result.json in " + output_dir.string() + ": " + e.what());
    }
}

namespace {

std::string sampling_label(const ExperimentConfig& config) {
    if (!config.sample_n) return "full evaluation";
    return std::to_string(*config.sample_n) + " turns sampled per session (seed " +
           std::to_string(config.seed) + ")";
}

std::string strategy_label(const ExperimentConfig& config) {
    return strategy_display_name(config.strategy) + " (" + std::to_string(config.shots) +
           "-shot)";
}

}  // namespace

std::string render_report(const ExperimentResult& result) {
    std::ostringstream out;
    out << "Experiment report\n";
    out << "Strategy:       " << strategy_label(result.config) << "\n";
    out << "Sampling:       " << sampling_label(result.config) << "\n";
    out << "Config digest:  " << result.config_digest << "\n";
    out << "Dataset digest: " << result.dataset_digest << "\n";
    if (!result.exemplar_id.empty()) {
        out << "Exemplar:       episode \"" << result.exemplar_id << "\"\n";
    }
    out << "\nResponses (values x100)\n";
    out << pad_left("Session", 7) << pad_left("N", 7) << pad_left("DIST-1", 9)
        << pad_left("DIST-2", 9) << pad_left("F1", 9) << pad_left("BLEU-1", 9)
        << pad_left("BLEU-2", 9) << "\n";
    for (const SessionEvaluation& eval : result.evaluations) {
        out << pad_left(std::to_string(eval.session), 7)
            << pad_left(std::to_string(eval.scores.n_evaluated), 7)
            << pad_left(fmt_score(eval.scores.dist1), 9) << pad_left(fmt_score(eval.scores.dist2), 9)
            << pad_left(fmt_score(eval.scores.f1), 9) << pad_left(fmt_score(eval.scores.bleu1), 9)
            << pad_left(fmt_score(eval.scores.bleu2), 9) << "\n";
    }
    bool any_memory = false;
    for (const SessionEvaluation& eval : result.evaluations) {
        if (eval.memory) any_memory = true;
    }
    if (any_memory) {
        out << "\nPredicted memory vs gold summaries (values x100)\n";
        out << pad_left("Session", 7) << pad_left("N", 7) << pad_left("Prec", 9)
            << pad_left("Recall", 9) << pad_left("F1", 9) << pad_left("BLEU-1", 9)
            << pad_left("BLEU-2", 9) << "\n";
        for (const SessionEvaluation& eval : result.evaluations) {
            if (!eval.memory) continue;
            out << pad_left(std::to_string(eval.session), 7)
                << pad_left(std::to_string(eval.memory->n), 7)
                << pad_left(fmt_score(eval.memory->precision), 9)
                << pad_left(fmt_score(eval.memory->recall), 9)
                << pad_left(fmt_score(eval.memory->f1), 9)
                << pad_left(fmt_score(eval.memory->bleu1), 9)
                << pad_left(fmt_score(eval.memory->bleu2), 9) << "\n";
        }
    }
    return out.str();
}

std::string compare(const std::vector<ExperimentResult>& results) {
    if (results.empty()) throw PreconditionError("nothing to compare");
    const ExperimentResult& first = results.front();
    for (const ExperimentResult& r : results) {
        if (r.config.sessions != first.config.sessions) {
            throw ComparisonError("results cover different session sets");
        }
        if (r.dataset_digest != first.dataset_digest) {
            throw ComparisonError("results were produced from different datasets");
        }
        if (r.config.sample_n != first.config.sample_n) {
            throw ComparisonError(
                "sampled and full (or differently sampled) runs are not comparable");
        }
    }

    const std::vector<int>& sessions = first.config.sessions;
    constexpr int kMetrics = 5;
    const char* metric_names[kMetrics] = {"DIST-1", "DIST-2", "F1", "BLEU-1", "BLEU-2"};

    // values[row][column]; columns are session-major then metric.
    std::vector<std::vector<double>> values;
    std::vector<std::string> row_labels;
    for (const ExperimentResult& r : results) {
        row_labels.push_back(strategy_label(r.config));
        std::vector<double> row;
        for (int s : sessions) {
            const SessionEvaluation* eval = nullptr;
            for (const SessionEvaluation& e : r.evaluations) {
                if (e.session == s) eval = &e;
            }
            if (eval == nullptr) {
                throw ComparisonError("a result lacks scores for session " + std::to_string(s));
            }
            row.push_back(eval->scores.dist1);
            row.push_back(eval->scores.dist2);
            row.push_back(eval->scores.f1);
            row.push_back(eval->scores.bleu1);
            row.push_back(eval->scores.bleu2);
        }
        values.push_back(std::move(row));
    }

    const std::size_t columns = sessions.size() * kMetrics;
    std::vector<double> best(columns, 0.0);
    for (std::size_t c = 0; c < columns; ++c) {
        for (const std::vector<double>& row : values) best[c] = std::max(best[c], row[c]);
    }

    std::size_t label_width = 8;
    for (const std::string& label : row_labels) label_width = std::max(label_width, label.size());
    label_width += 2;
    constexpr std::size_t cell = 9;

    std::ostringstream out;
    out << "Comparison (values x100, best per column marked *)\n";
    out << "Dataset digest: " << first.dataset_digest << "\n";
    out << "Sampling:       " << sampling_label(first.config) << "\n\n";
    out << pad_right("", label_width);
    for (int s : sessions) {
        out << pad_left("Session " + std::to_string(s),
                        cell * kMetrics);  // right-aligned group header
    }
    out << "\n" << pad_right("Strategy", label_width);
    for (std::size_t g = 0; g < sessions.size(); ++g) {
        for (const char* name : metric_names) out << pad_left(name, cell);
    }
    out << "\n";
    for (std::size_t row = 0; row < values.size(); ++row) {
        out << pad_right(row_labels[row], label_width);
        for (std::size_t c = 0; c < columns; ++c) {
            std::string text = fmt_score(values[row][c]);
            if (values[row][c] == best[c]) text += "*";
            out << pad_left(text, cell);
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace recmem
