#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "recmem/backend.hpp"
#include "recmem/dataset.hpp"
#include "recmem/generator.hpp"
#include "recmem/memory_engine.hpp"
#include "recmem/metrics.hpp"

namespace recmem {

struct BackendSpec {
    std::string kind = "mock";  // "mock" or "http"
    std::string model_id = "mock";
    std::string endpoint;
    int context_limit = 4096;
    // Operational knobs; they affect how calls are made, not what they
    // compute, so they take no part in the config digest.
    std::string api_key_env = "OPENAI_API_KEY";
    double requests_per_second = 0.0;
    int timeout_s = 120;
};

// Everything one experiment depends on. Fields split into two groups:
// identity fields, which determine every byte of the result and are
// covered by digest(); and environment fields (cache_dir, output_dir,
// workers, strict), which only say where and how fast the work happens.
struct ExperimentConfig {
    // identity
    std::string dataset_path;
    Split split = Split::Test;
    StrategyKind strategy = StrategyKind::PredictedMemory;
    int shots = 0;
    std::vector<int> sessions;  // subset of {2..5}, ascending
    BackendSpec backend;
    std::uint64_t seed = 0;
    std::optional<int> sample_n;
    std::string template_version = "v1";
    SpeakerLabels labels;
    int response_max_tokens = 128;
    int memory_max_tokens = 512;
    int chunk_turns = 0;
    std::string exemplar_dataset_path;  // one-shot source; empty = dataset_path's valid split

    // environment
    std::string cache_dir;
    std::string output_dir;
    int workers = 1;
    bool strict = false;

    // Throws ConfigError when any field is out of contract.
    void validate() const;

    // The identity fields as canonical JSON (sorted keys).
    std::string identity_json() const;

    // sha256 of identity_json(). Any identity-field change changes it.
    std::string digest() const;

    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig from_file(const std::filesystem::path& path);
};

struct MemoryEvalRow {
    int session = 0;
    int n = 0;  // chains scored
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double bleu1 = 0.0;
    double bleu2 = 0.0;
};

struct SessionEvaluation {
    int session = 0;
    ScoreReport scores;
    std::optional<MemoryEvalRow> memory;  // predicted-memory runs only
};

struct ExperimentResult {
    ExperimentConfig config;  // identity fields as echoed in result.json
    std::string config_digest;
    std::string dataset_digest;
    std::string exemplar_id;  // empty for zero-shot
    std::vector<SessionEvaluation> evaluations;
    std::vector<RunRecord> records;  // sorted by (episode_id, session, turn)
};

struct DryRunReport {
    std::uint64_t memory_calls = 0;
    std::uint64_t response_calls = 0;
    std::uint64_t approx_prompt_tokens = 0;

    std::uint64_t total_calls() const { return memory_calls + response_calls; }
    std::string to_text() const;
};

// Scores each chain's memory against the gold summaries it should
// compress: for session s, memory(s-1) versus the concatenated gold
// summaries of sessions 1..s-1. Averages per session over the chains
// whose episode has that session. Throws DataError listing episodes
// missing gold summaries, PreconditionError on empty inputs.
std::vector<MemoryEvalRow> evaluate_memory_chains(const std::vector<MemoryChain>& chains,
                                                  const std::vector<Episode>& episodes,
                                                  const std::vector<int>& sessions);

class Harness {
public:
    // raw_backend_override, when given, replaces the backend the config
    // describes (it is still wrapped in the disk cache). Testing seam for
    // fault injection.
    explicit Harness(ExperimentConfig config,
                     std::shared_ptr<CompletionBackend> raw_backend_override = nullptr);

    // Runs the experiment and writes config_echo.json, records.jsonl,
    // result.json, report.txt, chains/*.json and meta.json under
    // output_dir. Every artifact except meta.json (volatile counters) is
    // bit-identical across reruns. Records stream to disk as they are
    // produced; an aborted run resumes by skipping already-recorded
    // positions.
    ExperimentResult run();

    // Exact backend-call counts and an approximate prompt-token total,
    // with no writes and no backend activity.
    DryRunReport dry_run() const;

    const ExperimentConfig& config() const { return config_; }

private:
    ExperimentConfig config_;
    std::shared_ptr<CompletionBackend> override_;
};

// Reads result.json and records.jsonl back from an output directory.
ExperimentResult load_result(const std::filesystem::path& output_dir);

// One aligned table over several results: a row per result, DIST-1/2,
// F1, BLEU-1/2 columns per session, best value per column marked '*'.
// Results must share sessions, dataset digest and sample_n; otherwise
// ComparisonError.
std::string compare(const std::vector<ExperimentResult>& results);

// The per-run score tables as plain text (the content of report.txt).
std::string render_report(const ExperimentResult& result);

}  // namespace recmem
