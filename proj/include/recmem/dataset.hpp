#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "recmem/dialogue.hpp"

namespace recmem {

// A (bot) turn that can be evaluated: the model is asked to produce this
// utterance given everything before it.
struct Position {
    std::string episode_id;
    int session = 1;
    int turn = 0;

    bool operator==(const Position&) const = default;
    bool operator<(const Position& other) const {
        if (episode_id != other.episode_id) return episode_id < other.episode_id;
        if (session != other.session) return session < other.session;
        return turn < other.turn;
    }
};

struct LoadIssue {
    int line = 0;  // 1-based line in the source file
    std::string message;

    bool operator==(const LoadIssue&) const = default;
};

struct LoadResult {
    std::vector<Episode> episodes;
    std::vector<LoadIssue> issues;
};

struct LoadOptions {
    // Strict mode turns any malformed line into a ParseError naming the
    // line and field path; otherwise bad lines are skipped and reported
    // through LoadResult.issues.
    bool strict = false;
    // When set, episodes of other splits are dropped after validation.
    std::optional<Split> split;
};

// Reads episodes from a canonical JSON-lines file: one object per line,
// {"id": str, "split": "train|valid|test", "sessions": [{"index": int,
// "gold_summary": str|null, "turns": [{"role": "user|bot", "text": str}]}]}.
// Session indices must run 1..n in order. Non-fatal oddities (turns not
// alternating user/bot, duplicate ids) become "warning:" issues.
LoadResult load_episodes(const std::filesystem::path& path, const LoadOptions& options = {});

// The canonical JSON-lines serialization of the episodes, keys sorted.
// Byte-stable, so its hash identifies the dataset content.
std::string episodes_to_jsonl(const std::vector<Episode>& episodes);

// Writes episodes_to_jsonl to a file. load_episodes(save_episodes(e))
// reproduces e exactly.
void save_episodes(const std::filesystem::path& path, const std::vector<Episode>& episodes);

// Converts one file of the upstream Multi-Session Chat export to canonical
// episodes. Assumed upstream shape, one JSON object per line:
//   - "initial_data_id": episode id (shared by the session files of one
//     conversation).
//   - "previous_dialogs": earlier sessions in order; entry k-1 is session
//     k. Each has "dialog" (turns) and optionally "personas", a pair of
//     string lists summarizing what each speaker revealed in that session.
//   - "dialog": the current (last) session's turns.
//   - turns carry "id" ("Speaker 1" -> user, "Speaker 2" -> bot) and
//     "text".
// Personas become the session's gold_summary as speaker-labeled lines
// ("User: ..." then "Assistant: ..."); the last session has none. The
// split is not encoded upstream (files are per-split), so it is taken as
// an argument.
LoadResult adapt_upstream(const std::filesystem::path& path, Split split, bool strict = false);

struct SessionStats {
    int session_index = 0;
    int episodes = 0;
    int utterances = 0;
    // Mean, over this session's bot turns, of the token count of the full
    // dialogue history before the turn (earlier sessions included).
    double avg_context_tokens = 0.0;

    bool operator==(const SessionStats&) const = default;
};

struct DatasetStats {
    std::vector<SessionStats> rows;  // ascending session_index

    bool operator==(const DatasetStats&) const = default;
    const SessionStats& row(int session_index) const;  // RangeError when absent
};

// Per-session episode/utterance counts and average context length.
// Throws PreconditionError on an empty episode list.
DatasetStats compute_stats(const std::vector<Episode>& episodes);

// All bot turns in sessions >= 2, in (episode order, session, turn)
// order. These are the positions the evaluation protocol scores.
std::vector<Position> evaluable_positions(const std::vector<Episode>& episodes);

// Uniform sample of n positions without replacement, sorted. Identical
// (positions, n, seed) give identical output on every platform.
std::vector<Position> sample_positions(const std::vector<Position>& positions, std::size_t n,
                                       std::uint64_t seed);

// sample_positions over evaluable_positions(episodes).
std::vector<Position> sample_turns(const std::vector<Episode>& episodes, std::size_t n,
                                   std::uint64_t seed);

}  // namespace recmem
