#include "recmem/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "recmem/errors.hpp"
#include "recmem/metrics.hpp"
#include "recmem/rng.hpp"

namespace recmem {

namespace fs = std::filesystem;

namespace {

std::string join_path(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
}

const nlohmann::json& field(const nlohmann::json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) {
        throw ParseError((path.empty() ? std::string("record") : path) + ": expected an object");
    }
    const auto it = obj.find(key);
    if (it == obj.end()) {
        throw ParseError(join_path(path, key) + ": missing field");
    }
    return *it;
}

std::string string_field(const nlohmann::json& obj, const char* key, const std::string& path) {
    const nlohmann::json& value = field(obj, key, path);
    if (!value.is_string()) {
        throw ParseError(join_path(path, key) + ": expected a string");
    }
    return value.get<std::string>();
}

int int_field(const nlohmann::json& obj, const char* key, const std::string& path) {
    const nlohmann::json& value = field(obj, key, path);
    if (!value.is_number_integer()) {
        throw ParseError(join_path(path, key) + ": expected an integer");
    }
    return value.get<int>();
}

Episode parse_episode(const nlohmann::json& j) {
    Episode episode;
    episode.id = string_field(j, "id", "");
    const std::string split_name = string_field(j, "split", "");
    try {
        episode.split = split_from_string(split_name);
    } catch (const ParseError& e) {
        throw ParseError(std::string("split: ") + e.what());
    }
    const nlohmann::json& sessions = field(j, "sessions", "");
    if (!sessions.is_array()) {
        throw ParseError("sessions: expected an array");
    }
    for (std::size_t k = 0; k < sessions.size(); ++k) {
        const std::string path = "sessions[" + std::to_string(k) + "]";
        const nlohmann::json& sj = sessions[k];
        Session session;
        session.index = int_field(sj, "index", path);
        if (session.index != static_cast<int>(k) + 1) {
            throw ParseError(path + ".index: expected " + std::to_string(k + 1) + ", got " +
                             std::to_string(session.index) + " (sessions must run 1..n in order)");
        }
        const nlohmann::json& gold = field(sj, "gold_summary", path);
        if (gold.is_string()) {
            session.gold_summary = gold.get<std::string>();
        } else if (!gold.is_null()) {
            throw ParseError(path + ".gold_summary: expected a string or null");
        }
        const nlohmann::json& turns = field(sj, "turns", path);
        if (!turns.is_array()) {
            throw ParseError(path + ".turns: expected an array");
        }
        for (std::size_t t = 0; t < turns.size(); ++t) {
            const std::string turn_path = path + ".turns[" + std::to_string(t) + "]";
            Utterance utterance;
            const std::string role_name = string_field(turns[t], "role", turn_path);
            try {
                utterance.role = role_from_string(role_name);
            } catch (const ParseError& e) {
                throw ParseError(turn_path + ".role: " + e.what());
            }
            utterance.text = string_field(turns[t], "text", turn_path);
            utterance.session_index = session.index;
            utterance.turn_index = static_cast<int>(t);
            session.utterances.push_back(std::move(utterance));
        }
        episode.sessions.push_back(std::move(session));
    }
    return episode;
}

void append_warnings(const Episode& episode, int line_no, std::vector<LoadIssue>* issues) {
    for (std::size_t k = 0; k < episode.sessions.size(); ++k) {
        const Session& session = episode.sessions[k];
        for (std::size_t t = 0; t < session.utterances.size(); ++t) {
            const Role expected = (t % 2 == 0) ? Role::User : Role::Bot;
            if (session.utterances[t].role != expected) {
                issues->push_back({line_no, "warning: episode \"" + episode.id + "\" sessions[" +
                                               std::to_string(k) +
                                               "]: turns do not alternate speakers starting "
                                               "with the user"});
                break;
            }
        }
    }
}

void report(int line_no, const std::string& message, bool strict, std::vector<LoadIssue>* issues) {
    if (strict) {
        throw ParseError("line " + std::to_string(line_no) + ": " + message);
    }
    issues->push_back({line_no, message});
}

bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r") == std::string::npos;
}

using EpisodeParser = Episode (*)(const nlohmann::json&);

LoadResult load_lines(const fs::path& path, bool strict, EpisodeParser parse,
                      const std::optional<Split>& split_filter) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    LoadResult result;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        Episode episode;
        try {
            episode = parse(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            report(line_no, std::string("invalid JSON: ") + e.what(), strict, &result.issues);
            continue;
        } catch (const ParseError& e) {
            report(line_no, e.what(), strict, &result.issues);
            continue;
        }
        append_warnings(episode, line_no, &result.issues);
        if (!seen.insert(episode.id).second) {
            result.issues.push_back(
                {line_no, "warning: duplicate episode id \"" + episode.id + "\""});
        }
        if (!split_filter || episode.split == *split_filter) {
            result.episodes.push_back(std::move(episode));
        }
    }
    return result;
}

Role upstream_role(const std::string& speaker, const std::string& path) {
    if (speaker == "Speaker 1") return Role::User;
    if (speaker == "Speaker 2") return Role::Bot;
    throw ParseError(path + ".id: unknown speaker \"" + speaker + "\"");
}

std::vector<Utterance> adapt_turns(const nlohmann::json& dialog, int session_index,
                                   const std::string& path) {
    if (!dialog.is_array()) {
        throw ParseError(path + ": expected an array");
    }
    std::vector<Utterance> turns;
    for (std::size_t t = 0; t < dialog.size(); ++t) {
        const std::string turn_path = path + "[" + std::to_string(t) + "]";
        Utterance utterance;
        utterance.role = upstream_role(string_field(dialog[t], "id", turn_path), turn_path);
        utterance.text = string_field(dialog[t], "text", turn_path);
        utterance.session_index = session_index;
        utterance.turn_index = static_cast<int>(t);
        turns.push_back(std::move(utterance));
    }
    return turns;
}

std::optional<std::string> adapt_personas(const nlohmann::json& entry, const std::string& path) {
    const auto it = entry.find("personas");
    if (it == entry.end() || it->is_null()) return std::nullopt;
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_array() || !(*it)[1].is_array()) {
        throw ParseError(path + ".personas: expected a pair of string lists");
    }
    const SpeakerLabels labels;
    std::string block;
    for (std::size_t speaker = 0; speaker < 2; ++speaker) {
        const std::string& label = (speaker == 0) ? labels.user : labels.bot;
        for (const nlohmann::json& item : (*it)[speaker]) {
            if (!item.is_string()) {
                throw ParseError(path + ".personas: expected a pair of string lists");
            }
            if (!block.empty()) block += '\n';
            block += label + ": " + item.get<std::string>();
        }
    }
    if (block.empty()) return std::nullopt;
    return block;
}

// The adapter parses into a thread-local split because load_lines takes a
// plain function pointer; the split is fixed per file anyway.
thread_local Split g_upstream_split = Split::Test;

Episode adapt_episode(const nlohmann::json& j) {
    Episode episode;
    episode.split = g_upstream_split;
    episode.id = string_field(j, "initial_data_id", "");
    const nlohmann::json& previous = field(j, "previous_dialogs", "");
    if (!previous.is_array()) {
        throw ParseError("previous_dialogs: expected an array");
    }
    int index = 1;
    for (std::size_t k = 0; k < previous.size(); ++k, ++index) {
        const std::string path = "previous_dialogs[" + std::to_string(k) + "]";
        Session session;
        session.index = index;
        session.utterances = adapt_turns(field(previous[k], "dialog", path), index, path + ".dialog");
        session.gold_summary = adapt_personas(previous[k], path);
        episode.sessions.push_back(std::move(session));
    }
    Session last;
    last.index = index;
    last.utterances = adapt_turns(field(j, "dialog", ""), index, "dialog");
    episode.sessions.push_back(std::move(last));
    return episode;
}

}  // namespace

LoadResult load_episodes(const fs::path& path, const LoadOptions& options) {
    return load_lines(path, options.strict, &parse_episode, options.split);
}

std::string episodes_to_jsonl(const std::vector<Episode>& episodes) {
    std::string out;
    for (const Episode& episode : episodes) {
        nlohmann::json sessions = nlohmann::json::array();
        for (const Session& session : episode.sessions) {
            nlohmann::json turns = nlohmann::json::array();
            for (const Utterance& utterance : session.utterances) {
                turns.push_back({{"role", role_to_string(utterance.role)},
                                 {"text", utterance.text}});
            }
            nlohmann::json gold;  // null
            if (session.gold_summary) gold = *session.gold_summary;
            sessions.push_back({{"index", session.index},
                                {"gold_summary", std::move(gold)},
                                {"turns", std::move(turns)}});
        }
        const nlohmann::json record{{"id", episode.id},
                                    {"split", split_to_string(episode.split)},
                                    {"sessions", std::move(sessions)}};
        out += record.dump();
        out += '\n';
    }
    return out;
}

void save_episodes(const fs::path& path, const std::vector<Episode>& episodes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << episodes_to_jsonl(episodes);
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

LoadResult adapt_upstream(const fs::path& path, Split split, bool strict) {
    g_upstream_split = split;
    return load_lines(path, strict, &adapt_episode, std::nullopt);
}

const SessionStats& DatasetStats::row(int session_index) const {
    for (const SessionStats& row : rows) {
        if (row.session_index == session_index) return row;
    }
    throw RangeError("no statistics row for session " + std::to_string(session_index));
}

DatasetStats compute_stats(const std::vector<Episode>& episodes) {
    if (episodes.empty()) {
        throw PreconditionError("compute_stats requires at least one episode");
    }
    std::map<int, SessionStats> rows;
    std::map<int, std::pair<double, std::int64_t>> context;  // token sum, bot-turn count
    for (const Episode& episode : episodes) {
        std::size_t tokens_before = 0;
        for (const Session& session : episode.sessions) {
            SessionStats& row = rows[session.index];
            row.session_index = session.index;
            row.episodes += 1;
            row.utterances += static_cast<int>(session.utterances.size());
            for (const Utterance& utterance : session.utterances) {
                if (utterance.role == Role::Bot) {
                    auto& acc = context[session.index];
                    acc.first += static_cast<double>(tokens_before);
                    acc.second += 1;
                }
                tokens_before += token_count(utterance.text);
            }
        }
    }
    DatasetStats stats;
    for (auto& [index, row] : rows) {
        const auto it = context.find(index);
        if (it != context.end() && it->second.second > 0) {
            row.avg_context_tokens = it->second.first / static_cast<double>(it->second.second);
        }
        stats.rows.push_back(row);
    }
    return stats;
}

std::vector<Position> evaluable_positions(const std::vector<Episode>& episodes) {
    std::vector<Position> positions;
    for (const Episode& episode : episodes) {
        for (const Session& session : episode.sessions) {
            if (session.index < 2) continue;
            for (const Utterance& utterance : session.utterances) {
                if (utterance.role == Role::Bot) {
                    positions.push_back({episode.id, session.index, utterance.turn_index});
                }
            }
        }
    }
    return positions;
}

std::vector<Position> sample_positions(const std::vector<Position>& positions, std::size_t n,
                                       std::uint64_t seed) {
    std::vector<Position> sample;
    for (std::size_t index : sample_indices(positions.size(), n, seed)) {
        sample.push_back(positions[index]);
    }
    std::sort(sample.begin(), sample.end());
    return sample;
}

std::vector<Position> sample_turns(const std::vector<Episode>& episodes, std::size_t n,
                                   std::uint64_t seed) {
    return sample_positions(evaluable_positions(episodes), n, seed);
}

}  // namespace recmem
