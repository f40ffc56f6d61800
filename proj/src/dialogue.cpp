#include "recmem/dialogue.hpp"

#include <algorithm>
#include <sstream>

#include "recmem/errors.hpp"

namespace recmem {

std::string role_to_string(Role r) {
    return r == Role::User ? "user" : "bot";
}

Role role_from_string(const std::string& s) {
    if (s == "user") return Role::User;
    if (s == "bot") return Role::Bot;
    throw ParseError("unknown role \"" + s + "\" (expected \"user\" or \"bot\")");
}

std::string split_to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "test";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    throw ParseError("unknown split \"" + s + "\" (expected train|valid|test)");
}

bool Episode::has_session(int index) const {
    return index >= 1 && index <= static_cast<int>(sessions.size());
}

const Session& Episode::session(int index) const {
    if (!has_session(index)) {
        throw RangeError("episode \"" + id + "\" has no session " + std::to_string(index) +
                         " (sessions run 1.." + std::to_string(sessions.size()) + ")");
    }
    return sessions[static_cast<std::size_t>(index - 1)];
}

std::string render_transcript(const ContextWindow& window, const SpeakerLabels& labels) {
    if (labels.user.empty() || labels.bot.empty() || labels.user == labels.bot) {
        throw PreconditionError("speaker labels must be non-empty and distinct");
    }
    std::string out;
    for (std::size_t i = 0; i < window.utterances.size(); ++i) {
        const Utterance& u = window.utterances[i];
        if (i > 0) out += '\n';
        out += (u.role == Role::User ? labels.user : labels.bot);
        out += ": ";
        out += u.text;
    }
    return out;
}

ContextWindow flatten_history(const Episode& episode, int through_session, int through_turn) {
    if (!episode.has_session(through_session)) {
        throw RangeError("episode \"" + episode.id + "\" has no session " +
                         std::to_string(through_session));
    }
    const Session& last = episode.session(through_session);
    if (through_turn < 0 || through_turn >= static_cast<int>(last.utterances.size())) {
        throw RangeError("session " + std::to_string(through_session) + " of episode \"" +
                         episode.id + "\" has no turn " + std::to_string(through_turn));
    }
    ContextWindow window;
    window.origin = WindowOrigin::AllSessions;
    for (int s = 1; s < through_session; ++s) {
        const Session& sess = episode.session(s);
        window.utterances.insert(window.utterances.end(), sess.utterances.begin(),
                                 sess.utterances.end());
    }
    window.utterances.insert(window.utterances.end(), last.utterances.begin(),
                             last.utterances.begin() + through_turn + 1);
    return window;
}

ContextWindow history_before(const Episode& episode, int session_index, int turn_index) {
    if (!episode.has_session(session_index)) {
        throw RangeError("episode \"" + episode.id + "\" has no session " +
                         std::to_string(session_index));
    }
    if (turn_index == 0) {
        if (session_index == 1) {
            ContextWindow empty;
            empty.origin = WindowOrigin::AllSessions;
            return empty;
        }
        const Session& prev = episode.session(session_index - 1);
        if (prev.utterances.empty()) {
            // Walk back over empty sessions.
            return history_before(episode, session_index - 1, 0);
        }
        return flatten_history(episode, session_index - 1,
                               static_cast<int>(prev.utterances.size()) - 1);
    }
    return flatten_history(episode, session_index, turn_index - 1);
}

namespace {

const char* kSlots[] = {"memory", "context", "exemplar"};

bool is_slot_name(const std::string& name) {
    return std::any_of(std::begin(kSlots), std::end(kSlots),
                       [&](const char* s) { return name == s; });
}

// Finds the next "{word}" marker at or after `from`; returns npos when none.
std::size_t next_marker(const std::string& body, std::size_t from, std::string& name_out) {
    for (std::size_t open = body.find('{', from); open != std::string::npos;
         open = body.find('{', open + 1)) {
        std::size_t close = body.find('}', open + 1);
        if (close == std::string::npos) return std::string::npos;
        std::string name = body.substr(open + 1, close - open - 1);
        if (!name.empty() &&
            std::all_of(name.begin(), name.end(),
                        [](char c) { return (c >= 'a' && c <= 'z') || c == '_'; })) {
            name_out = name;
            return open;
        }
    }
    return std::string::npos;
}

}  // namespace

void PromptTemplate::validate() const {
    std::string name;
    std::size_t pos = 0;
    while ((pos = next_marker(body, pos, name)) != std::string::npos) {
        if (!is_slot_name(name)) {
            throw ConfigError("template \"" + version + "\" references unknown slot {" + name +
                              "}; declared slots are {memory}, {context}, {exemplar}");
        }
        pos += name.size() + 2;
    }
}

bool PromptTemplate::has_slot(const std::string& slot) const {
    std::string name;
    std::size_t pos = 0;
    while ((pos = next_marker(body, pos, name)) != std::string::npos) {
        if (name == slot) return true;
        pos += name.size() + 2;
    }
    return false;
}

std::string PromptTemplate::render(const std::string& memory, const std::string& context,
                                   const std::string& exemplar) const {
    std::string out;
    out.reserve(body.size() + memory.size() + context.size() + exemplar.size());
    std::size_t pos = 0;
    std::string name;
    while (true) {
        std::size_t open = next_marker(body, pos, name);
        if (open == std::string::npos) {
            out.append(body, pos, std::string::npos);
            break;
        }
        out.append(body, pos, open - pos);
        if (name == "memory") {
            out += memory;
        } else if (name == "context") {
            out += context;
        } else if (name == "exemplar") {
            out += exemplar;
        } else {
            throw ConfigError("template \"" + version + "\" references unknown slot {" + name + "}");
        }
        pos = open + name.size() + 2;
    }
    return out;
}

PromptTemplate PromptTemplate::with_exemplar(const std::string& rendered_exemplar) const {
    PromptTemplate out = *this;
    out.body.clear();
    out.body.reserve(body.size() + rendered_exemplar.size());
    std::size_t pos = 0;
    std::string name;
    while (true) {
        std::size_t open = next_marker(body, pos, name);
        if (open == std::string::npos) {
            out.body.append(body, pos, std::string::npos);
            break;
        }
        out.body.append(body, pos, open - pos);
        if (name == "exemplar") {
            out.body += rendered_exemplar;
        } else {
            out.body += "{" + name + "}";
        }
        pos = open + name.size() + 2;
    }
    return out;
}

}  // namespace recmem
