#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "recmem/backend.hpp"
#include "recmem/dialogue.hpp"
#include "recmem/prompts.hpp"

namespace recmem {

// Interactive loop over the memory recursion. Plain input lines are user
// turns; commands start with '/':
//   /memory         print the current memory
//   /close-session  fold the buffered session into memory via one update call
//   /quit           exit (EOF does the same)
// Single-threaded by contract. Backend failures on a turn print a message
// and roll the turn back; the buffered session survives.
struct ChatOptions {
    SpeakerLabels labels;
    std::string model_id = "mock";
    int response_max_tokens = 128;
    int memory_max_tokens = 512;
    std::string episode_id = "chat";
    // When non-empty, written on exit.
    std::filesystem::path transcript_path;
    std::filesystem::path chain_path;
};

void run_chat(std::istream& in, std::ostream& out, CompletionBackend& backend,
              const TemplateSet& templates, const ChatOptions& options = {});

}  // namespace recmem
