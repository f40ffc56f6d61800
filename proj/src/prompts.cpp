#include "recmem/prompts.hpp"

#include "recmem/errors.hpp"

namespace recmem {

const PromptTemplate& TemplateSet::by_name(TemplateName name) const {
    switch (name) {
        case TemplateName::MemoryUpdate: return memory_update;
        case TemplateName::RespondWithMemory: return respond_with_memory;
        case TemplateName::RespondWithoutMemory: return respond_without_memory;
    }
    return memory_update;
}

// Instruction lines deliberately never match the "<label>: <text>"
// transcript shape, so transcript lines stay unambiguous inside a
// rendered prompt.
TemplateSet default_templates(const std::string& version) {
    if (version != "v1") {
        throw ConfigError("unknown template version \"" + version + "\" (available: v1)");
    }
    TemplateSet set;

    set.memory_update.name = TemplateName::MemoryUpdate;
    set.memory_update.version = version;
    set.memory_update.body =
        "You maintain a running summary of the personal facts both speakers have shared.\n"
        "Rewrite the summary so it also covers the new dialogue lines.\n"
        "Keep it brief and write only the updated summary.\n"
        "{exemplar}\n"
        "Previous summary:\n"
        "{memory}\n"
        "\n"
        "New dialogue lines:\n"
        "{context}\n"
        "\n"
        "Updated summary:\n";

    set.respond_with_memory.name = TemplateName::RespondWithMemory;
    set.respond_with_memory.version = version;
    set.respond_with_memory.body =
        "You are the assistant in an ongoing conversation.\n"
        "Use the summary of earlier sessions when it is relevant to the reply.\n"
        "{exemplar}\n"
        "Summary of earlier sessions:\n"
        "{memory}\n"
        "\n"
        "Current conversation:\n"
        "{context}\n"
        "\n"
        "Write the assistant's next reply only.\n";

    set.respond_without_memory.name = TemplateName::RespondWithoutMemory;
    set.respond_without_memory.version = version;
    set.respond_without_memory.body =
        "You are the assistant in an ongoing conversation.\n"
        "{exemplar}\n"
        "Current conversation:\n"
        "{context}\n"
        "\n"
        "Write the assistant's next reply only.\n";

    set.memory_update.validate();
    set.respond_with_memory.validate();
    set.respond_without_memory.validate();
    return set;
}

}  // namespace recmem
