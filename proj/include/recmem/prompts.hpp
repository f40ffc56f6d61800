#pragma once

#include <string>
#include <string_view>

#include "recmem/dialogue.hpp"

namespace recmem {

// Section header that appears only in rendered memory-update prompts.
// The mock backend keys its behavior on this marker.
inline constexpr std::string_view kMemoryUpdateMarker = "Previous summary:";

struct TemplateSet {
    PromptTemplate memory_update;
    PromptTemplate respond_with_memory;
    PromptTemplate respond_without_memory;

    const PromptTemplate& by_name(TemplateName name) const;
};

// Built-in prompt wording. Bodies are an experimental variable; each
// revision gets a new version string. Throws ConfigError for an unknown
// version.
TemplateSet default_templates(const std::string& version = "v1");

}  // namespace recmem
