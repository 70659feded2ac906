#pragma once

// Generated at configure time from assets/; see prompt_assets.cpp.in.

#include <span>
#include <string_view>

namespace elegant::assets {

struct NamedText {
  std::string_view name;
  std::string_view text;
};

std::span<const NamedText> prompt_templates();
std::span<const NamedText> vocabularies();

}  // namespace elegant::assets
