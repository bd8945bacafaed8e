#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace gxe::testing {

// Minimal well-formedness check: balanced tags, quoted attributes, known
// entities only. Enough to catch what a hand-written emitter gets wrong.
inline bool xml_well_formed(std::string_view s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  bool root_seen = false;
  auto entity_ok = [&](std::size_t at) {
    for (std::string_view e : {"&amp;", "&lt;", "&gt;", "&quot;", "&apos;"})
      if (s.substr(at, e.size()) == e) return true;
    return false;
  };
  while (i < s.size()) {
    if (s[i] == '&') {
      if (!entity_ok(i)) return false;
      ++i;
      continue;
    }
    if (s[i] != '<') {
      if (stack.empty() && !std::isspace(static_cast<unsigned char>(s[i]))) return false;
      ++i;
      continue;
    }
    if (s.substr(i, 5) == "<?xml") {
      auto end = s.find("?>", i);
      if (end == std::string_view::npos) return false;
      i = end + 2;
      continue;
    }
    const bool closing = i + 1 < s.size() && s[i + 1] == '/';
    std::size_t j = i + (closing ? 2 : 1);
    std::size_t name_start = j;
    while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == ':' || s[j] == '-' || s[j] == '_')) ++j;
    std::string name(s.substr(name_start, j - name_start));
    if (name.empty()) return false;
    // attributes
    bool self_closing = false;
    while (j < s.size() && s[j] != '>') {
      if (s[j] == '"') {
        auto end = s.find('"', j + 1);
        if (end == std::string_view::npos) return false;
        auto value = s.substr(j + 1, end - j - 1);
        if (value.find('<') != std::string_view::npos) return false;
        for (std::size_t k = 0; k < value.size(); ++k)
          if (value[k] == '&' && !entity_ok(j + 1 + k)) return false;
        j = end + 1;
        continue;
      }
      if (s[j] == '/' && j + 1 < s.size() && s[j + 1] == '>') self_closing = true;
      ++j;
    }
    if (j >= s.size()) return false;
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!self_closing) {
      if (stack.empty() && root_seen) return false;
      stack.push_back(name);
      root_seen = true;
    } else {
      root_seen = true;
    }
    i = j + 1;
  }
  return stack.empty() && root_seen;
}

}  // namespace gxe::testing
