#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spatialprobe/error.hpp"

namespace spatialprobe::text {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  auto b = std::find_if_not(s.begin(), s.end(), is_space);
  auto e = std::find_if_not(s.rbegin(), s.rend(), is_space).base();
  return b < e ? std::string(b, e) : std::string();
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// Lowercased runs of letters, digits and apostrophes. Everything else separates.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

inline bool starts_with_vowel_sound(std::string_view word) {
  if (word.empty()) return false;
  char c = static_cast<char>(std::tolower(static_cast<unsigned char>(word.front())));
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

/// Indefinite article for a noun phrase: "a" or "an".
inline std::string indefinite_article(std::string_view noun) {
  return starts_with_vowel_sound(noun) ? "an" : "a";
}

inline std::string capitalize(std::string s) {
  if (!s.empty()) s.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(s.front())));
  return s;
}

/// Replace whole-token occurrences of `from` (possibly multi-word) with `to`.
/// Returns the number of replacements.
inline int replace_phrase(std::string& s, std::string_view from, std::string_view to) {
  if (from.empty()) return 0;
  auto boundary = [&](std::size_t i) {
    return i >= s.size() || !std::isalnum(static_cast<unsigned char>(s[i]));
  };
  int count = 0;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(s[pos - 1]));
    if (left && boundary(pos + from.size())) {
      s.replace(pos, from.size(), to);
      pos += to.size();
      ++count;
    } else {
      ++pos;
    }
  }
  return count;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a sibling temp file and renames, so readers never see a partial file.
inline void write_file(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

struct TsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

/// Tab-separated rows; blank lines and lines starting with '#' are skipped.
inline std::vector<TsvRow> parse_tsv(std::string_view content) {
  std::vector<TsvRow> rows;
  std::size_t line_no = 0;
  for (const auto& raw : split(content, '\n')) {
    ++line_no;
    std::string line = raw;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    TsvRow row{line_no, split(line, '\t')};
    for (auto& f : row.fields) f = trim(f);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<TsvRow> read_tsv(const std::filesystem::path& path) {
  return parse_tsv(read_file(path));
}

}  // namespace spatialprobe::text
