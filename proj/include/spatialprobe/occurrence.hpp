#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "spatialprobe/text.hpp"

namespace spatialprobe {

/// Case-insensitive contiguous-token containment over a tokenized corpus.
/// Sentence boundaries are ignored: the corpus is one token stream.
class CorpusIndex {
 public:
  CorpusIndex() = default;

  explicit CorpusIndex(std::string_view corpus) : tokens_(text::tokenize(corpus)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) positions_[tokens_[i]].push_back(i);
  }

  static CorpusIndex from_file(const std::filesystem::path& path) {
    return CorpusIndex(text::read_file(path));
  }

  bool contains(std::string_view phrase) const {
    auto query = text::tokenize(phrase);
    if (query.empty()) return false;
    auto it = positions_.find(query.front());
    if (it == positions_.end()) return false;
    for (auto start : it->second) {
      if (start + query.size() > tokens_.size()) break;
      bool match = true;
      for (std::size_t k = 1; k < query.size() && match; ++k) match = tokens_[start + k] == query[k];
      if (match) return true;
    }
    return false;
  }

  bool operator()(const std::string& phrase) const { return contains(phrase); }

  std::size_t size() const { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::vector<std::size_t>> positions_;
};

}  // namespace spatialprobe
