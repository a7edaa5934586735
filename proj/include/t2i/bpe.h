#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "t2i/tensor.h"

namespace t2i {

// Word-level byte pair encoding over a normalized lowercase alphabet.
// Id 0 is the pad/start placeholder, id 1 the UNK token; real symbols
// start at 2 (base characters in sorted order, then merges in order).
class BpeVocab {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  static BpeVocab train(const std::vector<std::string>& corpus,
                        int vocab_size);

  // Lowercase, collapse whitespace, strip punctuation except commas/periods.
  static std::string normalize(const std::string& text);

  std::vector<int> encode(const std::string& text, int n) const;
  std::string decode(const std::vector<int>& ids) const;

  int vocab_size() const { return vocab_size_; }
  int num_symbols() const { return static_cast<int>(id_to_token_.size()); }
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }

  void save(const std::string& path) const;
  static BpeVocab load(const std::string& path);

 private:
  std::vector<std::string> segment_word(const std::string& word) const;
  void build_tables();

  int vocab_size_ = 0;
  std::string alphabet_;  // sorted distinct base characters
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;  // index == id
};

}  // namespace t2i
