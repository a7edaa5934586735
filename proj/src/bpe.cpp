#include "t2i/bpe.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace t2i {

namespace {
const std::string kEow = "</w>";
const std::string kUnkSurface = "<unk>";
}  // namespace

std::string BpeVocab::normalize(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    char lc = static_cast<char>(std::tolower(c));
    if (!std::isalnum(c) && lc != ',' && lc != '.') continue;
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(lc);
  }
  return out;
}

BpeVocab BpeVocab::train(const std::vector<std::string>& corpus,
                         int vocab_size) {
  if (corpus.empty()) throw InputError("bpe_train: empty corpus");

  // Word frequency table over the normalized corpus.
  std::map<std::string, int> word_freq;
  std::set<char> alphabet;
  for (const auto& line : corpus) {
    std::istringstream is(normalize(line));
    std::string w;
    while (is >> w) {
      ++word_freq[w];
      for (char c : w) alphabet.insert(c);
    }
  }
  if (word_freq.empty()) throw InputError("bpe_train: corpus has no words");

  BpeVocab v;
  v.vocab_size_ = vocab_size;
  v.alphabet_.assign(alphabet.begin(), alphabet.end());

  // pad + unk + base chars + end-of-word marker
  int base_count = 2 + static_cast<int>(v.alphabet_.size()) + 1;
  if (vocab_size < base_count)
    throw InputError("bpe_train: vocab_size " + std::to_string(vocab_size) +
                     " below base symbol count " + std::to_string(base_count));

  // Each word as a symbol sequence: chars then the end-of-word marker.
  std::vector<std::pair<std::vector<std::string>, int>> words;
  for (const auto& [w, f] : word_freq) {
    std::vector<std::string> syms;
    for (char c : w) syms.emplace_back(1, c);
    syms.push_back(kEow);
    words.emplace_back(std::move(syms), f);
  }

  int budget = vocab_size - base_count;
  for (int it = 0; it < budget; ++it) {
    std::map<std::pair<std::string, std::string>, int> pair_freq;
    for (const auto& [syms, f] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        pair_freq[{syms[i], syms[i + 1]}] += f;
    if (pair_freq.empty()) break;
    // Most frequent pair; ties resolved lexicographically (map order).
    auto best = pair_freq.begin();
    for (auto pit = pair_freq.begin(); pit != pair_freq.end(); ++pit)
      if (pit->second > best->second) best = pit;
    if (best->second < 2) break;  // nothing repeats, no useful merge left
    const auto merge = best->first;
    v.merges_.push_back(merge);
    std::string joined = merge.first + merge.second;
    for (auto& [syms, f] : words) {
      (void)f;
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == merge.first &&
            syms[i + 1] == merge.second) {
          next.push_back(joined);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
  }

  v.build_tables();
  return v;
}

void BpeVocab::build_tables() {
  id_to_token_.clear();
  token_to_id_.clear();
  id_to_token_.push_back("");           // 0: pad placeholder, never a symbol
  id_to_token_.push_back(kUnkSurface);  // 1: UNK
  token_to_id_[kUnkSurface] = kUnkId;
  auto add = [&](const std::string& s) {
    if (token_to_id_.count(s)) return;
    token_to_id_[s] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(s);
  };
  for (char c : alphabet_) add(std::string(1, c));
  add(kEow);
  for (const auto& [a, b] : merges_) add(a + b);
}

std::vector<std::string> BpeVocab::segment_word(const std::string& word) const {
  std::vector<std::string> syms;
  for (char c : word) syms.emplace_back(1, c);
  syms.push_back(kEow);
  for (const auto& [a, b] : merges_) {
    std::string joined = a + b;
    std::vector<std::string> next;
    next.reserve(syms.size());
    for (size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
        next.push_back(joined);
        ++i;
      } else {
        next.push_back(syms[i]);
      }
    }
    syms = std::move(next);
  }
  return syms;
}

std::vector<int> BpeVocab::encode(const std::string& text, int n) const {
  std::vector<int> ids;
  std::istringstream is(normalize(text));
  std::string w;
  while (is >> w) {
    for (const auto& sym : segment_word(w)) {
      auto it = token_to_id_.find(sym);
      if (it != token_to_id_.end()) {
        ids.push_back(it->second);
      } else {
        // single out-of-alphabet character
        ids.push_back(kUnkId);
      }
    }
  }
  if (static_cast<int>(ids.size()) > n) ids.resize(n);
  while (static_cast<int>(ids.size()) < n) ids.push_back(kPadId);
  return ids;
}

std::string BpeVocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPadId) continue;
    if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
      throw IndexError("decode_text: unknown id " + std::to_string(id));
    const std::string& tok = id_to_token_[id];
    // The end-of-word marker becomes a word boundary.
    std::string s = tok;
    size_t pos;
    while ((pos = s.find(kEow)) != std::string::npos)
      s.replace(pos, kEow.size(), " ");
    out += s;
  }
  // collapse the trailing/duplicate spaces produced by word markers
  std::istringstream is(out);
  std::string w, joined;
  while (is >> w) {
    if (!joined.empty()) joined.push_back(' ');
    joined += w;
  }
  return joined;
}

void BpeVocab::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open vocab file for writing: " + path);
  f << "bpe-v1 " << vocab_size_ << "\n";
  f << "alphabet " << alphabet_ << "\n";
  for (const auto& [a, b] : merges_) f << a << " " << b << "\n";
}

BpeVocab BpeVocab::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open vocab file: " + path);
  std::string tag;
  BpeVocab v;
  f >> tag >> v.vocab_size_;
  if (tag != "bpe-v1" || !f)
    throw IoError("bad vocab header in " + path);
  f >> tag >> v.alphabet_;
  if (tag != "alphabet" || !f)
    throw IoError("missing alphabet line in " + path);
  std::string a, b;
  while (f >> a >> b) v.merges_.emplace_back(a, b);
  v.build_tables();
  return v;
}

}  // namespace t2i
