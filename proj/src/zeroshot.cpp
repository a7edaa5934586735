#include "t2i/zeroshot.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "t2i/bpe.h"

namespace t2i {

namespace {

Tensor uniform_fanin(std::vector<int> shape, int fan_in, Rng& rng) {
  float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
}

// Normalizes like the tokenizer, then drops the punctuation it keeps so
// keyword matching sees bare space-separated words.
std::string match_text(const std::string& s) {
  std::string norm = BpeVocab::normalize(s);
  std::string out;
  bool pending_space = false;
  for (char ch : norm) {
    if (ch == ',' || ch == '.') continue;
    if (ch == ' ') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(ch);
  }
  return out;
}

bool contains_word_phrase(const std::string& text, const std::string& phrase) {
  size_t pos = 0;
  while ((pos = text.find(phrase, pos)) != std::string::npos) {
    bool left_ok = pos == 0 || text[pos - 1] == ' ';
    size_t end = pos + phrase.size();
    bool right_ok = end == text.size() || text[end] == ' ';
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

Tensor stack_images(const std::vector<Tensor>& images,
                    const std::vector<int>& idx) {
  int h = images[idx[0]].dim(1), w = images[idx[0]].dim(2);
  Tensor x = Tensor::zeros({static_cast<int>(idx.size()), 3, h, w});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(images[idx[i]].data().begin(), images[idx[i]].data().end(),
              x.data().begin() + static_cast<int64_t>(i) * 3 * h * w);
  return x;
}

}  // namespace

int label_from_caption(const std::string& caption,
                       const std::vector<std::vector<std::string>>& keywords) {
  std::string text = match_text(caption);
  // (class, matched keyword) for every hit
  std::vector<std::pair<int, std::string>> hits;
  for (size_t c = 0; c < keywords.size(); ++c)
    for (const auto& kwRaw : keywords[c]) {
      std::string kw = match_text(kwRaw);
      if (!kw.empty() && contains_word_phrase(text, kw))
        hits.emplace_back(static_cast<int>(c), kw);
    }
  if (hits.empty()) return -1;
  // Longer phrases subsume the shorter ones they contain ("baseball
  // field" beats "field"); any hits left across distinct classes after
  // that pruning mean the caption is ambiguous.
  std::set<int> classes;
  for (const auto& [c, kw] : hits) {
    bool subsumed = false;
    for (const auto& [c2, kw2] : hits)
      if (kw2.size() > kw.size() && contains_word_phrase(kw2, kw))
        subsumed = true;
    if (!subsumed) classes.insert(c);
  }
  return classes.size() == 1 ? *classes.begin() : -1;
}

int label_from_caption(const std::string& caption,
                       const std::vector<std::string>& class_names) {
  std::vector<std::vector<std::string>> kw;
  for (const auto& name : class_names) kw.push_back({name});
  return label_from_caption(caption, kw);
}

ClassifierParams ClassifierParams::init(const ClassifierConfig& cfg,
                                        Rng& rng) {
  ClassifierParams p;
  p.cfg = cfg;
  int in_c = 3;
  for (int out_c : cfg.channels) {
    p.conv_w.push_back(uniform_fanin({out_c, in_c, 3, 3}, in_c * 9, rng));
    p.conv_b.push_back(Tensor::zeros({out_c}, true));
    in_c = out_c;
  }
  p.head_w = uniform_fanin({in_c, cfg.num_classes}, in_c, rng);
  p.head_b = Tensor::zeros({cfg.num_classes}, true);
  return p;
}

std::vector<Tensor> ClassifierParams::parameters() {
  std::vector<Tensor> out;
  for (auto& t : conv_w) out.push_back(t);
  for (auto& t : conv_b) out.push_back(t);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

void ClassifierParams::save_into(Checkpoint& cp) const {
  for (size_t i = 0; i < conv_w.size(); ++i) {
    cp.put("cls." + std::to_string(i) + ".w", conv_w[i]);
    cp.put("cls." + std::to_string(i) + ".b", conv_b[i]);
  }
  cp.put("cls.head.w", head_w);
  cp.put("cls.head.b", head_b);
}

ClassifierParams ClassifierParams::load_from(const Checkpoint& cp) {
  cp.require({"cls.0.w", "cls.head.w"}, "classifier");
  ClassifierParams p;
  for (int i = 0; cp.has("cls." + std::to_string(i) + ".w"); ++i) {
    p.conv_w.push_back(cp.get("cls." + std::to_string(i) + ".w"));
    p.conv_b.push_back(cp.get("cls." + std::to_string(i) + ".b"));
  }
  p.head_w = cp.get("cls.head.w");
  p.head_b = cp.get("cls.head.b");
  p.cfg.num_classes = p.head_w.dim(1);
  p.cfg.channels.clear();
  for (const auto& w : p.conv_w) p.cfg.channels.push_back(w.dim(0));
  for (auto& t : p.parameters()) t.set_requires_grad(true);
  return p;
}

Tensor classifier_logits(Tape* tape, const ClassifierParams& p,
                         const Tensor& x) {
  Tensor h = x;
  for (size_t s = 0; s < p.conv_w.size(); ++s) {
    h = conv2d(tape, h, p.conv_w[s], p.conv_b[s], 2, 1);
    h = relu(tape, h);
  }
  Tensor feats = global_avg_pool(tape, h);
  return add_row_bias(tape, matmul(tape, feats, p.head_w), p.head_b);
}

ClassifierParams train_classifier(const LabeledImageSet& train,
                                  const ClassifierConfig& cfg) {
  if (train.provenance == "real-test")
    throw ContractError(
        "train_classifier: refusing to train on the held-out real test set");
  if (train.images.size() != train.labels.size() || train.images.empty())
    throw InputError("train_classifier: empty or inconsistent training set");
  std::set<int> classes(train.labels.begin(), train.labels.end());
  if (classes.size() < 2)
    throw InputError("train_classifier: need at least 2 classes present");
  Rng rng(cfg.seed);
  ClassifierParams p = ClassifierParams::init(cfg, rng);
  Adam opt(p.parameters(), cfg.lr);
  int n = static_cast<int>(train.images.size());
  int batch = std::min(cfg.batch, n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    for (int s = 0; s * batch < n; ++s) {
      std::vector<int> idx(order.begin() + s * batch,
                           order.begin() + std::min((s + 1) * batch, n));
      Tensor x = stack_images(train.images, idx);
      std::vector<int> targets;
      for (int i : idx) targets.push_back(train.labels[i]);
      Tape tape;
      Tensor logits = classifier_logits(&tape, p, x);
      Tensor loss = scale(&tape, cross_entropy(&tape, logits, targets),
                          1.0f / static_cast<float>(idx.size()));
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }
  return p;
}

double overall_accuracy(const ClassifierParams& p,
                        const LabeledImageSet& test) {
  if (test.images.empty()) throw InputError("overall_accuracy: empty test set");
  int correct = 0;
  for (size_t i = 0; i < test.images.size(); ++i) {
    Tensor x = stack_images(test.images, {static_cast<int>(i)});
    Tensor logits = classifier_logits(nullptr, p, x);
    const float* row = logits.data().data();
    int pred = 0;
    for (int j = 1; j < logits.dim(1); ++j)
      if (row[j] > row[pred]) pred = j;
    if (pred == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / test.images.size();
}

std::vector<float> ClassifierExtractor::class_probs(const Tensor& image) const {
  Tensor x = stack_images({image}, {0});
  Tensor logits = classifier_logits(nullptr, params_, x);
  Tensor probs = softmax_rows(nullptr, logits);
  return probs.data();
}

std::vector<float> ClassifierExtractor::features(const Tensor& image) const {
  Tensor x = stack_images({image}, {0});
  Tensor h = x;
  for (size_t s = 0; s < params_.conv_w.size(); ++s) {
    h = conv2d(nullptr, h, params_.conv_w[s], params_.conv_b[s], 2, 1);
    h = relu(nullptr, h);
  }
  return global_avg_pool(nullptr, h).data();
}

ZeroShotReport zeroshot_pipeline(const CaptionGenerator& generate_image,
                                 const std::vector<std::string>& captions,
                                 const LabeledImageSet& real_test,
                                 const ClassifierConfig& cfg) {
  if (real_test.provenance != "real-test")
    throw ContractError(
        "zeroshot_pipeline: real_test must carry the real-test provenance tag");
  ZeroShotReport report;
  LabeledImageSet train;
  train.class_names = real_test.class_names;
  train.provenance = "generated";
  for (const auto& caption : captions) {
    int label = label_from_caption(caption, real_test.class_names);
    if (label < 0) {
      ++report.skipped;
      continue;
    }
    train.images.push_back(generate_image(caption));
    train.labels.push_back(label);
  }
  report.n_train_generated = static_cast<int>(train.images.size());
  report.n_test_real = static_cast<int>(real_test.images.size());
  ClassifierConfig ccfg = cfg;
  ccfg.num_classes = static_cast<int>(real_test.class_names.size());
  ClassifierParams p = train_classifier(train, ccfg);
  // per-class tallies; their weighted average is the OA
  std::map<std::string, std::pair<int, int>> tally;
  int correct = 0;
  for (size_t i = 0; i < real_test.images.size(); ++i) {
    Tensor x = stack_images(real_test.images, {static_cast<int>(i)});
    Tensor logits = classifier_logits(nullptr, p, x);
    const float* row = logits.data().data();
    int pred = 0;
    for (int j = 1; j < logits.dim(1); ++j)
      if (row[j] > row[pred]) pred = j;
    const std::string& cname = real_test.class_names[real_test.labels[i]];
    ++tally[cname].second;
    if (pred == real_test.labels[i]) {
      ++tally[cname].first;
      ++correct;
    }
  }
  report.oa = static_cast<double>(correct) / real_test.images.size();
  for (const auto& [name, t] : tally)
    report.per_class[name] = static_cast<double>(t.first) / t.second;
  return report;
}

}  // namespace t2i
