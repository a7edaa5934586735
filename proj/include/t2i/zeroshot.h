#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "t2i/checkpoint.h"
#include "t2i/metrics.h"
#include "t2i/tensor.h"

namespace t2i {

struct LabeledImageSet {
  std::vector<Tensor> images;  // each [3,H,W]
  std::vector<int> labels;
  std::vector<std::string> class_names;
  // Provenance guard: classifier training refuses sets tagged "real-test".
  std::string provenance = "real";
};

// Matches class keywords against a normalized caption on word boundaries.
// Longer keywords subsume shorter ones; anything still ambiguous (0 or
// >=2 distinct classes) returns -1.
int label_from_caption(const std::string& caption,
                       const std::vector<std::string>& class_names);
// Custom keyword table: class index -> list of keyword phrases.
int label_from_caption(const std::string& caption,
                       const std::vector<std::vector<std::string>>& keywords);

struct ClassifierConfig {
  int num_classes = 3;
  std::vector<int> channels = {16, 32, 64};  // stride-2 conv blocks
  int epochs = 30;
  int batch = 16;
  float lr = 2e-3f;
  uint64_t seed = 3;
};

struct ClassifierParams {
  ClassifierConfig cfg;
  std::vector<Tensor> conv_w, conv_b;
  Tensor head_w;  // [C_last x num_classes]
  Tensor head_b;  // [num_classes]

  static ClassifierParams init(const ClassifierConfig& cfg, Rng& rng);
  std::vector<Tensor> parameters();
  void save_into(Checkpoint& cp) const;
  static ClassifierParams load_from(const Checkpoint& cp);
};

// Logits for a batch [B,3,H,W] -> [B,C].
Tensor classifier_logits(Tape* tape, const ClassifierParams& p,
                         const Tensor& x);

ClassifierParams train_classifier(const LabeledImageSet& train,
                                  const ClassifierConfig& cfg);

double overall_accuracy(const ClassifierParams& p,
                        const LabeledImageSet& test);

// Adapter exposing the classifier as the metric extractor: softmax head
// for class probabilities, global-average-pool activations as features.
class ClassifierExtractor : public Extractor {
 public:
  explicit ClassifierExtractor(ClassifierParams params)
      : params_(std::move(params)) {}
  std::vector<float> class_probs(const Tensor& image) const override;
  std::vector<float> features(const Tensor& image) const override;

 private:
  ClassifierParams params_;
};

struct ZeroShotReport {
  double oa = 0.0;
  std::map<std::string, double> per_class;
  int skipped = 0;
  int n_train_generated = 0;
  int n_test_real = 0;
};

// Caption -> generated image producer (generator + decoder composed by
// the caller; keeps this module independent of the generator types).
using CaptionGenerator = std::function<Tensor(const std::string& caption)>;

ZeroShotReport zeroshot_pipeline(const CaptionGenerator& generate_image,
                                 const std::vector<std::string>& captions,
                                 const LabeledImageSet& real_test,
                                 const ClassifierConfig& cfg);

}  // namespace t2i
