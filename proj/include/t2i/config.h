#pragma once

#include <string>

#include "t2i/mhn.h"
#include "t2i/vqvae.h"
#include "t2i/zeroshot.h"

namespace t2i {

// All hyperparameters of a run, loadable from a JSON file. Defaults are
// the desk-scale values; the full-scale settings are reachable by config.
struct RunConfig {
  // data
  int resolution = 32;

  // text pipeline
  int text_vocab = 2048;
  int text_len = 8;  // n

  // image tokenizer
  VqConfig vq;
  VqTrainConfig vq_train;

  // generator
  GeneratorConfig gen;
  struct GenTrain {
    int epochs = 200;
    int batch = 8;
    float lr = 1e-2f;
    float lr_decay = 0.9995f;
    uint64_t seed = 2;
  } gen_train;

  // decoding
  DecodeOptions decode;

  // zero-shot classifier
  ClassifierConfig classifier;

  // metrics
  int is_splits = 10;

  uint64_t seed = 1;

  // Validates cross-module consistency (m == (res/f)^2 etc.); throws
  // InputError on violations.
  void validate() const;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;

  // FNV-1a hash of the canonical JSON dump, for reproducibility headers.
  std::string hash() const;
};

}  // namespace t2i
