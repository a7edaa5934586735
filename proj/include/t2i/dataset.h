#pragma once

#include <string>
#include <vector>

#include "t2i/tensor.h"

namespace t2i {

// Image value type everywhere: Tensor [3,H,W], pixels in [0,1].

Tensor read_image(const std::string& path);  // PNG or PPM (P6) by content
void write_png(const std::string& path, const Tensor& img);
void write_ppm(const std::string& path, const Tensor& img);

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

struct ManifestRecord {
  std::string image_path;
  std::vector<std::string> captions;
  std::string class_name;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;  // sorted distinct

  std::vector<ManifestRecord> split(const std::string& which) const;
};

// One record per line, tab-separated:
//   image_path <TAB> class_name <TAB> split <TAB> caption [<TAB> caption ...]
// Paths are resolved relative to the manifest's directory.
DatasetManifest load_manifest(const std::string& path);

// Loads and resizes every image of a manifest split.
struct LoadedExample {
  Tensor image;  // [3,res,res]
  std::vector<std::string> captions;
  std::string class_name;
};
std::vector<LoadedExample> load_split(const DatasetManifest& m,
                                      const std::string& which,
                                      int resolution);

// Bundled synthetic "color-blob world": images of one colored shape on a
// light background with templated captions. Class names double as caption
// keywords. Supports 3..6 classes.
struct BlobWorldConfig {
  int num_classes = 3;
  int image_size = 32;
  int train_per_class = 8;
  int test_per_class = 10;
  uint64_t seed = 7;
};

struct BlobExample {
  Tensor image;
  std::string caption;
  int label = 0;
};

std::vector<std::string> blob_class_names(int num_classes);
// In-memory generation; split is "train" or "test" (disjoint streams).
std::vector<BlobExample> make_blob_examples(const BlobWorldConfig& cfg,
                                            const std::string& split);
// Writes PNGs plus manifest.txt under dir.
void write_blob_dataset(const BlobWorldConfig& cfg, const std::string& dir);

}  // namespace t2i
