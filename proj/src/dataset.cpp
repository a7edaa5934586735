#include "t2i/dataset.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace t2i {

namespace {

Tensor from_rgb8(const std::vector<unsigned char>& rgb, int h, int w) {
  Tensor img = Tensor::zeros({3, h, w});
  auto& d = img.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        d[(c * h + y) * w + x] = rgb[(y * w + x) * 3 + c] / 255.0f;
  return img;
}

std::vector<unsigned char> to_rgb8(const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw DimensionError("image must have shape [3,H,W]");
  int h = img.dim(1), w = img.dim(2);
  std::vector<unsigned char> rgb(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.data()[(c * h + y) * w + x];
        v = std::min(1.0f, std::max(0.0f, v));
        rgb[(y * w + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  return rgb;
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw IoError("not a P6 PPM: " + path);
  auto next_int = [&] {
    int v;
    f >> std::ws;
    while (f.peek() == '#') {
      std::string line;
      std::getline(f, line);
      f >> std::ws;
    }
    if (!(f >> v)) throw IoError("bad PPM header: " + path);
    return v;
  };
  int w = next_int(), h = next_int(), maxv = next_int();
  if (maxv != 255) throw IoError("unsupported PPM maxval in " + path);
  f.get();  // single whitespace after header
  std::vector<unsigned char> rgb(static_cast<size_t>(h) * w * 3);
  f.read(reinterpret_cast<char*>(rgb.data()),
         static_cast<std::streamsize>(rgb.size()));
  if (static_cast<size_t>(f.gcount()) != rgb.size())
    throw IoError("truncated PPM: " + path);
  return from_rgb8(rgb, h, w);
}

Tensor read_png_file(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open image: " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng init failure for " + path);
  }
  std::vector<unsigned char> rgb;
  int w = 0, h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("undecodable PNG: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  rgb.assign(static_cast<size_t>(h) * w * 3, 0);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = rgb.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return from_rgb8(rgb, h, w);
}

}  // namespace

Tensor read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open image: " + path);
  char head[2] = {0, 0};
  probe.read(head, 2);
  probe.close();
  if (head[0] == 'P' && head[1] == '6') return read_ppm(path);
  return read_png_file(path);
}

void write_png(const std::string& path, const Tensor& img) {
  auto rgb = to_rgb8(img);
  int h = img.dim(1), w = img.dim(2);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open image for writing: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG write failure: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, rgb.data() + static_cast<size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void write_ppm(const std::string& path, const Tensor& img) {
  auto rgb = to_rgb8(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image for writing: " + path);
  f << "P6\n" << img.dim(2) << " " << img.dim(1) << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()),
          static_cast<std::streamsize>(rgb.size()));
}

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw DimensionError("resize_bilinear: expects [3,H,W]");
  int h = img.dim(1), w = img.dim(2);
  if (h == out_h && w == out_w) return Tensor::from(img.shape(), img.data());
  Tensor out = Tensor::zeros({3, out_h, out_w});
  for (int y = 0; y < out_h; ++y) {
    float fy = (out_h > 1) ? static_cast<float>(y) * (h - 1) / (out_h - 1) : 0;
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, h - 1);
    float wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      float fx = (out_w > 1) ? static_cast<float>(x) * (w - 1) / (out_w - 1) : 0;
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, w - 1);
      float wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const float* p = img.data().data() + c * h * w;
        float v = (1 - wy) * ((1 - wx) * p[y0 * w + x0] + wx * p[y0 * w + x1]) +
                  wy * ((1 - wx) * p[y1 * w + x0] + wx * p[y1 * w + x1]);
        out.data()[(c * out_h + y) * out_w + x] = v;
      }
    }
  }
  return out;
}

std::vector<ManifestRecord> DatasetManifest::split(
    const std::string& which) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.split == which) out.push_back(r);
  return out;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  fs::path base = fs::path(path).parent_path();
  DatasetManifest m;
  std::set<std::string> classes;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() < 4)
      throw IoError("manifest record " + std::to_string(lineno) +
                    ": expected at least 4 tab-separated fields");
    ManifestRecord r;
    r.image_path = (base / fields[0]).string();
    r.class_name = fields[1];
    r.split = fields[2];
    if (r.split != "train" && r.split != "test")
      throw InputError("manifest record " + std::to_string(lineno) +
                       ": split must be train or test, got '" + r.split + "'");
    r.captions.assign(fields.begin() + 3, fields.end());
    if (!fs::exists(r.image_path))
      throw IoError("manifest record " + std::to_string(lineno) +
                    ": missing image file " + r.image_path);
    classes.insert(r.class_name);
    m.records.push_back(std::move(r));
  }
  m.class_names.assign(classes.begin(), classes.end());
  return m;
}

std::vector<LoadedExample> load_split(const DatasetManifest& m,
                                      const std::string& which,
                                      int resolution) {
  std::vector<LoadedExample> out;
  for (const auto& r : m.split(which)) {
    LoadedExample ex;
    ex.image = resize_bilinear(read_image(r.image_path), resolution, resolution);
    ex.captions = r.captions;
    ex.class_name = r.class_name;
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Color-blob world
// ---------------------------------------------------------------------------

namespace {

struct BlobClass {
  const char* name;
  float r, g, b;
  const char* color_word;
};

// Shape keyword appears exactly once per caption; colors are tied to
// shapes so the classes stay visually separable at tiny resolutions.
const BlobClass kBlobClasses[6] = {
    {"square", 0.85f, 0.10f, 0.10f, "red"},
    {"circle", 0.10f, 0.70f, 0.15f, "green"},
    {"triangle", 0.10f, 0.20f, 0.85f, "blue"},
    {"cross", 0.85f, 0.75f, 0.10f, "yellow"},
    {"diamond", 0.60f, 0.15f, 0.70f, "purple"},
    {"ring", 0.90f, 0.45f, 0.10f, "orange"},
};

const char* kTemplates[5] = {
    "a %s %s on a pale background",
    "one small %s %s in the scene",
    "the image shows a %s %s",
    "a large %s %s near the center",
    "there is a %s %s here",
};

std::string make_caption(int cls, int variant) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), kTemplates[variant % 5],
                kBlobClasses[cls].color_word, kBlobClasses[cls].name);
  return buf;
}

Tensor draw_blob(int cls, int size, Rng& rng) {
  Tensor img = Tensor::zeros({3, size, size});
  float bg = rng.uniform(0.88f, 0.98f);
  std::fill(img.data().begin(), img.data().end(), bg);
  const BlobClass& bc = kBlobClasses[cls];
  float cx = size * rng.uniform(0.35f, 0.65f);
  float cy = size * rng.uniform(0.35f, 0.65f);
  float rad = size * rng.uniform(0.18f, 0.30f);
  auto put = [&](int y, int x) {
    if (y < 0 || y >= size || x < 0 || x >= size) return;
    img.data()[(0 * size + y) * size + x] = bc.r;
    img.data()[(1 * size + y) * size + x] = bc.g;
    img.data()[(2 * size + y) * size + x] = bc.b;
  };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float dx = x - cx, dy = y - cy;
      bool inside = false;
      switch (cls) {
        case 0:  // square
          inside = std::fabs(dx) <= rad && std::fabs(dy) <= rad;
          break;
        case 1:  // circle
          inside = dx * dx + dy * dy <= rad * rad;
          break;
        case 2:  // triangle (axis-aligned, apex up)
          inside = dy >= -rad && dy <= rad &&
                   std::fabs(dx) <= (dy + rad) * 0.5f;
          break;
        case 3:  // cross
          inside = (std::fabs(dx) <= rad * 0.35f && std::fabs(dy) <= rad) ||
                   (std::fabs(dy) <= rad * 0.35f && std::fabs(dx) <= rad);
          break;
        case 4:  // diamond
          inside = std::fabs(dx) + std::fabs(dy) <= rad;
          break;
        case 5: {  // ring
          float d2 = dx * dx + dy * dy;
          inside = d2 <= rad * rad && d2 >= rad * rad * 0.30f;
          break;
        }
      }
      if (inside) put(y, x);
    }
  return img;
}

}  // namespace

std::vector<std::string> blob_class_names(int num_classes) {
  if (num_classes < 3 || num_classes > 6)
    throw InputError("blob world supports 3..6 classes");
  std::vector<std::string> out;
  for (int i = 0; i < num_classes; ++i) out.emplace_back(kBlobClasses[i].name);
  return out;
}

std::vector<BlobExample> make_blob_examples(const BlobWorldConfig& cfg,
                                            const std::string& split) {
  if (cfg.num_classes < 3 || cfg.num_classes > 6)
    throw InputError("blob world supports 3..6 classes");
  bool train = split == "train";
  if (!train && split != "test")
    throw InputError("blob split must be train or test");
  int per_class = train ? cfg.train_per_class : cfg.test_per_class;
  Rng rng(cfg.seed + (train ? 0 : 0x9e3779b9u));
  std::vector<BlobExample> out;
  for (int c = 0; c < cfg.num_classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      BlobExample ex;
      ex.image = draw_blob(c, cfg.image_size, rng);
      ex.caption = make_caption(c, i);
      ex.label = c;
      out.push_back(std::move(ex));
    }
  return out;
}

void write_blob_dataset(const BlobWorldConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw IoError("cannot write manifest under " + dir);
  auto names = blob_class_names(cfg.num_classes);
  for (const char* split : {"train", "test"}) {
    auto examples = make_blob_examples(cfg, split);
    for (size_t i = 0; i < examples.size(); ++i) {
      const auto& ex = examples[i];
      std::string fname =
          names[ex.label] + "_" + split + "_" + std::to_string(i) + ".png";
      write_png((fs::path(dir) / fname).string(), ex.image);
      manifest << fname << "\t" << names[ex.label] << "\t" << split << "\t"
               << ex.caption << "\n";
    }
  }
}

}  // namespace t2i
