#include "t2i/config.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace t2i {

using nlohmann::json;

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  if (resolution <= 0 || resolution % vq.f != 0)
    throw InputError("config: resolution must be a positive multiple of f");
  vq.num_stages();  // validates f/channels
  int grid = resolution / vq.f;
  if (gen.m != grid * grid)
    throw InputError("config: generator m must equal (resolution/f)^2 = " +
                     std::to_string(grid * grid));
  if (gen.k != vq.k)
    throw InputError("config: generator k must match the VQ codebook size");
  if (gen.n != text_len)
    throw InputError("config: generator n must match text_len");
  if (gen.text_vocab != text_vocab)
    throw InputError("config: generator text_vocab must match text_vocab");
  if (text_len < 1 || gen.d_emb < 1 || gen.n_pro < 1 || gen.num_blocks < 1)
    throw InputError("config: generator dimensions must be positive");
  if (vq.k < 1 || vq.d < 1)
    throw InputError("config: codebook dimensions must be positive");
  if (decode.temperature <= 0.0f)
    throw InputError("config: temperature must be positive");
  if (decode.top_k < 1) throw InputError("config: top_k must be >= 1");
  if (is_splits < 1) throw InputError("config: is_splits must be >= 1");
  if (vq_train.st_fraction < 0.0f || vq_train.st_fraction > 1.0f)
    throw InputError("config: vq_train.st_fraction must lie in [0,1]");
  if (vq_train.noise_scale < 0.0f)
    throw InputError("config: vq_train.noise_scale must be non-negative");
  if (vq_train.tau_start <= 0.0f || vq_train.tau_end <= 0.0f)
    throw InputError("config: vq_train temperatures must be positive");
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("config parse error: ") + e.what());
  }
  RunConfig c;
  maybe(j, "resolution", c.resolution);
  maybe(j, "text_vocab", c.text_vocab);
  maybe(j, "text_len", c.text_len);
  maybe(j, "seed", c.seed);
  maybe(j, "is_splits", c.is_splits);
  if (j.contains("vq")) {
    const auto& v = j.at("vq");
    maybe(v, "k", c.vq.k);
    maybe(v, "d", c.vq.d);
    maybe(v, "f", c.vq.f);
    maybe(v, "channels", c.vq.channels);
  }
  if (j.contains("vq_train")) {
    const auto& v = j.at("vq_train");
    maybe(v, "epochs", c.vq_train.epochs);
    maybe(v, "batch", c.vq_train.batch);
    maybe(v, "lr", c.vq_train.lr);
    maybe(v, "lr_decay", c.vq_train.lr_decay);
    maybe(v, "tau_start", c.vq_train.tau_start);
    maybe(v, "tau_end", c.vq_train.tau_end);
    maybe(v, "st_fraction", c.vq_train.st_fraction);
    maybe(v, "noise_scale", c.vq_train.noise_scale);
    maybe(v, "seed", c.vq_train.seed);
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    maybe(g, "d_emb", c.gen.d_emb);
    maybe(g, "num_blocks", c.gen.num_blocks);
    maybe(g, "n_pro", c.gen.n_pro);
    maybe(g, "residual", c.gen.residual);
    maybe(g, "layer_norm", c.gen.layer_norm);
    maybe(g, "separate_value", c.gen.separate_value);
  }
  if (j.contains("gen_train")) {
    const auto& g = j.at("gen_train");
    maybe(g, "epochs", c.gen_train.epochs);
    maybe(g, "batch", c.gen_train.batch);
    maybe(g, "lr", c.gen_train.lr);
    maybe(g, "lr_decay", c.gen_train.lr_decay);
    maybe(g, "seed", c.gen_train.seed);
  }
  if (j.contains("decode")) {
    const auto& d = j.at("decode");
    std::string mode = "greedy";
    maybe(d, "mode", mode);
    if (mode == "greedy") {
      c.decode.greedy = true;
    } else if (mode == "sample") {
      c.decode.greedy = false;
    } else {
      throw InputError("config: decode.mode must be greedy or sample");
    }
    maybe(d, "temperature", c.decode.temperature);
    maybe(d, "top_k", c.decode.top_k);
  }
  if (j.contains("classifier")) {
    const auto& cl = j.at("classifier");
    maybe(cl, "channels", c.classifier.channels);
    maybe(cl, "epochs", c.classifier.epochs);
    maybe(cl, "batch", c.classifier.batch);
    maybe(cl, "lr", c.classifier.lr);
    maybe(cl, "seed", c.classifier.seed);
  }
  // derived links between modules
  c.gen.text_vocab = c.text_vocab;
  c.gen.n = c.text_len;
  c.gen.k = c.vq.k;
  int grid = c.vq.f > 0 ? c.resolution / c.vq.f : 0;
  c.gen.m = grid * grid;
  c.validate();
  return c;
}

std::string RunConfig::to_json_text() const {
  json j;
  j["resolution"] = resolution;
  j["text_vocab"] = text_vocab;
  j["text_len"] = text_len;
  j["seed"] = seed;
  j["is_splits"] = is_splits;
  j["vq"] = {{"k", vq.k}, {"d", vq.d}, {"f", vq.f}, {"channels", vq.channels}};
  j["vq_train"] = {{"epochs", vq_train.epochs},   {"batch", vq_train.batch},
                   {"lr", vq_train.lr},           {"lr_decay", vq_train.lr_decay},
                   {"tau_start", vq_train.tau_start},
                   {"tau_end", vq_train.tau_end},
                   {"st_fraction", vq_train.st_fraction},
                   {"noise_scale", vq_train.noise_scale},
                   {"seed", vq_train.seed}};
  j["generator"] = {{"d_emb", gen.d_emb},
                    {"num_blocks", gen.num_blocks},
                    {"n_pro", gen.n_pro},
                    {"residual", gen.residual},
                    {"layer_norm", gen.layer_norm},
                    {"separate_value", gen.separate_value}};
  j["gen_train"] = {{"epochs", gen_train.epochs},
                    {"batch", gen_train.batch},
                    {"lr", gen_train.lr},
                    {"lr_decay", gen_train.lr_decay},
                    {"seed", gen_train.seed}};
  j["decode"] = {{"mode", decode.greedy ? "greedy" : "sample"},
                 {"temperature", decode.temperature},
                 {"top_k", decode.top_k}};
  j["classifier"] = {{"channels", classifier.channels},
                     {"epochs", classifier.epochs},
                     {"batch", classifier.batch},
                     {"lr", classifier.lr},
                     {"seed", classifier.seed}};
  return j.dump(2);
}

std::string RunConfig::hash() const {
  std::string s = to_json_text();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace t2i
