// Command-line driver for the text-to-image pipeline: dataset synthesis,
// tokenizer/model training, generation, metric evaluation, and zero-shot
// classification.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "t2i/bpe.h"
#include "t2i/checkpoint.h"
#include "t2i/config.h"
#include "t2i/dataset.h"
#include "t2i/metrics.h"
#include "t2i/mhn.h"
#include "t2i/vqvae.h"
#include "t2i/zeroshot.h"

namespace fs = std::filesystem;
using namespace t2i;

namespace {

struct CommonOpts {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig load_config(const CommonOpts& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig()
                                        : RunConfig::from_file(c.config_path);
  if (c.seed_set) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "override the config seed")
      ->each([&c](const std::string&) { c.seed_set = true; });
}

std::string repro_header(const RunConfig& cfg) {
  return "# config " + cfg.hash() + " seed " + std::to_string(cfg.seed);
}

Checkpoint load_checkpoint_or_hint(const std::string& path,
                                   const std::string& stage) {
  if (!fs::exists(path))
    throw IoError("checkpoint " + path + " not found; run `txt2img " + stage +
                  "` first");
  return Checkpoint::load(path);
}

BpeVocab load_vocab_or_hint(const std::string& path) {
  if (!fs::exists(path))
    throw IoError("vocabulary " + path +
                  " not found; run `txt2img bpe-train` first");
  return BpeVocab::load(path);
}

void write_text_file(const std::string& path,
                     const std::vector<std::string>& lines) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  for (const auto& l : lines) f << l << "\n";
}

std::vector<std::string> split_captions(const std::vector<LoadedExample>& ex) {
  std::vector<std::string> out;
  for (const auto& e : ex)
    for (const auto& c : e.captions) out.push_back(c);
  return out;
}

// --- subcommand bodies -----------------------------------------------

int run_make_blobs(const std::string& out_dir, const BlobWorldConfig& bw) {
  write_blob_dataset(bw, out_dir);
  std::cout << "wrote blob dataset (" << bw.num_classes << " classes) to "
            << out_dir << "\n";
  return 0;
}

int run_bpe_train(const CommonOpts& copts, const std::string& manifest_path,
                  const std::string& out_path) {
  RunConfig cfg = load_config(copts);
  auto manifest = load_manifest(manifest_path);
  std::vector<std::string> corpus;
  for (const auto& rec : manifest.split("train"))
    for (const auto& cap : rec.captions) corpus.push_back(cap);
  auto vocab = BpeVocab::train(corpus, cfg.text_vocab);
  vocab.save(out_path);
  std::cout << repro_header(cfg) << "\n"
            << "trained vocabulary: " << vocab.num_symbols() << "/"
            << vocab.vocab_size() << " symbols, " << vocab.merges().size()
            << " merges -> " << out_path << "\n";
  return 0;
}

int run_train_vqvae(const CommonOpts& copts, const std::string& manifest_path,
                    const std::string& out_path) {
  RunConfig cfg = load_config(copts);
  auto manifest = load_manifest(manifest_path);
  auto train = load_split(manifest, "train", cfg.resolution);
  std::vector<Tensor> images;
  for (const auto& e : train) images.push_back(e.image);

  Rng rng(cfg.seed);
  auto params = VqParams::init(cfg.vq, rng);
  auto history = train_vqvae(params, images, cfg.vq_train);

  Checkpoint cp;
  params.save_into(cp);
  cp.save(out_path);
  std::cout << repro_header(cfg) << "\n"
            << "trained image tokenizer on " << images.size() << " images, "
            << history.size() << " epochs, final loss " << history.back()
            << " -> " << out_path << "\n";
  return 0;
}

std::vector<JointSequence> build_sequences(const RunConfig& cfg,
                                           const BpeVocab& vocab,
                                           const VqParams& vq,
                                           const std::vector<LoadedExample>& ex) {
  std::vector<JointSequence> seqs;
  for (const auto& e : ex) {
    Tensor batch = Tensor::zeros({1, 3, cfg.resolution, cfg.resolution});
    std::copy(e.image.data().begin(), e.image.data().end(),
              batch.data().begin());
    auto toks = tokenize_images(vq, batch);
    for (const auto& cap : e.captions) {
      JointSequence s;
      s.ids = vocab.encode(cap, cfg.text_len);
      s.split = cfg.text_len;
      s.ids.insert(s.ids.end(), toks[0].ids.begin(), toks[0].ids.end());
      seqs.push_back(std::move(s));
    }
  }
  return seqs;
}

int run_train_mhn(const CommonOpts& copts, const std::string& manifest_path,
                  const std::string& vocab_path, const std::string& vq_path,
                  const std::string& out_path) {
  RunConfig cfg = load_config(copts);
  auto vocab = load_vocab_or_hint(vocab_path);
  auto vq = VqParams::load_from(load_checkpoint_or_hint(vq_path, "train-vqvae"));
  if (vq.cfg.k != cfg.vq.k)
    throw InputError("VQ checkpoint codebook size " +
                     std::to_string(vq.cfg.k) + " does not match config k=" +
                     std::to_string(cfg.vq.k));
  auto manifest = load_manifest(manifest_path);
  auto train = load_split(manifest, "train", cfg.resolution);
  auto seqs = build_sequences(cfg, vocab, vq, train);
  if (seqs.empty()) throw InputError("train-mhn: no training sequences");

  Rng rng(cfg.gen_train.seed);
  auto params = GeneratorParams::init(cfg.gen, rng);
  Adam opt(params.parameters(), cfg.gen_train.lr);
  float lr = cfg.gen_train.lr;
  float last = 0.0f;
  for (int epoch = 0; epoch < cfg.gen_train.epochs; ++epoch) {
    // deterministic shuffle per epoch
    std::vector<int> order(seqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
    float epoch_loss = 0.0f;
    int batches = 0;
    for (size_t at = 0; at < order.size();
         at += static_cast<size_t>(cfg.gen_train.batch)) {
      std::vector<JointSequence> batch;
      for (size_t i = at;
           i < order.size() && i < at + static_cast<size_t>(cfg.gen_train.batch);
           ++i)
        batch.push_back(seqs[order[i]]);
      epoch_loss += train_step(params, batch, opt);
      ++batches;
    }
    last = epoch_loss / static_cast<float>(batches);
    lr *= cfg.gen_train.lr_decay;
    opt.set_lr(lr);
  }

  Checkpoint cp;
  params.save_into(cp);
  cp.save(out_path);
  std::cout << repro_header(cfg) << "\n"
            << "trained generator on " << seqs.size() << " sequences, "
            << cfg.gen_train.epochs << " epochs, final loss " << last
            << " -> " << out_path << "\n";
  return 0;
}

struct LoadedPipeline {
  RunConfig cfg;
  BpeVocab vocab;
  VqParams vq;
  GeneratorParams gen;
};

LoadedPipeline load_pipeline(const CommonOpts& copts,
                             const std::string& vocab_path,
                             const std::string& gen_path,
                             const std::string& vq_path) {
  RunConfig cfg = load_config(copts);
  return LoadedPipeline{
      cfg, load_vocab_or_hint(vocab_path),
      VqParams::load_from(load_checkpoint_or_hint(vq_path, "train-vqvae")),
      GeneratorParams::load_from(
          load_checkpoint_or_hint(gen_path, "train-mhn"), cfg.gen)};
}

Tensor generate_image(const LoadedPipeline& pl, const std::string& prompt,
                      Rng& rng) {
  auto text_ids = pl.vocab.encode(prompt, pl.cfg.text_len);
  auto tokens = generate(pl.gen, text_ids, pl.cfg.decode, rng);
  ImageTokens toks;
  int grid = pl.cfg.resolution / pl.vq.cfg.f;
  toks.grid_h = toks.grid_w = grid;
  toks.ids = tokens;
  Tensor batch = detokenize_images(pl.vq, {toks});
  Tensor img = Tensor::zeros({3, batch.dim(2), batch.dim(3)});
  std::copy(batch.data().begin(), batch.data().end(), img.data().begin());
  return img;
}

int run_generate(const CommonOpts& copts, const std::string& vocab_path,
                 const std::string& gen_path, const std::string& vq_path,
                 std::vector<std::string> prompts,
                 const std::string& prompts_file, const std::string& out_dir,
                 const std::string& mode, float temperature, int top_k) {
  auto pl = load_pipeline(copts, vocab_path, gen_path, vq_path);
  if (!mode.empty()) {
    if (mode != "greedy" && mode != "sample")
      throw InputError("--mode must be greedy or sample");
    pl.cfg.decode.greedy = (mode == "greedy");
  }
  if (temperature > 0) pl.cfg.decode.temperature = temperature;
  if (top_k > 0) pl.cfg.decode.top_k = top_k;
  if (!prompts_file.empty()) {
    std::ifstream f(prompts_file);
    if (!f) throw IoError("cannot open prompts file: " + prompts_file);
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) prompts.push_back(line);
  }
  if (prompts.empty())
    throw InputError("generate: no prompts given (--prompt / --prompts)");

  fs::create_directories(out_dir);
  Rng rng(pl.cfg.seed);
  std::vector<std::string> sidecar = {repro_header(pl.cfg)};
  for (size_t i = 0; i < prompts.size(); ++i) {
    Tensor img = generate_image(pl, prompts[i], rng);
    char name[32];
    std::snprintf(name, sizeof(name), "gen_%04zu.png", i);
    write_png((fs::path(out_dir) / name).string(), img);
    sidecar.push_back(std::string(name) + "\t" + prompts[i]);
  }
  write_text_file((fs::path(out_dir) / "prompts.txt").string(), sidecar);
  std::cout << "wrote " << prompts.size() << " images to " << out_dir << "\n";
  return 0;
}

int run_evaluate(const CommonOpts& copts, const std::string& manifest_path,
                 const std::string& vocab_path, const std::string& gen_path,
                 const std::string& vq_path, const std::string& out_path) {
  auto pl = load_pipeline(copts, vocab_path, gen_path, vq_path);
  auto manifest = load_manifest(manifest_path);
  auto train = load_split(manifest, "train", pl.cfg.resolution);
  auto test = load_split(manifest, "test", pl.cfg.resolution);
  if (test.empty()) throw InputError("evaluate: empty test split");

  // The metric extractor stands in for a pretrained backbone: a small
  // classifier fitted to the real training split.
  LabeledImageSet real_train;
  real_train.class_names = manifest.class_names;
  real_train.provenance = "real-train";
  for (const auto& e : train) {
    real_train.images.push_back(e.image);
    real_train.labels.push_back(static_cast<int>(
        std::find(manifest.class_names.begin(), manifest.class_names.end(),
                  e.class_name) -
        manifest.class_names.begin()));
  }
  ClassifierConfig ccfg = pl.cfg.classifier;
  ccfg.num_classes = static_cast<int>(manifest.class_names.size());
  ClassifierExtractor extractor(train_classifier(real_train, ccfg));

  // one generated image per test caption
  Rng rng(pl.cfg.seed);
  std::vector<std::vector<float>> gen_probs, gen_feats, real_feats;
  for (const auto& cap : split_captions(test)) {
    Tensor img = generate_image(pl, cap, rng);
    gen_probs.push_back(extractor.class_probs(img));
    gen_feats.push_back(extractor.features(img));
  }
  for (const auto& e : test) real_feats.push_back(extractor.features(e.image));

  auto [is_mean, is_std] = inception_score(gen_probs, pl.cfg.is_splits);
  double d = fid(gaussian_stats(real_feats), gaussian_stats(gen_feats));

  std::vector<std::string> report = {
      repro_header(pl.cfg),
      "is_mean " + std::to_string(is_mean),
      "is_std " + std::to_string(is_std),
      "fid " + std::to_string(d),
      "n_real " + std::to_string(real_feats.size()),
      "n_gen " + std::to_string(gen_feats.size())};
  write_text_file(out_path, report);
  for (const auto& l : report) std::cout << l << "\n";
  return 0;
}

int run_zeroshot(const CommonOpts& copts, const std::string& manifest_path,
                 const std::string& vocab_path, const std::string& gen_path,
                 const std::string& vq_path, const std::string& out_path) {
  auto pl = load_pipeline(copts, vocab_path, gen_path, vq_path);
  auto manifest = load_manifest(manifest_path);
  auto test = load_split(manifest, "test", pl.cfg.resolution);
  if (test.empty()) throw InputError("zeroshot: empty test split");
  auto train = load_split(manifest, "train", pl.cfg.resolution);
  if (train.empty()) throw InputError("zeroshot: empty train split");

  LabeledImageSet real_test;
  real_test.class_names = manifest.class_names;
  real_test.provenance = "real-test";
  for (const auto& e : test) {
    real_test.images.push_back(e.image);
    real_test.labels.push_back(static_cast<int>(
        std::find(manifest.class_names.begin(), manifest.class_names.end(),
                  e.class_name) -
        manifest.class_names.begin()));
  }

  Rng rng(pl.cfg.seed);
  CaptionGenerator gen_fn = [&](const std::string& cap) {
    return generate_image(pl, cap, rng);
  };
  ClassifierConfig ccfg = pl.cfg.classifier;
  ccfg.num_classes = static_cast<int>(manifest.class_names.size());
  // Classifier training data is generated from the train-split captions;
  // real test images are only ever used for the final accuracy.
  auto report =
      zeroshot_pipeline(gen_fn, split_captions(train), real_test, ccfg);

  std::vector<std::string> lines = {
      repro_header(pl.cfg), "oa " + std::to_string(report.oa)};
  for (const auto& [name, acc] : report.per_class)
    lines.push_back("per_class." + name + " " + std::to_string(acc));
  lines.push_back("skipped " + std::to_string(report.skipped));
  lines.push_back("n_train_generated " +
                  std::to_string(report.n_train_generated));
  lines.push_back("n_test_real " + std::to_string(report.n_test_real));
  write_text_file(out_path, lines);
  for (const auto& l : lines) std::cout << l << "\n";
  return 0;
}

int run_inspect(const CommonOpts& copts, const std::string& gen_path, int top,
                const std::string& out_path) {
  RunConfig cfg = load_config(copts);
  auto params = GeneratorParams::load_from(
      load_checkpoint_or_hint(gen_path, "train-mhn"), cfg.gen);
  auto report = inspect_prototypes(params, top);
  std::vector<std::string> lines = {repro_header(cfg)};
  for (size_t pr = 0; pr < report.size(); ++pr) {
    std::string line = "prototype " + std::to_string(pr) + ":";
    for (const auto& [id, w] : report[pr])
      line += " " + std::to_string(id) + ":" + std::to_string(w);
    lines.push_back(line);
  }
  if (out_path.empty())
    for (const auto& l : lines) std::cout << l << "\n";
  else
    write_text_file(out_path, lines);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"text-to-image pipeline: tokenizers, generator, evaluation"};
  app.require_subcommand(1);

  // make-blobs
  auto* mk = app.add_subcommand("make-blobs", "write the synthetic dataset");
  std::string mk_out;
  BlobWorldConfig bw;
  mk->add_option("--out", mk_out, "output directory")->required();
  mk->add_option("--classes", bw.num_classes, "number of classes (3-6)");
  mk->add_option("--size", bw.image_size, "image side length");
  mk->add_option("--train-per-class", bw.train_per_class);
  mk->add_option("--test-per-class", bw.test_per_class);
  mk->add_option("--seed", bw.seed);

  // bpe-train
  auto* bpe = app.add_subcommand("bpe-train", "train the text tokenizer");
  CommonOpts bpe_c;
  std::string bpe_manifest, bpe_out;
  add_common(bpe, bpe_c);
  bpe->add_option("--manifest", bpe_manifest, "dataset manifest")->required();
  bpe->add_option("--out", bpe_out, "vocabulary output path")->required();

  // train-vqvae
  auto* tvq = app.add_subcommand("train-vqvae", "train the image tokenizer");
  CommonOpts tvq_c;
  std::string tvq_manifest, tvq_out;
  add_common(tvq, tvq_c);
  tvq->add_option("--manifest", tvq_manifest, "dataset manifest")->required();
  tvq->add_option("--out", tvq_out, "checkpoint output path")->required();

  // train-mhn
  auto* tg = app.add_subcommand("train-mhn", "train the generator");
  CommonOpts tg_c;
  std::string tg_manifest, tg_vocab, tg_vq, tg_out;
  add_common(tg, tg_c);
  tg->add_option("--manifest", tg_manifest, "dataset manifest")->required();
  tg->add_option("--vocab", tg_vocab, "trained vocabulary")->required();
  tg->add_option("--vq-checkpoint", tg_vq, "trained VQ checkpoint")->required();
  tg->add_option("--out", tg_out, "checkpoint output path")->required();

  // generate
  auto* gen = app.add_subcommand("generate", "generate images from prompts");
  CommonOpts gen_c;
  std::string gen_vocab, gen_ckpt, gen_vq, gen_out, gen_mode, gen_pfile;
  std::vector<std::string> gen_prompts;
  float gen_temp = 0;
  int gen_topk = 0;
  add_common(gen, gen_c);
  gen->add_option("--vocab", gen_vocab)->required();
  gen->add_option("--checkpoint", gen_ckpt, "generator checkpoint")->required();
  gen->add_option("--vq-checkpoint", gen_vq)->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--prompt", gen_prompts, "prompt (repeatable)");
  gen->add_option("--prompts", gen_pfile, "file with one prompt per line");
  gen->add_option("--mode", gen_mode, "greedy or sample");
  gen->add_option("--temperature", gen_temp);
  gen->add_option("--top-k", gen_topk);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score generations (IS/FID)");
  CommonOpts ev_c;
  std::string ev_manifest, ev_vocab, ev_ckpt, ev_vq, ev_out;
  add_common(ev, ev_c);
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--vocab", ev_vocab)->required();
  ev->add_option("--checkpoint", ev_ckpt, "generator checkpoint")->required();
  ev->add_option("--vq-checkpoint", ev_vq)->required();
  ev->add_option("--out", ev_out, "metrics report path")->required();

  // zeroshot
  auto* zs = app.add_subcommand("zeroshot", "zero-shot classification OA");
  CommonOpts zs_c;
  std::string zs_manifest, zs_vocab, zs_ckpt, zs_vq, zs_out;
  add_common(zs, zs_c);
  zs->add_option("--manifest", zs_manifest)->required();
  zs->add_option("--vocab", zs_vocab)->required();
  zs->add_option("--checkpoint", zs_ckpt, "generator checkpoint")->required();
  zs->add_option("--vq-checkpoint", zs_vq)->required();
  zs->add_option("--out", zs_out, "OA report path")->required();

  // inspect-prototypes
  auto* ip = app.add_subcommand("inspect-prototypes",
                                "top codewords per prototype");
  CommonOpts ip_c;
  std::string ip_ckpt, ip_out;
  int ip_top = 20;
  add_common(ip, ip_c);
  ip->add_option("--checkpoint", ip_ckpt, "generator checkpoint")->required();
  ip->add_option("--top", ip_top, "entries per prototype");
  ip->add_option("--out", ip_out, "report path (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (mk->parsed()) return run_make_blobs(mk_out, bw);
    if (bpe->parsed()) return run_bpe_train(bpe_c, bpe_manifest, bpe_out);
    if (tvq->parsed()) return run_train_vqvae(tvq_c, tvq_manifest, tvq_out);
    if (tg->parsed())
      return run_train_mhn(tg_c, tg_manifest, tg_vocab, tg_vq, tg_out);
    if (gen->parsed())
      return run_generate(gen_c, gen_vocab, gen_ckpt, gen_vq, gen_prompts,
                          gen_pfile, gen_out, gen_mode, gen_temp, gen_topk);
    if (ev->parsed())
      return run_evaluate(ev_c, ev_manifest, ev_vocab, ev_ckpt, ev_vq, ev_out);
    if (zs->parsed())
      return run_zeroshot(zs_c, zs_manifest, zs_vocab, zs_ckpt, zs_vq, zs_out);
    if (ip->parsed()) return run_inspect(ip_c, ip_ckpt, ip_top, ip_out);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {  // validation/contract errors
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
