#include "t2i/vqvae.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace t2i {

namespace {

Tensor uniform_fanin(std::vector<int> shape, int fan_in, Rng& rng) {
  float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
}

Tensor batch_of(const std::vector<Tensor>& images,
                const std::vector<int>& idx) {
  int h = images[idx[0]].dim(1), w = images[idx[0]].dim(2);
  Tensor x = Tensor::zeros({static_cast<int>(idx.size()), 3, h, w});
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& img = images[idx[i]];
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != h || img.dim(2) != w)
      throw DimensionError("train_vqvae: images must share shape [3,H,W]");
    std::copy(img.data().begin(), img.data().end(),
              x.data().begin() + static_cast<int64_t>(i) * 3 * h * w);
  }
  return x;
}

}  // namespace

int VqConfig::num_stages() const {
  int stages = 0, v = f;
  while (v > 1 && v % 2 == 0) {
    v /= 2;
    ++stages;
  }
  if (v != 1 || stages < 1)
    throw InputError("vq config: downsampling factor must be a power of two");
  if (static_cast<int>(channels.size()) != stages)
    throw InputError("vq config: channels length must equal log2(f)");
  return stages;
}

VqParams VqParams::init(const VqConfig& cfg, Rng& rng) {
  int stages = cfg.num_stages();
  VqParams p;
  p.cfg = cfg;
  int in_c = 3;
  for (int s = 0; s < stages; ++s) {
    int out_c = cfg.channels[s];
    p.enc_w.push_back(uniform_fanin({out_c, in_c, 4, 4}, in_c * 16, rng));
    p.enc_b.push_back(Tensor::zeros({out_c}, true));
    in_c = out_c;
  }
  p.proj_w = uniform_fanin({cfg.k, in_c, 1, 1}, in_c, rng);
  p.proj_b = Tensor::zeros({cfg.k}, true);
  in_c = cfg.d;
  for (int s = stages - 1; s >= 0; --s) {
    int out_c = (s == 0) ? 3 : cfg.channels[s - 1];
    p.dec_w.push_back(uniform_fanin({in_c, out_c, 4, 4}, in_c * 16, rng));
    p.dec_b.push_back(Tensor::zeros({out_c}, true));
    in_c = out_c;
  }
  // A wide codebook init keeps the quantized latent informative from the
  // first step; with a near-zero init the decoder can fit the batch mean
  // through its biases alone and the encoder path never receives gradient.
  p.codebook = Tensor::normal({cfg.k, cfg.d}, rng, 0.0f, 0.5f, true);
  return p;
}

std::vector<Tensor> VqParams::parameters() {
  std::vector<Tensor> out;
  for (auto& t : enc_w) out.push_back(t);
  for (auto& t : enc_b) out.push_back(t);
  out.push_back(proj_w);
  out.push_back(proj_b);
  for (auto& t : dec_w) out.push_back(t);
  for (auto& t : dec_b) out.push_back(t);
  out.push_back(codebook);
  return out;
}

void VqParams::save_into(Checkpoint& cp) const {
  for (size_t i = 0; i < enc_w.size(); ++i) {
    cp.put("enc." + std::to_string(i) + ".w", enc_w[i]);
    cp.put("enc." + std::to_string(i) + ".b", enc_b[i]);
  }
  cp.put("enc.proj.w", proj_w);
  cp.put("enc.proj.b", proj_b);
  for (size_t i = 0; i < dec_w.size(); ++i) {
    cp.put("dec." + std::to_string(i) + ".w", dec_w[i]);
    cp.put("dec." + std::to_string(i) + ".b", dec_b[i]);
  }
  cp.put("codebook", codebook);
}

VqParams VqParams::load_from(const Checkpoint& cp) {
  cp.require({"enc.0.w", "enc.proj.w", "dec.0.w", "codebook"}, "VQ");
  VqParams p;
  p.codebook = cp.get("codebook");
  p.cfg.k = p.codebook.dim(0);
  p.cfg.d = p.codebook.dim(1);
  for (int i = 0; cp.has("enc." + std::to_string(i) + ".w"); ++i) {
    p.enc_w.push_back(cp.get("enc." + std::to_string(i) + ".w"));
    p.enc_b.push_back(cp.get("enc." + std::to_string(i) + ".b"));
  }
  p.proj_w = cp.get("enc.proj.w");
  p.proj_b = cp.get("enc.proj.b");
  for (int i = 0; cp.has("dec." + std::to_string(i) + ".w"); ++i) {
    p.dec_w.push_back(cp.get("dec." + std::to_string(i) + ".w"));
    p.dec_b.push_back(cp.get("dec." + std::to_string(i) + ".b"));
  }
  p.cfg.f = 1 << static_cast<int>(p.enc_w.size());
  p.cfg.channels.clear();
  for (const auto& w : p.enc_w) p.cfg.channels.push_back(w.dim(0));
  for (auto& t : p.enc_w) t.set_requires_grad(true);
  for (auto& t : p.enc_b) t.set_requires_grad(true);
  for (auto& t : p.dec_w) t.set_requires_grad(true);
  for (auto& t : p.dec_b) t.set_requires_grad(true);
  p.proj_w.set_requires_grad(true);
  p.proj_b.set_requires_grad(true);
  p.codebook.set_requires_grad(true);
  return p;
}

Tensor encode_logits(Tape* tape, const VqParams& p, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw DimensionError("encode_logits: expects [B,3,H,W]");
  if (x.dim(2) % p.cfg.f != 0 || x.dim(3) % p.cfg.f != 0)
    throw InputError("encode_logits: H and W must be divisible by f=" +
                     std::to_string(p.cfg.f));
  Tensor h = x;
  for (size_t s = 0; s < p.enc_w.size(); ++s) {
    h = conv2d(tape, h, p.enc_w[s], p.enc_b[s], 2, 1);
    h = relu(tape, h);
  }
  return conv2d(tape, h, p.proj_w, p.proj_b, 1, 0);
}

std::vector<ImageTokens> quantize(const Tensor& logits) {
  if (logits.rank() != 4) throw DimensionError("quantize: expects [B,k,h,w]");
  int B = logits.dim(0), k = logits.dim(1), gh = logits.dim(2),
      gw = logits.dim(3);
  std::vector<ImageTokens> out(B);
  for (int b = 0; b < B; ++b) {
    out[b].grid_h = gh;
    out[b].grid_w = gw;
    out[b].ids.resize(static_cast<size_t>(gh) * gw);
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        int best = 0;
        float bv = logits.data()[((b * k + 0) * gh + y) * gw + x];
        for (int c = 1; c < k; ++c) {
          float v = logits.data()[((b * k + c) * gh + y) * gw + x];
          if (v > bv) {  // strict: ties keep the lowest index
            bv = v;
            best = c;
          }
        }
        out[b].ids[y * gw + x] = best;
      }
  }
  return out;
}

Tensor lookup_embedding(Tape* tape, const Tensor& codebook,
                        const std::vector<ImageTokens>& tokens) {
  if (codebook.rank() != 2) throw DimensionError("lookup_embedding: codebook");
  if (tokens.empty()) throw InputError("lookup_embedding: no tokens");
  int d = codebook.dim(1);
  int gh = tokens[0].grid_h, gw = tokens[0].grid_w;
  int B = static_cast<int>(tokens.size());
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(B) * gh * gw);
  for (const auto& t : tokens) ids.insert(ids.end(), t.ids.begin(), t.ids.end());
  // [B*gh*gw, d] rows, then to [B,d,gh,gw]
  Tensor rows = embedding_rows(tape, codebook, ids);
  Tensor grid = reshape(tape, rows, {B, gh, gw, d});
  return permute(tape, grid, {0, 3, 1, 2});
}

Tensor decode(Tape* tape, const VqParams& p, const Tensor& emb) {
  if (emb.rank() != 4 || emb.dim(1) != p.cfg.d)
    throw DimensionError("decode: expects [B,d,h,w] with d=" +
                         std::to_string(p.cfg.d));
  Tensor h = emb;
  for (size_t s = 0; s < p.dec_w.size(); ++s) {
    h = conv_transpose2d(tape, h, p.dec_w[s], p.dec_b[s], 2, 1);
    if (s + 1 < p.dec_w.size()) h = relu(tape, h);
  }
  return sigmoid(tape, h);
}

Tensor recon_loss(Tape* tape, const Tensor& recon, const Tensor& target) {
  if (recon.shape() != target.shape())
    throw DimensionError("recon_loss: shape mismatch");
  if (recon.rank() != 4) throw DimensionError("recon_loss: expects [B,3,H,W]");
  int B = recon.dim(0), hw = recon.dim(2) * recon.dim(3);
  Tensor diff = sub(tape, recon, target);
  Tensor sq = mul(tape, diff, diff);
  Tensor total = sum(tape, sq);
  return scale(tape, total, 1.0f / (static_cast<float>(hw) * B));
}

Tensor vq_train_forward(Tape* tape, const VqParams& p, const Tensor& x,
                        float tau, Rng& rng, bool straight_through,
                        float noise_scale) {
  Tensor logits = encode_logits(tape, p, x);
  int B = logits.dim(0), k = logits.dim(1), gh = logits.dim(2),
      gw = logits.dim(3);
  int rows = B * gh * gw;
  Tensor cellwise = permute(tape, logits, {0, 2, 3, 1});
  Tensor flat = reshape(tape, cellwise, {rows, k});
  Tensor perturbed = flat;
  if (noise_scale != 0.0f) {
    Tensor noise = Tensor::zeros({rows, k});
    for (auto& v : noise.data()) v = noise_scale * rng.gumbel();
    perturbed = add(tape, flat, noise);
  }
  Tensor soft = softmax_rows(tape, scale(tape, perturbed, 1.0f / tau));
  Tensor mix = soft;
  if (straight_through) {
    // Forward with the hard one-hot row; the added delta carries no
    // gradient, so backward sees only the soft mixture.
    Tensor delta = Tensor::zeros({rows, k});
    for (int r = 0; r < rows; ++r) {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (perturbed.data()[r * k + c] > perturbed.data()[r * k + best])
          best = c;
      for (int c = 0; c < k; ++c)
        delta.data()[r * k + c] =
            (c == best ? 1.0f : 0.0f) - soft.data()[r * k + c];
    }
    mix = add(tape, soft, delta);
  }
  Tensor emb_rows = matmul(tape, mix, p.codebook);
  Tensor grid = reshape(tape, emb_rows, {B, gh, gw, p.cfg.d});
  Tensor emb = permute(tape, grid, {0, 3, 1, 2});
  return decode(tape, p, emb);
}

std::vector<ImageTokens> tokenize_images(const VqParams& p, const Tensor& x) {
  return quantize(encode_logits(nullptr, p, x));
}

Tensor detokenize_images(const VqParams& p,
                         const std::vector<ImageTokens>& tokens) {
  return decode(nullptr, p, lookup_embedding(nullptr, p.codebook, tokens));
}

std::vector<float> train_vqvae(VqParams& p, const std::vector<Tensor>& images,
                               const VqTrainConfig& cfg) {
  if (images.empty()) throw InputError("train_vqvae: empty dataset");
  Rng rng(cfg.seed);
  Adam opt(p.parameters(), cfg.lr);
  int n = static_cast<int>(images.size());
  int batch = std::min(cfg.batch, n);
  int steps_per_epoch = (n + batch - 1) / batch;
  int64_t total_steps = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
  std::vector<float> history;
  history.reserve(cfg.epochs);
  int64_t step = 0;
  float lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // deterministic shuffle from the run RNG
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    double epoch_loss = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<int> idx(order.begin() + s * batch,
                           order.begin() + std::min<int>((s + 1) * batch, n));
      if (idx.empty()) break;
      Tensor x = batch_of(images, idx);
      // Phase 1: annealed soft relaxation; phase 2 (final st_fraction of
      // the run): hard forward with straight-through gradients at tau_end.
      int64_t soft_steps = total_steps -
                           static_cast<int64_t>(std::llround(
                               cfg.st_fraction * static_cast<double>(total_steps)));
      bool straight_through = step >= soft_steps;
      float tau = cfg.tau_end;
      if (!straight_through) {
        double frac = soft_steps > 1
                          ? static_cast<double>(step) / (soft_steps - 1)
                          : 1.0;
        tau = static_cast<float>(
            cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, frac));
      }
      Tape tape;
      Tensor recon = vq_train_forward(&tape, p, x, tau, rng, straight_through,
                                      cfg.noise_scale);
      Tensor loss = recon_loss(&tape, recon, x);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      epoch_loss += loss.item();
      ++step;
    }
    history.push_back(static_cast<float>(epoch_loss / steps_per_epoch));
    lr *= cfg.lr_decay;
    opt.set_lr(lr);
  }
  return history;
}

}  // namespace t2i
