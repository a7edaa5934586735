#pragma once

#include <vector>

#include "t2i/checkpoint.h"
#include "t2i/tensor.h"

namespace t2i {

struct ImageTokens {
  std::vector<int> ids;  // row-major over the token grid
  int grid_h = 0;
  int grid_w = 0;
};

struct VqConfig {
  int k = 32;          // codebook size
  int d = 16;          // codeword dimension
  int f = 8;           // downsampling factor, power of two
  // Channel widths of the stride-2 encoder stack; length must be log2(f).
  // The decoder mirrors this stack in reverse.
  std::vector<int> channels = {64, 128, 256};

  int num_stages() const;  // log2(f), validated
};

struct VqParams {
  VqConfig cfg;
  std::vector<Tensor> enc_w, enc_b;  // stride-2 conv stack
  Tensor proj_w, proj_b;             // 1x1 conv to k logits
  std::vector<Tensor> dec_w, dec_b;  // stride-2 transposed conv stack
  Tensor codebook;                   // [k x d]

  static VqParams init(const VqConfig& cfg, Rng& rng);
  std::vector<Tensor> parameters();

  void save_into(Checkpoint& cp) const;
  static VqParams load_from(const Checkpoint& cp);
};

// x: [B,3,H,W] in [0,1]; H,W divisible by f. Output: [B,k,H/f,W/f].
Tensor encode_logits(Tape* tape, const VqParams& p, const Tensor& x);

// Per-cell argmax over the k channel, ties to the lowest index;
// row-major flattening. One ImageTokens per batch element.
std::vector<ImageTokens> quantize(const Tensor& logits);

// [B,d,gh,gw] grid of copied codewords.
Tensor lookup_embedding(Tape* tape, const Tensor& codebook,
                        const std::vector<ImageTokens>& tokens);

// emb: [B,d,gh,gw] -> [B,3,H,W] in [0,1] (sigmoid squash).
Tensor decode(Tape* tape, const VqParams& p, const Tensor& emb);

// Mean over batch of (1/hw) * sum_{pixels} ||x'-x||^2 (channel sum).
Tensor recon_loss(Tape* tape, const Tensor& recon, const Tensor& target);

struct VqTrainConfig {
  int epochs = 1000;
  int batch = 256;
  float lr = 7e-4f;        // learning rates >= 1e-3 saturate the conv stack
  float lr_decay = 1.0f;   // multiplied in at each epoch
  float tau_start = 1.0f;  // softmax-relaxation temperature anneal
  float tau_end = 0.0625f;
  // Final fraction of steps trained with a hard one-hot forward pass
  // (straight-through gradients); closes the soft/hard gap at inference.
  float st_fraction = 0.4f;
  // Amplitude of the gumbel perturbation on the relaxation logits.
  float noise_scale = 0.0f;
  uint64_t seed = 1;
};

// Differentiable training forward: temperature-tau softmax mixture over the
// codebook instead of the hard argmax, optionally perturbed by gumbel noise.
// With straight_through=true the forward pass uses the hard one-hot row
// while gradients flow through the soft mixture. Returns the reconstruction.
Tensor vq_train_forward(Tape* tape, const VqParams& p, const Tensor& x,
                        float tau, Rng& rng, bool straight_through = false,
                        float noise_scale = 1.0f);

// Hard-path inference: encode -> argmax tokens per image.
std::vector<ImageTokens> tokenize_images(const VqParams& p, const Tensor& x);
// Tokens -> decoded images [B,3,H,W].
Tensor detokenize_images(const VqParams& p,
                         const std::vector<ImageTokens>& tokens);

// Returns per-epoch mean loss history.
std::vector<float> train_vqvae(VqParams& p, const std::vector<Tensor>& images,
                               const VqTrainConfig& cfg);

}  // namespace t2i
