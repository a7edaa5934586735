#pragma once

#include <utility>
#include <vector>

#include "t2i/checkpoint.h"
#include "t2i/tensor.h"

namespace t2i {

struct GeneratorConfig {
  int text_vocab = 2048;
  int k = 32;        // image token vocabulary
  int n = 8;         // text sequence length
  int m = 16;        // image sequence length
  int d_emb = 64;
  int num_blocks = 2;
  int n_pro = 32;
  // Residual connections + layer normalization around each sublayer;
  // switch off for the literal stacked formulation.
  bool residual = true;
  bool layer_norm = true;
  // Eq-literal attention reuses the key projection as the value
  // projection; enabling this adds a separate value matrix instead.
  bool separate_value = false;

  float beta() const;  // always 1/sqrt(d_emb)
};

struct PrototypeBlockParams {
  Tensor w_lookup;   // [n_pro x d_emb]
  Tensor w_content;  // [n_pro x d_emb]
  Tensor w_q;        // [d_emb x d_emb]
  Tensor w_k;        // [d_emb x d_emb]
  Tensor w_v;        // only when separate_value
};

struct GeneratorParams {
  GeneratorConfig cfg;
  Tensor txt_emb;  // [text_vocab x d_emb]
  Tensor img_emb;  // [k x d_emb]
  Tensor pos_emb;  // [(n+m) x d_emb]
  std::vector<PrototypeBlockParams> blocks;
  Tensor final_lookup;   // [n_pro x d_emb]
  Tensor final_content;  // [n_pro x k]

  static GeneratorParams init(const GeneratorConfig& cfg, Rng& rng);
  std::vector<Tensor> parameters();

  void save_into(Checkpoint& cp) const;
  static GeneratorParams load_from(const Checkpoint& cp,
                                   const GeneratorConfig& cfg);
};

// Ground-truth token sequence: n text ids then m image ids.
struct JointSequence {
  std::vector<int> ids;
  int split = 0;  // = n
};

// Embeds an input sequence of length L (n text positions, then image
// positions): table lookup plus the learned positional vector.
Tensor embed_joint(Tape* tape, const GeneratorParams& p,
                   const std::vector<int>& input_ids);

// Eq-style prototype mixture: softmax(beta * X W_lookup^T) W_content.
Tensor hopfield_layer(Tape* tape, const Tensor& x, const Tensor& w_lookup,
                      const Tensor& w_content, float beta);

// softmax(beta * X Wq Wk^T X^T) X Wk (value = X Wv when w_v is defined).
// Masking: text positions attend among themselves; image position j
// attends to all text and to image positions <= j.
Tensor self_attention(Tape* tape, const Tensor& x, const Tensor& w_q,
                      const Tensor& w_k, const Tensor& w_v, float beta,
                      bool causal_mask, int text_len);

// Teacher-forcing forward over the full sequence. Internally the image
// segment is shifted right behind a start token (id 0), so logit row
// n+i-1 scores image token i against the k-way vocabulary without ever
// seeing it. Output: [(n+m) x k].
Tensor forward_logits(Tape* tape, const GeneratorParams& p,
                      const JointSequence& seq);

// Forward over a generation prefix: text plus j already-emitted image
// tokens; returns logits for all n+j+1 input positions.
Tensor forward_logits_prefix(Tape* tape, const GeneratorParams& p,
                             const std::vector<int>& text_ids,
                             const std::vector<int>& image_prefix);

// Cross-entropy over the m image positions of one sequence (scalar sum).
Tensor sequence_loss(Tape* tape, const GeneratorParams& p,
                     const JointSequence& seq);

// One optimizer step over a batch; returns the mean per-sequence loss.
float train_step(GeneratorParams& p, const std::vector<JointSequence>& batch,
                 Adam& opt);

struct DecodeOptions {
  bool greedy = true;
  float temperature = 1.0f;
  int top_k = 64;
};

std::vector<int> generate(const GeneratorParams& p,
                          const std::vector<int>& text_ids,
                          const DecodeOptions& opts, Rng& rng);

// Per prototype: the `top` strongest codeword entries of the final
// content matrix, sorted by descending weight (ties by lower id).
std::vector<std::vector<std::pair<int, float>>> inspect_prototypes(
    const GeneratorParams& p, int top);

}  // namespace t2i
