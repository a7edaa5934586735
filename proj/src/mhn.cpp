#include "t2i/mhn.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace t2i {

namespace {

Tensor uniform_fanin(std::vector<int> shape, int fan_in, Rng& rng) {
  float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
}

std::vector<uint8_t> causal_mask(int len, int text_len) {
  std::vector<uint8_t> allowed(static_cast<size_t>(len) * len, 0);
  for (int p = 0; p < len; ++p)
    for (int q = 0; q < len; ++q) {
      bool ok = (p < text_len) ? (q < text_len) : (q <= p);
      allowed[p * len + q] = ok ? 1 : 0;
    }
  return allowed;
}

// Input embedding sequence for teacher forcing / generation: the image
// segment is [start=0, i_1 .. i_{j-1}] so position n+j-1 predicts i_j.
std::vector<int> shifted_input(const std::vector<int>& text_ids,
                               const std::vector<int>& image_ids,
                               bool drop_last) {
  std::vector<int> input = text_ids;
  input.push_back(0);  // start-of-image token
  size_t take = image_ids.size() - (drop_last && !image_ids.empty() ? 1 : 0);
  input.insert(input.end(), image_ids.begin(), image_ids.begin() + take);
  return input;
}

Tensor run_stack(Tape* tape, const GeneratorParams& p,
                 const std::vector<int>& input_ids) {
  const auto& cfg = p.cfg;
  float beta = cfg.beta();
  int len = static_cast<int>(input_ids.size());
  Tensor x = embed_joint(tape, p, input_ids);
  auto sub_in = [&](const Tensor& h) {
    return cfg.layer_norm ? layer_norm_rows(tape, h) : h;
  };
  for (const auto& blk : p.blocks) {
    Tensor h = hopfield_layer(tape, sub_in(x), blk.w_lookup, blk.w_content,
                              beta);
    x = cfg.residual ? add(tape, x, h) : h;
    Tensor a = self_attention(tape, sub_in(x), blk.w_q, blk.w_k, blk.w_v, beta,
                              /*causal_mask=*/true, cfg.n);
    x = cfg.residual ? add(tape, x, a) : a;
  }
  (void)len;
  return hopfield_layer(tape, sub_in(x), p.final_lookup, p.final_content,
                        beta);
}

}  // namespace

float GeneratorConfig::beta() const {
  return 1.0f / std::sqrt(static_cast<float>(d_emb));
}

GeneratorParams GeneratorParams::init(const GeneratorConfig& cfg, Rng& rng) {
  GeneratorParams p;
  p.cfg = cfg;
  p.txt_emb = Tensor::normal({cfg.text_vocab, cfg.d_emb}, rng, 0.0f, 0.02f,
                             true);
  p.img_emb = Tensor::normal({cfg.k, cfg.d_emb}, rng, 0.0f, 0.02f, true);
  p.pos_emb = Tensor::normal({cfg.n + cfg.m, cfg.d_emb}, rng, 0.0f, 0.02f,
                             true);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    PrototypeBlockParams blk;
    blk.w_lookup = uniform_fanin({cfg.n_pro, cfg.d_emb}, cfg.d_emb, rng);
    blk.w_content = uniform_fanin({cfg.n_pro, cfg.d_emb}, cfg.n_pro, rng);
    blk.w_q = uniform_fanin({cfg.d_emb, cfg.d_emb}, cfg.d_emb, rng);
    blk.w_k = uniform_fanin({cfg.d_emb, cfg.d_emb}, cfg.d_emb, rng);
    if (cfg.separate_value)
      blk.w_v = uniform_fanin({cfg.d_emb, cfg.d_emb}, cfg.d_emb, rng);
    p.blocks.push_back(std::move(blk));
  }
  p.final_lookup = uniform_fanin({cfg.n_pro, cfg.d_emb}, cfg.d_emb, rng);
  p.final_content = uniform_fanin({cfg.n_pro, cfg.k}, cfg.n_pro, rng);
  return p;
}

std::vector<Tensor> GeneratorParams::parameters() {
  std::vector<Tensor> out = {txt_emb, img_emb, pos_emb};
  for (auto& blk : blocks) {
    out.push_back(blk.w_lookup);
    out.push_back(blk.w_content);
    out.push_back(blk.w_q);
    out.push_back(blk.w_k);
    if (blk.w_v.defined()) out.push_back(blk.w_v);
  }
  out.push_back(final_lookup);
  out.push_back(final_content);
  return out;
}

void GeneratorParams::save_into(Checkpoint& cp) const {
  cp.put("txtemb", txt_emb);
  cp.put("imgemb", img_emb);
  cp.put("posemb", pos_emb);
  for (size_t i = 0; i < blocks.size(); ++i) {
    std::string pre = "block" + std::to_string(i) + ".";
    cp.put(pre + "wl", blocks[i].w_lookup);
    cp.put(pre + "wc", blocks[i].w_content);
    cp.put(pre + "wq", blocks[i].w_q);
    cp.put(pre + "wk", blocks[i].w_k);
    if (blocks[i].w_v.defined()) cp.put(pre + "wv", blocks[i].w_v);
  }
  cp.put("final.wl", final_lookup);
  cp.put("final.wc", final_content);
}

GeneratorParams GeneratorParams::load_from(const Checkpoint& cp,
                                           const GeneratorConfig& cfg) {
  cp.require({"txtemb", "imgemb", "posemb", "block0.wl", "final.wl",
              "final.wc"},
             "generator");
  GeneratorParams p;
  p.cfg = cfg;
  p.txt_emb = cp.get("txtemb");
  p.img_emb = cp.get("imgemb");
  p.pos_emb = cp.get("posemb");
  p.cfg.text_vocab = p.txt_emb.dim(0);
  p.cfg.d_emb = p.txt_emb.dim(1);
  p.cfg.k = p.img_emb.dim(0);
  for (int i = 0; cp.has("block" + std::to_string(i) + ".wl"); ++i) {
    std::string pre = "block" + std::to_string(i) + ".";
    PrototypeBlockParams blk;
    blk.w_lookup = cp.get(pre + "wl");
    blk.w_content = cp.get(pre + "wc");
    blk.w_q = cp.get(pre + "wq");
    blk.w_k = cp.get(pre + "wk");
    if (cp.has(pre + "wv")) blk.w_v = cp.get(pre + "wv");
    p.blocks.push_back(std::move(blk));
  }
  p.cfg.num_blocks = static_cast<int>(p.blocks.size());
  p.final_lookup = cp.get("final.wl");
  p.final_content = cp.get("final.wc");
  p.cfg.n_pro = p.final_lookup.dim(0);
  p.cfg.separate_value = p.blocks.empty() ? false : p.blocks[0].w_v.defined();
  for (auto& t : p.parameters()) t.set_requires_grad(true);
  return p;
}

Tensor embed_joint(Tape* tape, const GeneratorParams& p,
                   const std::vector<int>& input_ids) {
  const auto& cfg = p.cfg;
  int len = static_cast<int>(input_ids.size());
  if (len > cfg.n + cfg.m)
    throw DimensionError("embed_joint: sequence longer than n+m");
  std::vector<int> text_part, image_part, positions(len);
  std::iota(positions.begin(), positions.end(), 0);
  for (int i = 0; i < len; ++i)
    (i < cfg.n ? text_part : image_part).push_back(input_ids[i]);
  Tensor tok;
  if (image_part.empty()) {
    tok = embedding_rows(tape, p.txt_emb, text_part);
  } else if (text_part.empty()) {
    tok = embedding_rows(tape, p.img_emb, image_part);
  } else {
    tok = concat_rows(tape, embedding_rows(tape, p.txt_emb, text_part),
                      embedding_rows(tape, p.img_emb, image_part));
  }
  Tensor pos = embedding_rows(tape, p.pos_emb, positions);
  return add(tape, tok, pos);
}

Tensor hopfield_layer(Tape* tape, const Tensor& x, const Tensor& w_lookup,
                      const Tensor& w_content, float beta) {
  if (x.rank() != 2 || w_lookup.rank() != 2 || x.dim(1) != w_lookup.dim(1))
    throw DimensionError("hopfield_layer: X/W_lookup width mismatch");
  if (w_content.dim(0) != w_lookup.dim(0))
    throw DimensionError("hopfield_layer: prototype count mismatch");
  Tensor scores = scale(tape, matmul(tape, x, transpose(tape, w_lookup)), beta);
  Tensor mixture = softmax_rows(tape, scores);
  return matmul(tape, mixture, w_content);
}

Tensor self_attention(Tape* tape, const Tensor& x, const Tensor& w_q,
                      const Tensor& w_k, const Tensor& w_v, float beta,
                      bool causal, int text_len) {
  if (x.rank() != 2 || x.dim(1) != w_q.dim(0) || x.dim(1) != w_k.dim(0))
    throw DimensionError("self_attention: X/W width mismatch");
  int len = x.dim(0);
  Tensor q = matmul(tape, x, w_q);
  Tensor kmat = matmul(tape, x, w_k);
  Tensor scores = scale(tape, matmul(tape, q, transpose(tape, kmat)), beta);
  Tensor attn;
  if (causal) {
    attn = masked_softmax_rows(tape, scores, causal_mask(len, text_len));
  } else {
    attn = softmax_rows(tape, scores);
  }
  Tensor values = w_v.defined() ? matmul(tape, x, w_v) : kmat;
  return matmul(tape, attn, values);
}

Tensor forward_logits(Tape* tape, const GeneratorParams& p,
                      const JointSequence& seq) {
  const auto& cfg = p.cfg;
  if (static_cast<int>(seq.ids.size()) != cfg.n + cfg.m ||
      seq.split != cfg.n)
    throw DimensionError("forward_logits: sequence must hold n+m ids");
  std::vector<int> text(seq.ids.begin(), seq.ids.begin() + cfg.n);
  std::vector<int> image(seq.ids.begin() + cfg.n, seq.ids.end());
  return run_stack(tape, p, shifted_input(text, image, /*drop_last=*/true));
}

Tensor forward_logits_prefix(Tape* tape, const GeneratorParams& p,
                             const std::vector<int>& text_ids,
                             const std::vector<int>& image_prefix) {
  if (static_cast<int>(text_ids.size()) != p.cfg.n)
    throw DimensionError("forward_logits_prefix: expected n text ids");
  if (static_cast<int>(image_prefix.size()) >= p.cfg.m)
    throw DimensionError("forward_logits_prefix: prefix already complete");
  return run_stack(tape, p,
                   shifted_input(text_ids, image_prefix, /*drop_last=*/false));
}

Tensor sequence_loss(Tape* tape, const GeneratorParams& p,
                     const JointSequence& seq) {
  Tensor logits = forward_logits(tape, p, seq);
  Tensor image_logits =
      slice_rows(tape, logits, p.cfg.n, p.cfg.n + p.cfg.m);
  std::vector<int> targets(seq.ids.begin() + p.cfg.n, seq.ids.end());
  return cross_entropy(tape, image_logits, targets);
}

float train_step(GeneratorParams& p, const std::vector<JointSequence>& batch,
                 Adam& opt) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  Tape tape;
  Tensor total;
  for (const auto& seq : batch) {
    Tensor l = sequence_loss(&tape, p, seq);
    total = total.defined() ? add(&tape, total, l) : l;
  }
  Tensor loss = scale(&tape, total, 1.0f / static_cast<float>(batch.size()));
  opt.zero_grad();
  tape.backward(loss);
  opt.step();
  return loss.item();
}

std::vector<int> generate(const GeneratorParams& p,
                          const std::vector<int>& text_ids,
                          const DecodeOptions& opts, Rng& rng) {
  const auto& cfg = p.cfg;
  std::vector<int> out;
  out.reserve(cfg.m);
  for (int j = 0; j < cfg.m; ++j) {
    Tensor logits = forward_logits_prefix(nullptr, p, text_ids, out);
    int row = cfg.n + j;  // last input position
    const float* lp = logits.data().data() + static_cast<int64_t>(row) * cfg.k;
    int pick = 0;
    if (opts.greedy) {
      for (int c = 1; c < cfg.k; ++c)
        if (lp[c] > lp[pick]) pick = c;
    } else {
      // temperature-scaled top-k categorical draw
      int kk = std::min(std::max(opts.top_k, 1), cfg.k);
      std::vector<int> idx(cfg.k);
      std::iota(idx.begin(), idx.end(), 0);
      std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(),
                        [&](int a, int b) {
                          if (lp[a] != lp[b]) return lp[a] > lp[b];
                          return a < b;
                        });
      float temp = std::max(opts.temperature, 1e-4f);
      double mx = lp[idx[0]];
      std::vector<double> w(kk);
      double tot = 0.0;
      for (int i = 0; i < kk; ++i) {
        w[i] = std::exp((lp[idx[i]] - mx) / temp);
        tot += w[i];
      }
      double u = rng.next_double() * tot;
      pick = idx[kk - 1];
      double acc = 0.0;
      for (int i = 0; i < kk; ++i) {
        acc += w[i];
        if (u < acc) {
          pick = idx[i];
          break;
        }
      }
    }
    out.push_back(pick);
  }
  return out;
}

std::vector<std::vector<std::pair<int, float>>> inspect_prototypes(
    const GeneratorParams& p, int top) {
  int k = p.final_content.dim(1);
  if (top < 1 || top > k)
    throw InputError("inspect_prototypes: top must be in [1,k]");
  int n_pro = p.final_content.dim(0);
  std::vector<std::vector<std::pair<int, float>>> out(n_pro);
  for (int r = 0; r < n_pro; ++r) {
    const float* row = p.final_content.data().data() + static_cast<int64_t>(r) * k;
    std::vector<int> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + top, idx.end(),
                      [&](int a, int b) {
                        if (row[a] != row[b]) return row[a] > row[b];
                        return a < b;
                      });
    for (int i = 0; i < top; ++i) out[r].emplace_back(idx[i], row[idx[i]]);
  }
  return out;
}

}  // namespace t2i
