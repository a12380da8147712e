#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sr2/errors.hpp"
#include "sr2/rng.hpp"
#include "sr2/tensor.hpp"

namespace sr2 {

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int seq_len = 16;
  int vocab_in = 5;
  int vocab_out = 5;
  int mlp_mult = 4;
  double init_scale = 1.0;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || seq_len < 1 || vocab_in < 1 ||
        vocab_out < 1 || mlp_mult < 1) {
      throw DimensionError("model config: all sizes must be >= 1");
    }
    if (d_model % n_heads != 0) {
      throw DimensionError("model config: d_model " + std::to_string(d_model) +
                           " not divisible by n_heads " + std::to_string(n_heads));
    }
  }

  int head_dim() const { return d_model / n_heads; }
  int mlp_dim() const { return d_model * mlp_mult; }
  double init_std() const { return init_scale / std::sqrt(double(d_model)); }
};

// Counts are pure functions of the config so model-size comparisons don't
// need an instantiated model.
inline std::int64_t block_param_count(const ModelConfig& c) {
  const std::int64_t d = c.d_model, m = c.mlp_dim();
  return 4 * d * d        // attention projections
         + d * m + m      // MLP up + bias
         + m * d + d      // MLP down + bias
         + 2 * d;         // two norm gains
}

inline std::int64_t io_param_count(const ModelConfig& c) {
  const std::int64_t d = c.d_model;
  return std::int64_t(c.vocab_in) * d + std::int64_t(c.seq_len) * d +
         d * c.vocab_out + c.vocab_out;
}

// The single shared block: attention and MLP weights plus pre-norm gains.
template <class T>
struct BlockParams {
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> gain1, gain2;

  static BlockParams init(const ModelConfig& c, Rng& rng) {
    c.validate();
    const double s = c.init_std();
    const int d = c.d_model, m = c.mlp_dim();
    BlockParams p;
    p.wq = Tensor<T>::trunc_normal({d, d}, rng, s, true);
    p.wk = Tensor<T>::trunc_normal({d, d}, rng, s, true);
    p.wv = Tensor<T>::trunc_normal({d, d}, rng, s, true);
    p.wo = Tensor<T>::trunc_normal({d, d}, rng, s, true);
    p.w1 = Tensor<T>::trunc_normal({d, m}, rng, s, true);
    p.b1 = Tensor<T>::zeros({m}, true);
    p.w2 = Tensor<T>::trunc_normal({m, d}, rng, s, true);
    p.b2 = Tensor<T>::zeros({d}, true);
    p.gain1 = Tensor<T>::full({d}, T(1), true);
    p.gain2 = Tensor<T>::full({d}, T(1), true);
    return p;
  }

  std::vector<Tensor<T>*> params() {
    return {&wq, &wk, &wv, &wo, &w1, &b1, &w2, &b2, &gain1, &gain2};
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_params(const std::string& prefix) {
    return {{prefix + ".wq", &wq}, {prefix + ".wk", &wk}, {prefix + ".wv", &wv},
            {prefix + ".wo", &wo}, {prefix + ".w1", &w1}, {prefix + ".b1", &b1},
            {prefix + ".w2", &w2}, {prefix + ".b2", &b2},
            {prefix + ".gain1", &gain1}, {prefix + ".gain2", &gain2}};
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (auto* t : const_cast<BlockParams*>(this)->params()) n += t->numel();
    return n;
  }
};

// Embeddings and the prediction head, outside the shared block.
template <class T>
struct IOParams {
  Tensor<T> embed;   // [vocab_in, d_model]
  Tensor<T> pos;     // [seq_len, d_model]
  Tensor<T> w_head;  // [d_model, vocab_out]
  Tensor<T> b_head;  // [vocab_out]

  static IOParams init(const ModelConfig& c, Rng& rng) {
    c.validate();
    const double s = c.init_std();
    IOParams io;
    io.embed = Tensor<T>::trunc_normal({c.vocab_in, c.d_model}, rng, s, true);
    io.pos = Tensor<T>::trunc_normal({c.seq_len, c.d_model}, rng, s, true);
    io.w_head = Tensor<T>::trunc_normal({c.d_model, c.vocab_out}, rng, s, true);
    io.b_head = Tensor<T>::zeros({c.vocab_out}, true);
    return io;
  }

  std::vector<Tensor<T>*> params() { return {&embed, &pos, &w_head, &b_head}; }

  std::vector<std::pair<std::string, Tensor<T>*>> named_params(const std::string& prefix) {
    return {{prefix + ".embed", &embed},
            {prefix + ".pos", &pos},
            {prefix + ".w_head", &w_head},
            {prefix + ".b_head", &b_head}};
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (auto* t : const_cast<IOParams*>(this)->params()) n += t->numel();
    return n;
  }
};

// Pre-norm residual block: h + Attn(norm(h)), then + MLP(norm(·)).
// Attention is full bidirectional multi-head over all positions.
template <class T>
Tensor<T> block_forward(const Tensor<T>& h, const BlockParams<T>& p,
                        const ModelConfig& c) {
  if (h.rank() != 3 || h.dim(2) != c.d_model) {
    throw DimensionError("block_forward: input " + shape_str(h.shape) +
                         " does not end in d_model " + std::to_string(c.d_model));
  }
  const int batch = h.dim(0), seq = h.dim(1);
  const int nh = c.n_heads, hd = c.head_dim();

  auto split_heads = [&](const Tensor<T>& x) {
    return permute(reshape(x, {batch, seq, nh, hd}), {0, 2, 1, 3});
  };

  Tensor<T> xn = rms_norm(h, p.gain1);
  Tensor<T> q = split_heads(matmul(xn, p.wq));
  Tensor<T> k = split_heads(matmul(xn, p.wk));
  Tensor<T> v = split_heads(matmul(xn, p.wv));

  Tensor<T> scores = scale(matmul(q, transpose_last2(k)),
                           static_cast<T>(1.0 / std::sqrt(double(hd))));
  Tensor<T> attn = softmax(scores, -1);
  Tensor<T> ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}),
                          {batch, seq, c.d_model});
  Tensor<T> h1 = add(h, matmul(ctx, p.wo));

  Tensor<T> mn = rms_norm(h1, p.gain2);
  Tensor<T> up = gelu(add_bias(matmul(mn, p.w1), p.b1));
  Tensor<T> down = add_bias(matmul(up, p.w2), p.b2);
  return add(h1, down);
}

// Token embedding plus learned absolute positions. tokens are row-major
// [batch, seq]; position information enters the computation only here.
template <class T>
Tensor<T> embed_input(const std::vector<int>& tokens, int batch,
                      const IOParams<T>& io) {
  const int seq = io.pos.dim(0);
  if (batch < 1 || static_cast<std::int64_t>(tokens.size()) !=
                       std::int64_t(batch) * seq) {
    throw DimensionError("embed_input: got " + std::to_string(tokens.size()) +
                         " tokens for batch " + std::to_string(batch) +
                         " x seq " + std::to_string(seq));
  }
  Tensor<T> e = embedding(io.embed, tokens, {batch, seq});
  return add_broadcast(e, io.pos);
}

// Injection rule: plain elementwise sum, so fusing with zero is exactly the
// identity and the same map serves both the injected and the input-free steps.
template <class T>
Tensor<T> reflect_fuse(const Tensor<T>& z, const Tensor<T>& x_emb) {
  return add(z, x_emb);
}

// Per-position affine map to logits; the loss applies the softmax.
template <class T>
Tensor<T> head(const Tensor<T>& z, const IOParams<T>& io) {
  return add_bias(matmul(z, io.w_head), io.b_head);
}

}  // namespace sr2
