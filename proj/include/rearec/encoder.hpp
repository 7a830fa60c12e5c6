#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rearec/errors.hpp"
#include "rearec/numeric/autograd.hpp"
#include "rearec/rng.hpp"

namespace rearec::encoder {

using numeric::Tensor;
using numeric::Value;

enum class MaskMode { kCausal, kPrefixBidirectional };

// Transformer encoder shape. Pre-layer-norm residual blocks, GeLU feed
// forward of width 4d, no final layer norm (a 0-layer stack is the identity
// on the input embeddings).
struct EncoderConfig {
  int d = 64;
  int layers = 2;
  int heads = 2;
  int n_max = 50;   // item positions
  int k_max = 2;    // reasoning positions
  MaskMode mask_mode = MaskMode::kCausal;
  double dropout = 0.2;  // applied only when a forward pass asks for it

  void validate() const {
    if (d < 1) throw ConfigError("encoder: d must be >= 1");
    if (layers < 0) throw ConfigError("encoder: layers must be >= 0");
    if (heads < 1 || d % heads != 0) throw ConfigError("encoder: d must be divisible by heads");
    if (n_max < 1) throw ConfigError("encoder: n_max must be >= 1");
    if (k_max < 0) throw ConfigError("encoder: k_max must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0,1)");
  }
};

template <typename T>
struct BlockParams {
  Tensor<T> wq, wk, wv, wo;              // d x d
  Tensor<T> ln1_gain, ln1_bias;          // 1 x d
  Tensor<T> ln2_gain, ln2_bias;          // 1 x d
  Tensor<T> ff1_w, ff1_b;                // d x 4d, 1 x 4d
  Tensor<T> ff2_w, ff2_b;                // 4d x d, 1 x d
};

template <typename T>
struct ModelParams {
  Tensor<T> item_emb;    // N x d
  Tensor<T> item_pos;    // n_max x d
  Tensor<T> reason_pos;  // k_max x d
  std::vector<BlockParams<T>> blocks;

  int item_count() const { return item_emb.rows(); }
  int dim() const { return item_emb.cols(); }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.item_emb = item_emb.template cast<U>();
    out.item_pos = item_pos.template cast<U>();
    out.reason_pos = reason_pos.template cast<U>();
    for (const auto& b : blocks) {
      BlockParams<U> nb;
      nb.wq = b.wq.template cast<U>();
      nb.wk = b.wk.template cast<U>();
      nb.wv = b.wv.template cast<U>();
      nb.wo = b.wo.template cast<U>();
      nb.ln1_gain = b.ln1_gain.template cast<U>();
      nb.ln1_bias = b.ln1_bias.template cast<U>();
      nb.ln2_gain = b.ln2_gain.template cast<U>();
      nb.ln2_bias = b.ln2_bias.template cast<U>();
      nb.ff1_w = b.ff1_w.template cast<U>();
      nb.ff1_b = b.ff1_b.template cast<U>();
      nb.ff2_w = b.ff2_w.template cast<U>();
      nb.ff2_b = b.ff2_b.template cast<U>();
      out.blocks.push_back(std::move(nb));
    }
    return out;
  }

  // Stable name -> tensor walk used by the optimizer, the checkpoint format
  // and gradient verification.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("item_emb", item_emb);
    fn("item_pos", item_pos);
    fn("reason_pos", reason_pos);
    for (size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      fn(p + "wq", blocks[l].wq);
      fn(p + "wk", blocks[l].wk);
      fn(p + "wv", blocks[l].wv);
      fn(p + "wo", blocks[l].wo);
      fn(p + "ln1_gain", blocks[l].ln1_gain);
      fn(p + "ln1_bias", blocks[l].ln1_bias);
      fn(p + "ln2_gain", blocks[l].ln2_gain);
      fn(p + "ln2_bias", blocks[l].ln2_bias);
      fn(p + "ff1_w", blocks[l].ff1_w);
      fn(p + "ff1_b", blocks[l].ff1_b);
      fn(p + "ff2_w", blocks[l].ff2_w);
      fn(p + "ff2_b", blocks[l].ff2_b);
    }
  }
};

// Parameters bound into an autodiff graph. Binding once per batch lets
// gradients from every example in the batch accumulate on the same leaves.
template <typename T>
struct BlockNodes {
  Value<T> wq, wk, wv, wo;
  Value<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Value<T> ff1_w, ff1_b, ff2_w, ff2_b;
};

template <typename T>
struct ParamNodes {
  Value<T> item_emb, item_pos, reason_pos;
  std::vector<BlockNodes<T>> blocks;

  static ParamNodes bind(const ModelParams<T>& p, bool requires_grad) {
    ParamNodes out;
    out.item_emb = numeric::leaf(p.item_emb, requires_grad);
    out.item_pos = numeric::leaf(p.item_pos, requires_grad);
    out.reason_pos = numeric::leaf(p.reason_pos, requires_grad);
    for (const auto& b : p.blocks) {
      BlockNodes<T> nb;
      nb.wq = numeric::leaf(b.wq, requires_grad);
      nb.wk = numeric::leaf(b.wk, requires_grad);
      nb.wv = numeric::leaf(b.wv, requires_grad);
      nb.wo = numeric::leaf(b.wo, requires_grad);
      nb.ln1_gain = numeric::leaf(b.ln1_gain, requires_grad);
      nb.ln1_bias = numeric::leaf(b.ln1_bias, requires_grad);
      nb.ln2_gain = numeric::leaf(b.ln2_gain, requires_grad);
      nb.ln2_bias = numeric::leaf(b.ln2_bias, requires_grad);
      nb.ff1_w = numeric::leaf(b.ff1_w, requires_grad);
      nb.ff1_b = numeric::leaf(b.ff1_b, requires_grad);
      nb.ff2_w = numeric::leaf(b.ff2_w, requires_grad);
      nb.ff2_b = numeric::leaf(b.ff2_b, requires_grad);
      out.blocks.push_back(std::move(nb));
    }
    return out;
  }

  // Same order as ModelParams::for_each_tensor.
  template <typename Fn>
  void for_each_leaf(Fn&& fn) {
    fn("item_emb", item_emb);
    fn("item_pos", item_pos);
    fn("reason_pos", reason_pos);
    for (size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      fn(p + "wq", blocks[l].wq);
      fn(p + "wk", blocks[l].wk);
      fn(p + "wv", blocks[l].wv);
      fn(p + "wo", blocks[l].wo);
      fn(p + "ln1_gain", blocks[l].ln1_gain);
      fn(p + "ln1_bias", blocks[l].ln1_bias);
      fn(p + "ln2_gain", blocks[l].ln2_gain);
      fn(p + "ln2_bias", blocks[l].ln2_bias);
      fn(p + "ff1_w", blocks[l].ff1_w);
      fn(p + "ff1_b", blocks[l].ff1_b);
      fn(p + "ff2_w", blocks[l].ff2_w);
      fn(p + "ff2_b", blocks[l].ff2_b);
    }
  }
};

// Per-layer key/value tensors for incremental decoding. All layers share one
// logical length; the struct is cheap to copy (nodes are shared), which is
// how callers snapshot the item-only cache before running reasoning steps.
template <typename T>
struct KvCache {
  struct LayerKv {
    Value<T> keys, values;  // length x d
  };
  std::vector<LayerKv> layers;
  int length = 0;

  void check_consistent(int expected_layers) const {
    if (static_cast<int>(layers.size()) != expected_layers)
      throw StateError("kv cache: layer count mismatch");
    for (const auto& l : layers) {
      if (l.keys->val.rows() != length || l.values->val.rows() != length)
        throw StateError("kv cache: layer length mismatch");
    }
  }
};

// Dropout plumbing for training passes. Default is a deterministic pass.
struct ForwardOptions {
  double dropout = 0.0;
  Rng* rng = nullptr;
};

// Allow-matrix for joint item+reasoning attention.
//   causal: position i attends to j iff j <= i.
//   prefix: item positions attend to all item positions (and nothing else);
//           reasoning position n+i attends to every item and to reasoning
//           positions up to itself.
inline Tensor<uint8_t> build_mask(MaskMode mode, int n, int k) {
  if (n < 1) throw ArgumentError("build_mask: n must be >= 1");
  if (k < 0) throw ArgumentError("build_mask: k must be >= 0");
  const int size = n + k;
  Tensor<uint8_t> allow(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      bool ok;
      if (mode == MaskMode::kCausal) {
        ok = j <= i;
      } else {
        ok = i < n ? j < n : j <= i;
      }
      allow.at(i, j) = ok ? 1 : 0;
    }
  }
  return allow;
}

template <typename T>
Tensor<T> additive_mask(const Tensor<uint8_t>& allow) {
  Tensor<T> out(allow.rows(), allow.cols());
  for (size_t i = 0; i < allow.size(); ++i)
    out[i] = allow[i] ? T{} : static_cast<T>(-1e9);
  return out;
}

namespace detail {

template <typename T>
struct BlockOut {
  Value<T> states;
  Value<T> keys, values;
};

// One pre-LN block over the full sequence. Returns the block output plus the
// key/value projections to seed the cache.
template <typename T>
BlockOut<T> block_full(const Value<T>& x, const BlockNodes<T>& blk, const Tensor<T>* mask,
                       int heads, const ForwardOptions& fwd) {
  using namespace rearec::numeric;
  const int d = x->val.cols();
  const int dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Value<T> xn = layer_norm(x, blk.ln1_gain, blk.ln1_bias);
  Value<T> q = matmul(xn, blk.wq);
  Value<T> k = matmul(xn, blk.wk);
  Value<T> v = matmul(xn, blk.wv);

  std::vector<Value<T>> head_out;
  head_out.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Value<T> qh = slice_cols(q, h * dh, dh);
    Value<T> kh = slice_cols(k, h * dh, dh);
    Value<T> vh = slice_cols(v, h * dh, dh);
    Value<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    Value<T> probs = softmax_rows(scores, mask);
    head_out.push_back(matmul(probs, vh));
  }
  Value<T> merged = heads == 1 ? head_out[0]
                               : concat_cols(std::span<const Value<T>>(head_out));
  Value<T> attn = dropout(matmul(merged, blk.wo), fwd.dropout, fwd.rng);
  Value<T> x1 = add(x, attn);

  Value<T> x1n = layer_norm(x1, blk.ln2_gain, blk.ln2_bias);
  Value<T> ff = add_rows(matmul(gelu(add_rows(matmul(x1n, blk.ff1_w), blk.ff1_b)), blk.ff2_w),
                         blk.ff2_b);
  Value<T> x2 = add(x1, dropout(ff, fwd.dropout, fwd.rng));
  return {x2, k, v};
}

}  // namespace detail

template <typename T>
struct EncodeResult {
  Value<T> states;   // n x d final-layer states
  KvCache<T> cache;  // length n
};

// Embeds a prefix (item + absolute position embeddings) and runs the block
// stack under the configured mask, populating a KV cache of length n.
template <typename T>
EncodeResult<T> encode_sequence(std::span<const int> prefix, const ParamNodes<T>& params,
                                const EncoderConfig& cfg, const ForwardOptions& fwd = {}) {
  using namespace rearec::numeric;
  const int n = static_cast<int>(prefix.size());
  if (n < 1) throw ArgumentError("encode_sequence: prefix must be nonempty");
  if (n > cfg.n_max) throw ArgumentError("encode_sequence: prefix longer than n_max");
  const int item_count = params.item_emb->val.rows();
  for (int idx : prefix)
    if (idx < 0 || idx >= item_count)
      throw ArgumentError("encode_sequence: item index out of range");

  Value<T> h = add(gather_rows(params.item_emb, std::vector<int>(prefix.begin(), prefix.end())),
                   slice_rows(params.item_pos, 0, n));
  h = dropout(h, fwd.dropout, fwd.rng);

  Tensor<T> mask = additive_mask<T>(build_mask(cfg.mask_mode, n, 0));
  EncodeResult<T> out;
  out.cache.length = n;
  for (const auto& blk : params.blocks) {
    auto bo = detail::block_full(h, blk, &mask, cfg.heads, fwd);
    h = bo.states;
    out.cache.layers.push_back({bo.keys, bo.values});
  }
  out.states = h;
  return out;
}

// Non-cached forward over the item prefix plus explicit reasoning input rows
// (already summed with their reasoning position embeddings). Re-runs the full
// stack under build_mask(mode, n, k); the uncached benchmark path uses this.
template <typename T>
Value<T> encode_full(std::span<const int> prefix, std::span<const Value<T>> extra_rows,
                     const ParamNodes<T>& params, const EncoderConfig& cfg,
                     const ForwardOptions& fwd = {}) {
  using namespace rearec::numeric;
  const int n = static_cast<int>(prefix.size());
  const int k = static_cast<int>(extra_rows.size());
  if (n < 1) throw ArgumentError("encode_full: prefix must be nonempty");
  if (n > cfg.n_max) throw ArgumentError("encode_full: prefix longer than n_max");

  Value<T> items =
      add(gather_rows(params.item_emb, std::vector<int>(prefix.begin(), prefix.end())),
          slice_rows(params.item_pos, 0, n));
  items = dropout(items, fwd.dropout, fwd.rng);
  Value<T> h = items;
  for (const auto& row : extra_rows) h = concat_rows(h, row);

  Tensor<T> mask = additive_mask<T>(build_mask(cfg.mask_mode, n, k));
  for (const auto& blk : params.blocks)
    h = detail::block_full(h, blk, &mask, cfg.heads, fwd).states;
  return h;
}

// Single-position forward against the cache. The new position attends to all
// cached positions and itself, which is the masked row both modes prescribe
// for appended positions. Appends one key/value row per layer.
template <typename T>
Value<T> incremental_step(const Value<T>& x, KvCache<T>& cache, const ParamNodes<T>& params,
                          const EncoderConfig& cfg, const ForwardOptions& fwd = {}) {
  using namespace rearec::numeric;
  if (x->val.rows() != 1 || x->val.cols() != cfg.d)
    throw ArgumentError("incremental_step: input must be 1 x d");
  cache.check_consistent(static_cast<int>(params.blocks.size()));
  if (cache.length + 1 > cfg.n_max + cfg.k_max)
    throw StateError("incremental_step: cache already at n_max + k_max");

  const int dh = cfg.d / cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Value<T> h = x;
  for (size_t l = 0; l < params.blocks.size(); ++l) {
    const BlockNodes<T>& blk = params.blocks[l];
    Value<T> xn = layer_norm(h, blk.ln1_gain, blk.ln1_bias);
    Value<T> q = matmul(xn, blk.wq);
    Value<T> k_new = matmul(xn, blk.wk);
    Value<T> v_new = matmul(xn, blk.wv);
    Value<T> keys = concat_rows(cache.layers[l].keys, k_new);
    Value<T> values = concat_rows(cache.layers[l].values, v_new);

    std::vector<Value<T>> head_out;
    head_out.reserve(cfg.heads);
    for (int hh = 0; hh < cfg.heads; ++hh) {
      Value<T> qh = slice_cols(q, hh * dh, dh);
      Value<T> kh = slice_cols(keys, hh * dh, dh);
      Value<T> vh = slice_cols(values, hh * dh, dh);
      Value<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      Value<T> probs = softmax_rows(scores);
      head_out.push_back(matmul(probs, vh));
    }
    Value<T> merged = cfg.heads == 1 ? head_out[0]
                                     : concat_cols(std::span<const Value<T>>(head_out));
    Value<T> attn = dropout(matmul(merged, blk.wo), fwd.dropout, fwd.rng);
    Value<T> h1 = add(h, attn);
    Value<T> h1n = layer_norm(h1, blk.ln2_gain, blk.ln2_bias);
    Value<T> ff = add_rows(
        matmul(gelu(add_rows(matmul(h1n, blk.ff1_w), blk.ff1_b)), blk.ff2_w), blk.ff2_b);
    h = add(h1, dropout(ff, fwd.dropout, fwd.rng));

    cache.layers[l].keys = keys;
    cache.layers[l].values = values;
  }
  cache.length += 1;
  return h;
}

inline const char* mask_mode_name(MaskMode m) {
  return m == MaskMode::kCausal ? "causal" : "prefix_bidirectional";
}

inline MaskMode mask_mode_from_name(const std::string& name) {
  if (name == "causal") return MaskMode::kCausal;
  if (name == "prefix_bidirectional") return MaskMode::kPrefixBidirectional;
  throw ConfigError("unknown mask mode: " + name);
}

}  // namespace rearec::encoder
