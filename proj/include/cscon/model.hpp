#pragma once

// The dual-branch network: position projector, patch encoder, learnable mask
// tokens, branch composition, parameter-shared transformer encoder and
// projector head. All forward paths work on flattened (batch * n_patches)
// row blocks so the heavy matmuls stay large.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cscon/common.hpp"
#include "cscon/geometry.hpp"
#include "cscon/params.hpp"
#include "cscon/tensor.hpp"

namespace cscon {

struct ModelConfig {
  int depth = 4;
  int dim = 96;
  int heads = 4;
  double mlp_ratio = 4.0;
  int n_patches = 32;
  int patch_size = 16;
  double mask_ratio = 0.6;
  double tau = 1.0;
  double drop_path = 0.1;
  int projector_hidden = 96;

  void validate() const;

  static ModelConfig desk();
  static ModelConfig paper();
  // Tiny configuration used by the gradient suites.
  static ModelConfig micro();
};

enum class SharingMode : int { shared = 0, non_shared = 1 };
const char* sharing_mode_name(SharingMode m);
SharingMode sharing_mode_from_name(const std::string& name);

// Which embedding stream is replaced by its mask token.
enum class Branch { center_masked, surrounding_masked };

struct MaskSpec {
  std::vector<std::int64_t> indices;  // ascending, distinct, in [0, n_patches)
  std::int64_t count() const { return static_cast<std::int64_t>(indices.size()); }
};

// round(ratio * n) clamped to [1, n - 1].
std::int64_t mask_count(std::int64_t n_patches, double ratio);

// Distinct uniform indices, sorted ascending; deterministic given rng state.
MaskSpec make_mask(std::int64_t n_patches, double ratio, Rng& rng);

// ---------------------------------------------------------------------------
// Input tensor assembly
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> make_center_tensor(const std::vector<PatchSet>& batch) {
  const std::int64_t b = static_cast<std::int64_t>(batch.size());
  const std::int64_t n = batch.front().n_patches;
  std::vector<Real> data;
  data.reserve(static_cast<std::size_t>(b * n * 3));
  for (const auto& ps : batch) {
    if (ps.n_patches != n) throw InvalidArgument("make_center_tensor: ragged batch");
    for (const auto& c : ps.centers)
      for (float v : c) data.push_back(static_cast<Real>(v));
  }
  return TensorT<Real>::from_vector(Shape{b * n, 3}, std::move(data));
}

template <class Real>
TensorT<Real> make_patch_tensor(const std::vector<PatchSet>& batch) {
  const std::int64_t b = static_cast<std::int64_t>(batch.size());
  const std::int64_t n = batch.front().n_patches;
  const std::int64_t k = batch.front().patch_size;
  std::vector<Real> data;
  data.reserve(static_cast<std::size_t>(b * n * k * 3));
  for (const auto& ps : batch) {
    if (ps.n_patches != n || ps.patch_size != k)
      throw InvalidArgument("make_patch_tensor: ragged batch");
    for (const auto& p : ps.patches)
      for (double v : p) data.push_back(static_cast<Real>(v));
  }
  return TensorT<Real>::from_vector(Shape{b * n, k, 3}, std::move(data));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class Real>
class ModelT {
public:
  using T = TensorT<Real>;

  ModelT(const ModelConfig& cfg, SharingMode sharing, std::uint64_t init_seed)
      : cfg_(cfg), sharing_(sharing) {
    cfg_.validate();
    Rng rng(mix64(init_seed, 0x5e1fcull));
    const std::int64_t d = cfg_.dim;
    const std::int64_t h = (d + 2) / 3;  // patch-encoder stage width
    pos_w1_ = params_.create("embed.pos.w1", Shape{3, d}, rng, 0.02);
    pos_b1_ = params_.create_const("embed.pos.b1", Shape{1, d}, Real(0));
    pos_w2_ = params_.create("embed.pos.w2", Shape{d, d}, rng, 0.02);
    pos_b2_ = params_.create_const("embed.pos.b2", Shape{1, d}, Real(0));
    pn_s1w1_ = params_.create("embed.pnet.s1w1", Shape{3, h}, rng, 0.02);
    pn_s1b1_ = params_.create_const("embed.pnet.s1b1", Shape{1, h}, Real(0));
    pn_s1w2_ = params_.create("embed.pnet.s1w2", Shape{h, h}, rng, 0.02);
    pn_s1b2_ = params_.create_const("embed.pnet.s1b2", Shape{1, h}, Real(0));
    pn_s2w1_ = params_.create("embed.pnet.s2w1", Shape{2 * h, d}, rng, 0.02);
    pn_s2b1_ = params_.create_const("embed.pnet.s2b1", Shape{1, d}, Real(0));
    pn_s2w2_ = params_.create("embed.pnet.s2w2", Shape{d, d}, rng, 0.02);
    pn_s2b2_ = params_.create_const("embed.pnet.s2b2", Shape{1, d}, Real(0));
    mask_c_ = params_.create("mask_token.center", Shape{1, d}, rng, 0.02);
    mask_s_ = params_.create("mask_token.surround", Shape{1, d}, rng, 0.02);
    if (sharing_ == SharingMode::shared) {
      towers_.push_back(build_tower("enc", rng));
    } else {
      towers_.push_back(build_tower("enc_c", rng));
      towers_.push_back(build_tower("enc_s", rng));
    }
  }

  const ModelConfig& config() const { return cfg_; }
  SharingMode sharing() const { return sharing_; }
  ParamStoreT<Real>& params() { return params_; }
  const ParamStoreT<Real>& params() const { return params_; }
  T mask_token(Branch br) const { return br == Branch::center_masked ? mask_c_ : mask_s_; }

  // Two affine layers with a gelu between: (rows, 3) -> (rows, dim).
  T embed_centers(const T& centers) {
    auto t = gelu(add(matmul(centers, pos_w1_), pos_b1_));
    return add(matmul(t, pos_w2_), pos_b2_);
  }

  // Two-stage shared MLP with max pooling and a global-feature concat:
  // (rows, k, 3) -> (rows, dim). Point order within a patch cannot change
  // the output because the only cross-point mixing is the max.
  T embed_patches(const T& patches) {
    const std::int64_t rows = patches.shape()[0];
    const std::int64_t k = patches.shape()[1];
    const std::int64_t h = pn_s1w1_.shape()[1];
    auto flat = reshape(patches, Shape{rows * k, 3});
    auto t = gelu(add(matmul(flat, pn_s1w1_), pn_s1b1_));
    t = add(matmul(t, pn_s1w2_), pn_s1b2_);
    auto per_point = reshape(t, Shape{rows, k, h});
    auto pooled = reduce_max(per_point, 1);                       // (rows, h)
    auto pooled_rows = reshape(pooled, Shape{rows, 1, h});
    auto expanded = add(TensorT<Real>::zeros(Shape{rows, k, h}), pooled_rows);
    auto cat = reshape(concat_last(per_point, expanded), Shape{rows * k, 2 * h});
    auto y = gelu(add(matmul(cat, pn_s2w1_), pn_s2b1_));
    y = add(matmul(y, pn_s2w2_), pn_s2b2_);
    return reduce_max(reshape(y, Shape{rows, k, cfg_.dim}), 1);
  }

  // Replace rows listed in the per-sample masks by the given token:
  // keep * E + maskcol * token, all rows (batch * n_patches, dim).
  T apply_mask(const T& embeddings, const T& token, const std::vector<MaskSpec>& masks) const {
    const std::int64_t rows = embeddings.shape()[0];
    const std::int64_t n = cfg_.n_patches;
    if (static_cast<std::int64_t>(masks.size()) * n != rows)
      throw InvalidArgument("apply_mask: mask count does not match batch rows");
    auto keep = TensorT<Real>::constant(Shape{rows, 1}, Real(1));
    auto drop = TensorT<Real>::zeros(Shape{rows, 1});
    for (std::size_t b = 0; b < masks.size(); ++b) {
      for (auto i : masks[b].indices) {
        if (i < 0 || i >= n) throw InvalidArgument("apply_mask: mask index out of range");
        keep.values()[b * n + i] = Real(0);
        drop.values()[b * n + i] = Real(1);
      }
    }
    return add(mul(embeddings, keep), mul(drop, token));
  }

  // Z_c = CenterMask(E_c) + E_s and Z_s = SurroundingMask(E_s) + E_c with one
  // shared index set per sample.
  std::pair<T, T> build_branches(const T& e_c, const T& e_s,
                                 const std::vector<MaskSpec>& masks) const {
    auto z_c = add(apply_mask(e_c, mask_c_, masks), e_s);
    auto z_s = add(apply_mask(e_s, mask_s_, masks), e_c);
    return {z_c, z_s};
  }

  // Pre-norm transformer stack; returns pre-projector tokens (rows, dim).
  // drop_rng enables stochastic depth (training only); draws are per sample
  // per block in a fixed order.
  T encode_tokens(const T& z, std::int64_t batch, Branch br, Rng* drop_rng = nullptr) {
    Tower& tw = tower(br);
    const std::int64_t n = cfg_.n_patches;
    const std::int64_t d = cfg_.dim;
    const std::int64_t heads = cfg_.heads;
    const std::int64_t dh = d / heads;
    const std::int64_t rows = z.shape()[0];
    if (rows != batch * n)
      throw InvalidArgument("encode_tokens: rows " + z.shape().str() + " do not match batch " +
                            std::to_string(batch) + " x " + std::to_string(n));
    T x = z;
    for (auto& blk : tw.blocks) {
      auto hin = layer_norm(x, blk.ln1g, blk.ln1b);
      auto q = add(matmul(hin, blk.wq), blk.bq);
      auto k = add(matmul(hin, blk.wk), blk.bk);
      auto v = add(matmul(hin, blk.wv), blk.bv);
      auto split = [&](const T& t) {
        return reshape(permute_0213(reshape(t, Shape{batch, n, heads, dh})),
                       Shape{batch * heads, n, dh});
      };
      auto scores = scale(batched_matmul(split(q), split(k), /*trans_b=*/true),
                          1.0 / std::sqrt(static_cast<double>(dh)));
      auto ctx = batched_matmul(softmax_last(scores), split(v));
      auto merged = reshape(
          permute_0213(reshape(ctx, Shape{batch, heads, n, dh})), Shape{rows, d});
      auto attn_out = add(matmul(merged, blk.wo), blk.bo);
      x = add(x, drop_path(attn_out, batch, drop_rng));
      auto m = gelu(add(matmul(layer_norm(x, blk.ln2g, blk.ln2b), blk.mw1), blk.mb1));
      auto mlp_out = add(matmul(m, blk.mw2), blk.mb2);
      x = add(x, drop_path(mlp_out, batch, drop_rng));
    }
    return x;
  }

  // Two-layer projection head, output dimension = encoder dimension.
  T project(const T& tokens, Branch br) {
    Tower& tw = tower(br);
    auto t = gelu(add(matmul(tokens, tw.pw1), tw.pb1));
    return add(matmul(t, tw.pw2), tw.pb2);
  }

  T encode(const T& z, std::int64_t batch, Branch br, Rng* drop_rng = nullptr) {
    return project(encode_tokens(z, batch, br, drop_rng), br);
  }

  // Masked-position rows of h, ascending index order within each sample.
  T extract_masked(const T& h, const std::vector<MaskSpec>& masks) const {
    const std::int64_t n = cfg_.n_patches;
    std::vector<std::int64_t> flat;
    for (std::size_t b = 0; b < masks.size(); ++b)
      for (auto i : masks[b].indices) flat.push_back(static_cast<std::int64_t>(b) * n + i);
    return gather_rows(h, std::move(flat));
  }

  std::map<std::string, float> meta() const {
    return {{"depth", static_cast<float>(cfg_.depth)},
            {"dim", static_cast<float>(cfg_.dim)},
            {"heads", static_cast<float>(cfg_.heads)},
            {"mlp_ratio", static_cast<float>(cfg_.mlp_ratio)},
            {"n_patches", static_cast<float>(cfg_.n_patches)},
            {"patch_size", static_cast<float>(cfg_.patch_size)},
            {"mask_ratio", static_cast<float>(cfg_.mask_ratio)},
            {"tau", static_cast<float>(cfg_.tau)},
            {"drop_path", static_cast<float>(cfg_.drop_path)},
            {"projector_hidden", static_cast<float>(cfg_.projector_hidden)},
            {"sharing", static_cast<float>(static_cast<int>(sharing_))}};
  }

private:
  struct Block {
    T ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, mw1, mb1, mw2, mb2;
  };
  struct Tower {
    std::vector<Block> blocks;
    T pw1, pb1, pw2, pb2;
  };

  Tower build_tower(const std::string& prefix, Rng& rng) {
    const std::int64_t d = cfg_.dim;
    const std::int64_t hidden = static_cast<std::int64_t>(cfg_.mlp_ratio * d);
    Tower tw;
    for (int i = 0; i < cfg_.depth; ++i) {
      const std::string p = prefix + ".block" + std::to_string(i) + ".";
      Block b;
      b.ln1g = params_.create_const(p + "ln1.gain", Shape{1, d}, Real(1));
      b.ln1b = params_.create_const(p + "ln1.bias", Shape{1, d}, Real(0));
      b.wq = params_.create(p + "attn.wq", Shape{d, d}, rng, 0.02);
      b.bq = params_.create_const(p + "attn.bq", Shape{1, d}, Real(0));
      b.wk = params_.create(p + "attn.wk", Shape{d, d}, rng, 0.02);
      b.bk = params_.create_const(p + "attn.bk", Shape{1, d}, Real(0));
      b.wv = params_.create(p + "attn.wv", Shape{d, d}, rng, 0.02);
      b.bv = params_.create_const(p + "attn.bv", Shape{1, d}, Real(0));
      b.wo = params_.create(p + "attn.wo", Shape{d, d}, rng, 0.02);
      b.bo = params_.create_const(p + "attn.bo", Shape{1, d}, Real(0));
      b.ln2g = params_.create_const(p + "ln2.gain", Shape{1, d}, Real(1));
      b.ln2b = params_.create_const(p + "ln2.bias", Shape{1, d}, Real(0));
      b.mw1 = params_.create(p + "mlp.w1", Shape{d, hidden}, rng, 0.02);
      b.mb1 = params_.create_const(p + "mlp.b1", Shape{1, hidden}, Real(0));
      b.mw2 = params_.create(p + "mlp.w2", Shape{hidden, d}, rng, 0.02);
      b.mb2 = params_.create_const(p + "mlp.b2", Shape{1, d}, Real(0));
      tw.blocks.push_back(std::move(b));
    }
    const std::int64_t ph = cfg_.projector_hidden;
    tw.pw1 = params_.create(prefix + ".proj.w1", Shape{d, ph}, rng, 0.02);
    tw.pb1 = params_.create_const(prefix + ".proj.b1", Shape{1, ph}, Real(0));
    tw.pw2 = params_.create(prefix + ".proj.w2", Shape{ph, d}, rng, 0.02);
    tw.pb2 = params_.create_const(prefix + ".proj.b2", Shape{1, d}, Real(0));
    return tw;
  }

  Tower& tower(Branch br) {
    if (sharing_ == SharingMode::shared) return towers_[0];
    return towers_[br == Branch::center_masked ? 0 : 1];
  }

  T drop_path(const T& delta, std::int64_t batch, Rng* drop_rng) {
    if (drop_rng == nullptr || cfg_.drop_path <= 0.0) return delta;
    const std::int64_t n = cfg_.n_patches;
    auto factor = TensorT<Real>::zeros(Shape{batch * n, 1});
    const Real kept = static_cast<Real>(1.0 / (1.0 - cfg_.drop_path));
    for (std::int64_t b = 0; b < batch; ++b) {
      const Real f = (drop_rng->uniform() >= cfg_.drop_path) ? kept : Real(0);
      for (std::int64_t i = 0; i < n; ++i) factor.values()[b * n + i] = f;
    }
    return mul(delta, factor);
  }

  ModelConfig cfg_;
  SharingMode sharing_;
  ParamStoreT<Real> params_;
  T pos_w1_, pos_b1_, pos_w2_, pos_b2_;
  T pn_s1w1_, pn_s1b1_, pn_s1w2_, pn_s1b2_;
  T pn_s2w1_, pn_s2b1_, pn_s2w2_, pn_s2b2_;
  T mask_c_, mask_s_;
  std::vector<Tower> towers_;
};

using Model = ModelT<float>;

// Rebuilds a float model from a checkpoint written by save_params(model).
Model model_from_checkpoint(const LoadedCheckpoint& ck, const std::string& path_for_errors);

}  // namespace cscon
