#pragma once

// The pretraining objective graph, shared by the training loop and the
// gradient suites (which instantiate it at double precision).

#include <string>
#include <vector>

#include "cscon/geometry.hpp"
#include "cscon/loss.hpp"
#include "cscon/model.hpp"

namespace cscon {

enum class LossVariant : int { inner = 0, inter = 1, alignment_target = 2 };
const char* loss_variant_name(LossVariant v);
LossVariant loss_variant_from_name(const std::string& name);

enum class PositivePair : int { center_surrounding = 0, surrounding_surrounding = 1 };
const char* positive_pair_name(PositivePair p);
PositivePair positive_pair_from_name(const std::string& name);

// One optimization step's loss for the configured objective. masks holds one
// draw per sample; masks_b is the second, independent draw used only by the
// surrounding-surrounding positive pair.
template <class Real>
TensorT<Real> pretrain_step_loss(ModelT<Real>& model, const std::vector<PatchSet>& batch,
                                 const std::vector<MaskSpec>& masks,
                                 const std::vector<MaskSpec>& masks_b, LossVariant variant,
                                 PositivePair pair, double tau, Rng* drop_rng) {
  const auto b = static_cast<std::int64_t>(batch.size());
  const std::int64_t d = model.config().dim;
  auto e_c = model.embed_centers(make_center_tensor<Real>(batch));
  auto e_s = model.embed_patches(make_patch_tensor<Real>(batch));

  if (pair == PositivePair::surrounding_surrounding) {
    // Both branches mask surrounding embeddings with independent index sets;
    // centers stay visible. The loss pairs the two masked slices in index
    // order, so positives are generally different patches of the same cloud.
    auto z_a =
        add(model.apply_mask(e_s, model.mask_token(Branch::surrounding_masked), masks), e_c);
    auto z_b =
        add(model.apply_mask(e_s, model.mask_token(Branch::surrounding_masked), masks_b), e_c);
    auto h_a = model.encode(z_a, b, Branch::center_masked, drop_rng);
    auto h_b = model.encode(z_b, b, Branch::surrounding_masked, drop_rng);
    auto v_a = model.extract_masked(h_a, masks);
    auto v_b = model.extract_masked(h_b, masks_b);
    const std::int64_t m = masks.front().count();
    switch (variant) {
      case LossVariant::inner:
        return inner_instance_loss(reshape(v_a, Shape{b, m, d}), reshape(v_b, Shape{b, m, d}),
                                   tau);
      case LossVariant::inter:
        return inter_instance_loss(v_a, v_b, tau);
      case LossVariant::alignment_target: {
        auto full = model.encode(add(e_c, e_s), b, Branch::center_masked, drop_rng);
        return scale(add(alignment_target_loss(full, h_a), alignment_target_loss(full, h_b)),
                     0.5);
      }
    }
  }

  auto [z_c, z_s] = model.build_branches(e_c, e_s, masks);
  auto h_c = model.encode(z_c, b, Branch::center_masked, drop_rng);
  auto h_s = model.encode(z_s, b, Branch::surrounding_masked, drop_rng);

  if (variant == LossVariant::alignment_target) {
    auto full = model.encode(add(e_c, e_s), b, Branch::center_masked, drop_rng);
    return scale(add(alignment_target_loss(full, h_c), alignment_target_loss(full, h_s)), 0.5);
  }

  auto v_c = model.extract_masked(h_c, masks);
  auto v_s = model.extract_masked(h_s, masks);
  if (variant == LossVariant::inter) return inter_instance_loss(v_c, v_s, tau);
  const std::int64_t m = masks.front().count();
  return inner_instance_loss(reshape(v_c, Shape{b, m, d}), reshape(v_s, Shape{b, m, d}), tau);
}

}  // namespace cscon
