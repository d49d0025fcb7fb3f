#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "dvs/autodiff.hpp"
#include "dvs/fields.hpp"
#include "dvs/renderer.hpp"

namespace dvs {

struct LossWeights {
  double lambda_static = 1.0;
  double lambda_dynamic = 1.0;
  double lambda_full = 1.0;
  double lambda_slow = 0.01;
  double lambda_cycle = 0.01;
  double lambda_entropy = 0.001;
  double lambda_mask = 0.1;
  double lambda_surface = 0.1;
  double lambda_patch = 0.1;
  double lambda_depth_cons = 0.01;

  void validate() const {
    for (double v : {lambda_static, lambda_dynamic, lambda_full, lambda_slow, lambda_cycle,
                     lambda_entropy, lambda_mask, lambda_surface, lambda_patch,
                     lambda_depth_cons})
      if (!(v >= 0) || !std::isfinite(v))
        throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
  }
};

namespace detail {

inline void check_batch_shapes(const ad::Var& rendered, const Eigen::MatrixXd& gt) {
  if (rendered.rows() != 3 || gt.rows() != 3 || rendered.cols() != gt.cols())
    throw std::invalid_argument("loss: rendered/gt must be 3 x R with matching R");
}

}  // namespace detail

/// Masked static photometric loss (Eq. 2): mean over rays of the squared
/// color error on static (M = 0) pixels. `mask` is 1 on dynamic pixels.
inline ad::Var loss_static(const ad::Var& rendered, const Eigen::MatrixXd& gt,
                           const Eigen::RowVectorXd& mask) {
  detail::check_batch_shapes(rendered, gt);
  const ad::Var diff = ad::sub(rendered, ad::Var::constant(gt));
  const Eigen::MatrixXd keep = (1.0 - mask.array()).matrix();
  const ad::Var masked = ad::mul_rows(diff, ad::Var::constant(keep));
  return ad::scale(ad::sum(ad::square(masked)), 1.0 / static_cast<double>(gt.cols()));
}

/// Unmasked photometric loss against the composite render (Eq. 8).
inline ad::Var loss_full(const ad::Var& rendered, const Eigen::MatrixXd& gt) {
  detail::check_batch_shapes(rendered, gt);
  const ad::Var diff = ad::sub(rendered, ad::Var::constant(gt));
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(gt.cols()));
}

/// Triple photometric loss (Eq. 5): the frame-t pixel supervises the renders
/// at all three timestamps (only frame t observes the ray); boundary frames
/// contribute the existing neighbors only. Each timestamp term is a mean over
/// the rays that have it.
inline ad::Var loss_dynamic(const TripleRender& triple, const Eigen::MatrixXd& gt) {
  detail::check_batch_shapes(triple.center.color, gt);
  ad::Var total = loss_full(triple.center.color, gt);
  const auto neighbor_term = [&](const NeighborRender& nbr) {
    if (nbr.rays.empty()) return;
    Eigen::MatrixXd gt_sub(3, nbr.rays.size());
    for (size_t i = 0; i < nbr.rays.size(); ++i) gt_sub.col(i) = gt.col(nbr.rays[i]);
    total = ad::add(total, loss_full(nbr.render.color, gt_sub));
  };
  neighbor_term(triple.fwd);
  neighbor_term(triple.bwd);
  return total;
}

/// Flow magnitude prior: mean over samples of |f_f|_1 + |f_b|_1.
inline ad::Var loss_flow_slow(const ad::Var& flow_fwd, const ad::Var& flow_bwd) {
  if (flow_fwd.cols() != flow_bwd.cols())
    throw std::invalid_argument("loss_flow_slow: sample count mismatch");
  const ad::Var l1 = ad::add(ad::sum(ad::abs(flow_fwd)), ad::sum(ad::abs(flow_bwd)));
  return ad::scale(l1, 1.0 / static_cast<double>(flow_fwd.cols()));
}

/// Flow cycle consistency: mean of the l2 norms of the round-trip residuals
/// f_f + f_fb and f_b + f_bf (Eq. 4's warped-query flows).
inline ad::Var loss_flow_cycle(const ad::Var& flow_fwd, const ad::Var& flow_fwd_back,
                               const ad::Var& flow_bwd, const ad::Var& flow_bwd_fwd) {
  const auto residual_norms = [](const ad::Var& a, const ad::Var& b) {
    if (!a.defined() || !b.defined()) return ad::Var();
    if (a.cols() != b.cols())
      throw std::invalid_argument("loss_flow_cycle: sample count mismatch");
    return ad::sqrt(ad::sum_rows(ad::square(ad::add(a, b))));
  };
  const ad::Var fwd = residual_norms(flow_fwd, flow_fwd_back);
  const ad::Var bwd = residual_norms(flow_bwd, flow_bwd_fwd);
  ad::Var total = ad::Var::constant(0.0);
  long count = 0;
  if (fwd.defined()) {
    total = ad::add(total, ad::sum(fwd));
    count += fwd.cols();
  }
  if (bwd.defined()) {
    total = ad::add(total, ad::sum(bwd));
    count += bwd.cols();
  }
  return count ? ad::scale(total, 1.0 / static_cast<double>(count)) : total;
}

/// Entropy of the normalized rendering weights, encouraging each ray's mass
/// to concentrate. Rays with accumulated opacity below `gate` contribute 0;
/// the mean is over all rays in the batch.
inline ad::Var loss_entropy(const ad::Var& weights, int K, double gate = 0.1) {
  constexpr double kEps = 1e-9;
  if (weights.rows() != 1 || weights.cols() % K != 0)
    throw std::invalid_argument("loss_entropy: weights must be 1 x RK");
  const long num_rays = weights.cols() / K;
  const ad::Var w_sum = ad::sum_segments(weights, K);
  Eigen::MatrixXd pass(1, num_rays);
  for (long r = 0; r < num_rays; ++r) pass(0, r) = w_sum.val()(0, r) < gate ? 0.0 : 1.0;
  const ad::Var w_norm =
      ad::div(weights, ad::repeat_segments(ad::add_scalar(w_sum, kEps), K));
  const ad::Var entropy_terms = ad::neg(ad::mul(w_norm, ad::log(ad::add_scalar(w_norm, kEps))));
  const ad::Var per_ray = ad::sum_segments(entropy_terms, K);
  const ad::Var gated = ad::mul(per_ray, ad::Var::constant(pass));
  return ad::scale(ad::sum(gated), 1.0 / static_cast<double>(num_rays));
}

/// Binary cross-entropy between the alpha-composited blending weight and the
/// dynamic mask.
inline ad::Var loss_mask(const ad::Var& p_hat, const Eigen::RowVectorXd& mask) {
  constexpr double kEps = 1e-9;
  if (p_hat.rows() != 1 || p_hat.cols() != mask.cols())
    throw std::invalid_argument("loss_mask: p_hat/mask size mismatch");
  const ad::Var log_p = ad::log(ad::add_scalar(p_hat, kEps));
  const ad::Var log_not_p = ad::log(ad::add_scalar(ad::neg(p_hat), 1.0 + kEps));
  const Eigen::MatrixXd m = mask;
  const Eigen::MatrixXd not_m = (1.0 - mask.array()).matrix();
  const ad::Var bce = ad::neg(ad::add(ad::mul(ad::Var::constant(m), log_p),
                                      ad::mul(ad::Var::constant(not_m), log_not_p)));
  return ad::scale(ad::sum(bce), 1.0 / static_cast<double>(mask.cols()));
}

/// Eq. 14 core over a ray subset: mean over gated rays of
/// |x_hat_t + f(x_hat_t) - x_hat_neighbor|_1. Callers assemble the pieces so
/// tests can substitute analytic flows for the field's.
inline ad::Var loss_surface_from_parts(const ad::Var& surface_t, const ad::Var& flow_at_surface,
                                       const ad::Var& surface_nbr,
                                       const Eigen::RowVectorXd& gate) {
  if (surface_t.cols() != surface_nbr.cols() || surface_t.cols() != flow_at_surface.cols() ||
      surface_t.cols() != gate.cols())
    throw std::invalid_argument("loss_surface: column mismatch");
  const double active = gate.sum();
  if (active == 0.0) return ad::Var::constant(0.0);
  const ad::Var residual = ad::sub(ad::add(surface_t, flow_at_surface), surface_nbr);
  const ad::Var per_ray = ad::sum_rows(ad::abs(residual));
  const ad::Var gated = ad::mul(per_ray, ad::Var::constant(Eigen::MatrixXd(gate)));
  return ad::scale(ad::sum(gated), 1.0 / active);
}

/// Surface consistency constraint (Eqs. 9-14) from a triple render: the
/// flow-warped expected surface point at t must coincide with the surface
/// point recomputed from the re-queried densities at the neighbor timestamp.
/// Only rays whose dynamic opacity at t reaches `tau` participate.
inline ad::Var loss_surface_batch(const DynamicField& field, const TripleRender& triple,
                                  const SampleBatch& batch, FlowDirection direction,
                                  double tau = 0.5) {
  const NeighborRender& nbr = direction == FlowDirection::kForward ? triple.fwd : triple.bwd;
  if (nbr.rays.empty()) return ad::Var::constant(0.0);
  const int n = static_cast<int>(nbr.rays.size());

  std::vector<int> idx(nbr.rays.begin(), nbr.rays.end());
  const ad::Var surface_t = ad::gather_blocks(triple.center.surface, 1, idx);

  Eigen::RowVectorXd gate(n);
  Eigen::MatrixXd dirs(3, n), t_row(1, n);
  for (int i = 0; i < n; ++i) {
    gate(i) = triple.center.opacity.val()(0, idx[i]) >= tau ? 1.0 : 0.0;
    dirs.col(i) = batch.ray_dirs.col(idx[i]);
    t_row(0, i) = batch.ray_t[idx[i]];
  }
  if (gate.sum() == 0.0) return ad::Var::constant(0.0);

  // Eq. 14 queries the flow at the expected surface point itself, reusing the
  // ray direction as the (unused-by-flow-heads) direction input.
  const DynamicOutput at_surface =
      field.query(surface_t, ad::Var::constant(dirs), ad::Var::constant(t_row));
  const ad::Var flow = direction == FlowDirection::kForward ? at_surface.flow_fwd
                                                            : at_surface.flow_bwd;
  return loss_surface_from_parts(surface_t, flow, nbr.render.surface, gate);
}

/// Single-ray surface loss (value only). Throws if frame t lacks the
/// requested neighbor; returns 0 when the opacity gate rejects the ray.
inline double loss_surface(const DynamicField& field, const Ray& ray, const RaySamples& samples,
                           double t, FlowDirection direction, double dt, double tau = 0.5) {
  const bool has_neighbor = direction == FlowDirection::kForward ? (t + dt <= 1.0 + 1e-9)
                                                                 : (t - dt >= -1e-9);
  if (!has_neighbor)
    throw std::invalid_argument("loss_surface: frame has no neighbor in this direction");
  SampleBatch batch;
  batch.append(ray, samples, t);
  const TripleRender triple = render_dynamic_triple_batch(field, batch, dt);
  return loss_surface_batch(field, triple, batch, direction, tau).scalar();
}

/// Patch-based multi-view loss (Eq. 16): masked l1 between the rendered
/// source-view patch and the inverse-warped novel-view patch, averaged over
/// valid color elements (3 per valid pixel); 0 when nothing is valid.
inline ad::Var loss_patch(const ad::Var& rendered_src, const ad::Var& warped,
                          const Eigen::RowVectorXd& mask_w) {
  if (rendered_src.rows() != 3 || warped.rows() != 3 ||
      rendered_src.cols() != warped.cols() || rendered_src.cols() != mask_w.cols())
    throw std::invalid_argument("loss_patch: shape mismatch");
  const double valid = mask_w.sum();
  if (valid == 0.0) return ad::Var::constant(0.0);
  const ad::Var diff = ad::sub(rendered_src, warped);
  const ad::Var masked = ad::mul_rows(diff, ad::Var::constant(Eigen::MatrixXd(mask_w)));
  return ad::scale(ad::sum(ad::abs(masked)), 1.0 / (3.0 * valid));
}

/// l1 agreement between composite and static expected depth on static rays
/// (the paper names this restriction without a formula; see README).
inline ad::Var loss_depth_consistency(const ad::Var& composite_depth,
                                      const ad::Var& static_depth,
                                      const Eigen::RowVectorXd& mask) {
  if (composite_depth.cols() != static_depth.cols() || composite_depth.cols() != mask.cols())
    throw std::invalid_argument("loss_depth_consistency: size mismatch");
  const Eigen::MatrixXd keep = (1.0 - mask.array()).matrix();
  const double count = keep.sum();
  if (count == 0.0) return ad::Var::constant(0.0);
  const ad::Var diff = ad::abs(ad::sub(composite_depth, static_depth));
  return ad::scale(ad::sum(ad::mul(diff, ad::Var::constant(keep))), 1.0 / count);
}

/// Per-term handles feeding the weighted total; undefined Vars mean "term not
/// active this step" and contribute nothing.
struct LossTerms {
  ad::Var static_photo;
  ad::Var dynamic_photo;
  ad::Var full_photo;
  ad::Var flow_slow;
  ad::Var flow_cycle;
  ad::Var entropy;
  ad::Var mask_bce;
  ad::Var surface;
  ad::Var patch;
  ad::Var depth_cons;
};

/// Unweighted per-term values plus the weighted total, for logging.
struct LossReport {
  double static_photo = 0, dynamic_photo = 0, full_photo = 0, flow_slow = 0, flow_cycle = 0,
         entropy = 0, mask_bce = 0, surface = 0, patch = 0, depth_cons = 0;
  double total = 0;
};

inline ad::Var total_loss(const LossTerms& terms, const LossWeights& weights,
                          LossReport* report = nullptr) {
  weights.validate();
  ad::Var total = ad::Var::constant(0.0);
  LossReport rep;
  const auto accumulate = [&total](const ad::Var& term, double lambda, double* slot) {
    if (!term.defined()) return;
    *slot = term.scalar();
    total = ad::add(total, ad::scale(term, lambda));
  };
  accumulate(terms.static_photo, weights.lambda_static, &rep.static_photo);
  accumulate(terms.dynamic_photo, weights.lambda_dynamic, &rep.dynamic_photo);
  accumulate(terms.full_photo, weights.lambda_full, &rep.full_photo);
  accumulate(terms.flow_slow, weights.lambda_slow, &rep.flow_slow);
  accumulate(terms.flow_cycle, weights.lambda_cycle, &rep.flow_cycle);
  accumulate(terms.entropy, weights.lambda_entropy, &rep.entropy);
  accumulate(terms.mask_bce, weights.lambda_mask, &rep.mask_bce);
  accumulate(terms.surface, weights.lambda_surface, &rep.surface);
  accumulate(terms.patch, weights.lambda_patch, &rep.patch);
  accumulate(terms.depth_cons, weights.lambda_depth_cons, &rep.depth_cons);
  rep.total = total.scalar();
  if (report) *report = rep;
  return total;
}

}  // namespace dvs
