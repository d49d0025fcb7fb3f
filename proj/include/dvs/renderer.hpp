#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dvs/autodiff.hpp"
#include "dvs/fields.hpp"
#include "dvs/geometry.hpp"
#include "dvs/rng.hpp"

namespace dvs {

/// Sample distances/positions along one ray. The last delta closes the final
/// bin (sentinel_factor * the mean bin width). Keeping it the size of an
/// ordinary bin matters: a huge closing delta would let a barely-dense final
/// sample absorb all remaining transmittance, and training then parks the
/// whole image on that far shell instead of finding surfaces.
struct RaySamples {
  Eigen::VectorXd s;       // K distances, strictly increasing, in [near, far]
  Eigen::VectorXd delta;   // K deltas; delta[K-1] closes the last bin
  Eigen::MatrixXd x;       // 3 x K world positions o + s_i d
};

inline RaySamples sample_ray(const Ray& ray, int K, bool stratified, Rng& rng,
                             double sentinel_factor = 1.0) {
  if (K < 2) throw std::invalid_argument("sample_ray: K must be >= 2");
  RaySamples out;
  out.s.resize(K);
  const double bin = (ray.far - ray.near) / K;
  for (int i = 0; i < K; ++i) {
    const double jitter = stratified ? rng.uniform() : 0.5;
    out.s(i) = ray.near + (i + jitter) * bin;
  }
  out.delta.resize(K);
  for (int i = 0; i + 1 < K; ++i) out.delta(i) = out.s(i + 1) - out.s(i);
  out.delta(K - 1) = sentinel_factor * bin;
  out.x.resize(3, K);
  for (int i = 0; i < K; ++i) out.x.col(i) = ray.origin + out.s(i) * ray.direction;
  return out;
}

/// Volume-rendering quadrature over per-ray segments of K consecutive
/// columns: T_i = exp(-sum_{j<i} sigma_j delta_j), alpha_i = 1 - exp(-sigma_i
/// delta_i), w_i = T_i alpha_i. Returns (T, w), both 1 x M.
inline std::pair<ad::Var, ad::Var> quadrature(const ad::Var& sigma, const ad::Var& delta,
                                              int K) {
  if (sigma.val().minCoeff() < 0.0) throw std::domain_error("quadrature: negative density");
  if (delta.val().minCoeff() <= 0.0) throw std::domain_error("quadrature: deltas must be > 0");
  const ad::Var sig_delta = ad::mul(sigma, delta);
  const ad::Var transmittance = ad::exp(ad::neg(ad::cumsum_excl_segments(sig_delta, K)));
  const ad::Var alpha = ad::add_scalar(ad::neg(ad::exp(ad::neg(sig_delta))), 1.0);
  return {transmittance, ad::mul(transmittance, alpha)};
}

/// Plain-arithmetic quadrature used by the analytic-scene oracle.
inline void quadrature_plain(const Eigen::VectorXd& sigma, const Eigen::VectorXd& delta,
                             Eigen::VectorXd* transmittance, Eigen::VectorXd* weights) {
  if (sigma.size() && sigma.minCoeff() < 0.0)
    throw std::domain_error("quadrature: negative density");
  const long k = sigma.size();
  transmittance->resize(k);
  weights->resize(k);
  double tau = 0.0;
  for (long i = 0; i < k; ++i) {
    (*transmittance)(i) = std::exp(-tau);
    const double sd = sigma(i) * delta(i);
    (*weights)(i) = (*transmittance)(i) * (1.0 - std::exp(-sd));
    tau += sd;
  }
}

/// Eq. 11's unnormalized expected surface point over one ray.
inline Eigen::Vector3d surface_point(const Eigen::VectorXd& weights,
                                     const Eigen::MatrixXd& positions) {
  return positions * weights;
}

/// A batch of R rays sampled K points each; columns are grouped per ray
/// (ray r occupies columns [r*K, (r+1)*K)). All fields are plain constants;
/// gradients enter through field queries, not geometry.
struct SampleBatch {
  int K = 0;
  long num_rays = 0;
  Eigen::MatrixXd x;          // 3 x RK
  Eigen::MatrixXd dirs;       // 3 x RK (ray direction replicated over samples)
  Eigen::RowVectorXd s;       // 1 x RK
  Eigen::RowVectorXd delta;   // 1 x RK
  Eigen::RowVectorXd t;       // 1 x RK normalized timestamps (empty for static)
  std::vector<double> ray_t;  // R per-ray timestamps
  Eigen::MatrixXd ray_dirs;   // 3 x R

  void append(const Ray& ray, const RaySamples& samples, double t_ray) {
    const int k = static_cast<int>(samples.s.size());
    if (K == 0) K = k;
    if (k != K) throw std::invalid_argument("SampleBatch: inconsistent K");
    const long base = num_rays * K;
    x.conservativeResize(3, base + K);
    dirs.conservativeResize(3, base + K);
    s.conservativeResize(base + K);
    delta.conservativeResize(base + K);
    t.conservativeResize(base + K);
    x.middleCols(base, K) = samples.x;
    for (int i = 0; i < K; ++i) {
      dirs.col(base + i) = ray.direction;
      s(base + i) = samples.s(i);
      delta(base + i) = samples.delta(i);
      t(base + i) = t_ray;
    }
    ray_t.push_back(t_ray);
    ray_dirs.conservativeResize(3, num_rays + 1);
    ray_dirs.col(num_rays) = ray.direction;
    ++num_rays;
  }
};

/// Builds a batch by sampling each ray with its own rng stream (index-keyed
/// so parallel evaluation order can never change results).
inline SampleBatch make_sample_batch(const std::vector<Ray>& rays,
                                     const std::vector<double>& t, int K, bool stratified,
                                     const std::function<Rng(long)>& rng_for_ray,
                                     double sentinel_factor = 1.0) {
  if (rays.size() != t.size())
    throw std::invalid_argument("make_sample_batch: rays/timestamps size mismatch");
  SampleBatch batch;
  for (size_t i = 0; i < rays.size(); ++i) {
    Rng rng = rng_for_ray(static_cast<long>(i));
    batch.append(rays[i], sample_ray(rays[i], K, stratified, rng, sentinel_factor), t[i]);
  }
  return batch;
}

/// Differentiable render bundle over a ray batch.
struct RenderVars {
  ad::Var color;    // 3 x R
  ad::Var depth;    // 1 x R, expected termination distance (sum w_i s_i)
  ad::Var weights;  // 1 x RK quadrature weights
  ad::Var opacity;  // 1 x R accumulated opacity (sum of weights)
  ad::Var surface;  // 3 x R expected surface point (sum w_i x_i, unnormalized)
};

/// Quadrature + weighted sums. `positions` and the per-sample quantities may
/// carry gradients (warped positions do); s/delta are usually constants.
inline RenderVars render_from(const ad::Var& sigma, const ad::Var& color,
                              const ad::Var& positions, const ad::Var& s, const ad::Var& delta,
                              int K) {
  auto [transmittance, w] = quadrature(sigma, delta, K);
  (void)transmittance;
  RenderVars out;
  out.weights = w;
  out.color = ad::sum_segments(ad::mul_rows(color, w), K);
  out.depth = ad::sum_segments(ad::mul(w, s), K);
  out.opacity = ad::sum_segments(w, K);
  out.surface = ad::sum_segments(ad::mul_rows(positions, w), K);
  return out;
}

inline RenderVars render_static_batch(const StaticField& field, const SampleBatch& batch) {
  const StaticOutput out =
      field.query(ad::Var::constant(batch.x), ad::Var::constant(batch.dirs));
  return render_from(out.sigma, out.color, ad::Var::constant(batch.x),
                     ad::Var::constant(Eigen::MatrixXd(batch.s)),
                     ad::Var::constant(Eigen::MatrixXd(batch.delta)), batch.K);
}

namespace detail {

/// Plain column gather of whole K-blocks (constants bypass the tape).
inline Eigen::MatrixXd gather_cols_plain(const Eigen::MatrixXd& m, int K,
                                         const std::vector<int>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<long>(idx.size()) * K);
  for (size_t i = 0; i < idx.size(); ++i)
    out.middleCols(static_cast<long>(i) * K, K) = m.middleCols(idx[i] * K, K);
  return out;
}

}  // namespace detail

/// One neighbor-time render: the subset of batch rays (K-block indices) that
/// have this neighbor, the field outputs at the flow-warped points, the
/// warped points themselves, and the resulting render.
struct NeighborRender {
  std::vector<int> rays;     // indices into the batch (empty: no such neighbor)
  ad::Var warped_x;          // 3 x |rays|*K
  DynamicOutput at_warped;   // field outputs at (warped_x, t +- dt)
  RenderVars render;
};

/// Center render at t plus forward (t + dt) and backward (t - dt) renders of
/// the flow-warped samples over the same deltas (Eq. 4/5 and Eq. 13).
struct TripleRender {
  DynamicOutput at_t;
  RenderVars center;
  NeighborRender fwd;
  NeighborRender bwd;
};

/// Continues from a center-time query (so callers can share it with the
/// composite render). dt is the normalized frame step 1/(N-1).
inline TripleRender render_dynamic_triple_from(const DynamicField& field,
                                               const DynamicOutput& at_t,
                                               const SampleBatch& batch, double dt) {
  TripleRender out;
  out.at_t = at_t;
  out.center = render_from(at_t.sigma, at_t.color, ad::Var::constant(batch.x),
                           ad::Var::constant(Eigen::MatrixXd(batch.s)),
                           ad::Var::constant(Eigen::MatrixXd(batch.delta)), batch.K);

  constexpr double kTimeEps = 1e-9;
  for (long r = 0; r < batch.num_rays; ++r) {
    if (batch.ray_t[r] + dt <= 1.0 + kTimeEps) out.fwd.rays.push_back(static_cast<int>(r));
    if (batch.ray_t[r] - dt >= -kTimeEps) out.bwd.rays.push_back(static_cast<int>(r));
  }

  const auto render_neighbor = [&](NeighborRender& nbr, const ad::Var& flow, double signed_dt) {
    if (nbr.rays.empty()) return;
    const Eigen::MatrixXd x_g = detail::gather_cols_plain(batch.x, batch.K, nbr.rays);
    const Eigen::MatrixXd d_g = detail::gather_cols_plain(batch.dirs, batch.K, nbr.rays);
    const Eigen::MatrixXd s_g =
        detail::gather_cols_plain(Eigen::MatrixXd(batch.s), batch.K, nbr.rays);
    const Eigen::MatrixXd delta_g =
        detail::gather_cols_plain(Eigen::MatrixXd(batch.delta), batch.K, nbr.rays);
    Eigen::MatrixXd t_g =
        detail::gather_cols_plain(Eigen::MatrixXd(batch.t), batch.K, nbr.rays);
    t_g.array() += signed_dt;
    // Clamp roundoff (e.g. 10/11 + 1/11 can land a hair above 1).
    t_g = t_g.cwiseMax(0.0).cwiseMin(1.0);
    const ad::Var flow_g = ad::gather_blocks(flow, batch.K, nbr.rays);
    nbr.warped_x = ad::add(ad::Var::constant(x_g), flow_g);
    nbr.at_warped = field.query(nbr.warped_x, ad::Var::constant(d_g), ad::Var::constant(t_g));
    nbr.render = render_from(nbr.at_warped.sigma, nbr.at_warped.color, nbr.warped_x,
                             ad::Var::constant(s_g), ad::Var::constant(delta_g), batch.K);
  };
  render_neighbor(out.fwd, at_t.flow_fwd, dt);
  render_neighbor(out.bwd, at_t.flow_bwd, -dt);
  return out;
}

inline TripleRender render_dynamic_triple_batch(const DynamicField& field,
                                                const SampleBatch& batch, double dt) {
  const DynamicOutput at_t =
      field.query(ad::Var::constant(batch.x), ad::Var::constant(batch.dirs),
                  ad::Var::constant(Eigen::MatrixXd(batch.t)));
  return render_dynamic_triple_from(field, at_t, batch, dt);
}

/// Composite static+dynamic render (Eqs. 6-8 with the additive density
/// mixture), plus the alpha-composited blending weight and a static-only
/// render over the same samples (shared static query).
struct CompositeRender {
  StaticOutput at_static;
  DynamicOutput at_dynamic;
  RenderVars full;
  RenderVars static_only;
  ad::Var p_hat;  // 1 x R, sum(w p)/(sum w + eps) over the composite weights
};

inline CompositeRender render_composite_from(const StaticOutput& at_s, const DynamicOutput& at_d,
                                             const SampleBatch& batch) {
  constexpr double kEps = 1e-9;
  CompositeRender out;
  out.at_static = at_s;
  out.at_dynamic = at_d;

  const ad::Var one_minus_p = ad::add_scalar(ad::neg(at_d.p), 1.0);
  const ad::Var sig_s_blend = ad::mul(one_minus_p, at_s.sigma);
  const ad::Var sig_d_blend = ad::mul(at_d.p, at_d.sigma);
  const ad::Var sigma_full = ad::add(sig_s_blend, sig_d_blend);
  const ad::Var numer =
      ad::add(ad::mul_rows(at_s.color, sig_s_blend), ad::mul_rows(at_d.color, sig_d_blend));
  const ad::Var denom = ad::clamp_min(sigma_full, kEps);
  const ad::Var color_full = ad::div(numer, ad::vcat({denom, denom, denom}));

  const ad::Var xs = ad::Var::constant(batch.x);
  const ad::Var s = ad::Var::constant(Eigen::MatrixXd(batch.s));
  const ad::Var delta = ad::Var::constant(Eigen::MatrixXd(batch.delta));
  out.full = render_from(sigma_full, color_full, xs, s, delta, batch.K);
  out.static_only = render_from(at_s.sigma, at_s.color, xs, s, delta, batch.K);
  out.p_hat = ad::div(ad::sum_segments(ad::mul(out.full.weights, at_d.p), batch.K),
                      ad::add_scalar(out.full.opacity, kEps));
  return out;
}

inline CompositeRender render_composite_batch(const StaticField& sfield,
                                              const DynamicField& dfield,
                                              const SampleBatch& batch) {
  const StaticOutput at_s =
      sfield.query(ad::Var::constant(batch.x), ad::Var::constant(batch.dirs));
  const DynamicOutput at_d =
      dfield.query(ad::Var::constant(batch.x), ad::Var::constant(batch.dirs),
                   ad::Var::constant(Eigen::MatrixXd(batch.t)));
  return render_composite_from(at_s, at_d, batch);
}

// ---------------------------------------------------------------------------
// Single-ray wrappers (spec-shaped results; training uses the batched path)
// ---------------------------------------------------------------------------

struct RenderResult {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double depth = 0;
  Eigen::VectorXd weights;
  double opacity = 0;
  Eigen::Vector3d surface = Eigen::Vector3d::Zero();
};

namespace detail {

inline RenderResult extract_ray(const RenderVars& vars, int ray, int K) {
  RenderResult out;
  out.color = vars.color.val().col(ray);
  out.depth = vars.depth.val()(0, ray);
  out.weights = vars.weights.val().row(0).segment(static_cast<long>(ray) * K, K).transpose();
  out.opacity = vars.opacity.val()(0, ray);
  out.surface = vars.surface.val().col(ray);
  return out;
}

inline SampleBatch single_ray_batch(const Ray& ray, const RaySamples& samples, double t) {
  SampleBatch batch;
  batch.append(ray, samples, t);
  return batch;
}

}  // namespace detail

inline RenderResult render_ray_static(const StaticField& field, const Ray& ray,
                                      const RaySamples& samples) {
  const SampleBatch batch = detail::single_ray_batch(ray, samples, 0.0);
  return detail::extract_ray(render_static_batch(field, batch), 0, batch.K);
}

/// Triple render of one ray; absent neighbors (boundary frames) are nullopt.
struct TripleResult {
  std::optional<RenderResult> backward;
  RenderResult center;
  std::optional<RenderResult> forward;
};

inline TripleResult render_ray_dynamic_triple(const DynamicField& field, const Ray& ray,
                                              const RaySamples& samples, double t, double dt) {
  const SampleBatch batch = detail::single_ray_batch(ray, samples, t);
  const TripleRender triple = render_dynamic_triple_batch(field, batch, dt);
  TripleResult out;
  out.center = detail::extract_ray(triple.center, 0, batch.K);
  if (!triple.fwd.rays.empty()) out.forward = detail::extract_ray(triple.fwd.render, 0, batch.K);
  if (!triple.bwd.rays.empty()) out.backward = detail::extract_ray(triple.bwd.render, 0, batch.K);
  return out;
}

inline RenderResult render_ray_composite(const StaticField& sfield, const DynamicField& dfield,
                                         const Ray& ray, const RaySamples& samples, double t) {
  const SampleBatch batch = detail::single_ray_batch(ray, samples, t);
  return detail::extract_ray(render_composite_batch(sfield, dfield, batch).full, 0, batch.K);
}

// ---------------------------------------------------------------------------
// Patch rendering
// ---------------------------------------------------------------------------

enum class RenderMode { kStatic, kDynamic, kComposite };

struct PatchRender {
  ad::Var color;    // 3 x P^2
  ad::Var depth;    // 1 x P^2
  ad::Var opacity;  // 1 x P^2
};

/// Renders a pixel patch by batching its rays. `rng_for_ray` is keyed by the
/// patch-local pixel index; pass stratified=false for deterministic renders.
inline PatchRender render_patch(const StaticField* sfield, const DynamicField* dfield,
                                const Camera& camera, const Pose& pose, const PixelPatch& patch,
                                double t, RenderMode mode, int K, double near, double far,
                                bool stratified, const std::function<Rng(long)>& rng_for_ray,
                                double sentinel_factor = 1.0) {
  patch.validate(camera);
  std::vector<Ray> rays;
  std::vector<double> ts;
  rays.reserve(patch.pixel_count());
  for (int j = 0; j < patch.pixel_count(); ++j) {
    Ray ray = camera_ray(camera, pose, patch.u_at(j), patch.v_at(j));
    ray.near = near;
    ray.far = far;
    rays.push_back(ray);
    ts.push_back(t);
  }
  const SampleBatch batch =
      make_sample_batch(rays, ts, K, stratified, rng_for_ray, sentinel_factor);

  RenderVars vars;
  switch (mode) {
    case RenderMode::kStatic:
      if (!sfield) throw std::invalid_argument("render_patch: static mode needs a static field");
      vars = render_static_batch(*sfield, batch);
      break;
    case RenderMode::kDynamic: {
      if (!dfield) throw std::invalid_argument("render_patch: dynamic mode needs a dynamic field");
      const DynamicOutput at_t =
          dfield->query(ad::Var::constant(batch.x), ad::Var::constant(batch.dirs),
                        ad::Var::constant(Eigen::MatrixXd(batch.t)));
      vars = render_from(at_t.sigma, at_t.color, ad::Var::constant(batch.x),
                         ad::Var::constant(Eigen::MatrixXd(batch.s)),
                         ad::Var::constant(Eigen::MatrixXd(batch.delta)), batch.K);
      break;
    }
    case RenderMode::kComposite:
      if (!sfield || !dfield)
        throw std::invalid_argument("render_patch: composite mode needs both fields");
      vars = render_composite_batch(*sfield, *dfield, batch).full;
      break;
  }
  return {vars.color, vars.depth, vars.opacity};
}

}  // namespace dvs
