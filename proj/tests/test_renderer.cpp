#include "dvs/renderer.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "dvs/fields.hpp"
#include "dvs/rng.hpp"
#include "gradcheck.hpp"

using namespace dvs;
using Mat = Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

namespace {

FieldConfig tiny_config() {
  FieldConfig cfg;
  cfg.width = 16;
  cfg.enc = {4, 2, 2};
  return cfg;
}

Ray unit_z_ray(double near = 2.0, double far = 7.0) {
  Ray ray;
  ray.origin = Vector3d::Zero();
  ray.direction = Vector3d(0, 0, 1);
  ray.near = near;
  ray.far = far;
  return ray;
}

/// Density of an opaque half-space z >= z0 evaluated at sample positions.
RowVectorXd halfspace_sigma(const Mat& x, double z0, double sigma_solid) {
  RowVectorXd sig(x.cols());
  for (long j = 0; j < x.cols(); ++j) sig(j) = x(2, j) >= z0 ? sigma_solid : 0.0;
  return sig;
}

}  // namespace

TEST(SampleRay, MidpointPlacement) {
  Ray ray = unit_z_ray(0.0, 1.0);
  Rng rng(61);
  const RaySamples samples = sample_ray(ray, 4, /*stratified=*/false, rng);
  const VectorXd expect = (VectorXd(4) << 0.125, 0.375, 0.625, 0.875).finished();
  EXPECT_TRUE(samples.s.isApprox(expect, 1e-15));
  // Deltas: consecutive differences, then the bin-sized closing delta.
  EXPECT_DOUBLE_EQ(samples.delta(0), 0.25);
  EXPECT_DOUBLE_EQ(samples.delta(2), 0.25);
  EXPECT_DOUBLE_EQ(samples.delta(3), 0.25);
  // Positions lie on the ray.
  EXPECT_TRUE(samples.x.col(1).isApprox(Vector3d(0, 0, 0.375)));
}

TEST(SampleRay, StratifiedSamplesStayInTheirBins) {
  Ray ray = unit_z_ray(1.0, 3.0);
  Rng rng(62);
  for (int trial = 0; trial < 20; ++trial) {
    const RaySamples samples = sample_ray(ray, 8, /*stratified=*/true, rng);
    for (int i = 0; i < 8; ++i) {
      EXPECT_GE(samples.s(i), 1.0 + i * 0.25);
      EXPECT_LT(samples.s(i), 1.0 + (i + 1) * 0.25);
    }
  }
}

TEST(SampleRay, FixedSeedReproduces) {
  Ray ray = unit_z_ray();
  Rng a(63), b(63);
  const RaySamples sa = sample_ray(ray, 16, true, a);
  const RaySamples sb = sample_ray(ray, 16, true, b);
  EXPECT_EQ(sa.s, sb.s);
}

TEST(Quadrature, VacuumGivesZeroWeightsUnitTransmittance) {
  const Mat sigma = Mat::Zero(1, 8);
  const Mat delta = Mat::Constant(1, 8, 0.5);
  auto [transmittance, w] = quadrature(ad::Var::constant(sigma), ad::Var::constant(delta), 8);
  EXPECT_EQ(w.val().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(transmittance.val().minCoeff(), 1.0);
}

TEST(Quadrature, OpaqueFirstSampleTakesAllWeight) {
  Mat sigma = Mat::Zero(1, 4);
  sigma(0, 0) = 1e6;
  const Mat delta = Mat::Ones(1, 4);
  auto [transmittance, w] = quadrature(ad::Var::constant(sigma), ad::Var::constant(delta), 4);
  EXPECT_NEAR(w.val()(0, 0), 1.0, 1e-12);
  EXPECT_LT(w.val().row(0).segment(1, 3).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Quadrature, HomogeneousMediumMatchesClosedForm) {
  // sum w = 1 - exp(-sigma L) for constant density over arbitrary partitions.
  Rng rng(64);
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 2 + static_cast<int>(rng.uniform_index(127));
    const double sigma_val = rng.uniform(0.0, 5.0);
    const double total_len = rng.uniform(0.1, 20.0);
    Mat delta(1, K);
    double sum = 0;
    for (int i = 0; i < K; ++i) {
      delta(0, i) = rng.uniform(0.01, 1.0);
      sum += delta(0, i);
    }
    delta *= total_len / sum;
    const Mat sigma = Mat::Constant(1, K, sigma_val);
    auto [transmittance, w] =
        quadrature(ad::Var::constant(sigma), ad::Var::constant(delta), K);
    (void)transmittance;
    const double expect = 1.0 - std::exp(-sigma_val * delta.sum());
    EXPECT_NEAR(w.val().sum(), expect, 1e-12) << "trial " << trial;
  }
}

TEST(Quadrature, WeightSumIdentityPerRay) {
  // sum_i w_i + exp(-sum_i sigma_i delta_i) = 1 within 1e-12, multi-ray batch.
  Rng rng(65);
  const int K = 16, R = 5;
  Mat sigma(1, R * K), delta(1, R * K);
  for (int j = 0; j < R * K; ++j) {
    sigma(0, j) = rng.uniform(0.0, 3.0);
    delta(0, j) = rng.uniform(0.01, 0.5);
  }
  auto [transmittance, w] = quadrature(ad::Var::constant(sigma), ad::Var::constant(delta), K);
  (void)transmittance;
  for (int r = 0; r < R; ++r) {
    const double w_sum = w.val().row(0).segment(r * K, K).sum();
    const double tau = (sigma.row(0).segment(r * K, K).array() *
                        delta.row(0).segment(r * K, K).array()).sum();
    EXPECT_NEAR(w_sum + std::exp(-tau), 1.0, 1e-12);
  }
}

TEST(Quadrature, NegativeDensityThrows) {
  const Mat sigma = Mat::Constant(1, 4, -0.1);
  const Mat delta = Mat::Ones(1, 4);
  EXPECT_THROW(quadrature(ad::Var::constant(sigma), ad::Var::constant(delta), 4),
               std::domain_error);
  VectorXd t, w;
  EXPECT_THROW(quadrature_plain(VectorXd::Constant(3, -1.0), VectorXd::Ones(3), &t, &w),
               std::domain_error);
}

TEST(Quadrature, PlainPathMatchesTapePath) {
  Rng rng(66);
  const int K = 32;
  VectorXd sigma(K), delta(K);
  for (int i = 0; i < K; ++i) {
    sigma(i) = rng.uniform(0.0, 4.0);
    delta(i) = rng.uniform(0.01, 0.3);
  }
  VectorXd t_plain, w_plain;
  quadrature_plain(sigma, delta, &t_plain, &w_plain);
  auto [t_var, w_var] = quadrature(ad::Var::constant(Mat(sigma.transpose())),
                                   ad::Var::constant(Mat(delta.transpose())), K);
  EXPECT_LT((t_var.val().row(0).transpose() - t_plain).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((w_var.val().row(0).transpose() - w_plain).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Quadrature, GradientsMatchFiniteDifferences) {
  Rng rng(67);
  Mat sigma(1, 12), delta(1, 12);
  for (int j = 0; j < 12; ++j) {
    sigma(0, j) = rng.uniform(0.1, 2.0);
    delta(0, j) = rng.uniform(0.05, 0.4);
  }
  dvs::test::expect_gradients_match(
      [&](const ad::Var& s) { return quadrature(s, ad::Var::constant(delta), 4).second; },
      sigma, 1e-5);
}

TEST(RenderFrom, VacuumRendersBlackWithZeroOpacity) {
  const int K = 8;
  const Mat sigma = Mat::Zero(1, K);
  const Mat color = Mat::Constant(3, K, 0.7);
  const Mat x = Mat::Random(3, K);
  const Mat s = Mat::Constant(1, K, 3.0);
  const Mat delta = Mat::Constant(1, K, 0.5);
  const RenderVars out =
      render_from(ad::Var::constant(sigma), ad::Var::constant(color), ad::Var::constant(x),
                  ad::Var::constant(s), ad::Var::constant(delta), K);
  EXPECT_EQ(out.color.val().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(out.opacity.val()(0, 0), 0.0);
  EXPECT_EQ(out.surface.val().cwiseAbs().maxCoeff(), 0.0);  // vacuum: Eq. 11 collapses to 0
}

TEST(RenderFrom, ConstantColorFactorsThroughOpacity) {
  Rng rng(68);
  const int K = 16;
  const Vector3d c0(0.2, 0.5, 0.9);
  Mat sigma(1, K), delta(1, K);
  for (int j = 0; j < K; ++j) {
    sigma(0, j) = rng.uniform(0.0, 2.0);
    delta(0, j) = rng.uniform(0.05, 0.3);
  }
  const Mat color = c0.replicate(1, K);
  const RenderVars out = render_from(ad::Var::constant(sigma), ad::Var::constant(color),
                                     ad::Var::constant(Mat::Zero(3, K)),
                                     ad::Var::constant(Mat::Constant(1, K, 1.0)),
                                     ad::Var::constant(delta), K);
  const double A = out.opacity.val()(0, 0);
  EXPECT_TRUE(out.color.val().col(0).isApprox(A * c0, 1e-12));
}

TEST(RenderFrom, OpaqueHalfspaceDepthMatchesIntersection) {
  // Rays at varied angles against the half-space z >= 4: expected depth lands
  // within one quadrature bin of the true ray-plane intersection distance.
  const double z0 = 4.0;
  const int K = 64;
  Rng rng(69);
  for (int trial = 0; trial < 10; ++trial) {
    Ray ray = unit_z_ray(2.0, 7.0);
    ray.direction = Vector3d(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 1.0).normalized();
    Rng ray_rng(100 + trial);
    const RaySamples samples = sample_ray(ray, K, false, ray_rng);
    const RowVectorXd sigma = halfspace_sigma(samples.x, z0, 300.0);
    const RenderVars out = render_from(
        ad::Var::constant(Mat(sigma)), ad::Var::constant(Mat::Constant(3, K, 0.5)),
        ad::Var::constant(samples.x), ad::Var::constant(Mat(samples.s.transpose())),
        ad::Var::constant(Mat(samples.delta.transpose())), K);
    const double s_true = z0 / ray.direction.z();  // ray distance, not camera z
    EXPECT_NEAR(out.depth.val()(0, 0), s_true, 2.0 * (7.0 - 2.0) / K) << "trial " << trial;
    // Surface point sits near the analytic intersection.
    const Vector3d hit = ray.origin + s_true * ray.direction;
    EXPECT_LT((out.surface.val().col(0) - hit).norm(), 2.0 * (7.0 - 2.0) / K);
  }
}

TEST(RenderFrom, DoublingKShrinksMeanDepthError) {
  const double z0 = 4.0;
  std::vector<double> errors;
  for (int K : {16, 32, 64, 128}) {
    double total = 0;
    for (int trial = 0; trial < 10; ++trial) {
      Ray ray = unit_z_ray(2.0, 7.0);
      const double a = 0.05 * trial - 0.2;
      ray.direction = Vector3d(a, -a, 1.0).normalized();
      Rng ray_rng(trial);
      const RaySamples samples = sample_ray(ray, K, false, ray_rng);
      const RowVectorXd sigma = halfspace_sigma(samples.x, z0, 300.0);
      const RenderVars out = render_from(
          ad::Var::constant(Mat(sigma)), ad::Var::constant(Mat::Constant(3, K, 0.5)),
          ad::Var::constant(samples.x), ad::Var::constant(Mat(samples.s.transpose())),
          ad::Var::constant(Mat(samples.delta.transpose())), K);
      total += std::abs(out.depth.val()(0, 0) - z0 / ray.direction.z());
    }
    errors.push_back(total / 10.0);
  }
  for (size_t i = 1; i < errors.size(); ++i) EXPECT_LT(errors[i], errors[i - 1]);
}

TEST(SurfacePoint, SingleOpaqueSample) {
  VectorXd w = VectorXd::Zero(4);
  w(2) = 1.0;
  Mat x(3, 4);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  EXPECT_TRUE(surface_point(w, x).isApprox(Vector3d(3, 7, 11)));
  EXPECT_EQ(surface_point(VectorXd::Zero(4), x), Vector3d::Zero());
}

TEST(DynamicTriple, TimeConstantZeroFlowFieldRendersIdentically) {
  Rng rng(70);
  DynamicField field(tiny_config(), rng);
  // Silence the time input: zero the trunk weight columns that multiply the
  // time encoding (both at the input layer and at the skip re-injection).
  const int pos_dim = field.config().enc_pos_dim();
  const int time_dim = field.config().enc_time_dim();
  Mat w0 = field.params().at("trunk0.weight").val();
  w0.middleCols(pos_dim, time_dim).setZero();
  field.params().set("trunk0.weight", ad::Var::param(w0));
  Mat w_skip = field.params().at("trunk4.weight").val();
  w_skip.middleCols(field.config().width + pos_dim, time_dim).setZero();
  field.params().set("trunk4.weight", ad::Var::param(w_skip));

  Ray ray = unit_z_ray();
  Rng ray_rng(7);
  const RaySamples samples = sample_ray(ray, 8, false, ray_rng);
  const TripleResult triple = render_ray_dynamic_triple(field, ray, samples, 0.5, 0.25);
  ASSERT_TRUE(triple.forward.has_value());
  ASSERT_TRUE(triple.backward.has_value());
  EXPECT_EQ(triple.center.color, triple.forward->color);
  EXPECT_EQ(triple.center.color, triple.backward->color);
  EXPECT_EQ(triple.center.depth, triple.forward->depth);
  EXPECT_EQ(triple.center.weights, triple.backward->weights);
}

TEST(DynamicTriple, BoundaryFramesRenderOnlyExistingNeighbors) {
  Rng rng(71);
  DynamicField field(tiny_config(), rng);
  Ray ray = unit_z_ray();
  Rng ray_rng(8);
  const RaySamples samples = sample_ray(ray, 8, false, ray_rng);
  const TripleResult at_start = render_ray_dynamic_triple(field, ray, samples, 0.0, 0.25);
  EXPECT_TRUE(at_start.forward.has_value());
  EXPECT_FALSE(at_start.backward.has_value());
  const TripleResult at_end = render_ray_dynamic_triple(field, ray, samples, 1.0, 0.25);
  EXPECT_FALSE(at_end.forward.has_value());
  EXPECT_TRUE(at_end.backward.has_value());
}

TEST(DynamicTriple, MixedBoundaryBatchGathersCorrectRays) {
  Rng rng(72);
  DynamicField field(tiny_config(), rng);
  std::vector<Ray> rays;
  std::vector<double> ts = {0.0, 0.5, 1.0};
  for (int i = 0; i < 3; ++i) rays.push_back(unit_z_ray());
  const SampleBatch batch = make_sample_batch(
      rays, ts, 8, false, [](long) { return Rng(9); });
  const TripleRender triple = render_dynamic_triple_batch(field, batch, 0.5);
  EXPECT_EQ(triple.fwd.rays, (std::vector<int>{0, 1}));
  EXPECT_EQ(triple.bwd.rays, (std::vector<int>{1, 2}));
  EXPECT_EQ(triple.fwd.render.color.cols(), 2);
  EXPECT_EQ(triple.bwd.render.color.cols(), 2);
}

TEST(Composite, BlendLimitsReduceToPureRenders) {
  Rng rng(73);
  const int K = 8, R = 3;
  SampleBatch batch;
  for (int r = 0; r < R; ++r) {
    Ray ray = unit_z_ray();
    Rng ray_rng(200 + r);
    batch.append(ray, sample_ray(ray, K, true, ray_rng), 0.5);
  }
  const long M = R * K;
  auto rand_row = [&](double lo, double hi) {
    Mat m(1, M);
    for (long j = 0; j < M; ++j) m(0, j) = rng.uniform(lo, hi);
    return m;
  };
  Mat cs(3, M), cd(3, M);
  for (long j = 0; j < M; ++j)
    for (int i = 0; i < 3; ++i) {
      cs(i, j) = rng.uniform();
      cd(i, j) = rng.uniform();
    }
  StaticOutput at_s{ad::Var::constant(rand_row(0.1, 2.0)), ad::Var::constant(cs)};

  // p = 0: composite equals the static-only render.
  DynamicOutput at_d;
  at_d.sigma = ad::Var::constant(rand_row(0.1, 2.0));
  at_d.color = ad::Var::constant(cd);
  at_d.flow_fwd = ad::Var::constant(Mat::Zero(3, M));
  at_d.flow_bwd = ad::Var::constant(Mat::Zero(3, M));
  at_d.p = ad::Var::constant(Mat::Zero(1, M));
  CompositeRender zero_p = render_composite_from(at_s, at_d, batch);
  EXPECT_TRUE(zero_p.full.color.val().isApprox(zero_p.static_only.color.val(), 1e-12));
  EXPECT_TRUE(zero_p.full.depth.val().isApprox(zero_p.static_only.depth.val(), 1e-12));

  // p = 1: composite equals a dynamic-only render.
  at_d.p = ad::Var::constant(Mat::Ones(1, M));
  CompositeRender one_p = render_composite_from(at_s, at_d, batch);
  const RenderVars dyn_only = render_from(
      at_d.sigma, at_d.color, ad::Var::constant(batch.x),
      ad::Var::constant(Mat(batch.s)), ad::Var::constant(Mat(batch.delta)), K);
  EXPECT_TRUE(one_p.full.color.val().isApprox(dyn_only.color.val(), 1e-12));
  EXPECT_TRUE(one_p.full.opacity.val().isApprox(dyn_only.opacity.val(), 1e-12));

  // p = 0.5 with identical fields degenerates to the shared field.
  at_d.sigma = at_s.sigma;
  at_d.color = at_s.color;
  at_d.p = ad::Var::constant(Mat::Constant(1, M, 0.5));
  CompositeRender half_p = render_composite_from(at_s, at_d, batch);
  EXPECT_TRUE(half_p.full.color.val().isApprox(half_p.static_only.color.val(), 1e-12));
}

TEST(Composite, RenderedBlendingWeightIsAlphaCompositedP) {
  // Hand case: one ray, two samples, all density in sample 0 with p = 0.8.
  SampleBatch batch;
  Ray ray = unit_z_ray();
  Rng ray_rng(74);
  batch.append(ray, sample_ray(ray, 2, false, ray_rng), 0.5);
  StaticOutput at_s{ad::Var::constant(Mat::Zero(1, 2)),
                    ad::Var::constant(Mat::Constant(3, 2, 0.5))};
  DynamicOutput at_d;
  at_d.sigma = ad::Var::constant((Mat(1, 2) << 1e6, 0.0).finished());
  at_d.color = ad::Var::constant(Mat::Constant(3, 2, 0.5));
  at_d.flow_fwd = ad::Var::constant(Mat::Zero(3, 2));
  at_d.flow_bwd = ad::Var::constant(Mat::Zero(3, 2));
  at_d.p = ad::Var::constant((Mat(1, 2) << 0.8, 0.3).finished());
  const CompositeRender out = render_composite_from(at_s, at_d, batch);
  // w ~ (1, 0): p_hat = (1*0.8 + 0*0.3) / (1 + eps) ~ 0.8.
  EXPECT_NEAR(out.p_hat.val()(0, 0), 0.8, 1e-6);
}

TEST(RenderGradients, StaticRenderDifferentiableWrtParams) {
  Rng rng(75);
  StaticField field(tiny_config(), rng);
  SampleBatch batch;
  for (int r = 0; r < 2; ++r) {
    Ray ray = unit_z_ray(0.5, 2.0);
    ray.direction = Vector3d(0.1 * r, 0.05, 1.0).normalized();
    Rng ray_rng(300 + r);
    batch.append(ray, sample_ray(ray, 8, true, ray_rng), 0.0);
  }
  for (const std::string& name : {"sigma.weight", "trunk5.weight"}) {
    const Mat w0 = field.params().at(name).val();
    dvs::test::expect_gradients_match(
        [&](const ad::Var& w) {
          field.params().set(name, w);
          const RenderVars out = render_static_batch(field, batch);
          return ad::vcat({out.color, out.depth, out.opacity});
        },
        w0, 1e-3);
    field.params().set(name, ad::Var::param(w0));
  }
}

TEST(PatchRender, SinglePixelPatchEqualsSingleRayRender) {
  Rng rng(76);
  StaticField field(tiny_config(), rng);
  Camera cam{8.0, 8.0, 3.5, 3.5, 8, 8};
  const Pose pose = Pose::identity();
  const PixelPatch patch{2, 3, 1, 1};
  const PatchRender pr =
      render_patch(&field, nullptr, cam, pose, patch, 0.0, RenderMode::kStatic, 8, 0.5, 3.0,
                   false, [](long) { return Rng(0); });
  Ray ray = camera_ray(cam, pose, 2, 3);
  ray.near = 0.5;
  ray.far = 3.0;
  Rng ray_rng(0);
  const RenderResult single = render_ray_static(field, ray, sample_ray(ray, 8, false, ray_rng));
  EXPECT_TRUE(pr.color.val().col(0).isApprox(single.color, 1e-12));
  EXPECT_NEAR(pr.depth.val()(0, 0), single.depth, 1e-12);
}

TEST(PatchRender, FullFramePatchEqualsPerPixelLoop) {
  Rng rng(77);
  StaticField sfield(tiny_config(), rng);
  DynamicField dfield(tiny_config(), rng);
  Camera cam{6.0, 6.0, 2.5, 2.5, 6, 6};
  const Pose pose = Pose::identity();
  const PixelPatch full{0, 0, 6, 1};
  const PatchRender pr =
      render_patch(&sfield, &dfield, cam, pose, full, 0.5, RenderMode::kComposite, 6, 0.5, 3.0,
                   false, [](long) { return Rng(0); });
  for (int j = 0; j < full.pixel_count(); ++j) {
    Ray ray = camera_ray(cam, pose, full.u_at(j), full.v_at(j));
    ray.near = 0.5;
    ray.far = 3.0;
    Rng ray_rng(0);
    const RenderResult one =
        render_ray_composite(sfield, dfield, ray, sample_ray(ray, 6, false, ray_rng), 0.5);
    EXPECT_TRUE(pr.color.val().col(j).isApprox(one.color, 1e-12)) << "pixel " << j;
  }
}

TEST(PatchRender, DeterministicRerenderIsIdentical) {
  Rng rng(78);
  DynamicField field(tiny_config(), rng);
  Camera cam{6.0, 6.0, 2.5, 2.5, 6, 6};
  const PixelPatch patch{1, 1, 3, 1};
  auto render_once = [&]() {
    return render_patch(nullptr, &field, cam, Pose::identity(), patch, 0.25,
                        RenderMode::kDynamic, 8, 0.5, 3.0, true,
                        [](long j) { return derive_rng(99, {static_cast<uint64_t>(j)}); });
  };
  const PatchRender a = render_once();
  const PatchRender b = render_once();
  EXPECT_EQ(a.color.val(), b.color.val());
  EXPECT_EQ(a.depth.val(), b.depth.val());
}
