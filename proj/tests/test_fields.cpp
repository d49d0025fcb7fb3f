#include "dvs/fields.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "dvs/rng.hpp"
#include "gradcheck.hpp"

using namespace dvs;
using Mat = Eigen::MatrixXd;

namespace {

FieldConfig tiny_config() {
  FieldConfig cfg;
  cfg.width = 16;
  cfg.hidden_layers = 8;
  cfg.skip_layer = 4;
  cfg.enc = {4, 2, 2};
  return cfg;
}

Mat random_mat(long r, long c, dvs::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (long j = 0; j < c; ++j)
    for (long i = 0; i < r; ++i) m(i, j) = rng.uniform(lo, hi);
  return m;
}

Mat random_unit_dirs(long c, dvs::Rng& rng) {
  Mat m(3, c);
  for (long j = 0; j < c; ++j) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    m.col(j) = v.normalized();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Straight-line re-implementation of the forward pass (the arithmetic oracle:
// plain Eigen, no tape) reading weights out of the trained ParamSet.
// ---------------------------------------------------------------------------

Mat ref_encode(const Mat& x, int num_freqs) {
  const long k = x.rows();
  Mat out(k * (2 * num_freqs + 1), x.cols());
  out.topRows(k) = x;
  const double pi = 3.14159265358979323846;
  for (int l = 0; l < num_freqs; ++l) {
    const double f = std::ldexp(pi, l);
    out.middleRows(k + 2 * l * k, k) = (x * f).array().sin();
    out.middleRows(k + (2 * l + 1) * k, k) = (x * f).array().cos();
  }
  return out;
}

Mat ref_linear(const ParamSet& p, const std::string& name, const Mat& in) {
  return (p.at(name + ".weight").val() * in).colwise() + p.at(name + ".bias").val().col(0);
}

Mat ref_relu(const Mat& m) { return m.cwiseMax(0.0); }

Mat ref_softplus(const Mat& m) {
  return m.unaryExpr([](double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
  });
}

Mat ref_sigmoid(const Mat& m) {
  return m.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Mat ref_trunk(const ParamSet& p, const FieldConfig& cfg, const Mat& enc) {
  Mat h = ref_relu(ref_linear(p, "trunk0", enc));
  for (int i = 1; i < cfg.hidden_layers; ++i) {
    Mat in;
    if (i == cfg.skip_layer) {
      in.resize(h.rows() + enc.rows(), h.cols());
      in << h, enc;
    } else {
      in = h;
    }
    h = ref_relu(ref_linear(p, "trunk" + std::to_string(i), in));
  }
  return h;
}

void ref_static_forward(const StaticField& field, const Mat& x, const Mat& d, Mat* sigma,
                        Mat* color) {
  const auto& p = field.params();
  const auto& cfg = field.config();
  const Mat h = ref_trunk(p, cfg, ref_encode(x, cfg.enc.l_pos));
  *sigma = ref_softplus((ref_linear(p, "sigma", h).array() + cfg.density_shift).matrix());
  const Mat feat = ref_linear(p, "feature", h);
  Mat color_in(feat.rows() + cfg.enc_dir_dim(), feat.cols());
  color_in << feat, ref_encode(d, cfg.enc.l_dir);
  *color = ref_sigmoid(ref_linear(p, "color", ref_relu(ref_linear(p, "color_hidden", color_in))));
}

void ref_dynamic_forward(const DynamicField& field, const Mat& x, const Mat& d, const Mat& t,
                         Mat* sigma, Mat* color, Mat* ff, Mat* fb, Mat* pb) {
  const auto& p = field.params();
  const auto& cfg = field.config();
  Mat enc(cfg.enc_pos_dim() + cfg.enc_time_dim(), x.cols());
  enc << ref_encode(x, cfg.enc.l_pos), ref_encode(t, cfg.enc.l_time);
  const Mat h = ref_trunk(p, cfg, enc);
  *sigma = ref_softplus((ref_linear(p, "sigma", h).array() + cfg.density_shift).matrix());
  const Mat feat = ref_linear(p, "feature", h);
  Mat color_in(feat.rows() + cfg.enc_dir_dim(), feat.cols());
  color_in << feat, ref_encode(d, cfg.enc.l_dir);
  *color = ref_sigmoid(ref_linear(p, "color", ref_relu(ref_linear(p, "color_hidden", color_in))));
  *ff = cfg.max_flow * ref_linear(p, "flow_fwd", h);
  *fb = cfg.max_flow * ref_linear(p, "flow_bwd", h);
  *pb = ref_sigmoid(ref_linear(p, "p_head", h));
}

}  // namespace

TEST(Encoding, DimensionFormulaHolds) {
  for (int k : {1, 2, 3, 5}) {
    for (int L : {0, 1, 4, 10}) {
      const Mat x = Mat::Ones(k, 2);
      EXPECT_EQ(ad::positional_encode(ad::Var::constant(x), L).rows(), k * (2 * L + 1));
    }
  }
  const FieldConfig cfg = tiny_config();
  EXPECT_EQ(cfg.enc_pos_dim(), 3 * (2 * 4 + 1));
  EXPECT_EQ(cfg.enc_time_dim(), 2 * 2 + 1);
}

TEST(Encoding, ZeroInputGivesZeroSinOneCos) {
  const Mat enc = ad::positional_encode(ad::Var::constant(Mat::Zero(2, 1)), 3).val();
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(enc(2 + 4 * l, 0), 0.0);      // sin rows
    EXPECT_EQ(enc(2 + 4 * l + 1, 0), 0.0);
    EXPECT_EQ(enc(4 + 4 * l, 0), 1.0);      // cos rows
    EXPECT_EQ(enc(4 + 4 * l + 1, 0), 1.0);
  }
}

TEST(StaticField, ZeroedHeadsGiveShiftedSoftplusAndMidGray) {
  dvs::Rng rng(41);
  StaticField field(tiny_config(), rng);
  field.params().set("sigma.weight", ad::Var::param(Mat::Zero(1, 16)));
  field.params().set("color.weight", ad::Var::param(Mat::Zero(3, 8)));
  const StaticSample s =
      query_static_point(field, {0.3, -0.2, 0.5}, Eigen::Vector3d(1, 1, 0).normalized());
  // A zeroed head leaves only the density shift: softplus(shift), which the
  // default shift places near zero so fresh fields start almost transparent.
  EXPECT_DOUBLE_EQ(s.sigma, std::log1p(std::exp(field.config().density_shift)));
  EXPECT_LT(s.sigma, 0.05);
  EXPECT_TRUE(s.color.isApprox(Eigen::Vector3d(0.5, 0.5, 0.5)));
}

TEST(StaticField, DensityIsDirectionInvariant) {
  dvs::Rng rng(42);
  StaticField field(tiny_config(), rng);
  const Eigen::Vector3d x(0.1, 0.4, -0.3);
  const StaticSample a = query_static_point(field, x, Eigen::Vector3d(0, 0, 1));
  const StaticSample b = query_static_point(field, x, Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(a.sigma, b.sigma);  // exact: direction joins after the density head
  EXPECT_FALSE(a.color.isApprox(b.color));
}

TEST(DynamicField, DensityFlowAndPAreDirectionInvariant) {
  dvs::Rng rng(43);
  DynamicField field(tiny_config(), rng);
  const Eigen::Vector3d x(0.1, 0.4, -0.3);
  const DynamicSample a = query_dynamic_point(field, x, Eigen::Vector3d(0, 0, 1), 0.5);
  const DynamicSample b = query_dynamic_point(field, x, Eigen::Vector3d(0, 1, 0), 0.5);
  EXPECT_EQ(a.sigma, b.sigma);
  EXPECT_EQ(a.p, b.p);
  EXPECT_EQ(a.flow_fwd, b.flow_fwd);
  EXPECT_EQ(a.flow_bwd, b.flow_bwd);
}

TEST(StaticField, MatchesStraightLineArithmeticOracle) {
  dvs::Rng rng(44);
  StaticField field(tiny_config(), rng);
  const Mat x = random_mat(3, 5, rng);
  const Mat d = random_unit_dirs(5, rng);
  const StaticOutput out = field.query(ad::Var::constant(x), ad::Var::constant(d));
  Mat sigma_ref, color_ref;
  ref_static_forward(field, x, d, &sigma_ref, &color_ref);
  EXPECT_LT((out.sigma.val() - sigma_ref).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((out.color.val() - color_ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DynamicField, MatchesStraightLineArithmeticOracle) {
  dvs::Rng rng(45);
  DynamicField field(tiny_config(), rng);
  // Perturb the zero-initialized flow heads so the oracle sees nonzero flow.
  field.params().set("flow_fwd.weight", ad::Var::param(random_mat(3, 16, rng)));
  const Mat x = random_mat(3, 5, rng);
  const Mat d = random_unit_dirs(5, rng);
  const Mat t = random_mat(1, 5, rng, 0.0, 1.0);
  const DynamicOutput out =
      field.query(ad::Var::constant(x), ad::Var::constant(d), ad::Var::constant(t));
  Mat sigma_ref, color_ref, ff_ref, fb_ref, p_ref;
  ref_dynamic_forward(field, x, d, t, &sigma_ref, &color_ref, &ff_ref, &fb_ref, &p_ref);
  EXPECT_LT((out.sigma.val() - sigma_ref).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((out.color.val() - color_ref).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((out.flow_fwd.val() - ff_ref).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((out.flow_bwd.val() - fb_ref).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((out.p.val() - p_ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DynamicField, FlowHeadsStartAtExactlyZero) {
  dvs::Rng rng(46);
  DynamicField field(tiny_config(), rng);
  const DynamicSample s = query_dynamic_point(
      field, {0.7, -0.1, 0.2}, Eigen::Vector3d(0, 0, 1), 0.25);
  EXPECT_EQ(s.flow_fwd, Eigen::Vector3d::Zero());
  EXPECT_EQ(s.flow_bwd, Eigen::Vector3d::Zero());
}

TEST(DynamicField, ZeroedPHeadGivesHalf) {
  dvs::Rng rng(47);
  DynamicField field(tiny_config(), rng);
  field.params().set("p_head.weight", ad::Var::param(Mat::Zero(1, 16)));
  const DynamicSample s =
      query_dynamic_point(field, {0.7, -0.1, 0.2}, Eigen::Vector3d(0, 0, 1), 0.25);
  EXPECT_DOUBLE_EQ(s.p, 0.5);
}

TEST(DynamicField, WarpedQueryIsQueryAtShiftedPoint) {
  dvs::Rng rng(48);
  DynamicField field(tiny_config(), rng);
  const Mat x = random_mat(3, 4, rng);
  const Mat f = random_mat(3, 4, rng, -0.1, 0.1);
  const Mat d = random_unit_dirs(4, rng);
  const Mat t2 = Mat::Constant(1, 4, 0.75);
  const DynamicOutput warped = field.query_warped(
      ad::Var::constant(x), ad::Var::constant(f), ad::Var::constant(d), ad::Var::constant(t2));
  const DynamicOutput direct =
      field.query(ad::Var::constant(x + f), ad::Var::constant(d), ad::Var::constant(t2));
  EXPECT_EQ(warped.sigma.val(), direct.sigma.val());  // bit-for-bit
  EXPECT_EQ(warped.color.val(), direct.color.val());
  EXPECT_EQ(warped.flow_fwd.val(), direct.flow_fwd.val());
  EXPECT_EQ(warped.p.val(), direct.p.val());
}

TEST(DynamicField, ZeroFlowSameTimeWarpIsIdentity) {
  dvs::Rng rng(49);
  DynamicField field(tiny_config(), rng);
  const Mat x = random_mat(3, 3, rng);
  const Mat d = random_unit_dirs(3, rng);
  const Mat t = Mat::Constant(1, 3, 0.5);
  const DynamicOutput a = field.query(ad::Var::constant(x), ad::Var::constant(d),
                                      ad::Var::constant(t));
  const DynamicOutput b = field.query_warped(ad::Var::constant(x),
                                             ad::Var::constant(Mat::Zero(3, 3)),
                                             ad::Var::constant(d), ad::Var::constant(t));
  EXPECT_EQ(a.sigma.val(), b.sigma.val());
  EXPECT_EQ(a.color.val(), b.color.val());
}

TEST(FieldGradients, StaticOutputsDifferentiableWrtPositionsAndParams) {
  dvs::Rng rng(50);
  StaticField field(tiny_config(), rng);
  const Mat x = random_mat(3, 2, rng);
  const Mat d = random_unit_dirs(2, rng);

  // d(outputs)/d(position)
  dvs::test::expect_gradients_match(
      [&](const ad::Var& xs) {
        const StaticOutput out = field.query(xs, ad::Var::constant(d));
        return ad::vcat({out.sigma, out.color});
      },
      x, 1e-3);

  // d(outputs)/d(weights) for a middle trunk layer and the color head
  for (const std::string& name : {"trunk3.weight", "color.weight"}) {
    const Mat w0 = field.params().at(name).val();
    dvs::test::expect_gradients_match(
        [&](const ad::Var& w) {
          field.params().set(name, w);
          const StaticOutput out = field.query(ad::Var::constant(x), ad::Var::constant(d));
          return ad::vcat({out.sigma, out.color});
        },
        w0, 1e-3);
    field.params().set(name, ad::Var::param(w0));
  }
}

TEST(FieldGradients, DynamicOutputsDifferentiableWrtPositionAndFlowHead) {
  dvs::Rng rng(51);
  DynamicField field(tiny_config(), rng);
  field.params().set("flow_fwd.weight", ad::Var::param(random_mat(3, 16, rng, -0.2, 0.2)));
  const Mat x = random_mat(3, 2, rng);
  const Mat d = random_unit_dirs(2, rng);
  const Mat t = Mat::Constant(1, 2, 0.5);

  dvs::test::expect_gradients_match(
      [&](const ad::Var& xs) {
        const DynamicOutput out = field.query(xs, ad::Var::constant(d), ad::Var::constant(t));
        return ad::vcat({out.sigma, out.color, out.flow_fwd, out.flow_bwd, out.p});
      },
      x, 1e-3);

  const Mat w0 = field.params().at("flow_fwd.weight").val();
  dvs::test::expect_gradients_match(
      [&](const ad::Var& w) {
        field.params().set("flow_fwd.weight", w);
        return field.query(ad::Var::constant(x), ad::Var::constant(d), ad::Var::constant(t))
            .flow_fwd;
      },
      w0, 1e-3);
}

TEST(Fields, InputValidation) {
  dvs::Rng rng(52);
  DynamicField field(tiny_config(), rng);
  const Mat x = Mat::Zero(3, 1);
  const Mat bad_dir = Mat::Constant(3, 1, 1.0);  // norm sqrt(3)
  const Mat good_dir = (Mat(3, 1) << 0, 0, 1).finished();
  EXPECT_THROW(field.query(ad::Var::constant(x), ad::Var::constant(bad_dir),
                           ad::Var::constant(Mat::Zero(1, 1))),
               std::invalid_argument);
  EXPECT_THROW(field.query(ad::Var::constant(x), ad::Var::constant(good_dir),
                           ad::Var::constant(Mat::Constant(1, 1, 1.5))),
               std::invalid_argument);

  // Non-finite parameters are a numeric error.
  field.params().set("sigma.weight", ad::Var::param(Mat::Constant(
                                         1, 16, std::numeric_limits<double>::quiet_NaN())));
  EXPECT_THROW(field.query(ad::Var::constant(x), ad::Var::constant(good_dir),
                           ad::Var::constant(Mat::Zero(1, 1))),
               std::runtime_error);
}
