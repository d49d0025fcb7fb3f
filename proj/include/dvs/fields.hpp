#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dvs/autodiff.hpp"
#include "dvs/rng.hpp"

namespace dvs {

struct EncodingConfig {
  int l_pos = 10;   // frequencies for 3D positions
  int l_dir = 4;    // frequencies for view directions
  int l_time = 6;   // frequencies for normalized timestamps

  void validate() const {
    if (l_pos < 0 || l_dir < 0 || l_time < 0)
      throw std::invalid_argument("EncodingConfig: frequency counts must be >= 0");
  }
};

struct FieldConfig {
  int width = 128;        // hidden layer width
  int hidden_layers = 8;  // trunk depth
  int skip_layer = 4;     // 0-based hidden layer that re-reads the input encoding
  EncodingConfig enc;
  double max_flow = 0.1;  // scale applied to raw flow-head outputs (scene units)
  // Constant added to the sigma head before softplus. A freshly initialized
  // head emits ~0 there, so this sets the density at step 0: near zero keeps
  // the scene transparent and lets photometric gradients reach the true
  // surfaces instead of fighting through softplus(0) ~ 0.69 of uniform fog.
  double density_shift = -4.0;

  int enc_pos_dim() const { return 3 * (2 * enc.l_pos + 1); }
  int enc_dir_dim() const { return 3 * (2 * enc.l_dir + 1); }
  int enc_time_dim() const { return 2 * enc.l_time + 1; }

  void validate() const {
    enc.validate();
    if (width < 2 || hidden_layers < 1) throw std::invalid_argument("FieldConfig: bad sizes");
    if (skip_layer < 1 || skip_layer >= hidden_layers)
      throw std::invalid_argument("FieldConfig: skip layer out of range");
    if (max_flow <= 0) throw std::invalid_argument("FieldConfig: max_flow must be > 0");
  }
};

/// Named, ordered collection of trainable arrays. Order is fixed at
/// construction so optimizers and checkpoints traverse deterministically.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    ad::Var var;
  };

  /// Adds weight + bias for a linear layer. Weights are uniform in
  /// +-1/sqrt(fan_in), biases zero; pass rng = nullptr to zero-init both
  /// (required for the flow heads: training starts from the "no motion"
  /// hypothesis).
  void add_linear(const std::string& name, int out_dim, int in_dim, Rng* rng) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out_dim, in_dim);
    if (rng) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
      for (long j = 0; j < w.cols(); ++j)
        for (long i = 0; i < w.rows(); ++i) w(i, j) = rng->uniform(-bound, bound);
    }
    entries_.push_back({name + ".weight", ad::Var::param(std::move(w))});
    entries_.push_back({name + ".bias", ad::Var::param(Eigen::MatrixXd::Zero(out_dim, 1))});
  }

  ad::Var at(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.var;
    throw std::out_of_range("ParamSet: no entry named " + name);
  }

  void set(const std::string& name, const ad::Var& var) {
    for (auto& e : entries_) {
      if (e.name == name) {
        if (e.var.rows() != var.rows() || e.var.cols() != var.cols())
          throw std::invalid_argument("ParamSet::set: shape mismatch for " + name);
        e.var = var;
        return;
      }
    }
    throw std::out_of_range("ParamSet: no entry named " + name);
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void set_requires_grad(bool b) {
    for (auto& e : entries_) e.var.set_requires_grad(b);
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += static_cast<size_t>(e.var.val().size());
    return n;
  }

  bool all_finite() const {
    for (const auto& e : entries_)
      if (!e.var.val().allFinite()) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {

inline ad::Var linear(const ParamSet& params, const std::string& name, const ad::Var& input) {
  return ad::add_bias(ad::matmul(params.at(name + ".weight"), input),
                      params.at(name + ".bias"));
}

/// Shared trunk: hidden_layers ReLU layers with the input encoding
/// re-concatenated at the skip layer.
inline ad::Var mlp_trunk(const ParamSet& params, const FieldConfig& cfg,
                         const ad::Var& input_enc) {
  ad::Var h = ad::relu(linear(params, "trunk0", input_enc));
  for (int i = 1; i < cfg.hidden_layers; ++i) {
    const ad::Var in = (i == cfg.skip_layer) ? ad::vcat({h, input_enc}) : h;
    h = ad::relu(linear(params, "trunk" + std::to_string(i), in));
  }
  return h;
}

inline void check_query_inputs(const ParamSet& params, const ad::Var& x, const ad::Var& d) {
  if (!params.all_finite()) throw std::runtime_error("field parameters are not finite");
  if (x.rows() != 3 || d.rows() != 3 || x.cols() != d.cols())
    throw std::invalid_argument("field query: x and d must be 3 x M with matching M");
  for (long j = 0; j < d.cols(); ++j)
    if (std::abs(d.val().col(j).norm() - 1.0) > 1e-6)
      throw std::invalid_argument("field query: directions must be unit-norm");
}

}  // namespace detail

/// Per-sample outputs of the static field over a batch of M query points.
struct StaticOutput {
  ad::Var sigma;  // 1 x M, >= 0
  ad::Var color;  // 3 x M, in [0,1]
};

/// Which of the two per-sample scene flows (and neighbor timestamps) is meant.
enum class FlowDirection { kForward, kBackward };

/// Per-sample outputs of the dynamic field: adds scene flow to the adjacent
/// timestamps and the dynamic blending probability.
struct DynamicOutput {
  ad::Var sigma;      // 1 x M
  ad::Var color;      // 3 x M
  ad::Var flow_fwd;   // 3 x M, displacement to t + dt
  ad::Var flow_bwd;   // 3 x M, displacement to t - dt
  ad::Var p;          // 1 x M, in [0,1]
};

/// Static radiance field: density from position only, color from position
/// and direction (the direction joins after the density head, so sigma is
/// direction-invariant by construction).
class StaticField {
 public:
  StaticField(FieldConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int in = cfg_.enc_pos_dim();
    params_.add_linear("trunk0", cfg_.width, in, &rng);
    for (int i = 1; i < cfg_.hidden_layers; ++i)
      params_.add_linear("trunk" + std::to_string(i), cfg_.width,
                         i == cfg_.skip_layer ? cfg_.width + in : cfg_.width, &rng);
    params_.add_linear("sigma", 1, cfg_.width, &rng);
    params_.add_linear("feature", cfg_.width, cfg_.width, &rng);
    params_.add_linear("color_hidden", cfg_.width / 2, cfg_.width + cfg_.enc_dir_dim(), &rng);
    params_.add_linear("color", 3, cfg_.width / 2, &rng);
  }

  StaticOutput query(const ad::Var& x, const ad::Var& d) const {
    detail::check_query_inputs(params_, x, d);
    const ad::Var enc_x = ad::positional_encode(x, cfg_.enc.l_pos, enc_alpha_);
    const ad::Var h = detail::mlp_trunk(params_, cfg_, enc_x);
    StaticOutput out;
    out.sigma = ad::softplus(ad::add_scalar(detail::linear(params_, "sigma", h),
                                            cfg_.density_shift));
    const ad::Var feat = detail::linear(params_, "feature", h);
    const ad::Var hd = ad::relu(detail::linear(
        params_, "color_hidden", ad::vcat({feat, ad::positional_encode(d, cfg_.enc.l_dir)})));
    out.color = ad::sigmoid(detail::linear(params_, "color", hd));
    return out;
  }

  /// Coarse-to-fine schedule hook: scales position-encoding band l by
  /// clamp(alpha * L - l, 0, 1). Training ramps alpha from 0 to 1 so early
  /// iterations can only express smooth fields, which blocks the
  /// view-dependent "painting" local optima; 1 (the default) is the plain
  /// encoding used by rendering and evaluation.
  void set_enc_alpha(double alpha) { enc_alpha_ = alpha; }
  double enc_alpha() const { return enc_alpha_; }

  const FieldConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  FieldConfig cfg_;
  ParamSet params_;
  double enc_alpha_ = 1.0;
};

/// Dynamic field (NSFF): conditioned on (position, time); emits color,
/// density, forward/backward scene flow, and the blending probability p.
/// Density, flows, and p are direction-invariant by construction.
class DynamicField {
 public:
  DynamicField(FieldConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int in = cfg_.enc_pos_dim() + cfg_.enc_time_dim();
    params_.add_linear("trunk0", cfg_.width, in, &rng);
    for (int i = 1; i < cfg_.hidden_layers; ++i)
      params_.add_linear("trunk" + std::to_string(i), cfg_.width,
                         i == cfg_.skip_layer ? cfg_.width + in : cfg_.width, &rng);
    params_.add_linear("sigma", 1, cfg_.width, &rng);
    params_.add_linear("feature", cfg_.width, cfg_.width, &rng);
    params_.add_linear("color_hidden", cfg_.width / 2, cfg_.width + cfg_.enc_dir_dim(), &rng);
    params_.add_linear("color", 3, cfg_.width / 2, &rng);
    params_.add_linear("flow_fwd", 3, cfg_.width, nullptr);  // zero-init: no motion at step 0
    params_.add_linear("flow_bwd", 3, cfg_.width, nullptr);
    params_.add_linear("p_head", 1, cfg_.width, &rng);
  }

  /// t is a 1 x M row of normalized timestamps in [0, 1] (one per sample, so
  /// batches may mix frames).
  DynamicOutput query(const ad::Var& x, const ad::Var& d, const ad::Var& t) const {
    detail::check_query_inputs(params_, x, d);
    if (t.rows() != 1 || t.cols() != x.cols())
      throw std::invalid_argument("field query: t must be 1 x M");
    for (long j = 0; j < t.cols(); ++j)
      if (t.val()(0, j) < -1e-9 || t.val()(0, j) > 1 + 1e-9)
        throw std::invalid_argument("field query: t must lie in [0, 1]");
    const ad::Var enc = ad::vcat({ad::positional_encode(x, cfg_.enc.l_pos, enc_alpha_),
                                  ad::positional_encode(t, cfg_.enc.l_time)});
    const ad::Var h = detail::mlp_trunk(params_, cfg_, enc);
    DynamicOutput out;
    out.sigma = ad::softplus(ad::add_scalar(detail::linear(params_, "sigma", h),
                                            cfg_.density_shift));
    const ad::Var feat = detail::linear(params_, "feature", h);
    const ad::Var hd = ad::relu(detail::linear(
        params_, "color_hidden", ad::vcat({feat, ad::positional_encode(d, cfg_.enc.l_dir)})));
    out.color = ad::sigmoid(detail::linear(params_, "color", hd));
    out.flow_fwd = ad::scale(detail::linear(params_, "flow_fwd", h), cfg_.max_flow);
    out.flow_bwd = ad::scale(detail::linear(params_, "flow_bwd", h), cfg_.max_flow);
    out.p = ad::sigmoid(detail::linear(params_, "p_head", h));
    return out;
  }

  /// Cross-time query at the flow-displaced points (Eq. 4's MLP_d(x + f, d,
  /// t +- dt)): definitionally query(x + f, d, t_neighbor).
  DynamicOutput query_warped(const ad::Var& x, const ad::Var& f, const ad::Var& d,
                             const ad::Var& t_neighbor) const {
    return query(ad::add(x, f), d, t_neighbor);
  }

  /// Same coarse-to-fine hook as StaticField::set_enc_alpha; applies to the
  /// position bands only (time and direction stay full-rate).
  void set_enc_alpha(double alpha) { enc_alpha_ = alpha; }
  double enc_alpha() const { return enc_alpha_; }

  const FieldConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  FieldConfig cfg_;
  ParamSet params_;
  double enc_alpha_ = 1.0;
};

// Single-point convenience wrappers (tests and tools; training uses batches).

struct StaticSample {
  double sigma = 0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

inline StaticSample query_static_point(const StaticField& field, const Eigen::Vector3d& x,
                                       const Eigen::Vector3d& d) {
  const StaticOutput out =
      field.query(ad::Var::constant(Eigen::MatrixXd(x)), ad::Var::constant(Eigen::MatrixXd(d)));
  return {out.sigma.val()(0, 0), out.color.val().col(0)};
}

struct DynamicSample {
  double sigma = 0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  Eigen::Vector3d flow_fwd = Eigen::Vector3d::Zero();
  Eigen::Vector3d flow_bwd = Eigen::Vector3d::Zero();
  double p = 0;
};

inline DynamicSample query_dynamic_point(const DynamicField& field, const Eigen::Vector3d& x,
                                         const Eigen::Vector3d& d, double t) {
  const DynamicOutput out =
      field.query(ad::Var::constant(Eigen::MatrixXd(x)), ad::Var::constant(Eigen::MatrixXd(d)),
                  ad::Var::constant(Eigen::MatrixXd::Constant(1, 1, t)));
  return {out.sigma.val()(0, 0), out.color.val().col(0), out.flow_fwd.val().col(0),
          out.flow_bwd.val().col(0), out.p.val()(0, 0)};
}

}  // namespace dvs
