#pragma once

// Training: image loss, warm-up fitting with densification, rendering-guided prototype derivation
// with interval refresh and progressive decay, and the two-stage baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gsproto/adam.hpp"
#include "gsproto/anchoring.hpp"
#include "gsproto/error.hpp"
#include "gsproto/gaussian.hpp"
#include "gsproto/metrics.hpp"
#include "gsproto/prototypes.hpp"
#include "gsproto/renderer.hpp"
#include "gsproto/scene.hpp"

namespace gsproto {

enum class TrainMode { fit_only, rendering_guided, two_stage };
enum class MeansMode { centroid_locked, free };

inline std::string to_string(TrainMode m) {
  switch (m) {
  case TrainMode::fit_only:
    return "fit_only";
  case TrainMode::rendering_guided:
    return "rendering_guided";
  case TrainMode::two_stage:
    return "two_stage";
  }
  return "?";
}

inline std::string to_string(MeansMode m) { return m == MeansMode::free ? "free" : "centroid_locked"; }

struct TrainingConfig {
  TrainMode mode = TrainMode::rendering_guided;
  std::uint64_t seed = 0;
  int total_iterations = 3000;
  int warmup_iterations = 1500; ///< fitting with densification before compression starts

  double lambda_dssim = 0.2;
  double lambda_c = 0.0001;
  int interval_t = 100;
  double decay_rate = 0.5;
  /// Iterations at which the ratio decays. Unset means 60% and 80% of total_iterations; an empty
  /// list disables decay.
  std::optional<std::vector<int>> decay_schedule;
  double compression_ratio = 0.5;

  double anchor_fraction = 1.0;
  double anchor_lr = 1.0;

  double position_lr_init = 0.00016; ///< times the camera extent
  double position_lr_final = 0.0000016;
  double feature_lr = 0.0025;        ///< DC colour; higher-order SH uses 1/20 of it
  double opacity_lr = 0.05;
  double scaling_lr = 0.005;
  double rotation_lr = 0.001;

  int densify_from = 100;
  int densify_until = -1; ///< negative means warmup_iterations
  int densify_interval = 100;
  double densify_grad_threshold = 0.0002;
  double percent_dense = 0.01;
  double min_opacity = 0.005;
  std::size_t max_primitives = std::numeric_limits<std::size_t>::max();
  int opacity_reset_interval = 0; ///< 0 disables

  int sh_degree = 0;
  int init_random_points = 0;
  double init_opacity = 0.1;

  bool unweighted = false;
  double position_weight = 1.0;
  MeansMode means_mode = MeansMode::centroid_locked;
  int kmeans_restarts = 10;

  int eval_interval = 100; ///< holdout PSNR cadence in the log; 0 logs it only at the end
  int threads = 1;

  std::vector<int> decay_points() const {
    if (decay_schedule)
      return *decay_schedule;
    return {int(std::lround(0.6 * total_iterations)), int(std::lround(0.8 * total_iterations))};
  }
  int densify_end() const { return densify_until < 0 ? warmup_iterations : densify_until; }

  /// Ratio after every scheduled decay inside the compression phase.
  double final_ratio() const {
    double r = compression_ratio;
    for (int it : decay_points())
      if (it >= warmup_iterations && it < total_iterations)
        r = decay_ratio(r, decay_rate);
    return r;
  }

  void validate() const {
    auto fail = [](const std::string &m) { throw DomainError("config: " + m); };
    if (!(lambda_dssim >= 0 && lambda_dssim <= 1))
      fail("lambda_dssim must be in [0, 1]");
    if (!(lambda_c >= 0))
      fail("lambda_c must be >= 0");
    if (interval_t < 1)
      fail("interval_t must be >= 1");
    if (!(decay_rate > 0 && decay_rate < 1))
      fail("decay_rate must be in (0, 1)");
    if (!(compression_ratio > 0 && compression_ratio <= 1))
      fail("compression_ratio must be in (0, 1]");
    if (!(anchor_fraction > 0 && anchor_fraction <= 1))
      fail("anchor_fraction must be in (0, 1]");
    if (total_iterations < 0 || warmup_iterations < 0 || warmup_iterations > total_iterations)
      fail("need 0 <= warmup_iterations <= total_iterations");
    if (sh_degree < 0 || sh_degree > 3)
      fail("sh_degree must be in [0, 3]");
    if (densify_interval < 1)
      fail("densify_interval must be >= 1");
  }
};

template <typename T> struct LossTerms {
  double l1 = 0;
  double dssim = 0;
  double lc = 0;
  double total = 0;
  Image<T> grad; ///< d total / d I_hat
};

/// (1 - lambda) L1 + lambda (1 - SSIM) + lambda_c L_c, with the gradient of the image terms.
template <typename T>
LossTerms<T> loss(const Image<T> &gt, const Image<T> &hat, double lc, double lambda_dssim, double lambda_c,
                  bool with_gradient = true) {
  require_same_shape(gt, hat, "loss");
  LossTerms<T> out;
  const double count = double(gt.data.size());
  for (std::size_t k = 0; k < gt.data.size(); ++k)
    out.l1 += std::abs(double(hat.data[k]) - double(gt.data[k]));
  out.l1 /= count;
  const auto s = ssim(gt, hat, with_gradient && lambda_dssim > 0);
  out.dssim = 1.0 - s.value;
  out.lc = lc;
  out.total = (1.0 - lambda_dssim) * out.l1 + lambda_dssim * out.dssim + lambda_c * out.lc;
  if (with_gradient) {
    out.grad = Image<T>(gt.width, gt.height);
    for (std::size_t k = 0; k < gt.data.size(); ++k) {
      const double d = double(hat.data[k]) - double(gt.data[k]);
      const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      double g = (1.0 - lambda_dssim) * sign / count;
      if (s.grad_b)
        g -= lambda_dssim * double(s.grad_b->data[k]);
      out.grad.data[k] = T(g);
    }
  }
  return out;
}

struct LogRow {
  int iteration = 0;
  double l1 = 0, dssim = 0, lc = 0, total = 0;
  std::size_t primitives = 0;
  std::size_t prototypes = 0;
  double holdout_psnr = std::numeric_limits<double>::quiet_NaN();
};

template <typename T> struct TrainResult {
  PrimitiveSet<T> primitives;
  std::vector<LogRow> log;
  MetricReport holdout;
  std::optional<AnchorBank<T>> bank;
  std::optional<PrototypeSet<T>> prototypes; ///< as they stood before the final replacement
};

template <typename T> struct TrainHooks {
  /// Called with the state at divergence; returns the dump path (or empty) for the error message.
  std::function<std::string(const PrimitiveSet<T> &, int)> on_divergence;
  std::function<void(const LogRow &)> on_log;
};

template <typename T>
MetricReport evaluate_holdout(const PrimitiveSet<T> &set, const SceneBundle<T> &scene, int threads = 1) {
  RenderOptions<T> ro;
  ro.background = scene.background;
  ro.threads = threads;
  std::vector<Image<T>> rendered, reference;
  for (auto v : scene.holdout) {
    rendered.push_back(render(set, scene.cameras[v], ro).pixels);
    reference.push_back(scene.images[v]);
  }
  return evaluate_views(rendered, reference, scene.holdout);
}

/// Initial primitives from the scene's SfM points plus the configured random points.
template <typename T> PrimitiveSet<T> initial_primitives(const SceneBundle<T> &scene, const TrainingConfig &cfg) {
  InitOptions io;
  io.sh_degree = cfg.sh_degree;
  io.random_points = cfg.init_random_points;
  io.opacity = cfg.init_opacity;
  return initialize_from_points(scene.sfm_points, scene.sfm_colors, io, cfg.seed ^ 0x5eedull);
}

namespace detail {

template <typename T> class Trainer {
public:
  Trainer(const SceneBundle<T> &scene, const TrainingConfig &cfg, PrimitiveSet<T> initial, const TrainHooks<T> &hooks)
      : scene_(scene), cfg_(cfg), hooks_(hooks), set_(std::move(initial)), rng_(cfg.seed) {
    cfg_.validate();
    scene_.validate();
    if (scene_.train.empty())
      throw DomainError("train: no training views");
    extent_ = scene_.camera_extent();
    ro_.background = scene_.background;
    ro_.threads = cfg_.threads;
    adam_.reset(Eigen::Index(set_.size()), set_.dimension());
  }

  /// Plain fitting over [begin, end), densifying inside the configured window.
  void fit(int begin, int end, bool allow_densify) {
    DensifyStats<T> stats;
    stats.reset(set_.size());
    for (int it = begin; it < end; ++it) {
      guard_parameters(it);
      const auto view = next_view();
      const auto &cam = scene_.cameras[view];
      const auto rendered = render(set_, cam, ro_);
      const auto terms = loss(scene_.images[view], rendered.pixels, 0.0, cfg_.lambda_dssim, cfg_.lambda_c);
      guard(terms.total, it);
      const auto rg = render_backward(set_, cam, terms.grad, ro_);
      MatX<T> params = to_matrix(set_);
      adam_.step(params, rg.params, learning_rates(it));
      set_ = from_matrix(params, set_.sh_degree);
      const bool densify_window = allow_densify && it < cfg_.densify_end();
      if (densify_window) {
        stats.add(rg);
        const int done = it + 1;
        if (done >= cfg_.densify_from && done % cfg_.densify_interval == 0 && done < cfg_.densify_end()) {
          densify(stats);
          stats.reset(set_.size());
        }
        if (cfg_.opacity_reset_interval > 0 && done % cfg_.opacity_reset_interval == 0 && done < cfg_.densify_end())
          reset_opacity();
      }
      record(it, terms, set_.size(), 0, set_);
    }
  }

  /// Rendering-guided prototype derivation over [begin, end).
  void rendering_guided(int begin, int end) {
    guard_parameters(begin);
    start_compression();
    protos_ = derive_prototypes(set_, *bank_, weights_, derive_seed(), derive_options());
    reset_mean_state();
    pull_adam_.reset(Eigen::Index(set_.size()), set_.dimension());
    const auto decays = cfg_.decay_points();
    std::vector<Vec3<T>> anchor_grad(set_.size(), Vec3<T>::Zero());
    int accumulated = 0;
    for (int it = begin; it < end; ++it) {
      guard_parameters(it);
      const auto view = next_view();
      const auto &cam = scene_.cameras[view];
      if (cfg_.means_mode == MeansMode::centroid_locked)
        update_centroids(set_, *protos_);
      const auto shown = prototypes_as_primitives(*protos_);
      const auto lc = clustering_loss(set_, *protos_, weights_);
      const auto rendered = render(shown, cam, ro_);
      const auto terms = loss(scene_.images[view], rendered.pixels, lc.value, cfg_.lambda_dssim, cfg_.lambda_c);
      guard(terms.total, it);
      const auto rg = render_backward(shown, cam, terms.grad, ro_);
      const auto lr = learning_rates(it);
      const MatX<T> pull = T(cfg_.lambda_c) * lc.grad_primitives;
      MatX<T> grad;
      MatX<T> params = to_matrix(set_);
      if (cfg_.means_mode == MeansMode::centroid_locked) {
        // Rendering moves each cluster rigidly; the pull only changes the spread around the centroid.
        const MatX<T> through = scatter_to_members(*protos_, rg.params);
        grad = through + pull;
        adam_.step(params, through, lr);
        if (cfg_.lambda_c > 0) {
          MatX<T> pulled = params;
          pull_adam_.step(pulled, pull, lr);
          params += center_within_clusters(*protos_, MatX<T>(pulled - params));
        }
      } else {
        grad = pull;
        MatX<T> means = flat_means();
        MatX<T> gm = rg.params;
        const auto off = protos_->offsets();
        for (std::size_t m = 0; m < protos_->means.size(); ++m)
          gm.middleRows(Eigen::Index(off[m]), protos_->means[m].rows()) += T(cfg_.lambda_c) * lc.grad_means[m];
        mean_adam_.step(means, gm, lr);
        set_flat_means(means);
        adam_.step(params, grad, lr);
      }
      set_ = from_matrix(params, set_.sh_degree);
      for (std::size_t i = 0; i < set_.size(); ++i)
        anchor_grad[i] += grad.row(Eigen::Index(i)).template head<3>().transpose();
      ++accumulated;
      record(it, terms, set_.size(), protos_->size(), shown);

      const int done = it + 1;
      if (done >= end)
        break;
      const bool decay_now = std::find(decays.begin(), decays.end(), done) != decays.end();
      const bool refresh_now = (done - begin) % cfg_.interval_t == 0;
      if (refresh_now) {
        for (auto &g : anchor_grad)
          g /= T(accumulated);
        bank_->anchors = finetune_anchors(*bank_, anchor_grad, T(cfg_.anchor_lr));
        std::fill(anchor_grad.begin(), anchor_grad.end(), Vec3<T>::Zero());
        accumulated = 0;
      }
      if (decay_now)
        ratio_ = decay_ratio(ratio_, cfg_.decay_rate);
      if (refresh_now || decay_now) {
        *bank_ = assign_tiles(set_, bank_->anchors, cfg_.threads);
        canonicalize();
        if (cfg_.means_mode == MeansMode::centroid_locked)
          update_centroids(set_, *protos_);
        protos_ = derive_prototypes(set_, *bank_, weights_, derive_seed(), derive_options(), &*protos_);
        reset_mean_state();
      }
    }
    if (cfg_.means_mode == MeansMode::centroid_locked)
      update_centroids(set_, *protos_);
    final_prototypes_ = *protos_;
    set_ = replace_with_prototypes(set_, *protos_);
    adam_.reset(Eigen::Index(set_.size()), set_.dimension());
  }

  /// One-shot K-means merge at the final ratio, then plain optimization of the merged set.
  void two_stage(int begin, int end) {
    guard_parameters(begin);
    start_compression();
    ratio_ = cfg_.final_ratio();
    protos_ = derive_prototypes(set_, *bank_, weights_, derive_seed(), derive_options());
    final_prototypes_ = *protos_;
    set_ = replace_with_prototypes(set_, *protos_);
    adam_.reset(Eigen::Index(set_.size()), set_.dimension());
    fit(begin, end, false);
  }

  TrainResult<T> finish() {
    TrainResult<T> r;
    r.holdout = evaluate_holdout(set_, scene_, cfg_.threads);
    if (!log_.empty())
      log_.back().holdout_psnr = r.holdout.psnr;
    r.primitives = std::move(set_);
    r.log = std::move(log_);
    r.bank = std::move(bank_);
    r.prototypes = std::move(final_prototypes_);
    return r;
  }

private:
  std::size_t next_view() {
    if (order_pos_ >= order_.size()) {
      order_ = scene_.train;
      std::shuffle(order_.begin(), order_.end(), rng_);
      order_pos_ = 0;
    }
    return order_[order_pos_++];
  }

  VecX<T> learning_rates(int it) const {
    const int d = set_.dimension();
    VecX<T> lr(d);
    const double t = cfg_.total_iterations > 0 ? std::clamp(double(it) / cfg_.total_iterations, 0.0, 1.0) : 0.0;
    const double pos =
        std::exp(std::log(cfg_.position_lr_init) * (1 - t) + std::log(cfg_.position_lr_final) * t) * double(extent_);
    for (int j = 0; j < d; ++j) {
      double v = cfg_.feature_lr / 20.0;
      if (j < layout::kRotation)
        v = pos;
      else if (j < layout::kLogScale)
        v = cfg_.rotation_lr;
      else if (j < layout::kOpacity)
        v = cfg_.scaling_lr;
      else if (j == layout::kOpacity)
        v = cfg_.opacity_lr;
      else if (j < layout::kSh + 3)
        v = cfg_.feature_lr;
      lr[j] = T(v);
    }
    return lr;
  }

  void guard_parameters(int it) {
    for (std::size_t i = 0; i < set_.size(); ++i)
      if (!set_.primitives[i].is_finite())
        diverge(it, "primitive " + std::to_string(i) + " has non-finite parameters");
  }

  void guard(double total, int it) {
    if (!std::isfinite(total))
      diverge(it, "loss is " + std::to_string(total));
  }

  [[noreturn]] void diverge(int it, const std::string &what) {
    std::string where;
    if (hooks_.on_divergence)
      where = hooks_.on_divergence(set_, it);
    throw DivergenceError("training diverged at iteration " + std::to_string(it) + ": " + what +
                          (where.empty() ? "" : "; state written to " + where));
  }

  void densify(const DensifyStats<T> &stats) {
    DensifyConfig<T> dc;
    dc.grad_threshold = T(cfg_.densify_grad_threshold);
    dc.percent_dense = T(cfg_.percent_dense);
    dc.scene_extent = extent_;
    dc.min_opacity = T(cfg_.min_opacity);
    dc.max_primitives = cfg_.max_primitives;
    DensifyResult res;
    auto next = densify_and_prune(set_, stats, dc, rng_, &res);
    if (next.empty())
      return;
    set_ = std::move(next);
    adam_.reindex(res.source);
  }

  void reset_opacity() {
    const T cap = inverse_sigmoid(T(0.01));
    for (auto &p : set_.primitives)
      p.opacity_raw = std::min(p.opacity_raw, cap);
  }

  void record(int it, const LossTerms<T> &terms, std::size_t n, std::size_t k, const PrimitiveSet<T> &shown) {
    LogRow row;
    row.iteration = it;
    row.l1 = terms.l1;
    row.dssim = terms.dssim;
    row.lc = terms.lc;
    row.total = terms.total;
    row.primitives = n;
    row.prototypes = k;
    if (cfg_.eval_interval > 0 && (it + 1) % cfg_.eval_interval == 0 && !scene_.holdout.empty())
      row.holdout_psnr = evaluate_holdout(shown, scene_, cfg_.threads).psnr;
    log_.push_back(row);
    if (hooks_.on_log)
      hooks_.on_log(row);
  }

  void start_compression() {
    const auto anchors = sample_anchors(scene_.sfm_points, AnchorAmount::fraction(cfg_.anchor_fraction),
                                        cfg_.seed ^ 0xa2c4ull);
    bank_ = assign_tiles(set_, anchors, cfg_.threads);
    canonicalize();
    WeightOptions wo;
    wo.unweighted = cfg_.unweighted;
    wo.position_multiplier = cfg_.position_weight;
    weights_ = attribute_weights(to_matrix(set_), wo);
    ratio_ = cfg_.compression_ratio;
  }

  void canonicalize() {
    const auto flipped = canonicalize_rotations(set_);
    adam_.negate(flipped, layout::kRotation, 4);
    if (pull_adam_.rows() == Eigen::Index(set_.size()))
      pull_adam_.negate(flipped, layout::kRotation, 4);
  }

  DeriveOptions derive_options() const {
    DeriveOptions o;
    o.ratio = ratio_;
    o.kmeans.restarts = cfg_.kmeans_restarts;
    o.threads = cfg_.threads;
    return o;
  }
  std::uint64_t derive_seed() { return cfg_.seed * 1000003ull + derive_count_++; }

  MatX<T> flat_means() const {
    MatX<T> out(Eigen::Index(protos_->size()), set_.dimension());
    const auto off = protos_->offsets();
    for (std::size_t m = 0; m < protos_->means.size(); ++m)
      out.middleRows(Eigen::Index(off[m]), protos_->means[m].rows()) = protos_->means[m];
    return out;
  }
  void set_flat_means(const MatX<T> &flat) {
    const auto off = protos_->offsets();
    for (std::size_t m = 0; m < protos_->means.size(); ++m)
      protos_->means[m] = flat.middleRows(Eigen::Index(off[m]), protos_->means[m].rows());
  }
  void reset_mean_state() {
    if (cfg_.means_mode == MeansMode::free)
      mean_adam_.reset(Eigen::Index(protos_->size()), set_.dimension());
  }

  SceneBundle<T> scene_;
  TrainingConfig cfg_;
  TrainHooks<T> hooks_;
  PrimitiveSet<T> set_;
  std::mt19937_64 rng_;
  T extent_ = T(1);
  RenderOptions<T> ro_;
  Adam<T> adam_, mean_adam_, pull_adam_;
  std::vector<std::size_t> order_;
  std::size_t order_pos_ = 0;
  std::vector<LogRow> log_;
  std::optional<AnchorBank<T>> bank_;
  std::optional<PrototypeSet<T>> protos_, final_prototypes_;
  VecX<T> weights_;
  double ratio_ = 1.0;
  std::uint64_t derive_count_ = 0;
};

} // namespace detail

/// Full pipeline: initialize from SfM points, fit with densification for warmup_iterations, then run
/// the configured mode for the remaining iterations.
template <typename T>
TrainResult<T> train(const SceneBundle<T> &scene, const TrainingConfig &cfg, const TrainHooks<T> &hooks = {}) {
  detail::Trainer<T> t(scene, cfg, initial_primitives(scene, cfg), hooks);
  switch (cfg.mode) {
  case TrainMode::fit_only:
    t.fit(0, cfg.total_iterations, true);
    break;
  case TrainMode::rendering_guided:
    t.fit(0, cfg.warmup_iterations, true);
    t.rendering_guided(cfg.warmup_iterations, cfg.total_iterations);
    break;
  case TrainMode::two_stage:
    t.fit(0, cfg.warmup_iterations, true);
    t.two_stage(cfg.warmup_iterations, cfg.total_iterations);
    break;
  }
  return t.finish();
}

template <typename T>
TrainResult<T> train_two_stage(const SceneBundle<T> &scene, TrainingConfig cfg, const TrainHooks<T> &hooks = {}) {
  cfg.mode = TrainMode::two_stage;
  return train(scene, cfg, hooks);
}

/// The compression phase alone, starting from an already fitted set with fresh optimizer state.
/// Iterations run over [warmup_iterations, total_iterations) so schedules match `train`.
template <typename T>
TrainResult<T> compress(const PrimitiveSet<T> &fitted, const SceneBundle<T> &scene, const TrainingConfig &cfg,
                        const TrainHooks<T> &hooks = {}) {
  if (fitted.empty())
    throw DomainError("compress: empty input set");
  detail::Trainer<T> t(scene, cfg, fitted, hooks);
  switch (cfg.mode) {
  case TrainMode::fit_only:
    t.fit(cfg.warmup_iterations, cfg.total_iterations, false);
    break;
  case TrainMode::rendering_guided:
    t.rendering_guided(cfg.warmup_iterations, cfg.total_iterations);
    break;
  case TrainMode::two_stage:
    t.two_stage(cfg.warmup_iterations, cfg.total_iterations);
    break;
  }
  return t.finish();
}

} // namespace gsproto
