// Acceptance gate: one PASS/FAIL line per criterion. Exit status is non-zero if any criterion fails.

#include <gsproto/anchoring.hpp>
#include <gsproto/io.hpp>
#include <gsproto/optimizer.hpp>
#include <gsproto/prototypes.hpp>

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "test_support.hpp"

using namespace gsproto;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kGradientRelError = 1e-3;
constexpr int kKMeansMinMatches = 90;
constexpr double kIdentityRatioDb = 0.1;
constexpr double kFitMinPsnr = 30.0;
constexpr double kMaxCountFraction = 0.25;
constexpr double kMaxCompressionLossDb = 1.5;
constexpr double kAnchorSpreadDb = 0.5;
constexpr double kPsnrExactDb = 1e-9;
constexpr double kSsimSelfTol = 1e-12;
constexpr double kSsimGradRelError = 1e-4;

int failures = 0;

void report(int id, bool pass, const std::string &detail) {
  std::printf("criterion %d %s: %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------------------------

void full_loss_gradient() {
  double worst = 0;
  std::string where;
  for (std::uint32_t s = 0; s < 20; ++s) {
    const int degree = int(s % 4);
    const auto scene = testing::random_small_scene(500 + s, 8 + int(s % 13), degree);
    std::mt19937 rng(900 + s);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image<double> target(32, 32);
    for (auto &v : target.data)
      v = u(rng);
    RenderOptions<double> opts;
    opts.cutoff_sigma = std::numeric_limits<double>::infinity();
    auto full = [&](const PrimitiveSet<double> &set) {
      return loss(target, render(set, scene.camera, opts).pixels, 0.0, 0.2, 0.0, false).total;
    };
    const auto lt = loss(target, render(scene.set, scene.camera, opts).pixels, 0.0, 0.2, 0.0);
    const auto g = render_backward(scene.set, scene.camera, lt.grad, opts);
    const MatX<double> fd = testing::finite_difference_gradient(scene.set, full, 1e-6);
    for (const auto &grp : testing::parameter_groups(degree)) {
      const double e = testing::group_relative_error(g.params, fd, grp.begin, grp.end);
      if (e > worst) {
        worst = e;
        where = fmt("scene %u %s", s, grp.name);
      }
    }
  }
  report(1, worst < kGradientRelError,
         fmt("20 scenes, worst group relative error %.2e (%s), tolerance %.0e", worst, where.c_str(),
             kGradientRelError));
}

// ---------------------------------------------------------------------------------------------

double exhaustive_optimum(const MatX<double> &x, int k, const VecX<double> &w) {
  const int n = int(x.rows());
  std::vector<int> lab(std::size_t(n), 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    MatX<double> sum = MatX<double>::Zero(k, x.cols());
    std::vector<int> cnt(std::size_t(k), 0);
    for (int i = 0; i < n; ++i) {
      sum.row(lab[std::size_t(i)]) += x.row(i);
      ++cnt[std::size_t(lab[std::size_t(i)])];
    }
    double j = 0;
    for (int i = 0; i < n; ++i) {
      const int c = lab[std::size_t(i)];
      for (Eigen::Index d = 0; d < x.cols(); ++d)
        j += std::pow(w[d] * (x(i, d) - sum(c, d) / cnt[std::size_t(c)]), 2);
    }
    best = std::min(best, j);
    int p = 0;
    while (p < n && ++lab[std::size_t(p)] == k)
      lab[std::size_t(p++)] = 0;
    if (p == n)
      break;
  }
  return best;
}

void kmeans_oracle() {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> u(-1, 1);
  int matched = 0, monotone = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + trial % 5, k = 2 + trial % 2, d = 1 + trial % 3;
    MatX<double> x(n, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        x(i, j) = u(rng) + (i % k) * 1.2 * u(rng);
    VecX<double> w(d);
    for (int j = 0; j < d; ++j)
      w[j] = 0.5 + std::abs(u(rng));
    const auto r = kmeans_tile(x, std::size_t(k), w, std::uint64_t(trial));
    bool mono = true;
    for (std::size_t s = 1; s < r.objective.size(); ++s)
      mono = mono && r.objective[s] <= r.objective[s - 1] * (1 + 1e-12);
    monotone += mono;
    const double opt = exhaustive_optimum(x, k, w);
    matched += std::abs(r.final_objective() - opt) <= 1e-9 * (1 + opt);
  }
  report(2, matched >= kKMeansMinMatches && monotone == 100,
         fmt("%d/100 reach the exhaustive optimum (need %d), %d/100 non-increasing objective", matched,
             kKMeansMinMatches, monotone));
}

// ---------------------------------------------------------------------------------------------

struct Benchmark {
  SceneBundle<float> scene;
  TrainingConfig fit_cfg;
  int fit_iterations = 1000;
  int phase = 1000;
};

Benchmark benchmark() {
  SyntheticSpec spec;
  spec.primitive_count = 3000;
  spec.min_scale = 0.02;
  spec.max_scale = 0.06;
  spec.blobs = 8;
  spec.view_count = 20;
  spec.holdout_fraction = 0.15;
  spec.image_size = 64;
  Benchmark b;
  b.scene = generate_synthetic_scene<float>(spec, 1).bundle;
  auto &c = b.fit_cfg;
  c.mode = TrainMode::fit_only;
  c.total_iterations = c.warmup_iterations = b.fit_iterations;
  c.densify_until = b.fit_iterations / 2;
  c.init_random_points = 1900;
  c.max_primitives = 2000;
  c.eval_interval = 0;
  c.position_weight = 16;
  return b;
}

TrainingConfig compression_config(const Benchmark &b, TrainMode mode, double ratio, std::vector<int> decays,
                                  std::uint64_t seed) {
  TrainingConfig c = b.fit_cfg;
  c.mode = mode;
  c.seed = seed;
  c.total_iterations = b.fit_iterations + b.phase;
  c.compression_ratio = ratio;
  for (auto &d : decays)
    d += b.fit_iterations;
  c.decay_schedule = decays;
  return c;
}

TrainResult<float> fit(const Benchmark &b, std::uint64_t seed) {
  auto c = b.fit_cfg;
  c.seed = seed;
  return train(b.scene, c);
}

void identity_ratio(const Benchmark &b) {
  const auto t0 = std::chrono::steady_clock::now();
  auto base = b.fit_cfg;
  base.total_iterations = b.fit_iterations + 300;
  base.seed = 7;
  const auto plain = train(b.scene, base);
  auto rg = base;
  rg.mode = TrainMode::rendering_guided;
  rg.compression_ratio = 1.0;
  rg.decay_schedule = std::vector<int>{};
  const auto guided = train(b.scene, rg);
  const double diff = std::abs(guided.holdout.psnr - plain.holdout.psnr);
  report(3, diff <= kIdentityRatioDb,
         fmt("ratio 1 without decay %.3f dB vs fit only %.3f dB, |diff| %.3f dB (tolerance %.1f) [%.0f s]",
             guided.holdout.psnr, plain.holdout.psnr, diff, kIdentityRatioDb, seconds_since(t0)));
}

void compression_budget(const Benchmark &b, const TrainResult<float> &fitted) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = compression_config(b, TrainMode::rendering_guided, 0.4, {300}, 1);
  const auto r = compress(fitted.primitives, b.scene, cfg);
  const double frac = double(r.primitives.size()) / double(fitted.primitives.size());
  const double drop = fitted.holdout.psnr - r.holdout.psnr;
  report(4, fitted.holdout.psnr >= kFitMinPsnr && frac <= kMaxCountFraction && drop <= kMaxCompressionLossDb,
         fmt("fit %zu primitives %.2f dB (need >= %.0f); compressed %zu (%.1f%%, need <= %.0f%%) %.2f dB, "
             "loss %.2f dB (need <= %.1f) [%.0f s]",
             fitted.primitives.size(), fitted.holdout.psnr, kFitMinPsnr, r.primitives.size(), 100 * frac,
             100 * kMaxCountFraction, r.holdout.psnr, drop, kMaxCompressionLossDb, seconds_since(t0)));
}

/// Returns the seed-1 guided PSNR at full anchor fraction for reuse.
double guided_beats_two_stage(const Benchmark &b, const TrainResult<float> &fit_seed1) {
  const auto t0 = std::chrono::steady_clock::now();
  double rg_sum = 0, ts_sum = 0, rg_first = 0;
  std::string runs;
  const int seeds = 5;
  for (int s = 1; s <= seeds; ++s) {
    const auto fitted = s == 1 ? fit_seed1 : fit(b, std::uint64_t(s));
    const auto rg = compress(fitted.primitives, b.scene,
                             compression_config(b, TrainMode::rendering_guided, 0.5, {300}, std::uint64_t(s)));
    const auto ts =
        compress(fitted.primitives, b.scene, compression_config(b, TrainMode::two_stage, 0.25, {}, std::uint64_t(s)));
    rg_sum += rg.holdout.psnr;
    ts_sum += ts.holdout.psnr;
    if (s == 1)
      rg_first = rg.holdout.psnr;
    runs += fmt(" s%d %.2f/%.2f", s, rg.holdout.psnr, ts.holdout.psnr);
  }
  const double rg_mean = rg_sum / seeds, ts_mean = ts_sum / seeds;
  report(5, rg_mean > ts_mean,
         fmt("final ratio 0.25, mean over %d seeds guided %.3f dB vs two-stage %.3f dB (diff %+.3f);%s [%.0f s]", seeds,
             rg_mean, ts_mean, rg_mean - ts_mean, runs.c_str(), seconds_since(t0)));
  return rg_first;
}

void anchor_fractions(const Benchmark &b, const TrainResult<float> &fitted, double full_fraction_psnr) {
  const auto t0 = std::chrono::steady_clock::now();
  double lo = full_fraction_psnr, hi = full_fraction_psnr;
  std::string runs = fmt(" 1.00 %.2f", full_fraction_psnr);
  for (double f : {0.2, 0.5, 0.75}) {
    auto cfg = compression_config(b, TrainMode::rendering_guided, 0.5, {300}, 1);
    cfg.anchor_fraction = f;
    const double p = compress(fitted.primitives, b.scene, cfg).holdout.psnr;
    lo = std::min(lo, p);
    hi = std::max(hi, p);
    runs += fmt(" %.2f %.2f", f, p);
  }
  report(6, hi - lo <= kAnchorSpreadDb,
         fmt("anchor fraction vs dB:%s; spread %.3f dB (tolerance %.1f) [%.0f s]", runs.c_str(), hi - lo,
             kAnchorSpreadDb, seconds_since(t0)));
}

// ---------------------------------------------------------------------------------------------

template <typename T> PrimitiveSet<T> random_set(std::mt19937 &rng, int n, int degree) {
  std::normal_distribution<double> g(0, 1);
  PrimitiveSet<T> s;
  s.sh_degree = degree;
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive<T> p;
    p.position = Vec3<T>(T(g(rng)), T(g(rng)), T(g(rng)));
    p.rotation = Vec4<T>(T(g(rng)), T(g(rng)), T(g(rng)), T(g(rng)));
    p.log_scale = Vec3<T>(T(g(rng)), T(g(rng)), T(g(rng)));
    p.opacity_raw = T(g(rng));
    p.sh_coeffs.assign(std::size_t(sh::coeff_count(degree)), Vec3<T>::Zero());
    for (auto &c : p.sh_coeffs)
      c = Vec3<T>(T(g(rng)), T(g(rng)), T(g(rng)));
    s.primitives.push_back(p);
  }
  return s;
}

std::vector<int> nearest_oracle(const std::vector<Vec3<double>> &pts, const std::vector<Vec3<double>> &anchors) {
  std::vector<int> out;
  for (const auto &p : pts) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < int(anchors.size()); ++k) {
      double d = 0;
      for (int a = 0; a < 3; ++a)
        d += (p[a] - anchors[std::size_t(k)][a]) * (p[a] - anchors[std::size_t(k)][a]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    out.push_back(best);
  }
  return out;
}

void file_formats_and_assignment(const fs::path &fixtures) {
  const fs::path dir = fs::temp_directory_path() / ("gsproto_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::mt19937 rng(77);
  int ply_ok = 0, ply_total = 0;
  for (int degree = 0; degree <= 3; ++degree) {
    const auto f = random_set<float>(rng, 1000, degree);
    write_ply(dir / "f.ply", f);
    ply_ok += read_ply<float>(dir / "f.ply") == f;
    const auto d = random_set<double>(rng, 1000, degree);
    write_ply(dir / "d.ply", d);
    ply_ok += read_ply<double>(dir / "d.ply") == d;
    ply_total += 2;
  }
  fs::remove_all(dir);

  const auto txt = read_colmap_points<double>(fixtures / "points3D.txt");
  const auto bin = read_colmap_points<double>(fixtures / "points3D.bin");
  const std::vector<Vec3<double>> expected{{0.5, -1.25, 2.0}, {-3.0, 0.125, 0.001}, {10.0, 20.0, -30.5}};
  const bool colmap_ok = txt.positions == expected && bin.positions == expected && txt.colors == bin.colors;

  int assign_ok = 0;
  const int configs = 10000;
  for (int trial = 0; trial < configs; ++trial) {
    const bool lattice = trial % 2 == 0;
    const int m = 1 + trial % 40;
    std::vector<Vec3<double>> anchors, pts;
    std::uniform_int_distribution<int> cell(-2, 2), far(-4, 4);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int k = 0; k < m; ++k)
      anchors.push_back(lattice ? Vec3<double>(cell(rng), cell(rng), cell(rng)) : Vec3<double>(u(rng), u(rng), u(rng)));
    for (int i = 0; i < 30; ++i)
      pts.push_back(lattice ? Vec3<double>(far(rng), far(rng), far(rng))
                            : Vec3<double>(2.5 * u(rng), 2.5 * u(rng), 2.5 * u(rng)));
    assign_ok += nearest_anchor(pts, anchors) == nearest_oracle(pts, anchors);
  }
  report(7, ply_ok == ply_total && colmap_ok && assign_ok == configs,
         fmt("PLY round trips %d/%d (1000 primitives, degrees 0-3, float and double); COLMAP text/binary fixtures %s; "
             "tile assignment %d/%d configurations match brute force",
             ply_ok, ply_total, colmap_ok ? "match" : "differ", assign_ok, configs));
}

// ---------------------------------------------------------------------------------------------

void metric_closed_forms() {
  Image<double> a(16, 16), b(16, 16), c(16, 16);
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    a.data[k] = 0.5;
    b.data[k] = k % 2 ? 0.4 : 0.6;
    c.data[k] = k % 2 ? 0.0 : 1.0;
  }
  const double p20 = psnr(a, b), p6 = psnr(a, c);
  const double p6_expected = 20 * std::log10(2.0);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  Image<double> x(20, 18), y(20, 18);
  for (auto &v : x.data)
    v = u(rng);
  for (std::size_t k = 0; k < y.data.size(); ++k)
    y.data[k] = std::clamp(x.data[k] + 0.2 * (u(rng) - 0.5), 0.0, 1.0);
  const double self = ssim(x, x, false).value;
  const auto s = ssim(x, y);
  double num = 0, den = 0;
  for (std::size_t k = 0; k < y.data.size(); ++k) {
    const double h = 1e-6, keep = y.data[k];
    y.data[k] = keep + h;
    const double up = ssim(x, y, false).value;
    y.data[k] = keep - h;
    const double down = ssim(x, y, false).value;
    y.data[k] = keep;
    const double fd = (up - down) / (2 * h);
    num += std::pow(s.grad_b->data[k] - fd, 2);
    den += fd * fd;
  }
  const double grad_err = std::sqrt(num / den);
  const bool pass = std::abs(p20 - 20.0) <= kPsnrExactDb && std::abs(p6 - p6_expected) <= kPsnrExactDb &&
                    std::abs(self - 1.0) <= kSsimSelfTol && grad_err <= kSsimGradRelError;
  report(8, pass,
         fmt("PSNR %.10f (expect 20), %.10f (expect %.10f); SSIM(a,a) %.15f; SSIM gradient relative error %.2e "
             "(tolerance %.0e)",
             p20, p6, p6_expected, self, grad_err, kSsimGradRelError));
}

} // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  full_loss_gradient();
  kmeans_oracle();
  const auto b = benchmark();
  const auto fitted = fit(b, 1);
  identity_ratio(b);
  compression_budget(b, fitted);
  const double full = guided_beats_two_stage(b, fitted);
  anchor_fractions(b, fitted, full);
  file_formats_and_assignment(GSPROTO_FIXTURE_DIR);
  metric_closed_forms();
  std::printf("%s: %d of 8 criteria failed [%.0f s]\n", failures ? "FAIL" : "PASS", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
