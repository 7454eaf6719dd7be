// protogs: fit, compress, render and evaluate Gaussian scenes from the command line.
//
// Exit codes: 0 success, 1 runtime or file error, 2 usage error, 3 training diverged.

#include <gsproto/io.hpp>
#include <gsproto/optimizer.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace gsproto;

namespace {

constexpr int kUsage = 2;
constexpr int kDiverged = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string scene;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<double> ratio;
  std::optional<std::string> mode;
};

void add_training_flags(CLI::App *cmd, Common &c) {
  cmd->add_option("--config", c.config, "key = value training config (fields of TrainingConfig)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--ratio", c.ratio, "overrides compression_ratio, in (0, 1]");
  cmd->add_option("--mode", c.mode, "fit_only, rendering_guided or two_stage")
      ->check(CLI::IsMember({"fit_only", "rendering_guided", "two_stage"}));
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

TrainingConfig load_config(const Common &c, TrainMode default_mode) {
  TrainingConfig cfg;
  cfg.mode = default_mode;
  if (!c.config.empty())
    cfg = read_config(c.config, cfg);
  if (c.seed)
    cfg.seed = *c.seed;
  if (c.ratio)
    cfg.compression_ratio = *c.ratio;
  if (c.mode) {
    std::istringstream line("mode = " + *c.mode);
    cfg = parse_config(line, cfg);
  }
  cfg.validate();
  return cfg;
}

SceneBundle<float> load_scene(const std::string &dir) {
  if (dir.empty())
    throw UsageError("--scene is required");
  if (!fs::is_directory(dir))
    throw UsageError("scene directory not found: " + dir);
  return read_scene<float>(dir);
}

PrimitiveSet<float> load_ply(const std::string &path) {
  if (path.empty())
    throw UsageError("--input is required");
  if (!fs::exists(path))
    throw UsageError("input not found: " + path);
  return read_ply<float>(path);
}

TrainHooks<float> hooks_for(const fs::path &out) {
  TrainHooks<float> h;
  h.on_divergence = [out](const PrimitiveSet<float> &set, int) {
    const auto path = out / "diverged.ply";
    try {
      write_ply(path, set);
    } catch (const std::exception &) {
      return std::string();
    }
    return path.string();
  };
  return h;
}

std::string summary(const std::string &command, const TrainingConfig &cfg, const TrainResult<float> &r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s mode=%s seed=%llu primitives=%zu psnr=%.4f ssim=%.6f", command.c_str(),
                to_string(cfg.mode).c_str(), static_cast<unsigned long long>(cfg.seed), r.primitives.size(),
                r.holdout.psnr, r.holdout.ssim);
  return buf;
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream o(path, std::ios::binary);
  o << text;
  if (!o)
    throw Error("cannot write " + path.string());
}

std::vector<std::size_t> parse_views(const std::string &spec, const SceneBundle<float> &scene) {
  if (spec.empty() || spec == "holdout")
    return scene.holdout;
  if (spec == "all") {
    std::vector<std::size_t> all(scene.cameras.size());
    for (std::size_t i = 0; i < all.size(); ++i)
      all[i] = i;
    return all;
  }
  std::vector<std::size_t> out;
  std::istringstream s(spec);
  for (std::string item; std::getline(s, item, ',');) {
    std::size_t v = 0;
    if (!detail::parse_number(item, v) || v >= scene.cameras.size())
      throw UsageError("bad view index '" + item + "' (scene has " + std::to_string(scene.cameras.size()) +
                       " views)");
    out.push_back(v);
  }
  return out;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Gaussian prototype compression of splatting scenes"};
  app.require_subcommand(1);

  Common fit_opts;
  bool fit_synthetic = false;
  auto *fit = app.add_subcommand("fit", "train from a scene directory; writes final.ply, log.csv, summary.txt");
  add_training_flags(fit, fit_opts);
  fit->add_option("--scene", fit_opts.scene, "scene directory (cameras.txt, images/, points3D, split.txt)");
  fit->add_flag("--synthetic", fit_synthetic, "use the default synthetic scene generated from --seed");

  Common comp_opts;
  std::string comp_input;
  auto *comp = app.add_subcommand(
      "compress", "derive prototypes from a fitted PLY; runs iterations [warmup_iterations, total_iterations)");
  add_training_flags(comp, comp_opts);
  comp->add_option("--input", comp_input, "fitted PLY")->required();
  comp->add_option("--scene", comp_opts.scene, "scene directory")->required();

  std::string render_input, render_scene, render_views, render_out = "renders";
  auto *rend = app.add_subcommand("render", "render views of a PLY to PNG files view_NNN.png");
  rend->add_option("--input", render_input, "PLY to render")->required();
  rend->add_option("--scene", render_scene, "scene directory providing cameras")->required();
  rend->add_option("--views", render_views, "comma-separated view indices, 'holdout' (default) or 'all'");
  rend->add_option("--out", render_out, "output directory")->capture_default_str();

  std::string eval_input, eval_scene, eval_views, eval_out;
  auto *ev = app.add_subcommand("eval", "per-view PSNR/SSIM CSV (view,psnr,ssim) of a PLY against scene images");
  ev->add_option("--input", eval_input, "PLY to evaluate")->required();
  ev->add_option("--scene", eval_scene, "scene directory")->required();
  ev->add_option("--views", eval_views, "comma-separated view indices, 'holdout' (default) or 'all'");
  ev->add_option("--out", eval_out, "CSV path; stdout when omitted");

  SyntheticSpec synth_spec;
  std::uint64_t synth_seed = 0;
  std::string synth_out = "scene", synth_gt;
  auto *syn = app.add_subcommand("synth", "write a synthetic scene directory");
  syn->add_option("--out", synth_out, "output directory")->capture_default_str();
  syn->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  syn->add_option("--primitives", synth_spec.primitive_count, "ground-truth primitive count")->capture_default_str();
  syn->add_option("--view-count", synth_spec.view_count, "cameras on the ring")->capture_default_str();
  syn->add_option("--image-size", synth_spec.image_size, "square image side in pixels")->capture_default_str();
  syn->add_option("--sfm-points", synth_spec.sfm_count, "jittered SfM points")->capture_default_str();
  syn->add_option("--holdout", synth_spec.holdout_fraction, "holdout view fraction")->capture_default_str();
  syn->add_option("--ground-truth", synth_gt, "also write the ground-truth primitives to this PLY");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  fs::path out_dir;
  try {
    if (*fit) {
      if (fit_synthetic == !fit_opts.scene.empty())
        throw UsageError("fit needs exactly one of --scene or --synthetic");
      const auto cfg = load_config(fit_opts, TrainMode::fit_only);
      const auto scene = fit_synthetic ? generate_synthetic_scene<float>(SyntheticSpec{}, cfg.seed).bundle
                                       : load_scene(fit_opts.scene);
      out_dir = fit_opts.out;
      fs::create_directories(out_dir);
      const auto r = train(scene, cfg, hooks_for(out_dir));
      write_ply(out_dir / "final.ply", r.primitives);
      write_text(out_dir / "log.csv", log_csv(r.log));
      const auto line = summary("fit", cfg, r);
      write_text(out_dir / "summary.txt", line + "\n");
      std::cout << line << "\n";
    } else if (*comp) {
      auto cfg = load_config(comp_opts, TrainMode::rendering_guided);
      if (cfg.mode == TrainMode::fit_only)
        throw UsageError("compress needs mode rendering_guided or two_stage");
      const auto input = load_ply(comp_input);
      const auto scene = load_scene(comp_opts.scene);
      out_dir = comp_opts.out;
      fs::create_directories(out_dir);
      const auto r = compress(input, scene, cfg, hooks_for(out_dir));
      const auto ply = out_dir / "compressed.ply";
      write_ply(ply, r.primitives);
      write_text(out_dir / "log.csv", log_csv(r.log));
      std::ostringstream rd;
      rd << "ratio,n_in,n_out,psnr,ssim,file_bytes\n"
         << detail::format_double(cfg.final_ratio()) << "," << input.size() << "," << r.primitives.size() << ","
         << detail::format_double(r.holdout.psnr) << "," << detail::format_double(r.holdout.ssim) << ","
         << fs::file_size(ply) << "\n";
      write_text(out_dir / "rd.csv", rd.str());
      const auto line = summary("compress", cfg, r);
      write_text(out_dir / "summary.txt", line + "\n");
      std::cout << line << "\n";
    } else if (*rend) {
      const auto set = load_ply(render_input);
      const auto scene = load_scene(render_scene);
      const auto views = parse_views(render_views, scene);
      fs::create_directories(render_out);
      RenderOptions<float> ro;
      ro.background = scene.background;
      for (auto v : views) {
        char name[32];
        std::snprintf(name, sizeof name, "view_%03zu.png", v);
        write_png(fs::path(render_out) / name, render(set, scene.cameras[v], ro).pixels);
      }
    } else if (*ev) {
      const auto set = load_ply(eval_input);
      auto scene = load_scene(eval_scene);
      scene.holdout = parse_views(eval_views, scene);
      const auto csv = metrics_csv(evaluate_holdout(set, scene));
      if (eval_out.empty())
        std::cout << csv;
      else
        write_text(eval_out, csv);
    } else if (*syn) {
      const auto s = generate_synthetic_scene<float>(synth_spec, synth_seed);
      write_scene(synth_out, s.bundle);
      if (!synth_gt.empty())
        write_ply(synth_gt, s.ground_truth);
    }
  } catch (const UsageError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DivergenceError &e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
