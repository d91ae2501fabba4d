// Command-line front end: dataset synthesis, training, rendering, evaluation
// and response-curve export/calibration.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hdrnerf/hdrnerf.hpp"

namespace fs = std::filesystem;
using namespace hdrnerf;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

// --pose accepts an index into the checkpoint's distinct poses or a JSON
// file holding either {"c2w": [16 numbers]} or a bare 16-number array.
std::array<double, 16> resolve_pose(const std::string& arg, const std::vector<std::array<double, 16>>& poses) {
  if (!arg.empty() && arg.find_first_not_of("0123456789") == std::string::npos) {
    const std::size_t i = std::stoul(arg);
    if (i >= poses.size()) {
      throw InputError("pose index " + arg + " out of range (" + std::to_string(poses.size()) + " poses)");
    }
    return poses[i];
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(arg));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(arg + ": " + e.what());
  }
  const auto& m = j.is_object() ? j.at("c2w") : j;
  if (!m.is_array() || m.size() != 16) throw InputError(arg + ": c2w must hold 16 numbers");
  return m.get<std::array<double, 16>>();
}

int cmd_make_dataset(const std::string& scene_path, const fs::path& out, std::uint64_t seed,
                     const std::vector<int>& train_levels) {
  SceneSpec spec = load_scene(scene_path);
  if (!train_levels.empty()) {
    spec.train_exposures.clear();
    for (int t : train_levels) spec.train_exposures.push_back(t - 1);  // t1.. on the command line
    spec.validate();
  }
  SynthReport report;
  const DatasetBundle d = make_dataset(spec, seed, &report);
  write_dataset(out, d);
  std::printf("wrote %zu views to %s (ground-truth max relative change %.4g)\n", d.views.size(), out.c_str(),
              report.worst_gt_delta);
  return 0;
}

int cmd_train(const fs::path& data, const fs::path& out, const std::optional<std::string>& config_path,
              const nlohmann::json& overrides, long long log_every) {
  TrainConfig cfg;
  if (config_path) {
    try {
      cfg = train_config_from_json(nlohmann::json::parse(read_file(*config_path)), cfg);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(*config_path + ": " + e.what());
    }
  }
  cfg = train_config_from_json(overrides, cfg);
  cfg.validate();
  const DatasetBundle d = load_dataset(data);
  fs::create_directories(out);
  TrainOptions opts;
  opts.out_dir = out;
  opts.on_step = [&](const LossReport& r) {
    if (log_every > 0 && (r.step % log_every == 0 || r.step + 1 == cfg.iterations)) {
      std::fprintf(stderr, "step %lld  lr %.3g  loss %.6g  (coarse %.5g fine %.5g unit %.3g)\n", r.step, r.lr, r.total,
                   r.color_coarse, r.color_fine, r.unit);
    }
  };
  train(d, cfg, opts);
  std::printf("saved %s\n", (out / "model.hdrf").c_str());
  return 0;
}

int cmd_render(const fs::path& ckpt_path, const std::string& pose, std::optional<double> exposure, bool hdr,
               const fs::path& out, std::uint64_t seed) {
  const std::string ext = lower_ext(out);
  if (ext != ".png" && ext != ".pfm") throw UsageError("--out must end in .png or .pfm");
  if (hdr && ext == ".png") throw UsageError("HDR renders are written as .pfm");
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const auto c2w = resolve_pose(pose, ck.poses);
  const CameraView view = CameraView::from_c2w(c2w, ck.intrinsics, exposure.value_or(1.0));
  const RenderMode mode = hdr ? RenderMode::high_dynamic_range() : RenderMode::ldr(*exposure);
  const Image img = render_image(view, ck.model, mode, ck.near, ck.far, ck.render, seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (ext == ".png") {
    write_png(out, img);
  } else {
    write_pfm(out, img);
  }
  return 0;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const DatasetBundle d = load_dataset(data);
  const EvalTable table = evaluate(d, predict_test_views(d, ck.model, ck.render));
  for (const auto& n : table.notices) std::fprintf(stderr, "note: %s\n", n.c_str());
  write_text(out, table.csv());
  std::fputs(table.csv().c_str(), stdout);
  return 0;
}

int cmd_calibrate(const fs::path& data, std::size_t pose, const fs::path& out, std::size_t sites, double smoothness,
                  std::uint64_t seed) {
  const DatasetBundle d = load_dataset(data);
  std::vector<std::pair<double, const Image*>> stack;
  for (const auto& v : d.views) {
    if (v.pose_index == pose) stack.emplace_back(v.camera.exposure_time, &v.image);
  }
  if (stack.empty()) throw InputError("no views at pose " + std::to_string(pose));
  std::sort(stack.begin(), stack.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Image> images;
  std::vector<double> dts;
  for (const auto& [dt, img] : stack) {
    images.push_back(*img);
    dts.push_back(dt);
  }
  if (images.size() < 2) {
    throw InputError("pose " + std::to_string(pose) + " has " + std::to_string(images.size()) +
                     " exposure(s); calibration needs at least two");
  }
  const auto crf = calibrate_stack(images, dts, sites, smoothness, seed);
  write_text(out, crf_curve_csv(discrete_to_curve(crf)));
  return 0;
}

int cmd_export_crf(const fs::path& ckpt_path, const fs::path& out, double lo, double hi, std::size_t samples) {
  if (!(lo < hi) || samples < 2) throw UsageError("need --min < --max and --samples >= 2");
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const auto grid = linspace(lo, hi, samples);
  write_text(out, crf_curve_csv(crf_curve_export(ck.model.tone, grid)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"HDR radiance fields from multi-exposure LDR views"};
  app.require_subcommand(1);

  std::string scene, out_s, data_s, ckpt_s, pose_s;
  std::uint64_t seed = 0;
  std::vector<int> train_levels;

  auto* mk = app.add_subcommand("make-dataset", "render a synthetic multi-exposure dataset");
  mk->add_option("--scene", scene, "scene description JSON")->required()->check(CLI::ExistingFile);
  mk->add_option("--out", out_s, "output dataset directory")->required();
  mk->add_option("--seed", seed, "seed for the training exposure assignment");
  mk->add_option("--train-exposures", train_levels, "training exposure levels, e.g. 1 3 5")->expected(1, 16);

  std::optional<std::string> config;
  std::optional<long long> iterations, checkpoint_every;
  std::optional<int> batch_rays, n_coarse, n_fine;
  std::optional<double> lambda_u, lr_start, lr_end, c0;
  std::optional<std::uint64_t> train_seed;
  bool monotone = false;
  long long log_every = 500;
  auto* tr = app.add_subcommand("train", "optimize a model on a dataset");
  tr->add_option("--data", data_s, "dataset directory")->required();
  tr->add_option("--out", out_s, "checkpoint directory")->required();
  tr->add_option("--config", config, "train config JSON");
  tr->add_option("--iterations", iterations);
  tr->add_option("--batch-rays", batch_rays);
  tr->add_option("--lambda-u", lambda_u);
  tr->add_option("--lr-start", lr_start);
  tr->add_option("--lr-end", lr_end);
  tr->add_option("--c0", c0, "unit-exposure anchor color (all channels)");
  tr->add_option("--n-coarse", n_coarse);
  tr->add_option("--n-fine", n_fine);
  tr->add_option("--checkpoint-every", checkpoint_every);
  tr->add_option("--seed", train_seed);
  tr->add_flag("--monotone", monotone, "constrain the tone mapper to be non-decreasing");
  tr->add_option("--log-every", log_every, "progress line interval (0 silences)");

  std::optional<double> exposure;
  bool hdr = false;
  auto* rd = app.add_subcommand("render", "render one view from a checkpoint");
  rd->add_option("--ckpt", ckpt_s, "checkpoint file")->required()->check(CLI::ExistingFile);
  rd->add_option("--pose", pose_s, "pose index or pose JSON file")->required();
  auto* exp_opt = rd->add_option("--exposure", exposure, "exposure time in seconds (LDR output)");
  auto* hdr_opt = rd->add_flag("--hdr", hdr, "write the HDR radiance image");
  exp_opt->excludes(hdr_opt);
  rd->add_option("--out", out_s, "output .png or .pfm")->required();
  rd->add_option("--seed", seed);

  auto* ev = app.add_subcommand("eval", "score test views against the dataset");
  ev->add_option("--ckpt", ckpt_s)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_s)->required();
  ev->add_option("--out", out_s, "metrics CSV")->required();

  std::size_t cal_pose = 0, sites = 256;
  double smoothness = 50.0;
  auto* cal = app.add_subcommand("calibrate-crf", "classical response recovery from one pose's exposures");
  cal->add_option("--data", data_s)->required();
  cal->add_option("--pose", cal_pose)->required();
  cal->add_option("--out", out_s, "curve CSV")->required();
  cal->add_option("--sites", sites, "pixel sites per channel");
  cal->add_option("--lambda", smoothness, "smoothness weight");
  cal->add_option("--seed", seed);

  double lo = -8.0, hi = 3.0;
  std::size_t samples = 256;
  auto* ex = app.add_subcommand("export-crf", "sample the learned tone mapper");
  ex->add_option("--ckpt", ckpt_s)->required()->check(CLI::ExistingFile);
  ex->add_option("--out", out_s, "curve CSV")->required();
  ex->add_option("--min", lo, "lowest log exposure");
  ex->add_option("--max", hi, "highest log exposure");
  ex->add_option("--samples", samples);

  if (argc < 2) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*mk) return cmd_make_dataset(scene, out_s, seed, train_levels);
    if (*tr) {
      nlohmann::json o = nlohmann::json::object();
      if (iterations) o["iterations"] = *iterations;
      if (batch_rays) o["batch_rays"] = *batch_rays;
      if (lambda_u) o["lambda_u"] = *lambda_u;
      if (lr_start) o["lr_start"] = *lr_start;
      if (lr_end) o["lr_end"] = *lr_end;
      if (c0) o["c0"] = *c0;
      if (n_coarse) o["n_coarse"] = *n_coarse;
      if (n_fine) o["n_fine"] = *n_fine;
      if (checkpoint_every) o["checkpoint_every"] = *checkpoint_every;
      if (train_seed) o["seed"] = *train_seed;
      if (monotone) o["model"] = {{"monotone_tone_mapper", true}};
      return cmd_train(data_s, out_s, config, o, log_every);
    }
    if (*rd) {
      if (!exposure && !hdr) throw UsageError("render needs --exposure <seconds> or --hdr");
      if (exposure && !(*exposure > 0.0)) throw UsageError("--exposure must be positive");
      return cmd_render(ckpt_s, pose_s, exposure, hdr, out_s, seed);
    }
    if (*ev) return cmd_eval(ckpt_s, data_s, out_s);
    if (*cal) return cmd_calibrate(data_s, cal_pose, out_s, sites, smoothness, seed);
    if (*ex) return cmd_export_crf(ckpt_s, out_s, lo, hi, samples);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
