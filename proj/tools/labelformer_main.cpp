// Command-line driver: gen, track, extract, train, refine, eval, pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "labelformer/error.hpp"
#include "labelformer/pipeline.hpp"

namespace fs = std::filesystem;
using namespace labelformer;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct TrainFlags {
  std::string train_dir, val_dir, out_dir = "model", config, preset = "desk";
  std::optional<std::size_t> epochs, batch, window;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::string variant, pos;
  bool no_perturb = false, no_subsequence = false, no_box_enc = false, no_point_enc = false;
  bool verbose = false;
};

void print_eval(const eval::Comparison& cmp) {
  auto line = [](const char* group, const eval::Summary& b, const eval::Summary& a) {
    std::printf("%-10s n=%-4zu mean_iou %.4f -> %.4f", group, a.count, b.mean_iou, a.mean_iou);
    for (std::size_t k = 0; k < eval::kRecallThresholds.size(); ++k) {
      std::printf("  rc@%.1f %.3f -> %.3f", eval::kRecallThresholds[k], b.recall[k], a.recall[k]);
    }
    std::printf("\n");
  };
  line("all", cmp.before.all, cmp.after.all);
  if (cmp.before.stationary) line("stationary", *cmp.before.stationary, *cmp.after.stationary);
  if (cmp.before.dynamic) line("dynamic", *cmp.before.dynamic, *cmp.after.dynamic);
}

int run(int argc, char** argv) {
  CLI::App app{"Trajectory-level auto-labelling refinement on synthetic LiDAR scenes"};
  app.require_subcommand(1);
  int jobs = 1;
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  // gen
  pipeline::GenOptions gen;
  std::string gen_out = "scenes";
  std::optional<int> gen_frames;
  double sigma_theta_deg = gen.noise.sigma_theta * 180.0 / geometry::kPi;
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic scenes");
  gen_cmd->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  gen_cmd->add_option("--frames", gen_frames, "Frames per scene (sets min and max)");
  gen_cmd->add_option("--frames-min", gen.frames_min)->capture_default_str();
  gen_cmd->add_option("--frames-max", gen.frames_max)->capture_default_str();
  gen_cmd->add_option("--actors", gen.actors)->capture_default_str();
  gen_cmd->add_option("--points-at-10m", gen.points_at_10m)->capture_default_str();
  gen_cmd->add_option("--sigma-xy", gen.noise.sigma_xy)->capture_default_str();
  gen_cmd->add_option("--sigma-theta-deg", sigma_theta_deg)->capture_default_str();
  gen_cmd->add_option("--sigma-lw", gen.noise.sigma_lw)->capture_default_str();
  gen_cmd->add_option("--flip-prob", gen.noise.heading_flip_prob)->capture_default_str();
  gen_cmd->add_option("--drop-prob", gen.noise.drop_prob)->capture_default_str();
  bool noiseless = false;
  gen_cmd->add_flag("--noiseless", noiseless, "Detections equal the GT boxes");

  // track
  pipeline::TrackOptions track;
  std::string track_scenes = "scenes", track_out = "tracklets";
  auto* track_cmd = app.add_subcommand("track", "Run the tracker and associate GT");
  track_cmd->add_option("--scenes", track_scenes)->capture_default_str();
  track_cmd->add_option("--out", track_out)->capture_default_str();
  track_cmd->add_option("--match-dist", track.tracker.match_dist_max)->capture_default_str();

  // extract
  pipeline::ExtractOptions ext;
  std::string ext_scenes = "scenes", ext_tracklets = "tracklets", ext_out = "trajectories";
  auto* ext_cmd = app.add_subcommand("extract", "Build trajectory files from associated tracklets");
  ext_cmd->add_option("--scenes", ext_scenes)->capture_default_str();
  ext_cmd->add_option("--tracklets", ext_tracklets)->capture_default_str();
  ext_cmd->add_option("--out", ext_out)->capture_default_str();
  ext_cmd->add_option("--min-length", ext.extract.min_length)->capture_default_str();

  // train
  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train the refinement model");
  train_cmd->add_option("--train", tf.train_dir, "Training trajectories directory")->required();
  train_cmd->add_option("--val", tf.val_dir, "Validation trajectories directory");
  train_cmd->add_option("--out", tf.out_dir, "Output directory")->capture_default_str();
  train_cmd->add_option("--config", tf.config, "Key-value config with model.* and train.* keys");
  train_cmd->add_option("--preset", tf.preset, "Model preset (desk or full)")->capture_default_str();
  train_cmd->add_option("--epochs", tf.epochs);
  train_cmd->add_option("--batch", tf.batch);
  train_cmd->add_option("--lr", tf.lr);
  train_cmd->add_option("--seed", tf.seed);
  train_cmd->add_option("--variant", tf.variant, "attention or mlp_pool");
  train_cmd->add_option("--pos", tf.pos, "alibi or absolute");
  train_cmd->add_option("--window", tf.window, "Restrict attention to |i - j| <= K");
  train_cmd->add_flag("--no-perturb", tf.no_perturb);
  train_cmd->add_flag("--no-subsequence", tf.no_subsequence);
  train_cmd->add_flag("--no-box-enc", tf.no_box_enc);
  train_cmd->add_flag("--no-point-enc", tf.no_point_enc);
  train_cmd->add_flag("--verbose,-v", tf.verbose);

  // refine
  pipeline::RefineOptions ref;
  std::string ref_traj = "trajectories", ref_ckpt = "model/checkpoint.ckpt", ref_out = "refined/refined.jsonl";
  auto* ref_cmd = app.add_subcommand("refine", "Refine trajectories with a trained checkpoint");
  ref_cmd->add_option("--trajectories", ref_traj)->capture_default_str();
  ref_cmd->add_option("--checkpoint", ref_ckpt)->capture_default_str();
  ref_cmd->add_option("--out", ref_out)->capture_default_str();

  // eval
  pipeline::EvalOptions ev;
  std::string ev_in = "refined/refined.jsonl", ev_out = "reports";
  auto* eval_cmd = app.add_subcommand("eval", "Score initial and refined trajectories against GT");
  eval_cmd->add_option("--refined", ev_in)->capture_default_str();
  eval_cmd->add_option("--out", ev_out)->capture_default_str();

  // pipeline
  std::string pipe_config, pipe_root = "run";
  bool pipe_verbose = false;
  auto* pipe_cmd = app.add_subcommand("pipeline", "gen, track, extract, train, refine and eval from one config");
  pipe_cmd->add_option("--config", pipe_config)->required();
  pipe_cmd->add_option("--root", pipe_root, "Working directory for all artifacts")->capture_default_str();
  pipe_cmd->add_flag("--verbose,-v", pipe_verbose);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (gen_cmd->parsed()) {
    gen.out_dir = gen_out;
    gen.jobs = jobs;
    if (gen_frames) gen.frames_min = gen.frames_max = *gen_frames;
    gen.noise.sigma_theta = sigma_theta_deg * geometry::kPi / 180.0;
    if (noiseless) gen.noise = NoiseModel::zero();
    const auto s = pipeline::cmd_gen(gen);
    std::printf("scenes %zu actors %zu frames %zu points %zu\n", s.scenes, s.actors, s.frames, s.points);
  } else if (track_cmd->parsed()) {
    track.scenes_dir = track_scenes;
    track.out_dir = track_out;
    track.jobs = jobs;
    const auto s = pipeline::cmd_track(track);
    std::printf("scenes %zu tracklets %zu true_positive %zu false_positive %zu\n", s.scenes,
                s.true_positive + s.false_positive, s.true_positive, s.false_positive);
  } else if (ext_cmd->parsed()) {
    ext.scenes_dir = ext_scenes;
    ext.tracklets_dir = ext_tracklets;
    ext.out_dir = ext_out;
    ext.jobs = jobs;
    const auto s = pipeline::cmd_extract(ext);
    std::printf("trajectories %zu skipped_unassociated %zu skipped_short %zu\n", s.trajectories,
                s.skipped_unassociated, s.skipped_short);
  } else if (train_cmd->parsed()) {
    KvConfig kv;
    if (!tf.config.empty()) kv = KvConfig::load(tf.config);
    if (!kv.has("model.preset")) kv.set("model.preset", tf.preset);
    pipeline::TrainOptions opt;
    opt.model = model::ModelConfig::from_kv(kv);
    opt.train = training::TrainConfig::from_kv(kv);
    if (!tf.variant.empty()) opt.model.variant = model::variant_from_string(tf.variant);
    if (!tf.pos.empty()) opt.model.pos_encoding = model::pos_encoding_from_string(tf.pos);
    if (tf.window) opt.model.window = *tf.window;
    if (tf.no_box_enc) opt.model.use_box_encoder = false;
    if (tf.no_point_enc) opt.model.use_point_encoder = false;
    if (tf.epochs) opt.train.epochs = *tf.epochs;
    if (tf.batch) opt.train.batch_size = *tf.batch;
    if (tf.lr) opt.train.lr = *tf.lr;
    if (tf.seed) opt.train.seed = *tf.seed;
    if (tf.no_perturb) opt.train.augment.perturb = false;
    if (tf.no_subsequence) opt.train.augment.subsequence = false;
    opt.train.jobs = jobs;
    opt.model.validate();
    opt.train.validate();
    opt.train_dir = tf.train_dir;
    opt.val_dir = tf.val_dir;
    opt.out_dir = tf.out_dir;
    opt.verbose = tf.verbose;
    const auto r = pipeline::cmd_train(opt);
    std::printf("epochs %zu best_epoch %zu init_val_mean_iou %.4f best_val_mean_iou %.4f skipped %zu\n",
                r.log.size(), r.best_epoch, r.init_val_mean_iou, r.best_val_mean_iou, r.skipped);
  } else if (ref_cmd->parsed()) {
    ref.trajectories_dir = ref_traj;
    ref.checkpoint = ref_ckpt;
    ref.out_file = ref_out;
    ref.jobs = jobs;
    const auto s = pipeline::cmd_refine(ref);
    std::printf("trajectories %zu total_ms %.1f\n", s.trajectories, s.total_ms);
  } else if (eval_cmd->parsed()) {
    ev.refined_file = ev_in;
    ev.out_dir = ev_out;
    print_eval(pipeline::cmd_eval(ev));
  } else if (pipe_cmd->parsed()) {
    KvConfig kv = KvConfig::load(pipe_config);
    if (!kv.has("pipeline.jobs")) kv.set("pipeline.jobs", static_cast<std::int64_t>(jobs));
    const auto s = pipeline::run_pipeline(kv, pipe_root, pipe_verbose);
    std::printf("train trajectories %zu, val trajectories %zu, best epoch %zu\n", s.extract_train.trajectories,
                s.extract_val.trajectories, s.train.best_epoch);
    print_eval(s.eval);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
