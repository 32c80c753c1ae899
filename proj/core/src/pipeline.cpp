#include "labelformer/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <random>
#include <set>
#include <stdexcept>

#include "labelformer/datagen.hpp"
#include "labelformer/error.hpp"
#include "labelformer/fileio.hpp"
#include "labelformer/nn/checkpoint.hpp"

namespace labelformer::pipeline {

namespace {

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", i);
  return buf;
}

std::string strip_suffix(const fs::path& p, const std::string& suffix) {
  const std::string name = p.filename().string();
  return name.substr(0, name.size() - suffix.size());
}

// Scene files, excluding the other artifact kinds that share the .jsonl suffix.
std::vector<fs::path> scene_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& p : fileio::list_files(dir, kSceneSuffix)) {
    const std::string n = p.filename().string();
    if (n.ends_with(kTrackletSuffix) || n.ends_with(kTrajectorySuffix)) continue;
    out.push_back(p);
  }
  return out;
}

void require_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw DataError(std::string(what) + " directory not found: " + dir.string());
}

std::uint64_t scene_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5ce7eu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

GenSummary cmd_gen(const GenOptions& opt) {
  if (opt.frames_min < 1 || opt.frames_max < opt.frames_min) {
    throw std::invalid_argument("gen: need 1 <= frames_min <= frames_max");
  }
  if (opt.actors < 0) throw std::invalid_argument("gen: actors must be >= 0");
  opt.noise.validate();
  fs::create_directories(opt.out_dir);

  std::vector<GenSummary> per(opt.scenes);
  fileio::parallel_for(opt.scenes, opt.jobs, [&](std::size_t i) {
    datagen::Rng rng(scene_seed(opt.seed, i));
    SceneConfig sc;
    sc.num_actors = opt.actors;
    sc.num_frames = std::uniform_int_distribution<int>(opt.frames_min, opt.frames_max)(rng);
    sc.points_at_10m = opt.points_at_10m;
    sc.rng_seed = rng();
    std::vector<MotionProfile> profiles;
    for (int a = 0; a < opt.actors; ++a) profiles.push_back(datagen::random_profile(rng));
    const Scene scene = datagen::generate_full_scene(sc, profiles, opt.noise);
    write_scene(opt.out_dir / (scene_name(i) + kSceneSuffix), scene);
    per[i].scenes = 1;
    per[i].actors = scene.actors.size();
    per[i].frames = scene.frames.size();
    for (const auto& f : scene.frames) per[i].points += f.points.size();
  });
  GenSummary total;
  for (const auto& s : per) {
    total.scenes += s.scenes;
    total.actors += s.actors;
    total.frames += s.frames;
    total.points += s.points;
  }
  return total;
}

TrackSummary cmd_track(const TrackOptions& opt) {
  require_dir(opt.scenes_dir, "scenes");
  opt.tracker.validate();
  fs::create_directories(opt.out_dir);
  const auto files = scene_files(opt.scenes_dir);
  std::vector<TrackSummary> per(files.size());
  fileio::parallel_for(files.size(), opt.jobs, [&](std::size_t i) {
    const Scene scene = read_scene(files[i]);
    std::vector<tracker::AssociatedTracklet> out;
    for (auto& t : tracker::run_tracker(scene, opt.tracker)) {
      auto id = tracker::associate_gt(t, scene, opt.assoc_min_iou);
      (id ? per[i].true_positive : per[i].false_positive) += 1;
      out.push_back({std::move(t), id});
    }
    tracker::write_tracklets(opt.out_dir / (strip_suffix(files[i], kSceneSuffix) + kTrackletSuffix), out);
    per[i].scenes = 1;
  });
  TrackSummary total;
  for (const auto& s : per) {
    total.scenes += s.scenes;
    total.true_positive += s.true_positive;
    total.false_positive += s.false_positive;
  }
  return total;
}

ExtractSummary cmd_extract(const ExtractOptions& opt) {
  require_dir(opt.scenes_dir, "scenes");
  require_dir(opt.tracklets_dir, "tracklets");
  fs::create_directories(opt.out_dir);
  const auto files = scene_files(opt.scenes_dir);
  std::vector<ExtractSummary> per(files.size());
  fileio::parallel_for(files.size(), opt.jobs, [&](std::size_t i) {
    const std::string name = strip_suffix(files[i], kSceneSuffix);
    const fs::path tpath = opt.tracklets_dir / (name + kTrackletSuffix);
    if (!fs::exists(tpath)) throw DataError("missing tracklet file " + tpath.string());
    const Scene scene = read_scene(files[i]);
    std::vector<trajectory::Trajectory> trajs;
    for (const auto& t : tracker::read_tracklets(tpath)) {
      if (!t.gt_actor_id) {
        ++per[i].skipped_unassociated;
        continue;
      }
      auto traj = trajectory::extract(scene, name, t, opt.extract);
      if (!traj) {
        ++per[i].skipped_short;
        continue;
      }
      trajs.push_back(std::move(*traj));
    }
    per[i].trajectories = trajs.size();
    trajectory::write_trajectories(opt.out_dir / (name + kTrajectorySuffix), trajs);
  });
  ExtractSummary total;
  for (const auto& s : per) {
    total.trajectories += s.trajectories;
    total.skipped_unassociated += s.skipped_unassociated;
    total.skipped_short += s.skipped_short;
  }
  return total;
}

std::vector<trajectory::Trajectory> load_trajectories(const fs::path& dir) {
  require_dir(dir, "trajectories");
  std::vector<trajectory::Trajectory> out;
  for (const auto& p : fileio::list_files(dir, kTrajectorySuffix)) {
    for (auto& t : trajectory::read_trajectories(p)) out.push_back(std::move(t));
  }
  return out;
}

training::TrainResult cmd_train(const TrainOptions& opt) {
  const auto train_set = load_trajectories(opt.train_dir);
  if (train_set.empty()) throw DataError("train: no trajectories in " + opt.train_dir.string());
  std::vector<trajectory::Trajectory> val_set;
  if (!opt.val_dir.empty()) val_set = load_trajectories(opt.val_dir);
  opt.model.validate();
  fs::create_directories(opt.out_dir);

  KvConfig kv;
  opt.model.write_kv(kv);
  opt.train.write_kv(kv);
  model::LabelFormer net(opt.model);
  training::TrainOutputs out{opt.out_dir / "checkpoint.ckpt", opt.out_dir / "metrics.csv", kv.dump(), opt.verbose};
  return training::train(net, train_set, val_set, opt.train, out);
}

model::LabelFormer load_model(const fs::path& checkpoint) {
  const KvConfig kv = KvConfig::parse(nn::read_checkpoint_config(checkpoint), checkpoint.string());
  model::ModelConfig cfg;
  try {
    cfg = model::ModelConfig::from_kv(kv);
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(checkpoint.string() + ": invalid embedded model config: " + e.what());
  }
  model::LabelFormer net(cfg);
  nn::load_checkpoint(checkpoint, net.params());
  return net;
}

RefineSummary cmd_refine(const RefineOptions& opt) {
  const model::LabelFormer net = load_model(opt.checkpoint);
  const auto trajs = load_trajectories(opt.trajectories_dir);
  std::vector<trajectory::RefinedRecord> records(trajs.size());
  fileio::parallel_for(trajs.size(), opt.jobs, [&](std::size_t i) {
    const auto& t = trajs[i];
    const auto start = std::chrono::steady_clock::now();
    const model::RefinedTrajectory r = net.refine(t.input());
    const auto stop = std::chrono::steady_clock::now();
    auto& rec = records[i];
    rec.object_id = t.object_id;
    rec.frames = t.frames;
    rec.init = t.boxes;
    rec.refined = r.boxes();
    rec.gt = t.gt;
    rec.l = r.l;
    rec.w = r.w;
    rec.runtime_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  });
  if (!opt.out_file.parent_path().empty()) fs::create_directories(opt.out_file.parent_path());
  trajectory::write_refined(opt.out_file, records);
  RefineSummary s;
  s.trajectories = records.size();
  for (const auto& r : records) s.total_ms += r.runtime_ms;
  return s;
}

eval::Comparison cmd_eval(const EvalOptions& opt) {
  if (!fs::exists(opt.refined_file)) throw DataError("refined file not found: " + opt.refined_file.string());
  const auto records = trajectory::read_refined(opt.refined_file);
  if (records.empty()) throw DataError("no refined trajectories in " + opt.refined_file.string());
  const auto before = eval::score_records(records, false);
  const auto after = eval::score_records(records, true);
  eval::Comparison cmp = eval::compare_reports(before, after);
  fs::create_directories(opt.out_dir);
  fileio::write_atomic(opt.out_dir / "report.csv", [&](std::ostream& os) { eval::write_report_csv(os, cmp); });
  fileio::write_atomic(opt.out_dir / "recall_curve.csv", [&](std::ostream& os) { eval::write_recall_curve(os, cmp); });
  return cmp;
}

const std::vector<std::string>& pipeline_kv_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k{"pipeline.seed",         "pipeline.jobs",       "gen.train_scenes",
                               "gen.val_scenes",        "gen.frames_min",      "gen.frames_max",
                               "gen.actors",            "gen.points_at_10m",   "noise.sigma_xy",
                               "noise.sigma_theta_deg", "noise.sigma_lw",      "noise.heading_flip_prob",
                               "noise.drop_prob",       "noise.score_floor",   "noise.sigma_score",
                               "track.nms_iou",         "track.score_min_det", "track.match_dist_max",
                               "track.decay",           "track.terminate_below", "track.assoc_min_iou",
                               "extract.enlarge",       "extract.context_margin", "extract.min_length"};
    for (const auto& m : model::ModelConfig::kv_keys()) k.push_back(m);
    for (const auto& t : training::TrainConfig::kv_keys()) k.push_back(t);
    return k;
  }();
  return keys;
}

PipelineSummary run_pipeline(const KvConfig& cfg, const fs::path& root, bool verbose) {
  const std::vector<std::string>& keys = pipeline_kv_keys();
  cfg.require_known(std::set<std::string>(keys.begin(), keys.end()));

  const auto seed = static_cast<std::uint64_t>(cfg.get_int("pipeline.seed", 0));
  const int jobs = static_cast<int>(cfg.get_int("pipeline.jobs", 1));

  GenOptions gen;
  gen.seed = seed;
  gen.jobs = jobs;
  gen.frames_min = static_cast<int>(cfg.get_int("gen.frames_min", gen.frames_min));
  gen.frames_max = static_cast<int>(cfg.get_int("gen.frames_max", gen.frames_max));
  gen.actors = static_cast<int>(cfg.get_int("gen.actors", gen.actors));
  gen.points_at_10m = cfg.get_double("gen.points_at_10m", gen.points_at_10m);
  NoiseModel& n = gen.noise;
  n.sigma_xy = cfg.get_double("noise.sigma_xy", n.sigma_xy);
  n.sigma_theta = cfg.get_double("noise.sigma_theta_deg", n.sigma_theta * 180.0 / geometry::kPi) * geometry::kPi / 180.0;
  n.sigma_lw = cfg.get_double("noise.sigma_lw", n.sigma_lw);
  n.heading_flip_prob = cfg.get_double("noise.heading_flip_prob", n.heading_flip_prob);
  n.drop_prob = cfg.get_double("noise.drop_prob", n.drop_prob);
  n.score_floor = cfg.get_double("noise.score_floor", n.score_floor);
  n.sigma_score = cfg.get_double("noise.sigma_score", n.sigma_score);

  TrackOptions track;
  track.jobs = jobs;
  tracker::TrackerConfig& tc = track.tracker;
  tc.nms_iou = cfg.get_double("track.nms_iou", tc.nms_iou);
  tc.score_min_det = cfg.get_double("track.score_min_det", tc.score_min_det);
  tc.match_dist_max = cfg.get_double("track.match_dist_max", tc.match_dist_max);
  tc.decay = cfg.get_double("track.decay", tc.decay);
  tc.terminate_below = cfg.get_double("track.terminate_below", tc.terminate_below);
  track.assoc_min_iou = cfg.get_double("track.assoc_min_iou", track.assoc_min_iou);

  ExtractOptions ext;
  ext.jobs = jobs;
  ext.extract.enlarge = cfg.get_double("extract.enlarge", ext.extract.enlarge);
  ext.extract.context_margin = cfg.get_double("extract.context_margin", ext.extract.context_margin);
  const std::int64_t min_len = cfg.get_int("extract.min_length", 1);
  if (min_len < 1) throw std::invalid_argument("extract.min_length must be >= 1");
  ext.extract.min_length = static_cast<std::size_t>(min_len);

  TrainOptions tr;
  tr.model = model::ModelConfig::from_kv(cfg);
  tr.train = training::TrainConfig::from_kv(cfg);
  if (!cfg.has("train.seed")) tr.train.seed = seed;
  if (!cfg.has("train.jobs")) tr.train.jobs = jobs;
  tr.verbose = verbose;

  PipelineSummary s;
  auto log = [&](const std::string& msg) {
    if (verbose) std::fprintf(stderr, "%s\n", msg.c_str());
  };
  for (const char* split : {"train", "val"}) {
    const bool is_train = std::string(split) == "train";
    GenOptions g = gen;
    g.scenes = static_cast<std::size_t>(cfg.get_int(is_train ? "gen.train_scenes" : "gen.val_scenes", is_train ? 50 : 12));
    g.seed = is_train ? seed : scene_seed(seed, 0x7a1u);
    g.out_dir = root / "scenes" / split;
    (is_train ? s.gen_train : s.gen_val) = cmd_gen(g);
    log(std::string("gen ") + split + ": " + std::to_string(g.scenes) + " scenes");

    TrackOptions t = track;
    t.scenes_dir = g.out_dir;
    t.out_dir = root / "tracklets" / split;
    (is_train ? s.track_train : s.track_val) = cmd_track(t);

    ExtractOptions e = ext;
    e.scenes_dir = g.out_dir;
    e.tracklets_dir = t.out_dir;
    e.out_dir = root / "trajectories" / split;
    (is_train ? s.extract_train : s.extract_val) = cmd_extract(e);
    log(std::string("extract ") + split + ": " +
        std::to_string((is_train ? s.extract_train : s.extract_val).trajectories) + " trajectories");
  }

  tr.train_dir = root / "trajectories" / "train";
  tr.val_dir = root / "trajectories" / "val";
  tr.out_dir = root / "model";
  s.train = cmd_train(tr);

  RefineOptions rf;
  rf.trajectories_dir = tr.val_dir;
  rf.checkpoint = tr.out_dir / "checkpoint.ckpt";
  rf.out_file = root / "refined" / "refined.jsonl";
  rf.jobs = jobs;
  s.refine = cmd_refine(rf);

  EvalOptions ev;
  ev.refined_file = rf.out_file;
  ev.out_dir = root / "reports";
  s.eval = cmd_eval(ev);
  return s;
}

}  // namespace labelformer::pipeline
