#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "labelformer/eval.hpp"
#include "labelformer/kv_config.hpp"
#include "labelformer/model.hpp"
#include "labelformer/scene.hpp"
#include "labelformer/tracker.hpp"
#include "labelformer/training.hpp"
#include "labelformer/trajectory.hpp"

// File-based stages. Directory layout:
//   scenes:       <name>.jsonl
//   tracklets:    <name>.tracklets.jsonl
//   trajectories: <name>.traj.jsonl
//   training:     checkpoint.ckpt, metrics.csv
//   refinement:   refined.jsonl
//   evaluation:   report.csv, recall_curve.csv
namespace labelformer::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kSceneSuffix = ".jsonl";
inline constexpr const char* kTrackletSuffix = ".tracklets.jsonl";
inline constexpr const char* kTrajectorySuffix = ".traj.jsonl";

struct GenOptions {
  fs::path out_dir;
  std::size_t scenes = 10;
  std::uint64_t seed = 0;
  int frames_min = 40;
  int frames_max = 40;
  int actors = 4;
  double points_at_10m = 200.0;
  NoiseModel noise;
  int jobs = 1;
};

struct GenSummary {
  std::size_t scenes = 0;
  std::size_t actors = 0;
  std::size_t frames = 0;
  std::size_t points = 0;
};

// Scene i is named scene_<i> and depends only on (seed, i).
GenSummary cmd_gen(const GenOptions& opt);

struct TrackOptions {
  fs::path scenes_dir;
  fs::path out_dir;
  tracker::TrackerConfig tracker;
  double assoc_min_iou = 0.1;
  int jobs = 1;
};

struct TrackSummary {
  std::size_t scenes = 0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
};

TrackSummary cmd_track(const TrackOptions& opt);

struct ExtractOptions {
  fs::path scenes_dir;
  fs::path tracklets_dir;
  fs::path out_dir;
  trajectory::ExtractConfig extract;
  int jobs = 1;
};

struct ExtractSummary {
  std::size_t trajectories = 0;
  std::size_t skipped_unassociated = 0;
  std::size_t skipped_short = 0;
};

ExtractSummary cmd_extract(const ExtractOptions& opt);

// All trajectories of a directory in file-name order.
std::vector<trajectory::Trajectory> load_trajectories(const fs::path& dir);

struct TrainOptions {
  fs::path train_dir;
  fs::path val_dir;  // optional
  fs::path out_dir;
  model::ModelConfig model;
  training::TrainConfig train;
  bool verbose = false;
};

training::TrainResult cmd_train(const TrainOptions& opt);

struct RefineOptions {
  fs::path trajectories_dir;
  fs::path checkpoint;
  fs::path out_file;
  int jobs = 1;
};

struct RefineSummary {
  std::size_t trajectories = 0;
  double total_ms = 0.0;
};

// Throws DataError when the checkpoint does not match its embedded config.
RefineSummary cmd_refine(const RefineOptions& opt);

// Loads the model described by a checkpoint's embedded config.
model::LabelFormer load_model(const fs::path& checkpoint);

struct EvalOptions {
  fs::path refined_file;
  fs::path out_dir;
};

eval::Comparison cmd_eval(const EvalOptions& opt);

struct PipelineSummary {
  GenSummary gen_train, gen_val;
  TrackSummary track_train, track_val;
  ExtractSummary extract_train, extract_val;
  training::TrainResult train;
  RefineSummary refine;
  eval::Comparison eval;
};

// gen -> track -> extract -> train -> refine -> eval under `root`, driven by
// one config. Sections: pipeline, gen, noise, track, extract, model, train.
PipelineSummary run_pipeline(const KvConfig& cfg, const fs::path& root, bool verbose = false);

// Every key run_pipeline understands.
const std::vector<std::string>& pipeline_kv_keys();

}  // namespace labelformer::pipeline
