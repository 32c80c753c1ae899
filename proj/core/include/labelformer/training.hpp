#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "labelformer/kv_config.hpp"
#include "labelformer/model.hpp"
#include "labelformer/nn/optim.hpp"
#include "labelformer/trajectory.hpp"

namespace labelformer::training {

using geometry::BevBox;
using geometry::PointList;
using Rng = std::mt19937_64;

struct LossConfig {
  double lambda = 0.1;
  double smooth_l1_beta = 1.0;
  void validate() const;
};

struct AugmentConfig {
  bool perturb = true;
  double trans_range = 0.25;    // meters, per axis
  double rot_range_deg = 10.0;
  double len_range = 0.2;       // further limited to l/2
  double wid_range = 0.1;       // further limited to w/2
  bool subsequence = true;
  double min_len_ratio = 0.5;
  double crop_enlarge = 0.10;
  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  double lr = 5e-5;
  double warmup_epochs = 2.0;
  double lr_floor_ratio = 0.1;
  double weight_decay = 1e-5;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
  int jobs = 1;
  LossConfig loss;
  AugmentConfig augment;

  void validate() const;
  // Warmup is capped at half of the run so that short runs still decay.
  nn::LrSchedule schedule() const;
  // Keys live under "train.".
  void write_kv(KvConfig& kv) const;
  static TrainConfig from_kv(const KvConfig& kv);
  static const std::vector<std::string>& kv_keys();
};

// Scalar reference implementations.
double smooth_l1(double pred, double target, double beta);
double regression_loss(const model::RefinedTrajectory& pred, std::span<const BevBox> gt, const LossConfig& cfg = {});
double iou_loss(const model::RefinedTrajectory& pred, std::span<const BevBox> gt);
double total_loss(const model::RefinedTrajectory& pred, std::span<const BevBox> gt, const LossConfig& cfg = {});

// Differentiable versions on the raw network output.
nn::Tensor regression_loss(const model::ForwardOutput& pred, std::span<const BevBox> gt, const LossConfig& cfg = {});
nn::Tensor iou_loss(const model::ForwardOutput& pred, std::span<const BevBox> gt);
nn::Tensor total_loss(const model::ForwardOutput& pred, std::span<const BevBox> gt, const LossConfig& cfg = {});

// A training example. Boxes, GT and context points share one frame in which
// the middle input box is the origin.
struct Sample {
  std::string object_id;
  model::TrajectoryInput input;
  std::vector<BevBox> gt;
  std::vector<PointList> context;
  std::vector<double> t_end;

  std::size_t size() const { return input.boxes.size(); }
};

// Throws DataError when a frame has no GT.
Sample make_sample(const trajectory::Trajectory& t);

// Re-expresses the sample around its middle input box and re-crops points.
Sample recenter(const Sample& s, double crop_enlarge = 0.10);

// Contiguous window of uniform length in [max(2, ceil(r M)), M] at a uniform
// start, re-centered. Samples with M < 2 are returned unchanged.
Sample subsample_trajectory(const Sample& s, double min_len_ratio, Rng& rng);

// Per-frame offsets on the input boxes, points re-cropped from the context,
// re-centered. GT is only carried along.
Sample perturb_boxes(const Sample& s, const AugmentConfig& cfg, Rng& rng);

// Offset range for a size value: [max(-range, -v/2), min(range, v/2)].
std::pair<double, double> size_offset_range(double v, double range);

// Mean track IoU of refined val trajectories against their GT.
double evaluate_mean_iou(const model::LabelFormer& net, std::span<const trajectory::Trajectory> set, int jobs = 1);
// Same metric for the unrefined input boxes.
double initial_mean_iou(std::span<const trajectory::Trajectory> set);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mean_iou = 0.0;
  double lr = 0.0;
};

struct TrainOutputs {
  std::filesystem::path checkpoint;   // best-val parameters; empty to skip
  std::filesystem::path metrics_csv;  // rewritten after every epoch; empty to skip
  std::string config_text;            // stored in the checkpoint header
  bool verbose = false;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double init_val_mean_iou = 0.0;
  double best_val_mean_iou = 0.0;
  std::size_t best_epoch = 0;
  std::size_t skipped = 0;  // training trajectories without full GT
};

// Trains in place and leaves the best-val parameters in `net`. With an empty
// val set the training trajectories are used for selection. A non-finite
// loss or gradient writes a diagnostic dump next to the checkpoint (or to
// stderr) and rethrows NumericError.
TrainResult train(model::LabelFormer& net, std::span<const trajectory::Trajectory> train_set,
                  std::span<const trajectory::Trajectory> val_set, const TrainConfig& cfg,
                  const TrainOutputs& out = {});

void write_metrics_csv(std::ostream& out, std::span<const EpochLog> log);

}  // namespace labelformer::training
