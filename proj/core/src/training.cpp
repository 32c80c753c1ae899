#include "labelformer/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "labelformer/error.hpp"
#include "labelformer/eval.hpp"
#include "labelformer/fileio.hpp"
#include "labelformer/nn/checkpoint.hpp"
#include "labelformer/nn/ops.hpp"
#include "labelformer/nn/optim.hpp"

namespace labelformer::training {

using nn::Tensor;

void LossConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("loss lambda must be > 0");
  if (!(smooth_l1_beta > 0.0)) throw std::invalid_argument("smooth_l1 beta must be > 0");
}

void AugmentConfig::validate() const {
  if (!(trans_range >= 0.0 && rot_range_deg >= 0.0 && len_range >= 0.0 && wid_range >= 0.0)) {
    throw std::invalid_argument("augmentation ranges must be >= 0");
  }
  if (!(min_len_ratio > 0.0 && min_len_ratio <= 1.0)) throw std::invalid_argument("min_len_ratio must be in (0, 1]");
  if (!(crop_enlarge >= 0.0)) throw std::invalid_argument("crop_enlarge must be >= 0");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (!(warmup_epochs >= 0.0)) throw std::invalid_argument("warmup_epochs must be >= 0");
  schedule().validate();
  loss.validate();
  augment.validate();
}

nn::LrSchedule TrainConfig::schedule() const {
  const double total = static_cast<double>(epochs);
  return {lr, std::min(warmup_epochs, 0.5 * total), total, lr_floor_ratio};
}

const std::vector<std::string>& TrainConfig::kv_keys() {
  static const std::vector<std::string> keys{
      "train.epochs",        "train.batch_size",    "train.lr",           "train.warmup_epochs",
      "train.lr_floor_ratio", "train.weight_decay", "train.grad_clip",    "train.seed",
      "train.jobs",          "train.lambda",        "train.smooth_l1_beta", "train.perturb",
      "train.trans_range",   "train.rot_range_deg", "train.len_range",    "train.wid_range",
      "train.subsequence",   "train.min_len_ratio", "train.crop_enlarge"};
  return keys;
}

void TrainConfig::write_kv(KvConfig& kv) const {
  kv.set("train.epochs", static_cast<std::int64_t>(epochs));
  kv.set("train.batch_size", static_cast<std::int64_t>(batch_size));
  kv.set("train.lr", lr);
  kv.set("train.warmup_epochs", warmup_epochs);
  kv.set("train.lr_floor_ratio", lr_floor_ratio);
  kv.set("train.weight_decay", weight_decay);
  kv.set("train.grad_clip", grad_clip);
  kv.set("train.seed", static_cast<std::int64_t>(seed));
  kv.set("train.jobs", static_cast<std::int64_t>(jobs));
  kv.set("train.lambda", loss.lambda);
  kv.set("train.smooth_l1_beta", loss.smooth_l1_beta);
  kv.set("train.perturb", augment.perturb);
  kv.set("train.trans_range", augment.trans_range);
  kv.set("train.rot_range_deg", augment.rot_range_deg);
  kv.set("train.len_range", augment.len_range);
  kv.set("train.wid_range", augment.wid_range);
  kv.set("train.subsequence", augment.subsequence);
  kv.set("train.min_len_ratio", augment.min_len_ratio);
  kv.set("train.crop_enlarge", augment.crop_enlarge);
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
  TrainConfig c;
  auto count = [&](const char* key, std::size_t fallback) {
    const std::int64_t v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw std::invalid_argument(std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  c.epochs = count("train.epochs", c.epochs);
  c.batch_size = count("train.batch_size", c.batch_size);
  c.lr = kv.get_double("train.lr", c.lr);
  c.warmup_epochs = kv.get_double("train.warmup_epochs", c.warmup_epochs);
  c.lr_floor_ratio = kv.get_double("train.lr_floor_ratio", c.lr_floor_ratio);
  c.weight_decay = kv.get_double("train.weight_decay", c.weight_decay);
  c.grad_clip = kv.get_double("train.grad_clip", c.grad_clip);
  c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<std::int64_t>(c.seed)));
  c.jobs = static_cast<int>(kv.get_int("train.jobs", c.jobs));
  c.loss.lambda = kv.get_double("train.lambda", c.loss.lambda);
  c.loss.smooth_l1_beta = kv.get_double("train.smooth_l1_beta", c.loss.smooth_l1_beta);
  c.augment.perturb = kv.get_bool("train.perturb", c.augment.perturb);
  c.augment.trans_range = kv.get_double("train.trans_range", c.augment.trans_range);
  c.augment.rot_range_deg = kv.get_double("train.rot_range_deg", c.augment.rot_range_deg);
  c.augment.len_range = kv.get_double("train.len_range", c.augment.len_range);
  c.augment.wid_range = kv.get_double("train.wid_range", c.augment.wid_range);
  c.augment.subsequence = kv.get_bool("train.subsequence", c.augment.subsequence);
  c.augment.min_len_ratio = kv.get_double("train.min_len_ratio", c.augment.min_len_ratio);
  c.augment.crop_enlarge = kv.get_double("train.crop_enlarge", c.augment.crop_enlarge);
  c.validate();
  return c;
}

// ---- losses ----------------------------------------------------------------

double smooth_l1(double pred, double target, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be > 0");
  const double d = std::abs(pred - target);
  return d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
}

namespace {

void check_lengths(std::size_t pred, std::size_t gt, const char* what) {
  if (pred != gt) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(pred) + " predicted vs " +
                                std::to_string(gt) + " GT frames");
  }
  if (pred == 0) throw std::invalid_argument(std::string(what) + ": empty trajectory");
}

}  // namespace

double regression_loss(const model::RefinedTrajectory& pred, std::span<const BevBox> gt, const LossConfig& cfg) {
  check_lengths(pred.poses.size(), gt.size(), "regression_loss");
  const double b = cfg.smooth_l1_beta;
  double box = 0.0, heading = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto& p = pred.poses[i];
    box += smooth_l1(p.x, gt[i].x, b) + smooth_l1(p.y, gt[i].y, b) + smooth_l1(pred.l, gt[i].l, b) +
           smooth_l1(pred.w, gt[i].w, b);
    heading += smooth_l1(std::sin(2.0 * p.theta), std::sin(2.0 * gt[i].theta), b) +
               smooth_l1(std::cos(2.0 * p.theta), std::cos(2.0 * gt[i].theta), b);
  }
  const double M = static_cast<double>(gt.size());
  return cfg.lambda * box / M + heading / M;
}

double iou_loss(const model::RefinedTrajectory& pred, std::span<const BevBox> gt) {
  check_lengths(pred.poses.size(), gt.size(), "iou_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const BevBox p{pred.poses[i].x, pred.poses[i].y, pred.l, pred.w, 0.0};
    sum += geometry::aligned_iou(p, gt[i]);
  }
  return 1.0 - sum / static_cast<double>(gt.size());
}

double total_loss(const model::RefinedTrajectory& pred, std::span<const BevBox> gt, const LossConfig& cfg) {
  return regression_loss(pred, gt, cfg) + iou_loss(pred, gt);
}

namespace {

// GT columns as [M, 1] tensors.
struct GtColumns {
  Tensor x, y, l, w, theta;
};

GtColumns gt_columns(std::span<const BevBox> gt) {
  const std::size_t M = gt.size();
  std::vector<double> x(M), y(M), l(M), w(M), t(M);
  for (std::size_t i = 0; i < M; ++i) {
    x[i] = gt[i].x;
    y[i] = gt[i].y;
    l[i] = gt[i].l;
    w[i] = gt[i].w;
    t[i] = gt[i].theta;
  }
  return {Tensor::from({M, 1}, std::move(x)), Tensor::from({M, 1}, std::move(y)), Tensor::from({M, 1}, std::move(l)),
          Tensor::from({M, 1}, std::move(w)), Tensor::from({M, 1}, std::move(t))};
}

void check_output(const model::ForwardOutput& pred, std::size_t M, const char* what) {
  if (pred.poses.rank() != 2 || pred.poses.dim(1) != 3 || pred.size.size() != 2) {
    throw std::invalid_argument(std::string(what) + ": unexpected output shapes");
  }
  check_lengths(pred.poses.dim(0), M, what);
}

}  // namespace

Tensor regression_loss(const model::ForwardOutput& pred, std::span<const BevBox> gt, const LossConfig& cfg) {
  check_output(pred, gt.size(), "regression_loss");
  const double b = cfg.smooth_l1_beta;
  const double M = static_cast<double>(gt.size());
  const GtColumns g = gt_columns(gt);
  const Tensor x = nn::slice(pred.poses, 1, 0, 1);
  const Tensor y = nn::slice(pred.poses, 1, 1, 2);
  const Tensor th = nn::slice(pred.poses, 1, 2, 3);
  const Tensor l = nn::slice(pred.size, 0, 0, 1);
  const Tensor w = nn::slice(pred.size, 0, 1, 2);
  const Tensor two_gt = nn::scale(g.theta, 2.0);
  const Tensor two_th = nn::scale(th, 2.0);

  const Tensor box = nn::add(nn::add(nn::sum_all(nn::smooth_l1(x, g.x, b)), nn::sum_all(nn::smooth_l1(y, g.y, b))),
                             nn::add(nn::sum_all(nn::smooth_l1(l, g.l, b)), nn::sum_all(nn::smooth_l1(w, g.w, b))));
  const Tensor heading = nn::add(nn::sum_all(nn::smooth_l1(nn::sin(two_th), nn::sin(two_gt), b)),
                                 nn::sum_all(nn::smooth_l1(nn::cos(two_th), nn::cos(two_gt), b)));
  return nn::add(nn::scale(box, cfg.lambda / M), nn::scale(heading, 1.0 / M));
}

Tensor iou_loss(const model::ForwardOutput& pred, std::span<const BevBox> gt) {
  check_output(pred, gt.size(), "iou_loss");
  const GtColumns g = gt_columns(gt);
  const Tensor x = nn::slice(pred.poses, 1, 0, 1);
  const Tensor y = nn::slice(pred.poses, 1, 1, 2);
  const Tensor l = nn::slice(pred.size, 0, 0, 1);
  const Tensor w = nn::slice(pred.size, 0, 1, 2);

  auto overlap = [](const Tensor& c1, const Tensor& s1, const Tensor& c2, const Tensor& s2) {
    const Tensor d = nn::sub(c1, c2);
    const Tensor span = nn::sub(nn::scale(nn::add(s1, s2), 0.5), nn::maximum(d, nn::neg(d)));
    return nn::clamp_min(nn::minimum(nn::minimum(s1, s2), span), 0.0);
  };
  const Tensor inter = nn::mul(overlap(x, l, g.x, g.l), overlap(y, w, g.y, g.w));
  const Tensor uni = nn::sub(nn::add(nn::mul(l, w), nn::mul(g.l, g.w)), inter);
  const Tensor iou = nn::div(inter, uni);
  return nn::add_scalar(nn::neg(nn::mean_all(iou)), 1.0);
}

Tensor total_loss(const model::ForwardOutput& pred, std::span<const BevBox> gt, const LossConfig& cfg) {
  return nn::add(regression_loss(pred, gt, cfg), iou_loss(pred, gt));
}

// ---- samples and augmentation ----------------------------------------------

Sample make_sample(const trajectory::Trajectory& t) {
  Sample s;
  s.object_id = t.object_id;
  s.input = t.input();
  s.context = t.context_points;
  s.t_end = t.t_end;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t.gt[i]) throw DataError(t.object_id + ": frame " + std::to_string(t.frames[i]) + " has no GT");
    s.gt.push_back(*t.gt[i]);
  }
  return s;
}

Sample recenter(const Sample& s, double crop_enlarge) {
  const geometry::TrajectoryFrame tf = geometry::to_trajectory_frame(s.input.boxes, s.context);
  Sample out;
  out.object_id = s.object_id;
  out.t_end = s.t_end;
  out.input.boxes = tf.boxes;
  out.context = tf.points;
  out.input.t_ref = s.t_end[s.t_end.size() / 2];
  for (std::size_t i = 0; i < tf.boxes.size(); ++i) {
    out.input.points.push_back(geometry::crop_points(out.context[i], out.input.boxes[i], crop_enlarge));
    out.gt.push_back(tf.world_to_trajectory.apply(s.gt[i]));
  }
  return out;
}

Sample subsample_trajectory(const Sample& s, double min_len_ratio, Rng& rng) {
  const std::size_t M = s.size();
  if (M < 2) return s;
  if (!(min_len_ratio > 0.0 && min_len_ratio <= 1.0)) throw std::invalid_argument("min_len_ratio must be in (0, 1]");
  const auto lo = std::min<std::size_t>(
      M, std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(min_len_ratio * static_cast<double>(M) - 1e-12))));
  const std::size_t len = std::uniform_int_distribution<std::size_t>(lo, M)(rng);
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, M - len)(rng);
  if (len == M) return s;

  Sample cut;
  cut.object_id = s.object_id;
  auto take = [&](const auto& v) { return std::vector(v.begin() + start, v.begin() + start + len); };
  cut.input.boxes = take(s.input.boxes);
  cut.input.points = take(s.input.points);
  cut.gt = take(s.gt);
  cut.context = take(s.context);
  cut.t_end = take(s.t_end);
  const geometry::TrajectoryFrame tf = geometry::to_trajectory_frame(cut.input.boxes, cut.context);
  cut.input.boxes = tf.boxes;
  cut.context = tf.points;
  for (auto& pts : cut.input.points) {
    for (auto& q : pts) q = tf.world_to_trajectory.apply(q);
  }
  for (auto& g : cut.gt) g = tf.world_to_trajectory.apply(g);
  cut.input.t_ref = cut.t_end[len / 2];
  return cut;
}

std::pair<double, double> size_offset_range(double v, double range) {
  return {std::max(-range, -0.5 * v), std::min(range, 0.5 * v)};
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

Sample perturb_boxes(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  Sample p = s;
  const double rot = cfg.rot_range_deg * geometry::kPi / 180.0;
  for (BevBox& b : p.input.boxes) {
    b.x += uniform(rng, -cfg.trans_range, cfg.trans_range);
    b.y += uniform(rng, -cfg.trans_range, cfg.trans_range);
    b.theta = geometry::normalize_angle(b.theta + uniform(rng, -rot, rot));
    const auto [l_lo, l_hi] = size_offset_range(b.l, cfg.len_range);
    const auto [w_lo, w_hi] = size_offset_range(b.w, cfg.wid_range);
    b.l += uniform(rng, l_lo, l_hi);
    b.w += uniform(rng, w_lo, w_hi);
  }
  return recenter(p, cfg.crop_enlarge);
}

// ---- evaluation ------------------------------------------------------------

double evaluate_mean_iou(const model::LabelFormer& net, std::span<const trajectory::Trajectory> set, int jobs) {
  if (set.empty()) throw std::invalid_argument("evaluate_mean_iou: empty set");
  std::vector<double> scores(set.size());
  fileio::parallel_for(set.size(), jobs, [&](std::size_t i) {
    const auto refined = net.refine(set[i].input());
    scores[i] = eval::track_iou(refined.boxes(), set[i].gt);
  });
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

double initial_mean_iou(std::span<const trajectory::Trajectory> set) {
  if (set.empty()) throw std::invalid_argument("initial_mean_iou: empty set");
  double sum = 0.0;
  for (const auto& t : set) sum += eval::track_iou(t.boxes, t.gt);
  return sum / static_cast<double>(set.size());
}

// ---- training loop ---------------------------------------------------------

void write_metrics_csv(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,train_loss,val_mean_iou,lr\n";
  char buf[128];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_mean_iou, e.lr);
    out << buf;
  }
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(tag)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct StepResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};

void dump_diagnostics(const TrainOutputs& out, const std::string& what, std::size_t epoch, std::size_t step,
                      const std::string& object_id, double lr, double last_grad_norm) {
  std::ostringstream ss;
  ss << "numeric failure during training\n"
     << "error: " << what << "\n"
     << "epoch: " << epoch << "\nstep: " << step << "\nobject_id: " << object_id << "\nlr: " << lr
     << "\nlast_grad_norm: " << last_grad_norm << "\n";
  if (out.checkpoint.empty()) {
    std::cerr << ss.str();
    return;
  }
  try {
    fileio::write_text_atomic(std::filesystem::path(out.checkpoint.string() + ".nan_dump.txt"), ss.str());
  } catch (const std::exception&) {
    std::cerr << ss.str();
  }
}

}  // namespace

TrainResult train(model::LabelFormer& net, std::span<const trajectory::Trajectory> train_set,
                  std::span<const trajectory::Trajectory> val_set, const TrainConfig& cfg, const TrainOutputs& out) {
  cfg.validate();
  TrainResult result;
  std::vector<Sample> samples;
  for (const auto& t : train_set) {
    if (!t.has_full_gt()) {
      ++result.skipped;
      continue;
    }
    samples.push_back(make_sample(t));
  }
  if (samples.empty()) throw DataError("train: no training trajectory has GT for every frame");
  const std::span<const trajectory::Trajectory> selection = val_set.empty() ? train_set : val_set;
  result.init_val_mean_iou = initial_mean_iou(selection);
  result.best_val_mean_iou = -1.0;

  nn::ParameterStore& store = net.params();
  nn::AdamWState opt{{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}, {}, {}, 0};
  const nn::LrSchedule sched = cfg.schedule();
  const std::size_t steps = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::vector<double>> best;

  std::size_t cur_epoch = 0, cur_step = 0;
  std::string cur_object;
  double cur_lr = 0.0, last_norm = 0.0;
  try {
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      cur_epoch = epoch + 1;
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<std::size_t> order(samples.size());
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng(derive_seed(cfg.seed, epoch, 0, 0x5u));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      double loss_sum = 0.0;
      for (std::size_t s = 0; s < steps; ++s) {
        cur_step = s;
        const std::size_t begin = s * cfg.batch_size;
        const std::size_t end = std::min(begin + cfg.batch_size, samples.size());
        std::vector<StepResult> parts(end - begin);
        fileio::parallel_for(parts.size(), cfg.jobs, [&](std::size_t k) {
          const std::size_t idx = order[begin + k];
          Rng aug(derive_seed(cfg.seed, epoch, idx, 0xa0u));
          Sample smp = samples[idx];
          if (cfg.augment.subsequence) smp = subsample_trajectory(smp, cfg.augment.min_len_ratio, aug);
          if (cfg.augment.perturb) smp = perturb_boxes(smp, cfg.augment, aug);
          nn::Context ctx(store, true, true, derive_seed(cfg.seed, epoch, idx, 0xd0u));
          const model::ForwardOutput fwd = net.forward(ctx, smp.input);
          const Tensor loss = total_loss(fwd, smp.gt, cfg.loss);
          if (!std::isfinite(loss.item())) throw NumericError("non-finite loss for " + smp.object_id);
          nn::backward(loss);
          parts[k].loss = loss.item();
          parts[k].grads = store.zero_grads();
          ctx.accumulate_grads(parts[k].grads);
        });
        cur_object = samples[order[begin]].object_id;
        std::vector<std::vector<double>> grads = store.zero_grads();
        for (const StepResult& p : parts) {
          loss_sum += p.loss;
          for (std::size_t i = 0; i < grads.size(); ++i) {
            for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += p.grads[i][j];
          }
        }
        const double inv = 1.0 / static_cast<double>(parts.size());
        for (auto& g : grads) {
          for (double& v : g) v *= inv;
        }
        last_norm = nn::clip_grad_norm(grads, cfg.grad_clip);
        if (!std::isfinite(last_norm)) throw NumericError("non-finite gradient norm");
        cur_lr = nn::lr_at(sched, static_cast<double>(epoch) + static_cast<double>(s + 1) / static_cast<double>(steps));
        opt.cfg.lr = cur_lr;
        nn::adamw_step(opt, store, grads);
      }

      EpochLog e;
      e.epoch = epoch + 1;
      e.train_loss = loss_sum / static_cast<double>(samples.size());
      e.val_mean_iou = evaluate_mean_iou(net, selection, cfg.jobs);
      e.lr = nn::lr_at(sched, static_cast<double>(epoch + 1));
      result.log.push_back(e);
      if (e.val_mean_iou > result.best_val_mean_iou) {
        result.best_val_mean_iou = e.val_mean_iou;
        result.best_epoch = e.epoch;
        best.clear();
        for (std::size_t i = 0; i < store.size(); ++i) best.push_back(store[i].value);
        if (!out.checkpoint.empty()) nn::save_checkpoint(out.checkpoint, store, out.config_text);
      }
      if (!out.metrics_csv.empty()) {
        fileio::write_atomic(out.metrics_csv, [&](std::ostream& os) { write_metrics_csv(os, result.log); });
      }
      if (out.verbose) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "epoch %zu/%zu loss %.5f val_iou %.4f (init %.4f) lr %.3g %.1fs\n", e.epoch, cfg.epochs,
                     e.train_loss, e.val_mean_iou, result.init_val_mean_iou, e.lr, secs);
      }
    }
  } catch (const NumericError& err) {
    dump_diagnostics(out, err.what(), cur_epoch, cur_step, cur_object, cur_lr, last_norm);
    throw;
  }
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value = best[i];
  return result;
}

}  // namespace labelformer::training
