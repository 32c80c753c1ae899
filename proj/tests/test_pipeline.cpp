#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "labelformer/error.hpp"
#include "labelformer/nn/checkpoint.hpp"
#include "labelformer/pipeline.hpp"

using namespace labelformer;
using namespace labelformer::pipeline;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("lf_pipeline_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  GenOptions small_gen(const std::string& dir, std::size_t scenes = 3) const {
    GenOptions g;
    g.out_dir = root_ / dir;
    g.scenes = scenes;
    g.seed = 7;
    g.frames_min = 8;
    g.frames_max = 16;
    g.points_at_10m = 40.0;
    return g;
  }

  fs::path root_;
};

TrackOptions track_opts(const fs::path& scenes, const fs::path& out) {
  TrackOptions o;
  o.scenes_dir = scenes;
  o.out_dir = out;
  return o;
}

ExtractOptions extract_opts(const fs::path& scenes, const fs::path& tracklets, const fs::path& out) {
  ExtractOptions o;
  o.scenes_dir = scenes;
  o.tracklets_dir = tracklets;
  o.out_dir = out;
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LABELFORMER_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_F(PipelineTest, GenIsDeterministicPerSeed) {
  auto g = small_gen("a");
  const auto s = cmd_gen(g);
  EXPECT_EQ(s.scenes, 3u);
  EXPECT_EQ(s.actors, 12u);
  g.out_dir = root_ / "b";
  g.jobs = 3;
  cmd_gen(g);
  for (int i = 0; i < 3; ++i) {
    const std::string name = "scene_000" + std::to_string(i) + kSceneSuffix;
    EXPECT_EQ(slurp(root_ / "a" / name), slurp(root_ / "b" / name));
  }
  g.out_dir = root_ / "c";
  g.seed = 8;
  cmd_gen(g);
  EXPECT_NE(slurp(root_ / "a" / "scene_0000.jsonl"), slurp(root_ / "c" / "scene_0000.jsonl"));
}

TEST_F(PipelineTest, SingleFrameScenesRunThroughEveryStage) {
  auto g = small_gen("scenes", 2);
  g.frames_min = g.frames_max = 1;
  EXPECT_EQ(cmd_gen(g).frames, 2u);
  EXPECT_EQ(read_scene(root_ / "scenes" / "scene_0000.jsonl").frames.size(), 1u);
  cmd_track(track_opts(root_ / "scenes", root_ / "tracklets"));
  const auto ex = cmd_extract(extract_opts(root_ / "scenes", root_ / "tracklets", root_ / "traj"));
  for (const auto& t : load_trajectories(root_ / "traj")) EXPECT_EQ(t.size(), 1u);
  EXPECT_GT(ex.trajectories, 0u);
}

TEST_F(PipelineTest, NoiselessTrackingAndExtractInvariants) {
  auto g = small_gen("scenes");
  g.noise = NoiseModel::zero();
  cmd_gen(g);
  const auto tr = cmd_track(track_opts(root_ / "scenes", root_ / "tracklets"));
  EXPECT_EQ(tr.true_positive, 12u);
  EXPECT_EQ(tr.false_positive, 0u);
  for (const auto& e : fs::directory_iterator(root_ / "tracklets")) {
    for (const auto& t : tracker::read_tracklets(e.path())) EXPECT_TRUE(t.gt_actor_id.has_value());
  }
  const auto ex = cmd_extract(extract_opts(root_ / "scenes", root_ / "tracklets", root_ / "traj"));
  EXPECT_EQ(ex.trajectories, 12u);
  for (const auto& t : load_trajectories(root_ / "traj")) {
    const auto& mid = t.boxes[t.size() / 2];
    EXPECT_EQ(mid.x, 0.0);
    EXPECT_EQ(mid.y, 0.0);
    EXPECT_EQ(mid.theta, 0.0);
    const Scene scene = read_scene(root_ / "scenes" / (t.scene + kSceneSuffix));
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_LE(t.points[i].size(), scene.frames[t.frames[i]].points.size());
      ASSERT_TRUE(t.gt[i].has_value());
      EXPECT_EQ(t.gt[i]->l, t.gt[0]->l);
      EXPECT_EQ(t.gt[i]->w, t.gt[0]->w);
      EXPECT_NEAR(t.gt[i]->x, t.boxes[i].x, 1e-9);
    }
  }
}

TEST_F(PipelineTest, AllDroppedGivesNoTracklets) {
  auto g = small_gen("scenes", 2);
  g.noise = NoiseModel::zero();
  g.noise.drop_prob = 1.0;
  cmd_gen(g);
  const auto tr = cmd_track(track_opts(root_ / "scenes", root_ / "tracklets"));
  EXPECT_EQ(tr.true_positive + tr.false_positive, 0u);
}

TEST_F(PipelineTest, TrainRefineEvalRoundTrip) {
  cmd_gen(small_gen("scenes"));
  cmd_track(track_opts(root_ / "scenes", root_ / "tracklets"));
  cmd_extract(extract_opts(root_ / "scenes", root_ / "tracklets", root_ / "traj"));

  TrainOptions t;
  t.train_dir = t.val_dir = root_ / "traj";
  t.out_dir = root_ / "model";
  t.model = model::ModelConfig::desk();
  t.train.epochs = 2;
  t.train.lr = 1e-3;
  const auto r = cmd_train(t);
  EXPECT_EQ(r.log.size(), 2u);
  ASSERT_TRUE(fs::exists(root_ / "model" / "checkpoint.ckpt"));
  const auto metrics = slurp(root_ / "model" / "metrics.csv");
  EXPECT_EQ(metrics.rfind("epoch,train_loss,val_mean_iou,lr\n", 0), 0u);

  const auto ref = cmd_refine({root_ / "traj", root_ / "model" / "checkpoint.ckpt", root_ / "refined.jsonl"});
  const auto recs = trajectory::read_refined(root_ / "refined.jsonl");
  EXPECT_EQ(recs.size(), ref.trajectories);
  for (const auto& rec : recs) EXPECT_GT(rec.runtime_ms, 0.0);

  const auto cmp = cmd_eval({root_ / "refined.jsonl", root_ / "reports"});
  EXPECT_EQ(cmp.rows.size(), recs.size());
  EXPECT_TRUE(fs::exists(root_ / "reports" / "report.csv"));
  EXPECT_TRUE(fs::exists(root_ / "reports" / "recall_curve.csv"));
  for (std::size_t k = 1; k < eval::kRecallThresholds.size(); ++k) {
    EXPECT_LE(cmp.after.all.recall[k], cmp.after.all.recall[k - 1]);
  }
}

TEST_F(PipelineTest, ZeroResidualCheckpointReproducesInputs) {
  cmd_gen(small_gen("scenes", 2));
  cmd_track(track_opts(root_ / "scenes", root_ / "tracklets"));
  cmd_extract(extract_opts(root_ / "scenes", root_ / "tracklets", root_ / "traj"));
  const auto cfg = model::ModelConfig::desk();
  const model::LabelFormer net(cfg);
  KvConfig kv;
  cfg.write_kv(kv);
  nn::save_checkpoint(root_ / "zero.ckpt", net.params(), kv.dump());
  cmd_refine({root_ / "traj", root_ / "zero.ckpt", root_ / "refined.jsonl"});
  for (const auto& rec : trajectory::read_refined(root_ / "refined.jsonl")) {
    double ml = 0.0;
    for (std::size_t i = 0; i < rec.init.size(); ++i) {
      EXPECT_NEAR(rec.refined[i].x, rec.init[i].x, 1e-8);
      EXPECT_NEAR(rec.refined[i].theta, rec.init[i].theta, 1e-8);
      ml += rec.init[i].l;
    }
    EXPECT_NEAR(rec.l, ml / static_cast<double>(rec.init.size()), 1e-8);
  }
}

TEST_F(PipelineTest, CheckpointConfigMismatchIsDataError) {
  auto cfg = model::ModelConfig::desk();
  const model::LabelFormer net(cfg);
  cfg.d_model = 32;
  KvConfig kv;
  cfg.write_kv(kv);
  nn::save_checkpoint(root_ / "bad.ckpt", net.params(), kv.dump());
  EXPECT_THROW(load_model(root_ / "bad.ckpt"), DataError);
}

TEST_F(PipelineTest, MissingInputsAreDataErrors) {
  EXPECT_THROW(cmd_track(track_opts(root_ / "nothing", root_ / "out")), DataError);
  EXPECT_THROW(cmd_eval({root_ / "missing.jsonl", root_ / "reports"}), DataError);
}

TEST_F(PipelineTest, CliExitCodes) {
  const std::string dir = (root_ / "cli").string();
  EXPECT_EQ(run_cli("gen --out " + dir + " --scenes 1 --frames 3 --seed 1"), 0);
  EXPECT_TRUE(fs::exists(root_ / "cli" / "scene_0000.jsonl"));
  EXPECT_EQ(run_cli("gen --bogus-flag"), 1);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  EXPECT_EQ(run_cli("eval --refined " + (root_ / "missing.jsonl").string() + " --out " + dir), 2);
  {
    std::ofstream bad(root_ / "bad.jsonl");
    bad << "{not json\n";
  }
  EXPECT_EQ(run_cli("eval --refined " + (root_ / "bad.jsonl").string() + " --out " + dir), 2);
  EXPECT_EQ(run_cli("train --train " + (root_ / "empty").string()), 2);
}

TEST(Configs, ShippedConfigsUseKnownKeys) {
  const auto& keys = pipeline_kv_keys();
  const std::set<std::string> known(keys.begin(), keys.end());
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(LABELFORMER_CONFIG_DIR)) {
    if (e.path().extension() != ".ini") continue;
    SCOPED_TRACE(e.path().string());
    const auto kv = KvConfig::load(e.path());
    EXPECT_NO_THROW(kv.require_known(known));
    EXPECT_NO_THROW(model::ModelConfig::from_kv(kv).validate());
    EXPECT_NO_THROW(training::TrainConfig::from_kv(kv).validate());
    ++n;
  }
  EXPECT_GE(n, 2u);
}
