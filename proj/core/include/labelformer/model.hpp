#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "labelformer/geometry.hpp"
#include "labelformer/kv_config.hpp"
#include "labelformer/nn/parameter.hpp"
#include "labelformer/nn/tensor.hpp"

namespace labelformer::model {

using geometry::BevBox;
using geometry::PointList;
using geometry::Pose;
using nn::Context;
using nn::Tensor;

enum class PosEncoding { kAlibi, kAbsolute };
enum class Variant { kAttention, kMlpPool };

std::string to_string(PosEncoding p);
std::string to_string(Variant v);
PosEncoding pos_encoding_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  std::string preset = "full";
  std::size_t d_model = 256;
  std::size_t num_blocks = 6;
  std::size_t num_heads = 4;
  std::size_t ffn_width = 512;
  double dropout_p = 0.1;

  double voxel_size = 0.1;
  std::array<double, 2> roi_x{-12.0, 12.0};
  std::array<double, 2> roi_y{-4.0, 4.0};
  std::array<double, 2> roi_z{-0.2, 3.0};
  std::array<std::size_t, 3> stem_channels{120, 96, 96};
  std::array<std::size_t, 3> stage_channels{288, 384, 576};
  std::array<std::size_t, 3> stage_blocks{6, 6, 4};
  // Bottleneck width = stage channels / bottleneck_div.
  std::size_t bottleneck_div = 4;
  std::size_t gn_groups = 8;
  std::size_t fpn_out = 256;
  // 0 keeps every point.
  std::size_t max_points_per_frame = 1024;

  PosEncoding pos_encoding = PosEncoding::kAlibi;
  Variant variant = Variant::kAttention;
  // Attention restricted to |i - j| <= window when set.
  std::optional<std::size_t> window;
  // > 0 replaces the per-head slopes 2^(-8h/H) with one constant.
  double alibi_slope = 0.0;
  bool use_box_encoder = true;
  bool use_point_encoder = true;
  std::uint64_t init_seed = 0;

  static ModelConfig full();
  static ModelConfig desk();
  static ModelConfig from_preset(const std::string& name);

  void validate() const;
  std::size_t nx() const;
  std::size_t ny() const;
  std::size_t nz() const;

  // Keys live under "model.".
  void write_kv(KvConfig& kv) const;
  static ModelConfig from_kv(const KvConfig& kv);
  static const std::vector<std::string>& kv_keys();
};

// Boxes and points already expressed in the trajectory frame, headings
// canonicalized, points cropped per frame.
struct TrajectoryInput {
  std::vector<BevBox> boxes;
  std::vector<PointList> points;
  double t_ref = 0.0;

  void validate() const;
};

struct RefinedTrajectory {
  std::vector<Pose> poses;
  double l = 0.0;
  double w = 0.0;

  std::vector<BevBox> boxes() const;
};

// Points binned into the ROI grid. Voxels are listed in increasing flat
// index (ix * ny + iy) * nz + iz.
struct VoxelGrid {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::vector<std::array<double, 4>> point_features;  // dx, dy, dz, dt
  std::vector<std::int64_t> point_voxel;
  std::vector<std::int64_t> voxel_flat;

  std::size_t voxel_count() const { return voxel_flat.size(); }
  std::int64_t voxel_pillar(std::size_t v) const { return voxel_flat[v] / static_cast<std::int64_t>(nz); }
  std::int64_t voxel_z(std::size_t v) const { return voxel_flat[v] % static_cast<std::int64_t>(nz); }
};

VoxelGrid voxelize(const PointList& object_points, double t_ref, const ModelConfig& cfg);

// H matrices [H, M, M] with entry -m_h * |i - j|, m_h = 2^(-8h/H) for h = 1..H.
Tensor alibi_bias(std::size_t M, std::size_t H, double constant_slope = 0.0);
// Sinusoidal encodings [M, D]: sin at even, cos at odd channels.
Tensor absolute_pos_encoding(std::size_t M, std::size_t D);

struct ForwardOutput {
  Tensor poses;  // [M, 3]
  Tensor size;   // [2]
};

class LabelFormer {
 public:
  explicit LabelFormer(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

  ForwardOutput forward(Context& ctx, const TrajectoryInput& input) const;
  // Eval-mode forward without gradients.
  RefinedTrajectory refine(const TrajectoryInput& input) const;
  static RefinedTrajectory to_refined(const ForwardOutput& out);

  // Stages, exposed for tests.
  Tensor encode_boxes(Context& ctx, const std::vector<BevBox>& boxes) const;  // [M, D]
  Tensor pillar_encode(Context& ctx, const std::vector<VoxelGrid>& grids) const;  // [M, 32, nx, ny]
  Tensor backbone_fpn(Context& ctx, const Tensor& bev) const;  // [M, fpn_out, nx/4, ny/4]
  static Tensor center_feature(const Tensor& fmap);  // [M, C]
  Tensor point_features(Context& ctx, const TrajectoryInput& input) const;  // [M, fpn_out]
  Tensor fuse(Context& ctx, const Tensor& a, const Tensor& p) const;
  // g: [M, D]; bias: [H, M, M] or undefined.
  Tensor attention_block(Context& ctx, std::size_t block, const Tensor& g, const Tensor& bias) const;
  Tensor attention_bias(std::size_t M) const;
  Tensor mlp_pool(Context& ctx, const Tensor& f) const;

  // Object-frame points for frame i after the per-frame point cap.
  PointList frame_points(const TrajectoryInput& input, std::size_t i) const;

  static constexpr std::size_t kPillarWidth = 16;
  static constexpr std::size_t kBevWidth = 32;

 private:
  struct Lin {
    std::size_t w, b;
  };
  struct Norm {
    std::size_t g, b;
  };
  struct ConvGn {
    std::size_t w;
    Norm gn;
    std::size_t stride;
  };
  struct Block {
    ConvGn c1, c2, c3;
    std::optional<ConvGn> shortcut;
  };
  struct AttnBlock {
    Norm ln1, ln2;
    Lin q, k, v, o, ff1, ff2;
  };

  Lin add_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
                 bool zero = false);
  Norm add_norm(const std::string& name, std::size_t width);
  ConvGn add_conv_gn(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                     std::size_t stride, std::mt19937_64& rng);

  Tensor apply(Context& ctx, const Lin& l, const Tensor& x) const;
  Tensor apply(Context& ctx, const Norm& n, const Tensor& x) const;
  Tensor apply(Context& ctx, const ConvGn& c, const Tensor& x, bool relu) const;

  ModelConfig cfg_;
  nn::ParameterStore store_;

  Lin box_enc_{};
  Lin pt_mlp1_{}, pt_mlp2_{};
  Norm pt_ln1_{}, voxel_ln_{};
  std::size_t z_embed_ = 0;
  Lin pillar_mlp1_{}, pillar_mlp2_{};
  Norm pillar_ln1_{}, pillar_ln2_{};
  std::vector<ConvGn> stems_;
  std::vector<std::vector<Block>> stages_;
  ConvGn fpn_lat16_{}, fpn_lat8_{};
  std::size_t fpn_out_w_ = 0, fpn_out_b_ = 0;
  Lin fuse_{};
  std::vector<AttnBlock> blocks_;
  std::vector<std::pair<Lin, Norm>> pool_mlp_;
  Lin pose_head_{}, size_head_{};
};

}  // namespace labelformer::model
