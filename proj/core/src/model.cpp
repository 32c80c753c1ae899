#include "labelformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "labelformer/nn/ops.hpp"

namespace labelformer::model {

namespace ops = nn;
using nn::Real;
using nn::Shape;

std::string to_string(PosEncoding p) { return p == PosEncoding::kAlibi ? "alibi" : "absolute"; }
std::string to_string(Variant v) { return v == Variant::kAttention ? "attention" : "mlp_pool"; }

PosEncoding pos_encoding_from_string(const std::string& s) {
  if (s == "alibi") return PosEncoding::kAlibi;
  if (s == "absolute") return PosEncoding::kAbsolute;
  throw std::invalid_argument("unknown positional encoding: " + s);
}

Variant variant_from_string(const std::string& s) {
  if (s == "attention") return Variant::kAttention;
  if (s == "mlp_pool") return Variant::kMlpPool;
  throw std::invalid_argument("unknown model variant: " + s);
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.preset = "desk";
  c.d_model = 64;
  c.num_blocks = 3;
  c.num_heads = 4;
  c.ffn_width = 128;
  c.voxel_size = 0.25;
  c.roi_x = {-4.0, 4.0};
  c.roi_y = {-2.0, 2.0};
  c.roi_z = {0.0, 2.0};
  c.stem_channels = {16, 16, 16};
  c.stage_channels = {32, 48, 64};
  c.stage_blocks = {2, 2, 2};
  c.bottleneck_div = 2;
  c.fpn_out = 64;
  c.max_points_per_frame = 512;
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown model preset: " + name);
}

namespace {

std::size_t cells(const std::array<double, 2>& range, double voxel, const char* axis) {
  const double n = (range[1] - range[0]) / voxel;
  const double r = std::round(n);
  if (!(range[1] > range[0]) || r < 1.0 || std::abs(n - r) > 1e-6) {
    throw std::invalid_argument(std::string("ModelConfig: roi_") + axis + " extent is not a multiple of voxel_size");
  }
  return static_cast<std::size_t>(r);
}

}  // namespace

std::size_t ModelConfig::nx() const { return cells(roi_x, voxel_size, "x"); }
std::size_t ModelConfig::ny() const { return cells(roi_y, voxel_size, "y"); }
std::size_t ModelConfig::nz() const { return cells(roi_z, voxel_size, "z"); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("ModelConfig: " + m); };
  if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0) fail("d_model must be divisible by num_heads");
  if (num_blocks == 0) fail("num_blocks must be >= 1");
  if (ffn_width == 0 || fpn_out == 0) fail("widths must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
  if (!(voxel_size > 0.0)) fail("voxel_size must be > 0");
  if (nx() % 16 != 0 || ny() % 16 != 0) fail("BEV grid dims must be divisible by 16");
  nz();
  if (gn_groups == 0 || bottleneck_div == 0) fail("gn_groups and bottleneck_div must be >= 1");
  for (std::size_t c : stem_channels) {
    if (c == 0 || c % gn_groups) fail("stem channels must be positive multiples of gn_groups");
  }
  for (std::size_t c : stage_channels) {
    if (c == 0 || c % bottleneck_div || (c / bottleneck_div) % gn_groups || c % gn_groups) {
      fail("stage channels and bottleneck widths must be multiples of gn_groups");
    }
  }
  for (std::size_t b : stage_blocks) {
    if (b == 0) fail("every stage needs at least one block");
  }
  if (pos_encoding == PosEncoding::kAbsolute && d_model % 2) fail("absolute encoding needs an even d_model");
  if (alibi_slope < 0.0) fail("alibi_slope must be >= 0");
  if (!use_box_encoder && !use_point_encoder) fail("at least one of the box and point encoders is required");
}

namespace {

template <std::size_t N>
std::string join(const std::array<std::size_t, N>& a) {
  std::ostringstream s;
  for (std::size_t i = 0; i < N; ++i) s << (i ? "," : "") << a[i];
  return s.str();
}

template <std::size_t N>
std::array<std::size_t, N> split(const std::string& text, const std::string& key) {
  std::array<std::size_t, N> out{};
  std::istringstream s(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(s, item, ',')) {
    if (i >= N) break;
    try {
      out[i++] = std::stoull(item);
    } catch (const std::exception&) {
      throw std::invalid_argument(key + ": bad list '" + text + "'");
    }
  }
  if (i != N || std::getline(s, item, ',')) throw std::invalid_argument(key + ": expected " + std::to_string(N) + " values");
  return out;
}

}  // namespace

const std::vector<std::string>& ModelConfig::kv_keys() {
  static const std::vector<std::string> keys{
      "model.preset",        "model.d_model",          "model.num_blocks",     "model.num_heads",
      "model.ffn_width",     "model.dropout_p",        "model.voxel_size",     "model.roi_x_min",
      "model.roi_x_max",     "model.roi_y_min",        "model.roi_y_max",      "model.roi_z_min",
      "model.roi_z_max",     "model.stem_channels",    "model.stage_channels", "model.stage_blocks",
      "model.bottleneck_div", "model.gn_groups",       "model.fpn_out",        "model.max_points_per_frame",
      "model.pos_encoding",  "model.variant",          "model.window",         "model.alibi_slope",
      "model.use_box_encoder", "model.use_point_encoder", "model.init_seed"};
  return keys;
}

void ModelConfig::write_kv(KvConfig& kv) const {
  kv.set("model.preset", preset);
  kv.set("model.d_model", static_cast<std::int64_t>(d_model));
  kv.set("model.num_blocks", static_cast<std::int64_t>(num_blocks));
  kv.set("model.num_heads", static_cast<std::int64_t>(num_heads));
  kv.set("model.ffn_width", static_cast<std::int64_t>(ffn_width));
  kv.set("model.dropout_p", dropout_p);
  kv.set("model.voxel_size", voxel_size);
  kv.set("model.roi_x_min", roi_x[0]);
  kv.set("model.roi_x_max", roi_x[1]);
  kv.set("model.roi_y_min", roi_y[0]);
  kv.set("model.roi_y_max", roi_y[1]);
  kv.set("model.roi_z_min", roi_z[0]);
  kv.set("model.roi_z_max", roi_z[1]);
  kv.set("model.stem_channels", join(stem_channels));
  kv.set("model.stage_channels", join(stage_channels));
  kv.set("model.stage_blocks", join(stage_blocks));
  kv.set("model.bottleneck_div", static_cast<std::int64_t>(bottleneck_div));
  kv.set("model.gn_groups", static_cast<std::int64_t>(gn_groups));
  kv.set("model.fpn_out", static_cast<std::int64_t>(fpn_out));
  kv.set("model.max_points_per_frame", static_cast<std::int64_t>(max_points_per_frame));
  kv.set("model.pos_encoding", to_string(pos_encoding));
  kv.set("model.variant", to_string(variant));
  kv.set("model.window", window ? std::to_string(*window) : std::string("none"));
  kv.set("model.alibi_slope", alibi_slope);
  kv.set("model.use_box_encoder", use_box_encoder);
  kv.set("model.use_point_encoder", use_point_encoder);
  kv.set("model.init_seed", static_cast<std::int64_t>(init_seed));
}

ModelConfig ModelConfig::from_kv(const KvConfig& kv) {
  ModelConfig c = from_preset(kv.get_string("model.preset", "desk"));
  auto sz = [&](const char* key, std::size_t fallback) {
    const std::int64_t v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw std::invalid_argument(std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  c.d_model = sz("model.d_model", c.d_model);
  c.num_blocks = sz("model.num_blocks", c.num_blocks);
  c.num_heads = sz("model.num_heads", c.num_heads);
  c.ffn_width = sz("model.ffn_width", c.ffn_width);
  c.dropout_p = kv.get_double("model.dropout_p", c.dropout_p);
  c.voxel_size = kv.get_double("model.voxel_size", c.voxel_size);
  c.roi_x = {kv.get_double("model.roi_x_min", c.roi_x[0]), kv.get_double("model.roi_x_max", c.roi_x[1])};
  c.roi_y = {kv.get_double("model.roi_y_min", c.roi_y[0]), kv.get_double("model.roi_y_max", c.roi_y[1])};
  c.roi_z = {kv.get_double("model.roi_z_min", c.roi_z[0]), kv.get_double("model.roi_z_max", c.roi_z[1])};
  if (kv.has("model.stem_channels")) c.stem_channels = split<3>(kv.get_string("model.stem_channels", ""), "model.stem_channels");
  if (kv.has("model.stage_channels")) c.stage_channels = split<3>(kv.get_string("model.stage_channels", ""), "model.stage_channels");
  if (kv.has("model.stage_blocks")) c.stage_blocks = split<3>(kv.get_string("model.stage_blocks", ""), "model.stage_blocks");
  c.bottleneck_div = sz("model.bottleneck_div", c.bottleneck_div);
  c.gn_groups = sz("model.gn_groups", c.gn_groups);
  c.fpn_out = sz("model.fpn_out", c.fpn_out);
  c.max_points_per_frame = sz("model.max_points_per_frame", c.max_points_per_frame);
  c.pos_encoding = pos_encoding_from_string(kv.get_string("model.pos_encoding", to_string(c.pos_encoding)));
  c.variant = variant_from_string(kv.get_string("model.variant", to_string(c.variant)));
  const std::string win = kv.get_string("model.window", c.window ? std::to_string(*c.window) : "none");
  if (win == "none") {
    c.window.reset();
  } else {
    c.window = sz("model.window", 0);
  }
  c.alibi_slope = kv.get_double("model.alibi_slope", c.alibi_slope);
  c.use_box_encoder = kv.get_bool("model.use_box_encoder", c.use_box_encoder);
  c.use_point_encoder = kv.get_bool("model.use_point_encoder", c.use_point_encoder);
  c.init_seed = static_cast<std::uint64_t>(kv.get_int("model.init_seed", static_cast<std::int64_t>(c.init_seed)));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Inputs and outputs

void TrajectoryInput::validate() const {
  if (boxes.empty()) throw std::invalid_argument("TrajectoryInput: empty trajectory");
  if (points.size() != boxes.size()) {
    throw std::invalid_argument("TrajectoryInput: " + std::to_string(points.size()) + " point lists for " +
                                std::to_string(boxes.size()) + " boxes");
  }
  const BevBox& mid = boxes[boxes.size() / 2];
  if (std::abs(mid.x) > 1e-9 || std::abs(mid.y) > 1e-9 || std::abs(mid.theta) > 1e-9) {
    throw std::invalid_argument("TrajectoryInput: middle box is not at the trajectory-frame origin");
  }
  for (const BevBox& b : boxes) {
    if (!(b.l > 0.0 && b.w > 0.0)) throw std::invalid_argument("TrajectoryInput: non-positive box size");
  }
}

std::vector<BevBox> RefinedTrajectory::boxes() const {
  std::vector<BevBox> out;
  out.reserve(poses.size());
  for (const Pose& p : poses) out.push_back({p.x, p.y, l, w, p.theta});
  return out;
}

VoxelGrid voxelize(const PointList& object_points, double t_ref, const ModelConfig& cfg) {
  VoxelGrid g;
  g.nx = cfg.nx();
  g.ny = cfg.ny();
  g.nz = cfg.nz();
  const double vs = cfg.voxel_size;
  struct Entry {
    std::int64_t flat;
    std::size_t point;
    std::array<double, 4> feat;
  };
  std::vector<Entry> entries;
  entries.reserve(object_points.size());
  for (std::size_t i = 0; i < object_points.size(); ++i) {
    const auto& p = object_points[i];
    const double fx = std::floor((p.x - cfg.roi_x[0]) / vs);
    const double fy = std::floor((p.y - cfg.roi_y[0]) / vs);
    const double fz = std::floor((p.z - cfg.roi_z[0]) / vs);
    if (!(fx >= 0 && fx < static_cast<double>(g.nx) && fy >= 0 && fy < static_cast<double>(g.ny) && fz >= 0 &&
          fz < static_cast<double>(g.nz))) {
      continue;
    }
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy), iz = static_cast<std::int64_t>(fz);
    const double cx = cfg.roi_x[0] + (static_cast<double>(ix) + 0.5) * vs;
    const double cy = cfg.roi_y[0] + (static_cast<double>(iy) + 0.5) * vs;
    const double cz = cfg.roi_z[0] + (static_cast<double>(iz) + 0.5) * vs;
    const std::int64_t flat = (ix * static_cast<std::int64_t>(g.ny) + iy) * static_cast<std::int64_t>(g.nz) + iz;
    entries.push_back({flat, i, {p.x - cx, p.y - cy, p.z - cz, p.t - t_ref}});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.flat != b.flat ? a.flat < b.flat : a.point < b.point;
  });
  for (const Entry& e : entries) {
    if (g.voxel_flat.empty() || g.voxel_flat.back() != e.flat) g.voxel_flat.push_back(e.flat);
    g.point_voxel.push_back(static_cast<std::int64_t>(g.voxel_flat.size() - 1));
    g.point_features.push_back(e.feat);
  }
  return g;
}

Tensor alibi_bias(std::size_t M, std::size_t H, double constant_slope) {
  if (M == 0 || H == 0) throw std::invalid_argument("alibi_bias: M and H must be >= 1");
  std::vector<Real> v(H * M * M);
  for (std::size_t h = 0; h < H; ++h) {
    const double m = constant_slope > 0.0
                         ? constant_slope
                         : std::exp2(-8.0 * static_cast<double>(h + 1) / static_cast<double>(H));
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t j = 0; j < M; ++j) {
        const double d = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
        v[(h * M + i) * M + j] = -m * d;
      }
    }
  }
  return Tensor::from({H, M, M}, std::move(v));
}

Tensor absolute_pos_encoding(std::size_t M, std::size_t D) {
  if (D == 0 || D % 2) throw std::invalid_argument("absolute_pos_encoding: D must be even");
  std::vector<Real> v(M * D);
  for (std::size_t pos = 0; pos < M; ++pos) {
    for (std::size_t i = 0; i < D / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(D));
      v[pos * D + 2 * i] = std::sin(static_cast<double>(pos) * freq);
      v[pos * D + 2 * i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return Tensor::from({M, D}, std::move(v));
}

// ---------------------------------------------------------------------------
// LabelFormer

LabelFormer::Lin LabelFormer::add_linear(const std::string& name, std::size_t in, std::size_t out,
                                         std::mt19937_64& rng, bool zero) {
  Lin l;
  l.w = zero ? store_.add_zeros(name + ".weight", {out, in}) : store_.add_uniform(name + ".weight", {out, in}, in, rng);
  l.b = store_.add_zeros(name + ".bias", {out});
  return l;
}

LabelFormer::Norm LabelFormer::add_norm(const std::string& name, std::size_t width) {
  return {store_.add_ones(name + ".gamma", {width}), store_.add_zeros(name + ".beta", {width})};
}

LabelFormer::ConvGn LabelFormer::add_conv_gn(const std::string& name, std::size_t in, std::size_t out,
                                             std::size_t k, std::size_t stride, std::mt19937_64& rng) {
  ConvGn c;
  c.w = store_.add_uniform(name + ".conv.weight", {out, in, k, k}, in * k * k, rng);
  c.gn = add_norm(name + ".gn", out);
  c.stride = stride;
  return c;
}

LabelFormer::LabelFormer(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::seed_seq seq{cfg_.init_seed, std::uint64_t{0x1abe1f0}};
  std::mt19937_64 rng(seq);
  const std::size_t D = cfg_.d_model;

  if (cfg_.use_box_encoder) box_enc_ = add_linear("box_enc", 5, D, rng);

  if (cfg_.use_point_encoder) {
    pt_mlp1_ = add_linear("pillar.point_mlp1", 4, kPillarWidth, rng);
    pt_ln1_ = add_norm("pillar.point_ln1", kPillarWidth);
    pt_mlp2_ = add_linear("pillar.point_mlp2", kPillarWidth, kPillarWidth, rng);
    voxel_ln_ = add_norm("pillar.voxel_ln", kPillarWidth);
    z_embed_ = store_.add_uniform("pillar.z_embed", {cfg_.nz(), kPillarWidth}, kPillarWidth, rng);
    pillar_mlp1_ = add_linear("pillar.mlp1", 2 * kPillarWidth, kPillarWidth, rng);
    pillar_ln1_ = add_norm("pillar.ln1", kPillarWidth);
    pillar_mlp2_ = add_linear("pillar.mlp2", kPillarWidth, kBevWidth, rng);
    pillar_ln2_ = add_norm("pillar.ln2", kBevWidth);

    std::size_t in = kBevWidth;
    for (std::size_t s = 0; s < 3; ++s) {
      stems_.push_back(add_conv_gn("backbone.stem" + std::to_string(s), in, cfg_.stem_channels[s], 3, s == 0 ? 2 : 1, rng));
      in = cfg_.stem_channels[s];
    }
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<Block> stage;
      const std::size_t out = cfg_.stage_channels[s];
      const std::size_t mid = out / cfg_.bottleneck_div;
      for (std::size_t b = 0; b < cfg_.stage_blocks[s]; ++b) {
        const std::string name = "backbone.stage" + std::to_string(s) + ".block" + std::to_string(b);
        const std::size_t stride = b == 0 ? 2 : 1;
        Block blk{add_conv_gn(name + ".c1", in, mid, 1, 1, rng), add_conv_gn(name + ".c2", mid, mid, 3, stride, rng),
                  add_conv_gn(name + ".c3", mid, out, 1, 1, rng), std::nullopt};
        if (b == 0) blk.shortcut = add_conv_gn(name + ".shortcut", in, out, 1, 2, rng);
        stage.push_back(std::move(blk));
        in = out;
      }
      stages_.push_back(std::move(stage));
    }
    fpn_lat16_ = add_conv_gn("fpn.lateral16", cfg_.stage_channels[2], cfg_.stage_channels[1], 1, 1, rng);
    fpn_lat8_ = add_conv_gn("fpn.lateral8", cfg_.stage_channels[1], cfg_.stage_channels[0], 1, 1, rng);
    fpn_out_w_ = store_.add_uniform("fpn.out.weight", {cfg_.fpn_out, cfg_.stage_channels[0], 3, 3},
                                    cfg_.stage_channels[0] * 9, rng);
    fpn_out_b_ = store_.add_zeros("fpn.out.bias", {cfg_.fpn_out});
    fuse_ = add_linear("fuse", cfg_.fpn_out, D, rng);
  }

  if (cfg_.variant == Variant::kAttention) {
    for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
      const std::string name = "attn" + std::to_string(b);
      AttnBlock a;
      a.ln1 = add_norm(name + ".ln1", D);
      a.q = add_linear(name + ".q", D, D, rng);
      a.k = add_linear(name + ".k", D, D, rng);
      a.v = add_linear(name + ".v", D, D, rng);
      a.o = add_linear(name + ".out", D, D, rng);
      a.ln2 = add_norm(name + ".ln2", D);
      a.ff1 = add_linear(name + ".ffn1", D, cfg_.ffn_width, rng);
      a.ff2 = add_linear(name + ".ffn2", cfg_.ffn_width, D, rng);
      blocks_.push_back(a);
    }
  } else {
    for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
      const std::string name = "pool_mlp" + std::to_string(b);
      pool_mlp_.emplace_back(add_linear(name, D, D, rng), add_norm(name + ".ln", D));
    }
  }
  pose_head_ = add_linear("pose_head", D, 3, rng, true);
  size_head_ = add_linear("size_head", D, 2, rng, true);
}

Tensor LabelFormer::apply(Context& ctx, const Lin& l, const Tensor& x) const {
  return ops::linear(x, ctx.param(l.w), ctx.param(l.b));
}

Tensor LabelFormer::apply(Context& ctx, const Norm& n, const Tensor& x) const {
  return ops::layer_norm(x, ctx.param(n.g), ctx.param(n.b));
}

Tensor LabelFormer::apply(Context& ctx, const ConvGn& c, const Tensor& x, bool relu) const {
  const std::size_t k = store_[c.w].shape[2];
  Tensor y = ops::conv2d(x, ctx.param(c.w), Tensor(), c.stride, k / 2);
  y = ops::group_norm(y, cfg_.gn_groups, ctx.param(c.gn.g), ctx.param(c.gn.b));
  return relu ? ops::relu(y) : y;
}

Tensor LabelFormer::encode_boxes(Context& ctx, const std::vector<BevBox>& boxes) const {
  std::vector<Real> v;
  v.reserve(boxes.size() * 5);
  for (const BevBox& b : boxes) v.insert(v.end(), {b.x, b.y, b.l, b.w, b.theta});
  return apply(ctx, box_enc_, Tensor::from({boxes.size(), 5}, std::move(v)));
}

PointList LabelFormer::frame_points(const TrajectoryInput& input, std::size_t i) const {
  PointList pts = geometry::to_object_frame(input.points[i], input.boxes[i]);
  const std::size_t cap = cfg_.max_points_per_frame;
  if (cap == 0 || pts.size() <= cap) return pts;
  std::seed_seq seq{cfg_.init_seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(pts.size())};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t k = 0; k < cap; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  PointList out;
  out.reserve(cap);
  for (std::size_t k : idx) out.push_back(pts[k]);
  return out;
}

Tensor LabelFormer::pillar_encode(Context& ctx, const std::vector<VoxelGrid>& grids) const {
  const std::size_t M = grids.size();
  const std::size_t nx = cfg_.nx(), ny = cfg_.ny();
  std::vector<Real> feats;
  std::vector<std::int64_t> point_voxel, voxel_z, voxel_pillar;
  std::int64_t voxel_base = 0;
  for (std::size_t f = 0; f < M; ++f) {
    const VoxelGrid& g = grids[f];
    for (std::size_t p = 0; p < g.point_features.size(); ++p) {
      feats.insert(feats.end(), g.point_features[p].begin(), g.point_features[p].end());
      point_voxel.push_back(voxel_base + g.point_voxel[p]);
    }
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
      voxel_z.push_back(g.voxel_z(v));
      voxel_pillar.push_back(static_cast<std::int64_t>(f * nx * ny) + g.voxel_pillar(v));
    }
    voxel_base += static_cast<std::int64_t>(g.voxel_count());
  }
  if (point_voxel.empty()) return Tensor::zeros({M, kBevWidth, nx, ny});

  const std::size_t P = point_voxel.size();
  Tensor x = Tensor::from({P, 4}, std::move(feats));
  x = ops::relu(apply(ctx, pt_ln1_, apply(ctx, pt_mlp1_, x)));
  x = apply(ctx, pt_mlp2_, x);
  Tensor v = apply(ctx, voxel_ln_, ops::segment_sum(x, point_voxel, static_cast<std::size_t>(voxel_base)));
  Tensor z = ops::index_select(ctx.param(z_embed_), voxel_z);
  Tensor y = ops::concat({v, z}, 1);
  y = ops::relu(apply(ctx, pillar_ln1_, apply(ctx, pillar_mlp1_, y)));
  y = apply(ctx, pillar_ln2_, apply(ctx, pillar_mlp2_, y));
  Tensor bev = ops::segment_sum(y, voxel_pillar, M * nx * ny);
  return ops::permute(ops::reshape(bev, {M, nx, ny, kBevWidth}), {0, 3, 1, 2});
}

Tensor LabelFormer::backbone_fpn(Context& ctx, const Tensor& bev) const {
  if (bev.rank() != 4 || bev.dim(2) % 16 || bev.dim(3) % 16) {
    throw std::invalid_argument("backbone_fpn: spatial dims of " + nn::shape_str(bev.shape()) +
                                " must be divisible by 16");
  }
  Tensor x = bev;
  for (const ConvGn& s : stems_) x = apply(ctx, s, x, true);
  std::array<Tensor, 3> levels;
  for (std::size_t s = 0; s < 3; ++s) {
    for (const Block& b : stages_[s]) {
      Tensor r = apply(ctx, b.c1, x, true);
      r = apply(ctx, b.c2, r, true);
      r = apply(ctx, b.c3, r, true);
      Tensor skip = b.shortcut ? apply(ctx, *b.shortcut, x, false) : x;
      x = ops::add(skip, r);
    }
    levels[s] = x;
  }
  Tensor f8 = ops::add(levels[1], ops::bilinear_upsample_2x(apply(ctx, fpn_lat16_, levels[2], false)));
  Tensor f4 = ops::add(levels[0], ops::bilinear_upsample_2x(apply(ctx, fpn_lat8_, f8, false)));
  return ops::conv2d(f4, ctx.param(fpn_out_w_), ctx.param(fpn_out_b_), 1, 1);
}

Tensor LabelFormer::center_feature(const Tensor& fmap) {
  if (fmap.rank() != 4) throw std::invalid_argument("center_feature: expected [M, C, H, W]");
  const std::size_t cx = fmap.dim(2) / 2, cy = fmap.dim(3) / 2;
  Tensor c = ops::slice(ops::slice(fmap, 2, cx, cx + 1), 3, cy, cy + 1);
  return ops::reshape(c, {fmap.dim(0), fmap.dim(1)});
}

Tensor LabelFormer::point_features(Context& ctx, const TrajectoryInput& input) const {
  std::vector<VoxelGrid> grids;
  grids.reserve(input.boxes.size());
  for (std::size_t i = 0; i < input.boxes.size(); ++i) grids.push_back(voxelize(frame_points(input, i), input.t_ref, cfg_));
  return center_feature(backbone_fpn(ctx, pillar_encode(ctx, grids)));
}

Tensor LabelFormer::fuse(Context& ctx, const Tensor& a, const Tensor& p) const {
  Tensor proj = apply(ctx, fuse_, p);
  return a.defined() ? ops::add(a, proj) : proj;
}

Tensor LabelFormer::attention_bias(std::size_t M) const {
  const std::size_t H = cfg_.num_heads;
  const bool alibi = cfg_.pos_encoding == PosEncoding::kAlibi;
  const bool masked = cfg_.window && *cfg_.window + 1 < M;
  if (!alibi && !masked) return Tensor();
  Tensor bias = alibi ? alibi_bias(M, H, cfg_.alibi_slope) : Tensor::zeros({H, M, M});
  if (masked) {
    auto v = bias.mutable_values();
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < M; ++j) {
          const std::size_t d = i > j ? i - j : j - i;
          if (d > *cfg_.window) v[(h * M + i) * M + j] = -1e9;
        }
      }
    }
  }
  return bias;
}

Tensor LabelFormer::attention_block(Context& ctx, std::size_t block, const Tensor& g, const Tensor& bias) const {
  const AttnBlock& a = blocks_.at(block);
  const std::size_t M = g.dim(0), D = cfg_.d_model, H = cfg_.num_heads, dk = D / H;
  auto heads = [&](const Tensor& t) { return ops::permute(ops::reshape(t, {M, H, dk}), {1, 0, 2}); };
  Tensor x = apply(ctx, a.ln1, g);
  Tensor q = heads(apply(ctx, a.q, x));
  Tensor k = heads(apply(ctx, a.k, x));
  Tensor v = heads(apply(ctx, a.v, x));
  Tensor s = ops::scale(ops::bmm(q, ops::transpose(k)), 1.0 / std::sqrt(static_cast<Real>(dk)));
  if (bias.defined()) s = ops::add(s, bias);
  Tensor att = ops::softmax(s, -1);
  Tensor h = ops::reshape(ops::permute(ops::bmm(att, v), {1, 0, 2}), {M, D});
  h = apply(ctx, a.o, h);
  Tensor hp = ops::add(x, h);
  Tensor y = apply(ctx, a.ln2, hp);
  const Real p = cfg_.dropout_p;
  Tensor ff = ops::dropout(ops::relu(apply(ctx, a.ff1, y)), p, ctx.train(), ctx.rng());
  ff = ops::dropout(apply(ctx, a.ff2, ff), p, ctx.train(), ctx.rng());
  return ops::add(y, ff);
}

Tensor LabelFormer::mlp_pool(Context& ctx, const Tensor& f) const {
  Tensor z = ops::mean(f, 0);
  for (const auto& [lin, norm] : pool_mlp_) z = ops::relu(apply(ctx, norm, apply(ctx, lin, z)));
  return ops::add(f, z);
}

ForwardOutput LabelFormer::forward(Context& ctx, const TrajectoryInput& input) const {
  input.validate();
  const std::size_t M = input.boxes.size();
  Tensor a = cfg_.use_box_encoder ? encode_boxes(ctx, input.boxes) : Tensor();
  Tensor f = cfg_.use_point_encoder ? fuse(ctx, a, point_features(ctx, input)) : a;
  if (cfg_.pos_encoding == PosEncoding::kAbsolute) f = ops::add(f, absolute_pos_encoding(M, cfg_.d_model));

  Tensor g = f;
  if (cfg_.variant == Variant::kAttention) {
    const Tensor bias = attention_bias(M);
    for (std::size_t b = 0; b < blocks_.size(); ++b) g = attention_block(ctx, b, g, bias);
  } else {
    g = mlp_pool(ctx, f);
  }

  std::vector<Real> init(M * 3);
  Real mean_l = 0.0, mean_w = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    init[3 * i] = input.boxes[i].x;
    init[3 * i + 1] = input.boxes[i].y;
    init[3 * i + 2] = input.boxes[i].theta;
    mean_l += input.boxes[i].l;
    mean_w += input.boxes[i].w;
  }
  mean_l /= static_cast<Real>(M);
  mean_w /= static_cast<Real>(M);

  ForwardOutput out;
  out.poses = ops::add(Tensor::from({M, 3}, std::move(init)), apply(ctx, pose_head_, g));
  Tensor size_res = apply(ctx, size_head_, ops::mean(g, 0));
  out.size = ops::clamp_min(ops::add(Tensor::from({2}, {mean_l, mean_w}), size_res), 0.1);
  return out;
}

RefinedTrajectory LabelFormer::to_refined(const ForwardOutput& out) {
  RefinedTrajectory r;
  const auto p = out.poses.values();
  for (std::size_t i = 0; i < out.poses.dim(0); ++i) {
    r.poses.push_back({p[3 * i], p[3 * i + 1], geometry::normalize_angle(p[3 * i + 2])});
  }
  r.l = out.size.values()[0];
  r.w = out.size.values()[1];
  return r;
}

RefinedTrajectory LabelFormer::refine(const TrajectoryInput& input) const {
  Context ctx(store_, false, false);
  return to_refined(forward(ctx, input));
}

}  // namespace labelformer::model
