#include "labelformer/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "json_util.hpp"
#include "labelformer/fileio.hpp"

namespace labelformer::trajectory {

using jsonutil::Json;

bool Trajectory::has_full_gt() const {
  for (const auto& g : gt) {
    if (!g) return false;
  }
  return !gt.empty();
}

model::TrajectoryInput Trajectory::input() const { return {boxes, points, t_ref}; }

void Trajectory::validate() const {
  const std::size_t M = boxes.size();
  if (M == 0) throw DataError(object_id + ": empty trajectory");
  if (frames.size() != M || t_end.size() != M || gt.size() != M || points.size() != M ||
      context_points.size() != M) {
    throw DataError(object_id + ": per-frame arrays have inconsistent lengths");
  }
  for (std::size_t i = 1; i < M; ++i) {
    if (frames[i] <= frames[i - 1]) throw DataError(object_id + ": frames must be strictly increasing");
  }
  for (const BevBox& b : boxes) {
    if (!(b.l > 0.0 && b.w > 0.0)) throw DataError(object_id + ": non-positive box size");
  }
}

std::optional<Trajectory> extract(const Scene& scene, const std::string& scene_name,
                                  const tracker::AssociatedTracklet& tracklet, const ExtractConfig& cfg) {
  if (!tracklet.gt_actor_id) return std::nullopt;
  const auto& entries = tracklet.tracklet.entries;
  if (entries.empty() || entries.size() < cfg.min_length) return std::nullopt;

  std::vector<BevBox> world;
  world.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.frame < 0 || e.frame >= static_cast<int>(scene.frames.size())) {
      throw DataError(scene_name + ": tracklet " + std::to_string(tracklet.tracklet.id) + " references frame " +
                      std::to_string(e.frame) + " outside the scene");
    }
    world.push_back(e.box);
  }
  world = geometry::canonicalize_headings(world);

  std::vector<PointList> context_world;
  context_world.reserve(world.size());
  for (std::size_t i = 0; i < world.size(); ++i) {
    BevBox wide = world[i];
    wide.l += 2.0 * cfg.context_margin;
    wide.w += 2.0 * cfg.context_margin;
    context_world.push_back(geometry::crop_points(scene.frames[entries[i].frame].points, wide, 0.0));
  }
  const geometry::TrajectoryFrame tf = geometry::to_trajectory_frame(world, context_world);

  Trajectory t;
  t.scene = scene_name;
  t.tracklet_id = tracklet.tracklet.id;
  t.object_id = scene_name + ":" + std::to_string(t.tracklet_id);
  t.gt_actor_id = tracklet.gt_actor_id;
  t.origin = geometry::pose_of(world[world.size() / 2]);
  t.boxes = tf.boxes;
  t.context_points = tf.points;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const SceneFrame& f = scene.frames[entries[i].frame];
    t.frames.push_back(entries[i].frame);
    t.t_end.push_back(f.t_end);
    t.points.push_back(geometry::crop_points(t.context_points[i], t.boxes[i], cfg.enlarge));
    const auto g = scene.gt_box(*tracklet.gt_actor_id, entries[i].frame);
    t.gt.push_back(g ? std::optional<BevBox>(tf.world_to_trajectory.apply(*g)) : std::nullopt);
  }
  t.t_ref = t.t_end[t.t_end.size() / 2];
  return t;
}

namespace {

Json points_to_json(const PointList& pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back(jsonutil::point_to_json(p));
  return a;
}

PointList points_from_json(const Json& j) {
  PointList out;
  out.reserve(j.size());
  for (const Json& p : j) out.push_back(jsonutil::point_from_json(p));
  return out;
}

Json optional_box(const std::optional<BevBox>& b) { return b ? jsonutil::box_to_json(*b) : Json(nullptr); }

std::optional<BevBox> optional_box_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return jsonutil::box_from_json(j);
}

template <class T, class Parse>
std::vector<T> read_lines(std::istream& in, const std::string& source_name, Parse parse) {
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw ParseError(source_name, line_no, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(source_name, line_no, e.what());
    }
  }
  return out;
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

void write_trajectories(std::ostream& out, std::span<const Trajectory> trajs) {
  for (const Trajectory& t : trajs) {
    Json j;
    j["object_id"] = t.object_id;
    j["scene"] = t.scene;
    j["tracklet_id"] = t.tracklet_id;
    j["gt_actor_id"] = t.gt_actor_id ? Json(*t.gt_actor_id) : Json(nullptr);
    j["frames"] = t.frames;
    Json tend = Json::array();
    for (double v : t.t_end) tend.push_back(canonical_real(v));
    j["t_end"] = std::move(tend);
    j["t_ref"] = canonical_real(t.t_ref);
    j["origin"] = Json::array({canonical_real(t.origin.x), canonical_real(t.origin.y), canonical_real(t.origin.theta)});
    Json boxes = Json::array(), gt = Json::array(), pts = Json::array(), ctx = Json::array();
    for (std::size_t i = 0; i < t.size(); ++i) {
      boxes.push_back(jsonutil::box_to_json(t.boxes[i]));
      gt.push_back(optional_box(t.gt[i]));
      pts.push_back(points_to_json(t.points[i]));
      ctx.push_back(points_to_json(t.context_points[i]));
    }
    j["boxes"] = std::move(boxes);
    j["gt"] = std::move(gt);
    j["points"] = std::move(pts);
    j["context_points"] = std::move(ctx);
    out << j.dump() << '\n';
  }
}

void write_trajectories(const std::filesystem::path& path, std::span<const Trajectory> trajs) {
  fileio::write_atomic(path, [&](std::ostream& out) { write_trajectories(out, trajs); });
}

std::vector<Trajectory> read_trajectories(std::istream& in, const std::string& source_name) {
  return read_lines<Trajectory>(in, source_name, [](const Json& j) {
    Trajectory t;
    t.object_id = j.at("object_id").get<std::string>();
    t.scene = j.at("scene").get<std::string>();
    t.tracklet_id = j.at("tracklet_id").get<int>();
    if (!j.at("gt_actor_id").is_null()) t.gt_actor_id = j.at("gt_actor_id").get<int>();
    t.frames = j.at("frames").get<std::vector<int>>();
    t.t_end = j.at("t_end").get<std::vector<double>>();
    t.t_ref = j.at("t_ref").get<double>();
    const Json& o = j.at("origin");
    if (!o.is_array() || o.size() != 3) throw DataError("origin must be [x, y, theta]");
    t.origin = {o[0].get<double>(), o[1].get<double>(), o[2].get<double>()};
    for (const Json& b : j.at("boxes")) t.boxes.push_back(jsonutil::box_from_json(b));
    for (const Json& g : j.at("gt")) t.gt.push_back(optional_box_from(g));
    for (const Json& p : j.at("points")) t.points.push_back(points_from_json(p));
    for (const Json& p : j.at("context_points")) t.context_points.push_back(points_from_json(p));
    t.validate();
    return t;
  });
}

std::vector<Trajectory> read_trajectories(const std::filesystem::path& path) {
  auto in = open(path);
  return read_trajectories(in, path.string());
}

void write_refined(std::ostream& out, std::span<const RefinedRecord> records) {
  for (const RefinedRecord& r : records) {
    Json j;
    j["object_id"] = r.object_id;
    j["frames"] = r.frames;
    Json init = Json::array(), refined = Json::array(), gt = Json::array();
    for (std::size_t i = 0; i < r.frames.size(); ++i) {
      init.push_back(jsonutil::box_to_json(r.init[i]));
      refined.push_back(jsonutil::box_to_json(r.refined[i]));
      gt.push_back(optional_box(r.gt[i]));
    }
    j["init"] = std::move(init);
    j["refined"] = std::move(refined);
    j["gt"] = std::move(gt);
    j["size"] = Json::array({canonical_real(r.l), canonical_real(r.w)});
    j["runtime_ms"] = canonical_real(r.runtime_ms);
    out << j.dump() << '\n';
  }
}

void write_refined(const std::filesystem::path& path, std::span<const RefinedRecord> records) {
  fileio::write_atomic(path, [&](std::ostream& out) { write_refined(out, records); });
}

std::vector<RefinedRecord> read_refined(std::istream& in, const std::string& source_name) {
  return read_lines<RefinedRecord>(in, source_name, [](const Json& j) {
    RefinedRecord r;
    r.object_id = j.at("object_id").get<std::string>();
    r.frames = j.at("frames").get<std::vector<int>>();
    for (const Json& b : j.at("init")) r.init.push_back(jsonutil::box_from_json(b));
    for (const Json& b : j.at("refined")) r.refined.push_back(jsonutil::box_from_json(b));
    for (const Json& g : j.at("gt")) r.gt.push_back(optional_box_from(g));
    const Json& s = j.at("size");
    if (!s.is_array() || s.size() != 2) throw DataError("size must be [l, w]");
    r.l = s[0].get<double>();
    r.w = s[1].get<double>();
    r.runtime_ms = j.value("runtime_ms", 0.0);
    if (r.init.size() != r.frames.size() || r.refined.size() != r.frames.size() || r.gt.size() != r.frames.size()) {
      throw DataError(r.object_id + ": per-frame arrays have inconsistent lengths");
    }
    return r;
  });
}

std::vector<RefinedRecord> read_refined(const std::filesystem::path& path) {
  auto in = open(path);
  return read_refined(in, path.string());
}

}  // namespace labelformer::trajectory
