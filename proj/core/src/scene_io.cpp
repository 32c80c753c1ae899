#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "labelformer/error.hpp"
#include "labelformer/fileio.hpp"
#include "json_util.hpp"
#include "labelformer/scene.hpp"

namespace labelformer {

using Json = nlohmann::ordered_json;

const char* to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::kStatic:
      return "static";
    case MotionKind::kConstantVelocity:
      return "constant_velocity";
    case MotionKind::kTurning:
      return "turning";
    case MotionKind::kAccelerating:
      return "accelerating";
  }
  return "static";
}

MotionKind motion_kind_from_string(const std::string& s) {
  if (s == "static") return MotionKind::kStatic;
  if (s == "constant_velocity") return MotionKind::kConstantVelocity;
  if (s == "turning") return MotionKind::kTurning;
  if (s == "accelerating") return MotionKind::kAccelerating;
  throw DataError("unknown motion kind '" + s + "'");
}

NoiseModel NoiseModel::zero() {
  NoiseModel n;
  n.sigma_xy = 0.0;
  n.sigma_theta = 0.0;
  n.sigma_lw = 0.0;
  n.heading_flip_prob = 0.0;
  n.drop_prob = 0.0;
  n.sigma_score = 0.0;
  return n;
}

void NoiseModel::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument(std::string("NoiseModel: ") + name + " must be in [0, 1]");
    }
  };
  auto sigma = [](double s, const char* name) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument(std::string("NoiseModel: ") + name + " must be >= 0");
    }
  };
  prob(heading_flip_prob, "heading_flip_prob");
  prob(drop_prob, "drop_prob");
  prob(score_floor, "score_floor");
  sigma(sigma_xy, "sigma_xy");
  sigma(sigma_theta, "sigma_theta");
  sigma(sigma_lw, "sigma_lw");
  sigma(sigma_score, "sigma_score");
}

void SceneConfig::validate() const {
  if (num_frames < 1) throw std::invalid_argument("SceneConfig: num_frames must be >= 1");
  if (num_actors < 0) throw std::invalid_argument("SceneConfig: num_actors must be >= 0");
  if (!(frame_period > 0.0)) throw std::invalid_argument("SceneConfig: frame_period must be > 0");
  if (!(points_at_10m >= 0.0)) throw std::invalid_argument("SceneConfig: points_at_10m must be >= 0");
}

std::optional<BevBox> Scene::gt_box(int actor_id, int frame_index) const {
  if (frame_index < 0 || frame_index >= static_cast<int>(frames.size())) return std::nullopt;
  for (const GtBox& g : frames[frame_index].gt) {
    if (g.actor_id == actor_id) return g.box;
  }
  return std::nullopt;
}

double canonical_real(double v) {
  if (!std::isfinite(v)) throw DataError("cannot serialize non-finite value");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

namespace {

Json config_to_json(const Scene& s) {
  Json c;
  c["num_actors"] = s.config.num_actors;
  c["num_frames"] = s.config.num_frames;
  c["frame_period"] = canonical_real(s.config.frame_period);
  c["sensor_origin"] = {canonical_real(s.config.sensor_origin.x),
                        canonical_real(s.config.sensor_origin.y)};
  c["points_at_10m"] = canonical_real(s.config.points_at_10m);
  c["rng_seed"] = s.config.rng_seed;
  Json n;
  n["sigma_xy"] = canonical_real(s.noise.sigma_xy);
  n["sigma_theta"] = canonical_real(s.noise.sigma_theta);
  n["sigma_lw"] = canonical_real(s.noise.sigma_lw);
  n["heading_flip_prob"] = canonical_real(s.noise.heading_flip_prob);
  n["drop_prob"] = canonical_real(s.noise.drop_prob);
  n["score_floor"] = canonical_real(s.noise.score_floor);
  n["sigma_score"] = canonical_real(s.noise.sigma_score);
  c["noise"] = std::move(n);
  Json actors = Json::array();
  for (const Actor& a : s.actors) {
    actors.push_back({{"actor_id", a.actor_id},
                      {"kind", to_string(a.profile.kind)},
                      {"speed", canonical_real(a.profile.speed)},
                      {"yaw_rate", canonical_real(a.profile.yaw_rate)},
                      {"accel", canonical_real(a.profile.accel)},
                      {"height", canonical_real(a.height)}});
  }
  c["actors"] = std::move(actors);
  return c;
}

Json frame_to_json(const SceneFrame& f) {
  Json j;
  j["frame_index"] = f.frame_index;
  j["t_start"] = canonical_real(f.t_start);
  j["t_end"] = canonical_real(f.t_end);
  Json pts = Json::array();
  for (const Point4& p : f.points) pts.push_back(jsonutil::point_to_json(p));
  j["points"] = std::move(pts);
  Json gt = Json::array();
  for (const GtBox& g : f.gt) {
    gt.push_back({{"actor_id", g.actor_id}, {"box", jsonutil::box_to_json(g.box)}});
  }
  j["gt"] = std::move(gt);
  Json det = Json::array();
  for (const Detection& d : f.det) {
    det.push_back({{"box", jsonutil::box_to_json(d.box)}, {"score", canonical_real(d.score)}});
  }
  j["det"] = std::move(det);
  return j;
}

void config_from_json(const Json& c, Scene& s) {
  s.config.num_actors = c.at("num_actors").get<int>();
  s.config.num_frames = c.at("num_frames").get<int>();
  s.config.frame_period = c.at("frame_period").get<double>();
  s.config.sensor_origin = {c.at("sensor_origin").at(0).get<double>(),
                            c.at("sensor_origin").at(1).get<double>()};
  s.config.points_at_10m = c.at("points_at_10m").get<double>();
  s.config.rng_seed = c.at("rng_seed").get<std::uint64_t>();
  const Json& n = c.at("noise");
  s.noise.sigma_xy = n.at("sigma_xy").get<double>();
  s.noise.sigma_theta = n.at("sigma_theta").get<double>();
  s.noise.sigma_lw = n.at("sigma_lw").get<double>();
  s.noise.heading_flip_prob = n.at("heading_flip_prob").get<double>();
  s.noise.drop_prob = n.at("drop_prob").get<double>();
  s.noise.score_floor = n.at("score_floor").get<double>();
  s.noise.sigma_score = n.at("sigma_score").get<double>();
  for (const Json& a : c.at("actors")) {
    Actor actor;
    actor.actor_id = a.at("actor_id").get<int>();
    actor.profile.kind = motion_kind_from_string(a.at("kind").get<std::string>());
    actor.profile.speed = a.at("speed").get<double>();
    actor.profile.yaw_rate = a.at("yaw_rate").get<double>();
    actor.profile.accel = a.at("accel").get<double>();
    actor.height = a.at("height").get<double>();
    s.actors.push_back(actor);
  }
}

SceneFrame frame_from_json(const Json& j) {
  SceneFrame f;
  f.frame_index = j.at("frame_index").get<int>();
  f.t_start = j.at("t_start").get<double>();
  f.t_end = j.at("t_end").get<double>();
  for (const Json& p : j.at("points")) f.points.push_back(jsonutil::point_from_json(p));
  for (const Json& g : j.at("gt")) {
    f.gt.push_back({g.at("actor_id").get<int>(), jsonutil::box_from_json(g.at("box"))});
  }
  for (const Json& d : j.at("det")) {
    Detection det;
    det.box = jsonutil::box_from_json(d.at("box"));
    det.score = d.at("score").get<double>();
    det.frame = f.frame_index;
    f.det.push_back(det);
  }
  return f;
}

}  // namespace

void write_scene(std::ostream& out, const Scene& scene) {
  Json header;
  header["version"] = kSceneFormatVersion;
  header["config"] = config_to_json(scene);
  out << header.dump() << '\n';
  for (const SceneFrame& f : scene.frames) out << frame_to_json(f).dump() << '\n';
}

void write_scene(const std::filesystem::path& path, const Scene& scene) {
  fileio::write_atomic(path, [&](std::ostream& out) { write_scene(out, scene); });
}

Scene read_scene(std::istream& in, const std::string& source_name) {
  Scene scene;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw ParseError(source_name, line_no, std::string("malformed JSON: ") + e.what());
    }
    try {
      if (!have_header) {
        const int version = j.at("version").get<int>();
        if (version != kSceneFormatVersion) {
          throw ParseError(source_name, line_no,
                           "unsupported scene format version " + std::to_string(version));
        }
        config_from_json(j.at("config"), scene);
        have_header = true;
      } else {
        SceneFrame f = frame_from_json(j);
        if (f.frame_index != static_cast<int>(scene.frames.size())) {
          throw ParseError(source_name, line_no,
                           "expected frame_index " + std::to_string(scene.frames.size()) +
                               ", got " + std::to_string(f.frame_index));
        }
        scene.frames.push_back(std::move(f));
      }
    } catch (const Json::exception& e) {
      throw ParseError(source_name, line_no, std::string("invalid field: ") + e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(source_name, line_no, e.what());
    }
  }
  if (!have_header) throw ParseError(source_name, line_no + 1, "missing scene header");
  if (static_cast<int>(scene.frames.size()) != scene.config.num_frames) {
    throw ParseError(source_name, line_no + 1,
                     "truncated scene: expected " + std::to_string(scene.config.num_frames) +
                         " frames, found " + std::to_string(scene.frames.size()));
  }
  return scene;
}

Scene read_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open scene file: " + path.string());
  return read_scene(in, path.string());
}

}  // namespace labelformer
