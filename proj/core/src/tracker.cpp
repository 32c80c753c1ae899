#include "labelformer/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "json_util.hpp"
#include "labelformer/error.hpp"
#include "labelformer/fileio.hpp"

namespace labelformer::tracker {

using geometry::Vec2;
using Json = nlohmann::ordered_json;

void TrackerConfig::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument(std::string("TrackerConfig: ") + name + " must be in [0, 1]");
    }
  };
  unit(nms_iou, "nms_iou");
  unit(score_min_det, "score_min_det");
  unit(decay, "decay");
  unit(terminate_below, "terminate_below");
  if (!(match_dist_max > 0.0)) throw std::invalid_argument("TrackerConfig: match_dist_max must be > 0");
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return geometry::rotated_iou(k.box, d.box) > iou_thresh;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

Vec2 predict_position(const Tracklet& t) {
  if (t.entries.empty()) throw std::invalid_argument("predict_position: empty tracklet");
  const BevBox& last = t.entries.back().box;
  if (t.entries.size() < 2) return {last.x, last.y};
  const BevBox& prev = t.entries[t.entries.size() - 2].box;
  return {2.0 * last.x - prev.x, 2.0 * last.y - prev.y};
}

namespace {

std::vector<std::size_t> by_score_then_id(std::span<const Tracklet> tracklets) {
  std::vector<std::size_t> order(tracklets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (tracklets[a].score != tracklets[b].score) return tracklets[a].score > tracklets[b].score;
    return tracklets[a].id < tracklets[b].id;
  });
  return order;
}

BevBox extrapolate_box(const Tracklet& t) {
  const Vec2 pos = predict_position(t);
  const BevBox& last = t.entries.back().box;
  double theta = last.theta;
  if (t.entries.size() >= 2) {
    const BevBox& prev = t.entries[t.entries.size() - 2].box;
    theta = last.theta + geometry::normalize_angle(last.theta - prev.theta);
  }
  return {pos.x, pos.y, last.l, last.w, geometry::normalize_angle(theta)};
}

}  // namespace

std::vector<int> greedy_match(std::span<const Tracklet> tracklets,
                              std::span<const Detection> detections, double match_dist_max) {
  std::vector<int> assignment(tracklets.size(), -1);
  std::vector<bool> claimed(detections.size(), false);
  for (std::size_t k : by_score_then_id(tracklets)) {
    const Vec2 p = predict_position(tracklets[k]);
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < detections.size(); ++d) {
      if (claimed[d]) continue;
      const double dist = std::hypot(p.x - detections[d].box.x, p.y - detections[d].box.y);
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<int>(d);
      }
    }
    if (best >= 0 && best_dist <= match_dist_max) {
      assignment[k] = best;
      claimed[best] = true;
    }
  }
  return assignment;
}

double update_matched_score(double c_old, int steps_old, double decay) {
  if (steps_old < 1) throw std::invalid_argument("update_matched_score: steps_old must be >= 1");
  double w = 0.0;
  double term = 1.0;
  for (int i = 1; i <= steps_old; ++i) {
    term *= decay;
    w += term;
  }
  constexpr double kDetectionConfidence = 1.0;
  return (w * c_old + kDetectionConfidence) / (w + 1.0);
}

void step(TrackerState& state, int frame_index, std::span<const Detection> detections,
          const TrackerConfig& cfg) {
  if (frame_index <= state.last_frame) {
    throw std::invalid_argument("tracker step: frame " + std::to_string(frame_index) +
                                " is not after frame " + std::to_string(state.last_frame));
  }
  state.last_frame = frame_index;

  std::vector<Detection> dets = nms(detections, cfg.nms_iou);
  std::erase_if(dets, [&](const Detection& d) { return d.score < cfg.score_min_det; });

  const std::vector<int> assignment = greedy_match(state.active, dets, cfg.match_dist_max);
  std::vector<bool> used(dets.size(), false);
  for (std::size_t k = 0; k < state.active.size(); ++k) {
    Tracklet& t = state.active[k];
    if (assignment[k] >= 0) {
      used[assignment[k]] = true;
      t.score = update_matched_score(t.score, t.steps(), cfg.decay);
      t.entries.push_back({frame_index, dets[assignment[k]].box, true, t.score});
    } else {
      const BevBox b = extrapolate_box(t);
      t.score *= cfg.decay;
      t.entries.push_back({frame_index, b, false, t.score});
    }
  }
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (used[d]) continue;
    Tracklet t;
    t.id = state.next_id++;
    t.score = dets[d].score;
    t.entries.push_back({frame_index, dets[d].box, true, t.score});
    state.active.push_back(std::move(t));
  }

  auto retire = [&](std::vector<bool>& dead) {
    std::vector<Tracklet> alive;
    for (std::size_t k = 0; k < state.active.size(); ++k) {
      (dead[k] ? state.finished : alive).push_back(std::move(state.active[k]));
    }
    state.active = std::move(alive);
  };

  std::vector<bool> dead(state.active.size(), false);
  for (std::size_t k = 0; k < state.active.size(); ++k) {
    dead[k] = state.active[k].score < cfg.terminate_below;
  }
  retire(dead);

  // Final NMS among surviving tracklets on their current boxes.
  dead.assign(state.active.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t k : by_score_then_id(state.active)) {
    const BevBox& b = state.active[k].last().box;
    for (std::size_t j : kept) {
      if (geometry::rotated_iou(state.active[j].last().box, b) > cfg.nms_iou) {
        dead[k] = true;
        break;
      }
    }
    if (!dead[k]) kept.push_back(k);
  }
  retire(dead);
}

std::vector<Tracklet> run_tracker(const Scene& scene, const TrackerConfig& cfg) {
  cfg.validate();
  TrackerState state;
  for (const SceneFrame& f : scene.frames) step(state, f.frame_index, f.det, cfg);
  std::vector<Tracklet> all = std::move(state.finished);
  for (Tracklet& t : state.active) all.push_back(std::move(t));
  for (Tracklet& t : all) {
    while (!t.entries.empty() && !t.entries.back().matched) t.entries.pop_back();
  }
  std::erase_if(all, [](const Tracklet& t) { return t.entries.empty(); });
  std::sort(all.begin(), all.end(), [](const Tracklet& a, const Tracklet& b) { return a.id < b.id; });
  return all;
}

std::optional<int> associate_gt(const Tracklet& tracklet, const Scene& scene, double min_iou) {
  if (tracklet.entries.empty()) throw std::invalid_argument("associate_gt: empty tracklet");
  std::map<int, int> votes;
  for (const TrackEntry& e : tracklet.entries) {
    if (e.frame < 0 || e.frame >= static_cast<int>(scene.frames.size())) continue;
    double best_iou = -1.0;
    int best_id = -1;
    for (const GtBox& g : scene.frames[e.frame].gt) {
      const double iou = geometry::rotated_iou(e.box, g.box);
      if (iou > best_iou || (iou == best_iou && g.actor_id < best_id)) {
        best_iou = iou;
        best_id = g.actor_id;
      }
    }
    if (best_id >= 0 && best_iou >= min_iou) ++votes[best_id];
  }
  if (votes.empty()) return std::nullopt;
  int mode = votes.begin()->first;
  int count = votes.begin()->second;
  for (const auto& [id, n] : votes) {
    if (n > count) {
      mode = id;
      count = n;
    }
  }
  return mode;
}

void write_tracklets(std::ostream& out, std::span<const AssociatedTracklet> tracklets) {
  for (const AssociatedTracklet& a : tracklets) {
    Json j;
    j["tracklet_id"] = a.tracklet.id;
    j["gt_actor_id"] = a.gt_actor_id ? Json(*a.gt_actor_id) : Json(nullptr);
    Json frames = Json::array();
    Json boxes = Json::array();
    Json scores = Json::array();
    Json matched = Json::array();
    for (const TrackEntry& e : a.tracklet.entries) {
      frames.push_back(e.frame);
      boxes.push_back(jsonutil::box_to_json(e.box));
      scores.push_back(canonical_real(e.score));
      matched.push_back(e.matched);
    }
    j["frames"] = std::move(frames);
    j["boxes"] = std::move(boxes);
    j["scores"] = std::move(scores);
    j["matched"] = std::move(matched);
    out << j.dump() << '\n';
  }
}

void write_tracklets(const std::filesystem::path& path,
                     std::span<const AssociatedTracklet> tracklets) {
  fileio::write_atomic(path, [&](std::ostream& out) { write_tracklets(out, tracklets); });
}

std::vector<AssociatedTracklet> read_tracklets(std::istream& in, const std::string& source_name) {
  std::vector<AssociatedTracklet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      AssociatedTracklet a;
      a.tracklet.id = j.at("tracklet_id").get<int>();
      if (!j.at("gt_actor_id").is_null()) a.gt_actor_id = j.at("gt_actor_id").get<int>();
      const Json& frames = j.at("frames");
      const Json& boxes = j.at("boxes");
      const Json& scores = j.at("scores");
      if (frames.size() != boxes.size() || frames.size() != scores.size()) {
        throw DataError("frames/boxes/scores length mismatch");
      }
      const Json* matched = j.contains("matched") ? &j.at("matched") : nullptr;
      for (std::size_t i = 0; i < frames.size(); ++i) {
        TrackEntry e;
        e.frame = frames[i].get<int>();
        e.box = jsonutil::box_from_json(boxes[i]);
        e.score = scores[i].get<double>();
        e.matched = matched ? (*matched)[i].get<bool>() : true;
        if (!a.tracklet.entries.empty() && e.frame <= a.tracklet.entries.back().frame) {
          throw DataError("tracklet frames must be strictly increasing");
        }
        a.tracklet.entries.push_back(e);
      }
      if (!a.tracklet.entries.empty()) a.tracklet.score = a.tracklet.entries.back().score;
      out.push_back(std::move(a));
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

std::vector<AssociatedTracklet> read_tracklets(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tracklet file: " + path.string());
  return read_tracklets(in, path.string());
}

}  // namespace labelformer::tracker
