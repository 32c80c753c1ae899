#pragma once

// Internal helpers shared by the JSON Lines readers and writers.

#include "json.hpp"
#include "labelformer/error.hpp"
#include "labelformer/geometry.hpp"

namespace labelformer {
double canonical_real(double v);
}

namespace labelformer::jsonutil {

using Json = nlohmann::ordered_json;

inline Json box_to_json(const geometry::BevBox& b) {
  return Json::array({canonical_real(b.x), canonical_real(b.y), canonical_real(b.l),
                      canonical_real(b.w), canonical_real(b.theta)});
}

inline geometry::BevBox box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 5) throw DataError("box must be an array of 5 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>(),
          j[4].get<double>()};
}

inline Json point_to_json(const geometry::Point4& p) {
  return Json::array(
      {canonical_real(p.x), canonical_real(p.y), canonical_real(p.z), canonical_real(p.t)});
}

inline geometry::Point4 point_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("point must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace labelformer::jsonutil
