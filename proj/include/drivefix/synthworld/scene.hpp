#pragma once

#include <nlohmann/json.hpp>
#include <stdexcept>
#include <vector>

#include "drivefix/core/rng.hpp"
#include "drivefix/geom/se3.hpp"

namespace drivefix {

using json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SceneConfig {
  int T = 24;
  double ground_extent = 60.0;          // half-extent, meters
  Vec3 ground_color_a{0.32, 0.32, 0.34};
  Vec3 ground_color_b{0.55, 0.55, 0.50};
  double ground_checker = 4.0;          // meters per checker cell
  Vec3 sky_color{0.55, 0.70, 0.90};
  int object_count_min = 3;
  int object_count_max = 6;
  double object_speed_min = 0.0;        // m per timestep
  double object_speed_max = 1.0;
  double spawn_x_min = 6.0, spawn_x_max = 38.0;
  double spawn_y_min = -9.0, spawn_y_max = 9.0;
  double box_half_min = 0.6, box_half_max = 2.2;
  double ego_speed = 0.8;               // m per timestep along heading
  double ego_yaw_rate = 0.0;            // rad per timestep
  double far_plane = 100.0;

  void validate() const {
    if (T <= 0) throw ConfigError("scene config: T must be positive");
    if (ground_extent <= 0) throw ConfigError("scene config: ground_extent must be positive");
    if (object_count_min < 0 || object_count_max < object_count_min)
      throw ConfigError("scene config: bad object count range");
    if (object_speed_max < object_speed_min || object_speed_min < 0)
      throw ConfigError("scene config: bad speed range");
    if (far_plane <= 0) throw ConfigError("scene config: far_plane must be positive");
  }
};

// One textured box with a per-timestep pose trajectory. Thin boxes double as
// billboards (stripe texture instead of checker).
struct BoxObject {
  Vec3 half;                 // half extents in object frame
  std::vector<Pose> traj;    // object-to-world, one per timestep
  Vec3 color_a, color_b;
  double texture_scale = 0.8;  // meters per texture cell
  bool stripes = false;
};

struct Scene {
  SceneConfig config;
  uint64_t seed = 0;
  std::vector<BoxObject> objects;

  const Pose& object_pose(int obj, int t) const { return objects[obj].traj[t]; }
};

inline Scene generate_scene(const SceneConfig& config, uint64_t seed) {
  config.validate();
  Scene scene;
  scene.config = config;
  scene.seed = seed;
  SeedBank bank(seed);

  RngStream layout = bank.stream("scene/layout");
  int n = static_cast<int>(layout.uniform_int(config.object_count_min, config.object_count_max));
  for (int i = 0; i < n; ++i) {
    RngStream obj = bank.stream("scene/object/" + std::to_string(i));
    BoxObject box;
    box.half = {obj.uniform(config.box_half_min, config.box_half_max),
                obj.uniform(config.box_half_min, config.box_half_max),
                obj.uniform(config.box_half_min, config.box_half_max)};
    box.color_a = {obj.uniform(0.15, 0.9), obj.uniform(0.15, 0.9), obj.uniform(0.15, 0.9)};
    box.color_b = {obj.uniform(0.15, 0.9), obj.uniform(0.15, 0.9), obj.uniform(0.15, 0.9)};
    box.stripes = obj.uniform() < 0.3;
    if (box.stripes) box.half.y() = 0.1;  // billboard-like slab
    box.texture_scale = obj.uniform(0.5, 1.5);

    Vec3 p0{obj.uniform(config.spawn_x_min, config.spawn_x_max),
            obj.uniform(config.spawn_y_min, config.spawn_y_max), box.half.z()};
    double speed = obj.uniform(config.object_speed_min, config.object_speed_max);
    double heading = obj.uniform() < 0.5 ? 0.0 : M_PI;  // with or against traffic
    Vec3 vel{speed * std::cos(heading), speed * std::sin(heading), 0.0};
    box.traj.reserve(config.T);
    for (int t = 0; t < config.T; ++t) {
      Pose p;
      p.R = rot_z(heading);
      p.t = p0 + vel * static_cast<double>(t);
      box.traj.push_back(p);
    }
    scene.objects.push_back(std::move(box));
  }
  return scene;
}

struct CameraRig {
  int K = 0;
  std::vector<Intrinsics> intrinsics;     // per camera
  std::vector<Pose> cam_to_ego;           // per camera
  std::vector<Pose> ego_to_world;         // per timestep

  int T() const { return static_cast<int>(ego_to_world.size()); }
  Pose cam_to_world(int k, int t) const { return ego_to_world[t].compose(cam_to_ego[k]); }
};

// Camera axes (+x right, +y down, +z forward) expressed in the ego frame
// (+x forward, +y left, +z up).
inline Mat3 camera_base_rotation() {
  Mat3 m;
  m << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  return m;
}

inline std::vector<Pose> make_ego_trajectory(const SceneConfig& config) {
  std::vector<Pose> traj;
  Pose p = Pose::identity();
  double yaw = 0.0;
  for (int t = 0; t < config.T; ++t) {
    traj.push_back(p);
    yaw += config.ego_yaw_rate;
    p.t += rot_z(yaw) * Vec3(config.ego_speed, 0, 0);
    p.R = rot_z(yaw);
  }
  return traj;
}

// Forward-facing 3-camera rig with yaw offsets, frustums overlapping.
inline CameraRig make_frontal_rig(const SceneConfig& config, int width, int height,
                                  double hfov_deg = 60.0) {
  CameraRig rig;
  rig.K = 3;
  double f = 0.5 * width / std::tan(0.5 * hfov_deg * M_PI / 180.0);
  const double yaw_offsets[3] = {-25.0 * M_PI / 180.0, 0.0, 25.0 * M_PI / 180.0};
  for (int k = 0; k < 3; ++k) {
    rig.intrinsics.push_back({f, f, 0.5 * width, 0.5 * height});
    Pose e;
    e.R = rot_z(yaw_offsets[k]) * camera_base_rotation();
    e.t = Vec3(1.5, -0.3 + 0.3 * k, 1.6);
    rig.cam_to_ego.push_back(e);
  }
  rig.ego_to_world = make_ego_trajectory(config);
  return rig;
}

// Six-camera surround rig, 60 degree spacing.
inline CameraRig make_surround_rig(const SceneConfig& config, int width, int height,
                                   double hfov_deg = 75.0) {
  CameraRig rig;
  rig.K = 6;
  double f = 0.5 * width / std::tan(0.5 * hfov_deg * M_PI / 180.0);
  for (int k = 0; k < 6; ++k) {
    rig.intrinsics.push_back({f, f, 0.5 * width, 0.5 * height});
    Pose e;
    e.R = rot_z(k * M_PI / 3.0) * camera_base_rotation();
    e.t = Vec3(0.0, 0.0, 1.8);
    rig.cam_to_ego.push_back(e);
  }
  rig.ego_to_world = make_ego_trajectory(config);
  return rig;
}

// ---- JSON serialization ----

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
inline Vec3 vec3_from_json(const json& j) {
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json to_json(const Pose& p) {
  json j;
  j["R"] = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) j["R"].push_back(p.R(r, c));
  j["t"] = to_json(p.t);
  return j;
}
inline Pose pose_from_json(const json& j) {
  Pose p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.R(r, c) = j["R"][r * 3 + c];
  p.t = vec3_from_json(j["t"]);
  return p;
}

inline json to_json(const SceneConfig& c) {
  return json{{"T", c.T},
              {"ground_extent", c.ground_extent},
              {"ground_color_a", to_json(c.ground_color_a)},
              {"ground_color_b", to_json(c.ground_color_b)},
              {"ground_checker", c.ground_checker},
              {"sky_color", to_json(c.sky_color)},
              {"object_count_min", c.object_count_min},
              {"object_count_max", c.object_count_max},
              {"object_speed_min", c.object_speed_min},
              {"object_speed_max", c.object_speed_max},
              {"spawn_x_min", c.spawn_x_min},
              {"spawn_x_max", c.spawn_x_max},
              {"spawn_y_min", c.spawn_y_min},
              {"spawn_y_max", c.spawn_y_max},
              {"box_half_min", c.box_half_min},
              {"box_half_max", c.box_half_max},
              {"ego_speed", c.ego_speed},
              {"ego_yaw_rate", c.ego_yaw_rate},
              {"far_plane", c.far_plane}};
}

inline SceneConfig scene_config_from_json(const json& j) {
  SceneConfig c;
  c.T = j.value("T", c.T);
  c.ground_extent = j.value("ground_extent", c.ground_extent);
  if (j.contains("ground_color_a")) c.ground_color_a = vec3_from_json(j["ground_color_a"]);
  if (j.contains("ground_color_b")) c.ground_color_b = vec3_from_json(j["ground_color_b"]);
  c.ground_checker = j.value("ground_checker", c.ground_checker);
  if (j.contains("sky_color")) c.sky_color = vec3_from_json(j["sky_color"]);
  c.object_count_min = j.value("object_count_min", c.object_count_min);
  c.object_count_max = j.value("object_count_max", c.object_count_max);
  c.object_speed_min = j.value("object_speed_min", c.object_speed_min);
  c.object_speed_max = j.value("object_speed_max", c.object_speed_max);
  c.spawn_x_min = j.value("spawn_x_min", c.spawn_x_min);
  c.spawn_x_max = j.value("spawn_x_max", c.spawn_x_max);
  c.spawn_y_min = j.value("spawn_y_min", c.spawn_y_min);
  c.spawn_y_max = j.value("spawn_y_max", c.spawn_y_max);
  c.box_half_min = j.value("box_half_min", c.box_half_min);
  c.box_half_max = j.value("box_half_max", c.box_half_max);
  c.ego_speed = j.value("ego_speed", c.ego_speed);
  c.ego_yaw_rate = j.value("ego_yaw_rate", c.ego_yaw_rate);
  c.far_plane = j.value("far_plane", c.far_plane);
  return c;
}

inline json to_json(const Scene& s) {
  json j;
  j["config"] = to_json(s.config);
  j["seed"] = s.seed;
  j["objects"] = json::array();
  for (const auto& o : s.objects) {
    json jo;
    jo["half"] = to_json(o.half);
    jo["color_a"] = to_json(o.color_a);
    jo["color_b"] = to_json(o.color_b);
    jo["texture_scale"] = o.texture_scale;
    jo["stripes"] = o.stripes;
    jo["traj"] = json::array();
    for (const auto& p : o.traj) jo["traj"].push_back(to_json(p));
    j["objects"].push_back(std::move(jo));
  }
  return j;
}

inline Scene scene_from_json(const json& j) {
  Scene s;
  s.config = scene_config_from_json(j["config"]);
  s.seed = j["seed"];
  for (const auto& jo : j["objects"]) {
    BoxObject o;
    o.half = vec3_from_json(jo["half"]);
    o.color_a = vec3_from_json(jo["color_a"]);
    o.color_b = vec3_from_json(jo["color_b"]);
    o.texture_scale = jo["texture_scale"];
    o.stripes = jo["stripes"];
    for (const auto& jp : jo["traj"]) o.traj.push_back(pose_from_json(jp));
    s.objects.push_back(std::move(o));
  }
  return s;
}

inline json to_json(const CameraRig& rig) {
  json j;
  j["K"] = rig.K;
  j["intrinsics"] = json::array();
  for (const auto& in : rig.intrinsics)
    j["intrinsics"].push_back({{"fx", in.fx}, {"fy", in.fy}, {"cx", in.cx}, {"cy", in.cy}});
  j["cam_to_ego"] = json::array();
  for (const auto& p : rig.cam_to_ego) j["cam_to_ego"].push_back(to_json(p));
  j["ego_to_world"] = json::array();
  for (const auto& p : rig.ego_to_world) j["ego_to_world"].push_back(to_json(p));
  return j;
}

inline CameraRig rig_from_json(const json& j) {
  CameraRig rig;
  rig.K = j["K"];
  for (const auto& ji : j["intrinsics"])
    rig.intrinsics.push_back({ji["fx"], ji["fy"], ji["cx"], ji["cy"]});
  for (const auto& jp : j["cam_to_ego"]) rig.cam_to_ego.push_back(pose_from_json(jp));
  for (const auto& jp : j["ego_to_world"]) rig.ego_to_world.push_back(pose_from_json(jp));
  return rig;
}

}  // namespace drivefix
