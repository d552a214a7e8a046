#include "iroam/synthdata.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "iroam/errors.hpp"
#include "json.hpp"

namespace iroam {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, const std::array<double, 2>& r) { return uniform(rng, r[0], r[1]); }

Box3D inflated(const Box3D& b, double margin) {
  Box3D out = b;
  out.dims[1] += margin;
  out.dims[2] += margin;
  return out;
}

Vec3 to_rig_frame(const Vec3& world, Vec2 offset) { return {world[0] - offset[0], world[1], world[2] - offset[1]}; }

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

const Vec3 kLight = normalized({0.35, -0.8, -0.45});

std::array<double, 3> background_color(const CameraModel& cam, Vec2 offset, double u, double v) {
  const Vec3 d = cam.ray_direction(u, v);
  if (d[1] <= 1e-6) {
    const double up = std::clamp(-d[1] / std::sqrt(dot(d, d)), 0.0, 1.0);
    return {0.78 - 0.3 * up, 0.84 - 0.22 * up, 0.92 - 0.05 * up};
  }
  const Vec3 o = cam.origin();
  const double t = -o[1] / d[1];
  const double wx = o[0] + t * d[0] + offset[0];
  const double wz = o[2] + t * d[2] + offset[1];
  const double dist = t * std::sqrt(dot(d, d));
  std::array<double, 3> c;
  if (wx < -5.25 || wx > 8.75) {
    c = {0.30, 0.45, 0.25};
  } else {
    c = {0.36, 0.36, 0.38};
    const double boundaries[] = {-5.25, -1.75, 1.75, 5.25, 8.75};
    for (double b : boundaries) {
      const bool solid = b == -5.25 || b == 8.75;
      const double phase = std::fmod(std::fmod(wz, 6.0) + 6.0, 6.0);
      if (std::abs(wx - b) < 0.08 && (solid || phase < 3.0)) c = {0.9, 0.9, 0.85};
    }
  }
  const double fog = 1.0 - std::exp(-dist / 90.0);
  const std::array<double, 3> haze{0.75, 0.78, 0.82};
  for (int k = 0; k < 3; ++k) c[k] = c[k] * (1.0 - fog) + haze[k] * fog;
  return c;
}

struct Face {
  int object = 0;
  double key = 0.0;  // camera depth of the face centroid
  std::array<Vec2, 4> px{};
  std::array<double, 3> color{};
};

bool inside_convex(const std::array<Vec2, 4>& p, double x, double y, double orient) {
  for (int i = 0; i < 4; ++i) {
    const Vec2& a = p[i];
    const Vec2& b = p[(i + 1) % 4];
    const double c = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    if (c * orient < 0.0) return false;
  }
  return true;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t i = static_cast<size_t>(std::floor(pos));
  const size_t j = std::min(i + 1, v.size() - 1);
  return v[i] + (pos - static_cast<double>(i)) * (v[j] - v[i]);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json camera_to_json(const CameraModel& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"height_above_ground", c.height_above_ground},
          {"pitch", c.pitch}, {"width", c.width}, {"height", c.height}};
}

CameraModel camera_from_json(const json& j) {
  CameraModel c;
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.height_above_ground = j.at("height_above_ground");
  c.pitch = j.at("pitch");
  c.width = j.at("width");
  c.height = j.at("height");
  return c;
}

}  // namespace

void SceneConfig::validate() const {
  if (max_objects < 1 || min_objects < 1 || min_objects > max_objects)
    throw std::invalid_argument("scene object counts must satisfy 1 <= min <= max");
  if (lane_centers.empty()) throw std::invalid_argument("scene needs at least one lane");
  if (!(z_max > z_min)) throw std::invalid_argument("scene depth range is empty");
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be positive");
}

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(splitmix(seed));
  Scene scene;
  scene.seed = seed;
  scene.road_extent = config.z_max;
  const int n = std::uniform_int_distribution<int>(config.min_objects, config.max_objects)(rng);
  std::uniform_int_distribution<size_t> lane_pick(0, config.lane_centers.size() - 1);
  for (int k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      const double lane = config.lane_centers[lane_pick(rng)];
      Box3D b;
      b.dims = {uniform(rng, config.height_range), uniform(rng, config.width_range), uniform(rng, config.length_range)};
      b.center = {lane + uniform(rng, -config.lateral_jitter, config.lateral_jitter), -0.5 * b.dims[0],
                  uniform(rng, config.z_min, config.z_max)};
      // Traffic left of the ego lane is oncoming.
      const double heading = lane < -0.5 ? 0.5 * std::numbers::pi : -0.5 * std::numbers::pi;
      b.yaw = heading + uniform(rng, -config.yaw_jitter, config.yaw_jitter);
      b.validate();
      const Box3D grown = inflated(b, config.margin);
      placed = std::none_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
        return iou_bev(grown, inflated(o.box, config.margin)) > 0.0;
      });
      if (placed) {
        SceneObject obj;
        obj.id = k;
        obj.box = b;
        obj.albedo = {uniform(rng, 0.1, 0.95), uniform(rng, 0.1, 0.95), uniform(rng, 0.1, 0.95)};
        scene.objects.push_back(obj);
      }
    }
    if (!placed) throw PlacementFailure("could not place object " + std::to_string(k) + " without overlap");
  }
  return scene;
}

CameraModel make_camera(const RigConfig& rig, Domain domain, std::uint64_t scene_seed) {
  CameraModel cam;
  cam.width = rig.image_width;
  cam.height = rig.image_height;
  cam.fx = cam.fy = rig.focal_scale * rig.image_width;
  cam.cx = 0.5 * rig.image_width;
  cam.cy = 0.5 * rig.image_height;
  if (domain == Domain::Vehicle) {
    cam.height_above_ground = rig.vehicle_height;
    cam.pitch = rig.vehicle_pitch;
  } else {
    std::mt19937_64 rng(mix(scene_seed, 0x726f6164ULL));
    cam.height_above_ground = uniform(rng, rig.roadside_height_range);
    cam.pitch = uniform(rng, rig.roadside_pitch_range);
  }
  return cam;
}

Vec2 rig_offset(const RigConfig& rig, Domain domain) {
  return domain == Domain::Vehicle ? Vec2{0.0, 0.0} : rig.roadside_offset;
}

DomainSample render_view(const Scene& scene, const CameraModel& cam, Domain domain, Vec2 offset, double min_depth,
                         double max_depth) {
  const int w = cam.width, h = cam.height;
  DomainSample out;
  out.domain = domain;
  out.cam = cam;
  out.image = Image(w, h);

  const size_t n_obj = scene.objects.size();
  std::vector<int> label_of(n_obj, -1);
  std::vector<Box3D> rig_boxes(n_obj);
  for (size_t i = 0; i < n_obj; ++i) {
    const SceneObject& o = scene.objects[i];
    Box3D b = o.box;
    b.center = to_rig_frame(o.box.center, offset);
    rig_boxes[i] = b;
    const double depth = camera_depth(b, cam);
    if (!(depth >= min_depth && depth <= max_depth)) continue;
    const Vec2 c = project_center(b, cam);
    if (c[0] < 0.0 || c[0] > 1.0 || c[1] < 0.0 || c[1] > 1.0) continue;
    const auto box2d = enclosing_box2d(b, cam);
    if (!box2d) continue;
    ObjectLabel l;
    l.object_id = o.id;
    l.box3d = b;
    l.box2d = *box2d;
    l.center2d = c;
    l.depth = depth;
    l.albedo = o.albedo;
    label_of[i] = static_cast<int>(out.labels.size());
    out.labels.push_back(l);
  }
  if (out.labels.empty()) throw EmptyView("no object visible from the " + std::string(to_string(domain)) + " camera");

  std::vector<int> owner(static_cast<size_t>(w) * h, -1);
  std::vector<std::array<double, 3>> color(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      color[static_cast<size_t>(y) * w + x] = background_color(cam, offset, (x + 0.5) / w, (y + 0.5) / h);

  static constexpr int kFaces[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4}, {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
  std::vector<Face> faces;
  const Vec3 eye = cam.origin();
  for (size_t i = 0; i < n_obj; ++i) {
    const Box3D& b = rig_boxes[i];
    const auto corners = box_corners(b);
    for (const auto& f : kFaces) {
      Vec3 centroid{0.0, 0.0, 0.0};
      bool in_front = true;
      for (int k : f) {
        for (int a = 0; a < 3; ++a) centroid[a] += 0.25 * corners[k][a];
        if (cam.to_camera(corners[k])[2] <= 0.1) in_front = false;
      }
      if (!in_front) continue;
      const Vec3 normal = normalized({centroid[0] - b.center[0], centroid[1] - b.center[1], centroid[2] - b.center[2]});
      const Vec3 to_eye{eye[0] - centroid[0], eye[1] - centroid[1], eye[2] - centroid[2]};
      if (dot(normal, to_eye) <= 0.0) continue;
      Face face;
      face.object = static_cast<int>(i);
      face.key = cam.to_camera(centroid)[2];
      for (int k = 0; k < 4; ++k) {
        const Vec2 uv = project_point(corners[f[k]], cam);
        face.px[k] = {uv[0] * w, uv[1] * h};
      }
      const double shade = 0.55 + 0.45 * std::max(0.0, dot(normal, kLight));
      for (int a = 0; a < 3; ++a) face.color[a] = scene.objects[i].albedo[a] * shade;
      faces.push_back(face);
    }
  }
  std::stable_sort(faces.begin(), faces.end(), [](const Face& a, const Face& b) { return a.key > b.key; });
  for (const Face& f : faces) {
    double x0 = f.px[0][0], x1 = x0, y0 = f.px[0][1], y1 = y0;
    double area = 0.0;
    for (int k = 0; k < 4; ++k) {
      x0 = std::min(x0, f.px[k][0]);
      x1 = std::max(x1, f.px[k][0]);
      y0 = std::min(y0, f.px[k][1]);
      y1 = std::max(y1, f.px[k][1]);
      const Vec2& p = f.px[k];
      const Vec2& q = f.px[(k + 1) % 4];
      area += p[0] * q[1] - q[0] * p[1];
    }
    if (area == 0.0) continue;
    const int ix0 = std::max(0, static_cast<int>(std::floor(x0))), ix1 = std::min(w - 1, static_cast<int>(std::ceil(x1)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0))), iy1 = std::min(h - 1, static_cast<int>(std::ceil(y1)));
    for (int y = iy0; y <= iy1; ++y) {
      for (int x = ix0; x <= ix1; ++x) {
        if (!inside_convex(f.px, x + 0.5, y + 0.5, area)) continue;
        const size_t p = static_cast<size_t>(y) * w + x;
        owner[p] = f.object;
        color[p] = f.color;
      }
    }
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.image.set_unit(x, y, c, color[static_cast<size_t>(y) * w + x][c]);

  out.depth_rows = h / 16;
  out.depth_cols = w / 16;
  out.depth_gt.assign(static_cast<size_t>(out.depth_rows) * out.depth_cols, DomainSample::kBackground);
  for (int r = 0; r < out.depth_rows; ++r) {
    for (int c = 0; c < out.depth_cols; ++c) {
      double best = std::numeric_limits<double>::infinity();
      bool unlabeled = false;
      for (int y = r * 16; y < (r + 1) * 16; ++y) {
        for (int x = c * 16; x < (c + 1) * 16; ++x) {
          const int o = owner[static_cast<size_t>(y) * w + x];
          if (o < 0) continue;
          const int l = label_of[static_cast<size_t>(o)];
          if (l < 0)
            unlabeled = true;
          else
            best = std::min(best, out.labels[static_cast<size_t>(l)].depth);
        }
      }
      float& cell = out.depth_gt[static_cast<size_t>(r) * out.depth_cols + c];
      if (std::isfinite(best))
        cell = static_cast<float>(best);
      else if (unlabeled)
        cell = DomainSample::kUnlabeled;
    }
  }
  return out;
}

DomainSample random_crop(const DomainSample& sample, const CropConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.enabled) return sample;
  const int w = sample.image.width(), h = sample.image.height();
  const double s = uniform(rng, cfg.min_scale, 1.0);
  const double cw = s * w, ch = s * h;
  const double ox = uniform(rng, 0.0, w - cw), oy = uniform(rng, 0.0, h - ch);
  const double sx = w / cw, sy = h / ch;

  DomainSample out = sample;
  out.cam.fx = sample.cam.fx * sx;
  out.cam.fy = sample.cam.fy * sy;
  out.cam.cx = (sample.cam.cx - ox) * sx;
  out.cam.cy = (sample.cam.cy - oy) * sy;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double px = std::clamp(ox + (x + 0.5) / sx - 0.5, 0.0, w - 1.0);
      const double py = std::clamp(oy + (y + 0.5) / sy - 0.5, 0.0, h - 1.0);
      const int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = px - x0, fy = py - y0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * sample.image.at(x0, y0, c) + fx * sample.image.at(x1, y0, c)) +
                         fy * ((1 - fx) * sample.image.at(x0, y1, c) + fx * sample.image.at(x1, y1, c));
        out.image.set_unit(x, y, c, v);
      }
    }
  }
  out.labels.clear();
  for (const ObjectLabel& l : sample.labels) {
    ObjectLabel m = l;
    m.center2d = project_center(l.box3d, out.cam);
    if (m.center2d[0] < 0.0 || m.center2d[0] > 1.0 || m.center2d[1] < 0.0 || m.center2d[1] > 1.0) continue;
    const double u0 = std::clamp((l.box2d.x0() * w - ox) * sx / w, 0.0, 1.0);
    const double u1 = std::clamp((l.box2d.x1() * w - ox) * sx / w, 0.0, 1.0);
    const double v0 = std::clamp((l.box2d.y0() * h - oy) * sy / h, 0.0, 1.0);
    const double v1 = std::clamp((l.box2d.y1() * h - oy) * sy / h, 0.0, 1.0);
    if (u1 <= u0 || v1 <= v0) continue;
    m.box2d = {0.5 * (u0 + u1), 0.5 * (v0 + v1), u1 - u0, v1 - v0};
    out.labels.push_back(m);
  }
  for (int r = 0; r < out.depth_rows; ++r) {
    for (int c = 0; c < out.depth_cols; ++c) {
      const double px = ox + (c * 16 + 8) / sx;
      const double py = oy + (r * 16 + 8) / sy;
      const int sc = std::clamp(static_cast<int>(px / 16), 0, sample.depth_cols - 1);
      const int sr = std::clamp(static_cast<int>(py / 16), 0, sample.depth_rows - 1);
      out.depth_gt[static_cast<size_t>(r) * out.depth_cols + c] =
          sample.depth_gt[static_cast<size_t>(sr) * sample.depth_cols + sc];
    }
  }
  return out;
}

Difficulty difficulty_for_depth(double depth, const std::array<double, 2>& thresholds) {
  if (depth < thresholds[0]) return Difficulty::Easy;
  if (depth < thresholds[1]) return Difficulty::Moderate;
  return Difficulty::Hard;
}

void write_depth(const fs::path& path, int rows, int cols, const std::vector<float>& data) {
  if (data.size() != static_cast<size_t>(rows) * cols) throw ShapeError("depth map size mismatch");
  std::string buf(8 + 4 * data.size(), '\0');
  auto put32 = [&](size_t at, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) buf[at + b] = static_cast<char>((v >> (8 * b)) & 0xff);
  };
  put32(0, static_cast<std::uint32_t>(rows));
  put32(4, static_cast<std::uint32_t>(cols));
  for (size_t i = 0; i < data.size(); ++i) put32(8 + 4 * i, std::bit_cast<std::uint32_t>(data[i]));
  write_text(path, buf);
}

std::vector<float> read_depth(const fs::path& path, int& rows, int& cols) {
  const std::string buf = read_text(path);
  if (buf.size() < 8) throw IoError("truncated depth file " + path.string());
  auto get32 = [&](size_t at) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + b])) << (8 * b);
    return v;
  };
  rows = static_cast<int>(get32(0));
  cols = static_cast<int>(get32(4));
  const size_t n = static_cast<size_t>(rows) * cols;
  if (buf.size() != 8 + 4 * n) throw IoError("depth file size mismatch " + path.string());
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(get32(8 + 4 * i));
  return out;
}

std::string labels_to_json(const DomainSample& sample) {
  json objects = json::array();
  for (const ObjectLabel& l : sample.labels) {
    objects.push_back({{"id", l.object_id},
                       {"category", "Car"},
                       {"center", l.box3d.center},
                       {"dims", l.box3d.dims},
                       {"yaw", l.box3d.yaw},
                       {"difficulty", std::string(to_string(l.box3d.difficulty))},
                       {"box2d", {l.box2d.cx, l.box2d.cy, l.box2d.w, l.box2d.h}},
                       {"center2d", l.center2d},
                       {"depth", l.depth},
                       {"albedo", l.albedo}});
  }
  json j = {{"id", sample.id},
            {"domain", std::string(to_string(sample.domain))},
            {"camera", camera_to_json(sample.cam)},
            {"objects", objects}};
  return j.dump(1);
}

void labels_from_json(const std::string& text, DomainSample& sample) {
  try {
    const json j = json::parse(text);
    sample.id = j.at("id");
    sample.domain = domain_from_string(j.at("domain").get<std::string>());
    sample.cam = camera_from_json(j.at("camera"));
    sample.labels.clear();
    for (const json& o : j.at("objects")) {
      ObjectLabel l;
      l.object_id = o.at("id");
      l.box3d.center = o.at("center").get<Vec3>();
      l.box3d.dims = o.at("dims").get<Vec3>();
      l.box3d.yaw = o.at("yaw");
      l.box3d.difficulty = difficulty_from_string(o.at("difficulty").get<std::string>());
      const auto b = o.at("box2d").get<std::array<double, 4>>();
      l.box2d = {b[0], b[1], b[2], b[3]};
      l.center2d = o.at("center2d").get<Vec2>();
      l.depth = o.at("depth");
      l.albedo = o.at("albedo").get<std::array<double, 3>>();
      sample.labels.push_back(l);
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed label file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("malformed label file: ") + e.what());
  }
}

std::uint32_t file_crc32(const fs::path& path) {
  const std::string buf = read_text(path);
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
}

int DatasetManifest::count(Domain d, const std::string& split) const {
  return static_cast<int>(std::count_if(entries.begin(), entries.end(),
                                        [&](const ManifestEntry& e) { return e.domain == d && e.split == split; }));
}

std::vector<const ManifestEntry*> DatasetManifest::select(Domain d, const std::string& split) const {
  std::vector<const ManifestEntry*> out;
  for (const ManifestEntry& e : entries)
    if (e.domain == d && e.split == split) out.push_back(&e);
  return out;
}

DatasetManifest build_dataset(const DatasetConfig& config) {
  config.scene.validate();
  if (config.n_roadside_train < 0 || config.n_vehicle_train < 0 || config.n_roadside_val < 0 ||
      config.n_vehicle_val < 0)
    throw std::invalid_argument("sample counts must be non-negative");
  std::error_code ec;
  for (const char* d : {"vehicle", "roadside"})
    for (const char* s : {"train", "val"})
      for (const char* k : {"images", "labels", "depth"}) {
        fs::create_directories(config.root / d / s / k, ec);
        if (ec) throw IoError("cannot create " + (config.root / d / s / k).string() + ": " + ec.message());
      }

  DatasetManifest manifest;
  manifest.root = config.root;
  manifest.image_width = config.rig.image_width;
  manifest.image_height = config.rig.image_height;
  std::vector<DomainSample> pending;  // labels awaiting difficulty, image already written

  const std::pair<const char*, std::array<int, 2>> splits[] = {
      {"train", {config.n_vehicle_train, config.n_roadside_train}},
      {"val", {config.n_vehicle_val, config.n_roadside_val}}};
  for (const auto& [split, counts] : splits) {
    const std::uint64_t split_key = std::string(split) == "train" ? 1 : 2;
    const int n_scenes = std::max(counts[0], counts[1]);
    for (int i = 0; i < n_scenes; ++i) {
      std::vector<DomainSample> views;
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 1000) throw EmptyView("no scene with a visible object after 1000 draws");
        const std::uint64_t scene_seed = mix(mix(config.seed, split_key), mix(static_cast<std::uint64_t>(i), attempt));
        views.clear();
        try {
          const Scene scene = generate_scene(config.scene, scene_seed);
          for (Domain d : {Domain::Vehicle, Domain::Roadside}) {
            if (i >= counts[static_cast<size_t>(d)]) continue;
            views.push_back(render_view(scene, make_camera(config.rig, d, scene_seed), d, rig_offset(config.rig, d),
                                        config.min_depth, config.max_depth));
          }
          break;
        } catch (const EmptyView&) {
        } catch (const PlacementFailure&) {
        }
      }
      for (DomainSample& v : views) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06d", i);
        v.id = std::string(split) + "_" + name;
        const std::string base = std::string(to_string(v.domain)) + "/" + split + "/";
        ManifestEntry e;
        e.id = v.id;
        e.domain = v.domain;
        e.split = split;
        e.image = base + "images/" + name + ".png";
        e.label = base + "labels/" + name + ".json";
        e.depth = base + "depth/" + name + ".bin";
        write_png(config.root / e.image, v.image);
        write_depth(config.root / e.depth, v.depth_rows, v.depth_cols, v.depth_gt);
        v.image = Image();
        manifest.entries.push_back(e);
        pending.push_back(std::move(v));
      }
    }
  }

  for (Domain d : {Domain::Vehicle, Domain::Roadside}) {
    std::vector<double> depths;
    for (size_t k = 0; k < pending.size(); ++k)
      if (pending[k].domain == d && manifest.entries[k].split == "train")
        for (const ObjectLabel& l : pending[k].labels) depths.push_back(l.depth);
    manifest.difficulty_thresholds[static_cast<size_t>(d)] = {quantile(depths, 1.0 / 3.0), quantile(depths, 2.0 / 3.0)};
  }
  for (size_t k = 0; k < pending.size(); ++k) {
    DomainSample& s = pending[k];
    const auto& th = manifest.difficulty_thresholds[static_cast<size_t>(s.domain)];
    for (ObjectLabel& l : s.labels) l.box3d.difficulty = difficulty_for_depth(l.depth, th);
    ManifestEntry& e = manifest.entries[k];
    write_text(config.root / e.label, labels_to_json(s));
    e.image_crc = file_crc32(config.root / e.image);
    e.label_crc = file_crc32(config.root / e.label);
    e.depth_crc = file_crc32(config.root / e.depth);
  }
  write_manifest(manifest);
  return manifest;
}

void write_manifest(const DatasetManifest& m) {
  json entries = json::array();
  for (const ManifestEntry& e : m.entries) {
    entries.push_back({{"id", e.id},
                       {"domain", std::string(to_string(e.domain))},
                       {"split", e.split},
                       {"image", e.image},
                       {"label", e.label},
                       {"depth", e.depth},
                       {"crc32", {{"image", e.image_crc}, {"label", e.label_crc}, {"depth", e.depth_crc}}}});
  }
  json counts;
  for (Domain d : {Domain::Vehicle, Domain::Roadside})
    counts[std::string(to_string(d))] = {{"train", m.count(d, "train")}, {"val", m.count(d, "val")}};
  const json j = {{"format", 1},
                  {"image_width", m.image_width},
                  {"image_height", m.image_height},
                  {"difficulty_thresholds",
                   {{"vehicle", m.difficulty_thresholds[0]}, {"roadside", m.difficulty_thresholds[1]}}},
                  {"counts", counts},
                  {"entries", entries}};
  write_text(m.root / "manifest.json", j.dump(1));
}

DatasetManifest read_manifest(const fs::path& root) {
  const std::string text = read_text(root / "manifest.json");
  DatasetManifest m;
  m.root = root;
  try {
    const json j = json::parse(text);
    m.image_width = j.at("image_width");
    m.image_height = j.at("image_height");
    m.difficulty_thresholds[0] = j.at("difficulty_thresholds").at("vehicle").get<std::array<double, 2>>();
    m.difficulty_thresholds[1] = j.at("difficulty_thresholds").at("roadside").get<std::array<double, 2>>();
    for (const json& o : j.at("entries")) {
      ManifestEntry e;
      e.id = o.at("id");
      e.domain = domain_from_string(o.at("domain").get<std::string>());
      e.split = o.at("split");
      e.image = o.at("image");
      e.label = o.at("label");
      e.depth = o.at("depth");
      e.image_crc = o.at("crc32").at("image");
      e.label_crc = o.at("crc32").at("label");
      e.depth_crc = o.at("crc32").at("depth");
      m.entries.push_back(e);
    }
    for (Domain d : {Domain::Vehicle, Domain::Roadside})
      for (const char* s : {"train", "val"})
        if (j.at("counts").at(std::string(to_string(d))).at(s).get<int>() != m.count(d, s))
          throw IoError("manifest counts do not match its entries");
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

DomainSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  DomainSample s;
  labels_from_json(read_text(manifest.root / entry.label), s);
  s.image = read_png(manifest.root / entry.image);
  s.depth_gt = read_depth(manifest.root / entry.depth, s.depth_rows, s.depth_cols);
  return s;
}

std::vector<DomainSample> load_split(const DatasetManifest& manifest, Domain domain, const std::string& split) {
  std::vector<DomainSample> out;
  for (const ManifestEntry* e : manifest.select(domain, split)) out.push_back(load_sample(manifest, *e));
  return out;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace iroam
