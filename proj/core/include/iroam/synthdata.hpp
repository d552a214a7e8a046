#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "iroam/geometry.hpp"
#include "iroam/image.hpp"

namespace iroam {

/// Placement parameters of synthetic road scenes. World frame is the level
/// vehicle rig: x right, y down, z forward, origin on the ground.
struct SceneConfig {
  int min_objects = 1;
  int max_objects = 5;
  std::vector<double> lane_centers{-3.5, 0.0, 3.5, 7.0};
  double z_min = 5.0;
  double z_max = 30.0;
  double yaw_jitter = 0.2;
  double lateral_jitter = 0.4;
  double margin = 0.6;  // minimum BEV clearance between objects, meters
  int max_attempts = 200;
  std::array<double, 2> height_range{1.45, 1.60};
  std::array<double, 2> width_range{1.70, 1.85};
  std::array<double, 2> length_range{4.00, 4.50};

  void validate() const;
};

struct SceneObject {
  int id = 0;
  Box3D box;  // world frame
  std::array<double, 3> albedo{0.5, 0.5, 0.5};
};

struct Scene {
  std::vector<SceneObject> objects;
  double road_extent = 0.0;
  std::uint64_t seed = 0;
};

/// Deterministic for a fixed seed. Throws PlacementFailure when an object
/// cannot be placed without overlap after `max_attempts` draws.
Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

/// Camera setup of the two domains.
struct RigConfig {
  int image_width = 256;
  int image_height = 160;
  double focal_scale = 0.9;  // fx = fy = focal_scale * image_width
  double vehicle_height = 1.5;
  double vehicle_pitch = 0.0;
  std::array<double, 2> roadside_height_range{5.0, 7.0};
  std::array<double, 2> roadside_pitch_range{-0.349065850398866, -0.174532925199433};  // -20 to -10 deg
  std::array<double, 2> roadside_offset{6.0, -10.0};  // world (x, z) of the roadside rig origin
};

/// Camera model of a domain. The roadside height and pitch are drawn from
/// the configured ranges with a generator seeded by `scene_seed`.
CameraModel make_camera(const RigConfig& rig, Domain domain, std::uint64_t scene_seed);
/// World (x, z) position of a domain's rig origin.
Vec2 rig_offset(const RigConfig& rig, Domain domain);

/// One rendered view with its supervision.
struct DomainSample {
  std::string id;
  Domain domain = Domain::Vehicle;
  CameraModel cam;
  Image image;
  std::vector<ObjectLabel> labels;  // boxes in the domain rig frame
  int depth_rows = 0;
  int depth_cols = 0;
  /// Per 16x16 cell: nearest labeled depth in meters, kBackground for
  /// empty cells, kUnlabeled for cells covered only by unlabeled objects.
  std::vector<float> depth_gt;

  static constexpr float kBackground = -1.0f;
  static constexpr float kUnlabeled = 0.0f;

  bool operator==(const DomainSample&) const = default;
};

/// Painter's-algorithm rendering of flat-shaded cuboids over a ground and
/// sky background. Labels keep objects whose projected center is inside the
/// image and whose depth lies in [min_depth, max_depth]. Throws EmptyView
/// when no label survives.
DomainSample render_view(const Scene& scene, const CameraModel& cam, Domain domain, Vec2 offset,
                         double min_depth = 2.0, double max_depth = 65.0);

/// Random crop of a fraction of the image resized back to full size; the
/// intrinsics and labels follow the crop, labels whose center leaves the
/// image are dropped.
struct CropConfig {
  bool enabled = false;
  double min_scale = 0.8;  // crop side fraction
};
DomainSample random_crop(const DomainSample& sample, const CropConfig& cfg, std::mt19937_64& rng);

struct DatasetConfig {
  std::filesystem::path root;
  int n_roadside_train = 40;
  int n_vehicle_train = 160;
  int n_roadside_val = 20;
  int n_vehicle_val = 20;
  std::uint64_t seed = 0;
  double min_depth = 2.0;
  double max_depth = 65.0;
  SceneConfig scene;
  RigConfig rig;
};

struct ManifestEntry {
  std::string id;
  Domain domain = Domain::Vehicle;
  std::string split;  // "train" or "val"
  std::string image;  // paths relative to the root
  std::string label;
  std::string depth;
  std::uint32_t image_crc = 0;
  std::uint32_t label_crc = 0;
  std::uint32_t depth_crc = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  int image_width = 0;
  int image_height = 0;
  // Depth terciles of each domain's train split, indexed by Domain.
  std::array<std::array<double, 2>, 2> difficulty_thresholds{};
  std::vector<ManifestEntry> entries;

  int count(Domain d, const std::string& split) const;
  std::vector<const ManifestEntry*> select(Domain d, const std::string& split) const;
};

/// Writes images, labels, depth maps and manifest.json under config.root.
/// Scenes shared by both domains are rendered from both cameras. Throws
/// IoError when the root is not writable.
DatasetManifest build_dataset(const DatasetConfig& config);

DatasetManifest read_manifest(const std::filesystem::path& root);
void write_manifest(const DatasetManifest& manifest);
DomainSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);
std::vector<DomainSample> load_split(const DatasetManifest& manifest, Domain domain, const std::string& split);

/// Easy below the first tercile, moderate below the second, hard otherwise.
Difficulty difficulty_for_depth(double depth, const std::array<double, 2>& thresholds);

/// Binary depth map: uint32 rows, uint32 cols, then little-endian float32
/// row-major.
void write_depth(const std::filesystem::path& path, int rows, int cols, const std::vector<float>& data);
std::vector<float> read_depth(const std::filesystem::path& path, int& rows, int& cols);

std::string labels_to_json(const DomainSample& sample);
/// Fills id, domain, cam and labels of `sample` from a label file body.
void labels_from_json(const std::string& text, DomainSample& sample);

std::uint32_t file_crc32(const std::filesystem::path& path);

/// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b);

}  // namespace iroam
