#include "iroam/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "iroam/errors.hpp"

namespace iroam {

namespace {

struct Entry {
  const char* key;
  ConfigSection section;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) + "': expected " +
                    expected);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) bad_value(key, v, "a finite number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view v) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  size_t start = 0;
  while (true) {
    const size_t comma = v.find(',', start);
    out.push_back(parse_number<T>(key, trim(v.substr(start, comma - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>)
      out += format_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

constexpr double kDeg = std::numbers::pi / 180.0;

#define INT_ENTRY(KEY, SECTION, FIELD)                                                            \
  Entry {                                                                                         \
    KEY, SECTION, [](RunConfig& c, std::string_view v) { c.FIELD = parse_number<int>(KEY, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                \
  }
#define DOUBLE_ENTRY(KEY, SECTION, FIELD)                                                            \
  Entry {                                                                                            \
    KEY, SECTION, [](RunConfig& c, std::string_view v) { c.FIELD = parse_number<double>(KEY, v); }, \
        [](const RunConfig& c) { return format_double(c.FIELD); }                                    \
  }
#define BOOL_ENTRY(KEY, SECTION, FIELD)                                                    \
  Entry {                                                                                  \
    KEY, SECTION, [](RunConfig& c, std::string_view v) { c.FIELD = parse_bool(KEY, v); }, \
        [](const RunConfig& c) { return bool_text(c.FIELD); }                              \
  }

const std::vector<Entry>& schema() {
  using S = ConfigSection;
  static const std::vector<Entry> entries = {
      {"dataset_root", S::Data, [](RunConfig& c, std::string_view v) { c.data.root = std::string(v); },
       [](const RunConfig& c) { return c.data.root.string(); }},
      INT_ENTRY("n_roadside_train", S::Data, data.n_roadside_train),
      INT_ENTRY("n_vehicle_train", S::Data, data.n_vehicle_train),
      INT_ENTRY("n_roadside_val", S::Data, data.n_roadside_val),
      INT_ENTRY("n_vehicle_val", S::Data, data.n_vehicle_val),
      {"data_seed", S::Data, [](RunConfig& c, std::string_view v) { c.data.seed = parse_number<std::uint64_t>("data_seed", v); },
       [](const RunConfig& c) { return std::to_string(c.data.seed); }},
      DOUBLE_ENTRY("min_depth", S::Data, data.min_depth),
      DOUBLE_ENTRY("max_depth", S::Data, data.max_depth),
      INT_ENTRY("min_objects", S::Data, data.scene.min_objects),
      INT_ENTRY("max_objects", S::Data, data.scene.max_objects),
      DOUBLE_ENTRY("z_min", S::Data, data.scene.z_min),
      DOUBLE_ENTRY("z_max", S::Data, data.scene.z_max),
      DOUBLE_ENTRY("yaw_jitter", S::Data, data.scene.yaw_jitter),
      DOUBLE_ENTRY("car_height_min", S::Data, data.scene.height_range[0]),
      DOUBLE_ENTRY("car_height_max", S::Data, data.scene.height_range[1]),
      DOUBLE_ENTRY("car_width_min", S::Data, data.scene.width_range[0]),
      DOUBLE_ENTRY("car_width_max", S::Data, data.scene.width_range[1]),
      DOUBLE_ENTRY("car_length_min", S::Data, data.scene.length_range[0]),
      DOUBLE_ENTRY("car_length_max", S::Data, data.scene.length_range[1]),
      DOUBLE_ENTRY("focal_scale", S::Data, data.rig.focal_scale),
      DOUBLE_ENTRY("vehicle_height", S::Data, data.rig.vehicle_height),
      DOUBLE_ENTRY("roadside_height_min", S::Data, data.rig.roadside_height_range[0]),
      DOUBLE_ENTRY("roadside_height_max", S::Data, data.rig.roadside_height_range[1]),
      {"roadside_pitch_min_deg", S::Data,
       [](RunConfig& c, std::string_view v) {
         c.data.rig.roadside_pitch_range[0] = parse_number<double>("roadside_pitch_min_deg", v) * kDeg;
       },
       [](const RunConfig& c) { return format_double(c.data.rig.roadside_pitch_range[0] / kDeg); }},
      {"roadside_pitch_max_deg", S::Data,
       [](RunConfig& c, std::string_view v) {
         c.data.rig.roadside_pitch_range[1] = parse_number<double>("roadside_pitch_max_deg", v) * kDeg;
       },
       [](const RunConfig& c) { return format_double(c.data.rig.roadside_pitch_range[1] / kDeg); }},
      DOUBLE_ENTRY("roadside_offset_x", S::Data, data.rig.roadside_offset[0]),
      DOUBLE_ENTRY("roadside_offset_z", S::Data, data.rig.roadside_offset[1]),
      // The image size drives both the renderer and the network input.
      {"image_width", S::Train,
       [](RunConfig& c, std::string_view v) { c.data.rig.image_width = c.train.model.image_width = parse_number<int>("image_width", v); },
       [](const RunConfig& c) { return std::to_string(c.train.model.image_width); }},
      {"image_height", S::Train,
       [](RunConfig& c, std::string_view v) {
         c.data.rig.image_height = c.train.model.image_height = parse_number<int>("image_height", v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.model.image_height); }},
      {"mode", S::Train, [](RunConfig& c, std::string_view v) {
         try {
           c.train.mode = train_mode_from_string(v);
         } catch (const std::invalid_argument&) {
           bad_value("mode", v, "only_road, only_veh, addon or iroam");
         }
       },
       [](const RunConfig& c) { return std::string(to_string(c.train.mode)); }},
      INT_ENTRY("epochs", S::Train, train.epochs),
      INT_ENTRY("batch_size", S::Train, train.batch_size),
      DOUBLE_ENTRY("lr", S::Train, train.lr),
      DOUBLE_ENTRY("weight_decay", S::Train, train.weight_decay),
      {"lr_decay_epochs", S::Train,
       [](RunConfig& c, std::string_view v) { c.train.lr_decay_epochs = parse_list<int>("lr_decay_epochs", v); },
       [](const RunConfig& c) { return join(c.train.lr_decay_epochs); }},
      DOUBLE_ENTRY("lr_decay_factor", S::Train, train.lr_decay_factor),
      DOUBLE_ENTRY("grad_clip", S::Train, train.grad_clip),
      DOUBLE_ENTRY("lambda_cls", S::Train, train.lambdas.cls),
      DOUBLE_ENTRY("lambda_center3d", S::Train, train.lambdas.center3d),
      DOUBLE_ENTRY("lambda_edge", S::Train, train.lambdas.edge),
      DOUBLE_ENTRY("lambda_giou", S::Train, train.lambdas.giou),
      DOUBLE_ENTRY("lambda_dim", S::Train, train.lambdas.dim),
      DOUBLE_ENTRY("lambda_ori", S::Train, train.lambdas.ori),
      DOUBLE_ENTRY("lambda_depth", S::Train, train.lambdas.depth),
      {"seed", S::Train, [](RunConfig& c, std::string_view v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"pairing", S::Train, [](RunConfig& c, std::string_view v) {
         try {
           c.train.pairing = pairing_from_string(v);
         } catch (const std::invalid_argument&) {
           bad_value("pairing", v, "cycle_shorter or sample_with_replacement");
         }
       },
       [](const RunConfig& c) { return std::string(to_string(c.train.pairing)); }},
      INT_ENTRY("epoch_pairs", S::Train, train.epoch_pairs),
      DOUBLE_ENTRY("roadside_fraction", S::Train, train.roadside_fraction),
      BOOL_ENTRY("use_cl", S::Train, train.use_cl),
      BOOL_ENTRY("cl_decouple", S::Train, train.cl.decouple),
      {"cl_normalization", S::Train, [](RunConfig& c, std::string_view v) {
         if (v == "none") c.train.cl.normalization = ContrastiveNormalization::None;
         else if (v == "k") c.train.cl.normalization = ContrastiveNormalization::ByK;
         else if (v == "k2") c.train.cl.normalization = ContrastiveNormalization::ByKSquared;
         else bad_value("cl_normalization", v, "none, k or k2");
       },
       [](const RunConfig& c) {
         switch (c.train.cl.normalization) {
           case ContrastiveNormalization::ByK: return std::string("k");
           case ContrastiveNormalization::ByKSquared: return std::string("k2");
           default: return std::string("none");
         }
       }},
      BOOL_ENTRY("crop", S::Train, train.crop.enabled),
      DOUBLE_ENTRY("crop_min_scale", S::Train, train.crop.min_scale),
      INT_ENTRY("val_every", S::Train, train.val_every),
      DOUBLE_ENTRY("score_threshold", S::Train, train.eval.score_threshold),
      {"iou_thresholds", S::Train,
       [](RunConfig& c, std::string_view v) { c.train.eval.iou_thresholds = parse_list<double>("iou_thresholds", v); },
       [](const RunConfig& c) { return join(c.train.eval.iou_thresholds); }},
      INT_ENTRY("channels", S::Train, train.model.channels),
      INT_ENTRY("num_queries", S::Train, train.model.num_queries),
      INT_ENTRY("depth_bins", S::Train, train.model.depth_bins),
      INT_ENTRY("attention_heads", S::Train, train.model.attention_heads),
      INT_ENTRY("ffn_hidden", S::Train, train.model.ffn_hidden),
      INT_ENTRY("content_encoder_blocks", S::Train, train.model.content_encoder_blocks),
      INT_ENTRY("depth_encoder_blocks", S::Train, train.model.depth_encoder_blocks),
      INT_ENTRY("decoder_blocks", S::Train, train.model.decoder_blocks),
      BOOL_ENTRY("heads_use_full_query", S::Train, train.model.heads_use_full_query),
      BOOL_ENTRY("geometric_depth", S::Train, train.model.geometric_depth),
      BOOL_ENTRY("mask_background", S::Train, train.model.mask_background),
      DOUBLE_ENTRY("focal_gamma", S::Train, train.model.focal_gamma),
  };
  return entries;
}

const Entry* find_entry(std::string_view key) {
  for (const Entry& e : schema())
    if (key == e.key) return &e;
  return nullptr;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<std::string> config_keys(ConfigSection section) {
  std::vector<std::string> out;
  for (const Entry& e : schema())
    if (e.section == section) out.emplace_back(e.key);
  return out;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  const Entry* e = find_entry(key);
  if (!e) throw ConfigError("unknown config key '" + std::string(key) + "'");
  e->set(cfg, trim(value));
}

std::string get_setting(const RunConfig& cfg, std::string_view key) {
  const Entry* e = find_entry(key);
  if (!e) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return e->get(cfg);
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
  size_t start = 0;
  int line_no = 0;
  while (start <= text.size()) {
    const size_t nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++line_no;
    if (const size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const size_t eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) + "'");
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  apply_config_text(cfg, ss.str());
}

std::string dump_config(const RunConfig& cfg, std::vector<ConfigSection> sections) {
  std::string out;
  for (const Entry& e : schema()) {
    if (std::find(sections.begin(), sections.end(), e.section) == sections.end()) continue;
    out += e.key;
    out += "=";
    out += e.get(cfg);
    out += "\n";
  }
  return out;
}

}  // namespace iroam
