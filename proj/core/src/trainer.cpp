#include "iroam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "iroam/config.hpp"
#include "iroam/errors.hpp"
#include "json.hpp"

namespace iroam {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::OnlyRoad: return "only_road";
    case TrainMode::OnlyVeh: return "only_veh";
    case TrainMode::Addon: return "addon";
    case TrainMode::Iroam: return "iroam";
  }
  return "iroam";
}

std::string_view to_string(Pairing p) {
  return p == Pairing::CycleShorter ? "cycle_shorter" : "sample_with_replacement";
}

TrainMode train_mode_from_string(std::string_view s) {
  for (TrainMode m : {TrainMode::OnlyRoad, TrainMode::OnlyVeh, TrainMode::Addon, TrainMode::Iroam})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown training mode: " + std::string(s));
}

Pairing pairing_from_string(std::string_view s) {
  for (Pairing p : {Pairing::CycleShorter, Pairing::SampleWithReplacement})
    if (s == to_string(p)) return p;
  throw std::invalid_argument("unknown pairing: " + std::string(s));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) throw ConfigError("lr_decay_factor must lie in (0, 1)");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (epoch_pairs < 0) throw ConfigError("epoch_pairs must be non-negative");
  if (!(roadside_fraction > 0.0 && roadside_fraction <= 1.0)) throw ConfigError("roadside_fraction must lie in (0, 1]");
  if (val_every < 0) throw ConfigError("val_every must be non-negative");
  if (model.channels % 4 != 0) throw ConfigError("channels must be divisible by 4");
  if (model.channels % model.attention_heads != 0) throw ConfigError("channels must be divisible by attention_heads");
  if (model.image_width % 32 != 0 || model.image_height % 32 != 0)
    throw ConfigError("image_width and image_height must be divisible by 32");
  if (model.num_queries < 1) throw ConfigError("num_queries must be positive");
  if (crop.enabled && !(crop.min_scale > 0.0 && crop.min_scale <= 1.0))
    throw ConfigError("crop_min_scale must lie in (0, 1]");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int d : cfg.lr_decay_epochs)
    if (epoch >= d) lr *= cfg.lr_decay_factor;
  return lr;
}

BranchLoss branch_loss(nn::Graph& g, const BranchOutput& out, const DomainSample& sample, const TrainConfig& cfg,
                       const DepthBins& bins) {
  BranchLoss b;
  b.dmap = depth_map_loss(g, out.depth_logits, sample.depth_gt, bins, cfg.model.focal_gamma, cfg.model.mask_background);
  b.k = static_cast<int>(sample.labels.size());
  if (b.k > 0) b.match = hungarian(matching_cost(out.heads, sample.labels, cfg.lambdas, cfg.model.focal_gamma));
  b.detail = pair_loss(g, out.heads, sample.labels, b.match, cfg.lambdas, cfg.model.focal_gamma);
  b.pair = nn::scale(b.detail.total, 1.0 / std::max(b.k, 1));
  return b;
}

LossBreakdown overall_loss(nn::Graph& g, const BranchLoss* vehicle, const BranchLoss* roadside,
                           std::optional<nn::Var> l_cl) {
  LossBreakdown lb;
  std::vector<nn::Var> terms;
  if (vehicle) {
    lb.l_pair_v = vehicle->pair.item();
    lb.l_dmap_v = vehicle->dmap.item();
    lb.k_v = vehicle->k;
    terms.push_back(vehicle->pair);
    terms.push_back(vehicle->dmap);
  }
  if (roadside) {
    lb.l_pair_r = roadside->pair.item();
    lb.l_dmap_r = roadside->dmap.item();
    lb.k_r = roadside->k;
    terms.push_back(roadside->pair);
    terms.push_back(roadside->dmap);
  }
  if (l_cl) {
    lb.l_cl = l_cl->item();
    lb.cl_active = true;
    terms.push_back(*l_cl);
  }
  if (terms.empty()) {
    lb.total_var = g.constant(nn::Tensor::scalar(0.0));
  } else {
    const std::vector<double> ones(terms.size(), 1.0);
    lb.total_var = nn::weighted_sum(terms, ones);
  }
  return lb;
}

LossBreakdown item_loss(nn::Graph& g, const Detector& det, const TrainConfig& cfg, const DomainSample* vehicle,
                        const DomainSample* roadside) {
  if (!vehicle && !roadside) throw std::invalid_argument("item_loss needs at least one sample");
  const DepthBins& bins = det.encoder().bins();
  std::optional<BranchOutput> ov, orr;
  std::optional<BranchLoss> bv, br;
  if (vehicle) {
    ov = det.forward(g, vehicle->image, Domain::Vehicle);
    bv = branch_loss(g, *ov, *vehicle, cfg, bins);
  }
  if (roadside) {
    orr = det.forward(g, roadside->image, Domain::Roadside);
    br = branch_loss(g, *orr, *roadside, cfg, bins);
  }
  std::optional<nn::Var> cl;
  if (cfg.mode == TrainMode::Iroam && cfg.use_cl && bv && br && bv->k > 0 && br->k > 0) {
    try {
      const DomainSamples sr = sample_queries(br->match);
      const DomainSamples sv = sample_queries(bv->match);
      cl = contrastive_loss(merge_samples(orr->queries, sr, ov->queries, sv), cfg.cl);
    } catch (const TooFewQueries&) {
      cl.reset();
    }
  }
  return overall_loss(g, bv ? &*bv : nullptr, br ? &*br : nullptr, cl);
}

// ---------------------------------------------------------------------------

PairIterator::PairIterator(int n_vehicle, int n_roadside, Pairing pairing, std::uint64_t seed, int epoch_length)
    : n_v_(n_vehicle), n_r_(n_roadside), pairing_(pairing), rng_(seed) {
  if (n_vehicle <= 0 || n_roadside <= 0) throw EmptyDomain("pairing needs samples from both domains");
  epoch_length_ = epoch_length > 0 ? epoch_length : std::max(n_vehicle, n_roadside);
}

int PairIterator::draw(Cursor& c, int n) {
  if (c.pos >= c.order.size()) {
    c.order.resize(static_cast<size_t>(n));
    std::iota(c.order.begin(), c.order.end(), 0);
    std::shuffle(c.order.begin(), c.order.end(), rng_);
    c.pos = 0;
  }
  return c.order[c.pos++];
}

std::vector<std::pair<int, int>> PairIterator::next_epoch() {
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<size_t>(epoch_length_));
  const bool vehicle_larger = n_v_ >= n_r_;
  for (int i = 0; i < epoch_length_; ++i) {
    if (pairing_ == Pairing::CycleShorter) {
      const int v = draw(v_, n_v_);
      const int r = draw(r_, n_r_);
      out.emplace_back(v, r);
    } else if (vehicle_larger) {
      const int v = draw(v_, n_v_);
      out.emplace_back(v, std::uniform_int_distribution<int>(0, n_r_ - 1)(rng_));
    } else {
      const int r = draw(r_, n_r_);
      out.emplace_back(std::uniform_int_distribution<int>(0, n_v_ - 1)(rng_), r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

AdamW::AdamW(nn::ParameterSet& params, const TrainConfig& cfg)
    : params_(params.all()),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps),
      wd_(cfg.weight_decay) {
  for (nn::Parameter* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter& p = *params_[i];
    nn::Tensor& m = m_[i];
    nn::Tensor& v = v_[i];
    const bool has_grad = p.grad.size() == p.value.size();
    for (size_t k = 0; k < p.value.size(); ++k) {
      const double gk = has_grad ? p.grad[k] : 0.0;
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      p.value[k] -= lr * (update + wd_ * p.value[k]);
    }
  }
}

double clip_grad_norm(nn::ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (nn::Parameter* p : params.all())
    for (size_t k = 0; k < p->grad.size(); ++k) sq += p->grad[k] * p->grad[k];
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (nn::Parameter* p : params.all())
      for (size_t k = 0; k < p->grad.size(); ++k) p->grad[k] *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------

namespace {

json report_json(const EvalReport& r) { return json::parse(r.to_json()); }

json losses_json(const LossBreakdown& l) {
  return {{"total", l.total()}, {"l_pair_v", l.l_pair_v}, {"l_pair_r", l.l_pair_r}, {"l_dmap_v", l.l_dmap_v},
          {"l_dmap_r", l.l_dmap_r}, {"l_cl", l.l_cl}};
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) buf_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) buf_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    buf_ += s;
  }
  void raw(const char* p, size_t n) { buf_.append(p, n); }
  void tensor(const nn::Tensor& t) {
    u32(static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (size_t i = 0; i < t.size(); ++i) f64(t[i]);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * b);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * b);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  nn::Tensor tensor() {
    const std::uint32_t nd = u32();
    if (nd > 8) throw IoError("checkpoint: implausible tensor rank");
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(u32());
    nn::Tensor t(shape);
    for (size_t i = 0; i < t.size(); ++i) t[i] = f64();
    return t;
  }
  std::string raw(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (pos_ + n > buf_.size()) throw IoError("checkpoint is truncated");
  }
  std::string buf_;
  size_t pos_ = 0;
};

constexpr char kMagic[8] = {'I', 'R', 'O', 'A', 'M', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool all_finite(nn::ParameterSet& params) {
  for (nn::Parameter* p : params.all())
    for (size_t k = 0; k < p->grad.size(); ++k)
      if (!std::isfinite(p->grad[k])) return false;
  return true;
}

}  // namespace

std::string EpochMetrics::to_json_line() const {
  json j = {{"epoch", epoch},
            {"lr", lr},
            {"steps", steps},
            {"items", items},
            {"cl_skipped", cl_skipped},
            {"branch_calls", {{"vehicle", branch_calls[0]}, {"roadside", branch_calls[1]}}},
            {"losses", losses_json(mean)},
            {"val_ap", val ? report_json(*val) : json(nullptr)}};
  return j.dump();
}

std::string config_echo(const TrainConfig& cfg) {
  RunConfig rc;
  rc.train = cfg;
  return dump_config(rc, {ConfigSection::Train});
}

void save_checkpoint(const fs::path& path, const Detector& det, const AdamW* opt, const std::string& config_text,
                     const std::mt19937_64& rng, int epoch) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(epoch));
  w.u64(static_cast<std::uint64_t>(opt ? opt->steps() : 0));
  w.str(config_text);
  std::ostringstream rs;
  rs << rng;
  w.str(rs.str());
  const auto params = det.parameters().all();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const nn::Parameter* p : params) {
    w.str(p->name);
    w.tensor(p->value);
  }
  w.u32(opt ? 1 : 0);
  if (opt) {
    auto& o = const_cast<AdamW&>(*opt);
    for (size_t i = 0; i < params.size(); ++i) {
      w.tensor(o.first_moments()[i]);
      w.tensor(o.second_moments()[i]);
    }
  }
  write_file(path, w.data());
}

namespace {

CheckpointInfo read_header(Reader& r, const fs::path& path) {
  if (r.raw(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw IoError("not a checkpoint file: " + path.string());
  CheckpointInfo info;
  info.version = static_cast<int>(r.u32());
  if (info.version != static_cast<int>(kCheckpointVersion))
    throw IoError("unsupported checkpoint version " + std::to_string(info.version));
  info.epoch = static_cast<int>(r.u32());
  info.steps = static_cast<long>(r.u64());
  info.config_text = r.str();
  info.rng_state = r.str();
  return info;
}

}  // namespace

CheckpointInfo peek_checkpoint(const fs::path& path) {
  Reader r(read_file(path));
  return read_header(r, path);
}

CheckpointInfo load_checkpoint(const fs::path& path, Detector& det, AdamW* opt) {
  Reader r(read_file(path));
  CheckpointInfo info = read_header(r, path);
  auto params = det.parameters().all();
  const std::uint32_t n = r.u32();
  if (n != params.size()) throw IoError("checkpoint parameter count does not match the model");
  std::vector<nn::Tensor> values;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    nn::Tensor t = r.tensor();
    if (name != params[i]->name || t.shape() != params[i]->value.shape())
      throw IoError("checkpoint parameter '" + name + "' does not match the model");
    values.push_back(std::move(t));
  }
  const bool has_opt = r.u32() != 0;
  std::vector<nn::Tensor> moments;
  if (has_opt)
    for (std::uint32_t i = 0; i < 2 * n; ++i) moments.push_back(r.tensor());
  if (!r.done()) throw IoError("trailing bytes in checkpoint");
  for (std::uint32_t i = 0; i < n; ++i) params[i]->value = std::move(values[i]);
  if (opt && has_opt) {
    for (std::uint32_t i = 0; i < n; ++i) {
      opt->first_moments()[i] = std::move(moments[2 * i]);
      opt->second_moments()[i] = std::move(moments[2 * i + 1]);
    }
    opt->set_steps(info.steps);
  }
  return info;
}

// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const fs::path& out_dir,
                  const EpochCallback& on_epoch) {
  std::vector<DomainSample> vehicle, roadside;
  if (cfg.mode != TrainMode::OnlyRoad) vehicle = load_split(manifest, Domain::Vehicle, "train");
  if (cfg.mode != TrainMode::OnlyVeh) {
    auto entries = manifest.select(Domain::Roadside, "train");
    const auto keep = static_cast<size_t>(std::ceil(cfg.roadside_fraction * static_cast<double>(entries.size()) - 1e-9));
    entries.resize(std::min(entries.size(), keep));
    for (const ManifestEntry* e : entries) roadside.push_back(load_sample(manifest, *e));
  }
  const Domain target = cfg.mode == TrainMode::OnlyVeh ? Domain::Vehicle : Domain::Roadside;
  const std::vector<DomainSample> val = load_split(manifest, target, "val");
  return train(cfg, vehicle, roadside, val, out_dir, on_epoch);
}

TrainResult train(const TrainConfig& cfg, const std::vector<DomainSample>& vehicle,
                  const std::vector<DomainSample>& roadside, const std::vector<DomainSample>& val,
                  const fs::path& out_dir, const EpochCallback& on_epoch, Detector* trained) {
  cfg.validate();
  const int n_v = static_cast<int>(vehicle.size());
  const int n_r = static_cast<int>(roadside.size());
  switch (cfg.mode) {
    case TrainMode::OnlyRoad:
      if (n_r == 0) throw EmptyDomain("only_road training needs roadside samples");
      break;
    case TrainMode::OnlyVeh:
      if (n_v == 0) throw EmptyDomain("only_veh training needs vehicle samples");
      break;
    case TrainMode::Addon:
      if (n_r + n_v == 0) throw EmptyDomain("addon training needs samples");
      break;
    case TrainMode::Iroam:
      if (n_r == 0 || n_v == 0) throw EmptyDomain("iroam training needs samples from both domains");
      break;
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::unique_ptr<Detector> owned;
  if (!trained) owned = std::make_unique<Detector>(cfg.model, cfg.seed);
  Detector& det = trained ? *trained : *owned;
  AdamW opt(det.parameters(), cfg);
  std::mt19937_64 rng(cfg.seed ^ 0x747261696e4c6f6fULL);
  std::optional<PairIterator> pairs;
  if (cfg.mode == TrainMode::Iroam)
    pairs.emplace(n_v, n_r, cfg.pairing, cfg.seed ^ 0x7061697273ULL, cfg.epoch_pairs > 0 ? cfg.epoch_pairs : n_r);

  TrainResult result;
  result.metrics_log = out_dir / "metrics.jsonl";
  result.checkpoint = out_dir / "checkpoint.bin";
  std::ofstream log(result.metrics_log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + result.metrics_log.string());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::vector<std::pair<int, int>> items;  // (vehicle index, roadside index), -1 when absent
    switch (cfg.mode) {
      case TrainMode::OnlyRoad:
        for (int rep = 0; rep < 2; ++rep)
          for (int i = 0; i < n_r; ++i) items.emplace_back(-1, i);
        std::shuffle(items.begin(), items.end(), rng);
        break;
      case TrainMode::OnlyVeh:
        for (int i = 0; i < n_v; ++i) items.emplace_back(i, -1);
        std::shuffle(items.begin(), items.end(), rng);
        break;
      case TrainMode::Addon:
        for (int i = 0; i < n_v; ++i) items.emplace_back(i, -1);
        for (int i = 0; i < n_r; ++i) items.emplace_back(-1, i);
        std::shuffle(items.begin(), items.end(), rng);
        break;
      case TrainMode::Iroam:
        items = pairs->next_epoch();
        break;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    det.reset_counters();
    const size_t per_step = static_cast<size_t>(cfg.mode == TrainMode::Iroam ? std::max(1, cfg.batch_size / 2)
                                                                             : cfg.batch_size);
    for (size_t start = 0; start < items.size(); start += per_step) {
      const size_t stop = std::min(items.size(), start + per_step);
      const double inv = 1.0 / static_cast<double>(stop - start);
      det.parameters().zero_grad();
      std::vector<LossBreakdown> batch_losses;
      for (size_t it = start; it < stop; ++it) {
        const auto [vi, ri] = items[it];
        std::optional<DomainSample> vc, rc;
        const DomainSample* vs = vi >= 0 ? &vehicle[static_cast<size_t>(vi)] : nullptr;
        const DomainSample* rs = ri >= 0 ? &roadside[static_cast<size_t>(ri)] : nullptr;
        if (cfg.crop.enabled) {
          if (vs) vs = &vc.emplace(random_crop(*vs, cfg.crop, rng));
          if (rs) rs = &rc.emplace(random_crop(*rs, cfg.crop, rng));
        }
        nn::Graph g;
        LossBreakdown lb = item_loss(g, det, cfg, vs, rs);
        batch_losses.push_back(lb);
        if (!std::isfinite(lb.total())) break;
        g.backward(nn::scale(lb.total_var, inv));
        em.mean.l_pair_v += lb.l_pair_v;
        em.mean.l_pair_r += lb.l_pair_r;
        em.mean.l_dmap_v += lb.l_dmap_v;
        em.mean.l_dmap_r += lb.l_dmap_r;
        em.mean.l_cl += lb.l_cl;
        if (cfg.mode == TrainMode::Iroam && cfg.use_cl && !lb.cl_active) ++em.cl_skipped;
        ++em.items;
      }
      const bool finite_loss = std::all_of(batch_losses.begin(), batch_losses.end(),
                                           [](const LossBreakdown& l) { return std::isfinite(l.total()); });
      if (!finite_loss || !all_finite(det.parameters())) {
        json dump = {{"epoch", epoch}, {"step", opt.steps()}, {"items", json::array()}};
        for (size_t it = start; it < stop; ++it) {
          const auto [vi, ri] = items[it];
          dump["items"].push_back({{"vehicle", vi >= 0 ? json(vehicle[static_cast<size_t>(vi)].id) : json(nullptr)},
                                   {"roadside", ri >= 0 ? json(roadside[static_cast<size_t>(ri)].id) : json(nullptr)}});
        }
        for (const LossBreakdown& l : batch_losses) {
          json lj = losses_json(l);
          for (auto& [k, v] : lj.items())
            if (v.is_number_float() && !std::isfinite(v.get<double>())) v = std::to_string(v.get<double>());
          dump["losses"].push_back(lj);
        }
        std::ofstream(out_dir / "nonfinite_batch.json") << dump.dump(1);
        throw NonFiniteLoss("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(opt.steps()));
      }
      clip_grad_norm(det.parameters(), cfg.grad_clip);
      opt.step(lr);
      ++em.steps;
    }
    if (em.items > 0) {
      const double s = 1.0 / em.items;
      em.mean.l_pair_v *= s;
      em.mean.l_pair_r *= s;
      em.mean.l_dmap_v *= s;
      em.mean.l_dmap_r *= s;
      em.mean.l_cl *= s;
    }
    em.branch_calls = {det.branch_calls(Domain::Vehicle), det.branch_calls(Domain::Roadside)};
    const bool last = epoch + 1 == cfg.epochs;
    const bool scheduled = cfg.val_every > 0 && (epoch + 1) % cfg.val_every == 0;
    if (!val.empty() && (last || scheduled)) em.val = evaluate(det, val, cfg.eval);
    log << em.to_json_line() << "\n";
    log.flush();
    result.history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  save_checkpoint(result.checkpoint, det, &opt, config_echo(cfg), rng, cfg.epochs);
  return result;
}

}  // namespace iroam
