#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "iroam/config.hpp"
#include "iroam/errors.hpp"
#include "iroam/evaluator.hpp"
#include "iroam/trainer.hpp"

namespace iroam::cli {

namespace fs = std::filesystem;

fs::path resolve_output(const std::string& path) {
  const fs::path p(path);
  const char* root = std::getenv(kOutputRootEnv);
  if (p.is_relative() && root && *root) return fs::path(root) / p;
  return p;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--set", c.sets, "override, key=value (repeatable)");
}

void apply_common(RunConfig& rc, const Common& c) {
  if (!c.config.empty()) apply_config_file(rc, c.config);
  for (const std::string& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(rc, s.substr(0, eq), s.substr(eq + 1));
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

template <class T>
std::vector<T> split_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(parse(item));
  return out;
}

double parse_double(const std::string& s) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("not a number: '" + s + "'");
}

std::uint64_t parse_seed(const std::string& s) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("not a seed: '" + s + "'");
}

std::string identity(const std::string& s) { return s; }

Domain target_domain(TrainMode m) { return m == TrainMode::OnlyVeh ? Domain::Vehicle : Domain::Roadside; }

void check_image_size(const DatasetManifest& m, const ModelConfig& model) {
  if (m.image_width != model.image_width || m.image_height != model.image_height)
    throw ConfigError("dataset images are " + std::to_string(m.image_width) + "x" + std::to_string(m.image_height) +
                      " but the model expects " + std::to_string(model.image_width) + "x" +
                      std::to_string(model.image_height) + " (set image_width / image_height)");
}

std::string summarize(const DatasetManifest& m) {
  std::ostringstream os;
  os << "dataset " << m.root.string() << " (" << m.image_width << "x" << m.image_height << ")\n";
  for (Domain d : {Domain::Vehicle, Domain::Roadside}) {
    const auto& th = m.difficulty_thresholds[static_cast<size_t>(d)];
    os << "  " << to_string(d) << ": train " << m.count(d, "train") << ", val " << m.count(d, "val")
       << ", depth terciles " << std::fixed << std::setprecision(2) << th[0] << " / " << th[1] << " m\n";
  }
  return os.str();
}

std::string epoch_line(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "epoch %d lr %.2e loss %.4f (pair v %.3f r %.3f, dmap v %.3f r %.3f, cl %.3f)",
                m.epoch + 1, m.lr, m.mean.total(), m.mean.l_pair_v, m.mean.l_pair_r, m.mean.l_dmap_v,
                m.mean.l_dmap_r, m.mean.l_cl);
  std::string s = buf;
  if (m.val) {
    const auto ap = m.val->at(IouKind::ThreeD, m.val->config.iou_thresholds.front(), Difficulty::Moderate);
    std::snprintf(buf, sizeof(buf), " | val AP3D mod@%.2f %s", m.val->config.iou_thresholds.front(),
                  ap ? format_double(std::round(*ap * 100) / 100).c_str() : "-");
    s += buf;
  }
  return s;
}

// Model and eval settings come from the checkpoint echo, then the user's
// config and overrides.
RunConfig config_for_checkpoint(const std::string& checkpoint, const Common& c) {
  RunConfig rc;
  if (!checkpoint.empty()) apply_config_text(rc, peek_checkpoint(checkpoint).config_text);
  apply_common(rc, c);
  return rc;
}

std::vector<DomainSample> eval_samples(const RunConfig& rc, const std::string& split, const std::string& domain) {
  const DatasetManifest m = read_manifest(rc.data.root);
  const Domain d = domain.empty() ? target_domain(rc.train.mode) : domain_from_string(domain);
  auto samples = load_split(m, d, split);
  if (samples.empty()) throw ConfigError("no " + std::string(to_string(d)) + " samples in split '" + split + "'");
  return samples;
}

std::vector<Detection> oracle_detections(const DomainSample& s) {
  std::vector<Detection> out;
  for (const ObjectLabel& l : s.labels) out.push_back({l.box3d, l.box2d, 1.0});
  return out;
}

struct SweepJob {
  TrainConfig cfg;
  std::string name;
  std::optional<EvalReport> report;
  int n_roadside = 0;
  int n_vehicle = 0;
};

std::string csv_header(const std::vector<double>& ious) {
  std::string h = "mode,roadside_fraction,seed,n_roadside,n_vehicle,ratio";
  for (const char* m : {"AP3D", "APBEV"})
    for (double t : ious)
      for (const char* d : {"easy", "mod", "hard"}) h += std::string(",") + m + "_" + d + "@" + format_double(t);
  return h;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Roadside monocular 3D detection with cross-domain query interaction"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // generate
  Common gen_c;
  std::string gen_out;
  std::optional<int> gen_nr, gen_nv;
  std::optional<std::uint64_t> gen_seed;
  CLI::App* gen = app.add_subcommand("generate", "render a synthetic two-domain dataset");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "dataset directory (default: dataset_root)");
  gen->add_option("--n-roadside", gen_nr, "roadside train scenes");
  gen->add_option("--n-vehicle", gen_nv, "vehicle train scenes");
  gen->add_option("--seed", gen_seed, "dataset seed");

  // train
  Common tr_c;
  std::string tr_data, tr_out, tr_mode;
  bool tr_no_cl = false, tr_no_dc = false;
  std::optional<std::uint64_t> tr_seed;
  std::optional<int> tr_epochs;
  CLI::App* tr = app.add_subcommand("train", "train a detector");
  add_common(tr, tr_c);
  tr->add_option("--data", tr_data, "dataset directory (default: dataset_root)");
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--mode", tr_mode, "only_road, only_veh, addon or iroam");
  tr->add_flag("--no-cl", tr_no_cl, "drop the contrastive term");
  tr->add_flag("--no-decouple", tr_no_dc, "contrast and predict from full query channels");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--epochs", tr_epochs, "epochs");

  // eval
  Common ev_c;
  std::string ev_ckpt, ev_data, ev_split = "val", ev_domain, ev_iou, ev_out;
  bool ev_oracle = false;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, ev_c);
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file");
  ev->add_option("--data", ev_data, "dataset directory");
  ev->add_option("--split", ev_split, "train or val");
  ev->add_option("--domain", ev_domain, "vehicle or roadside (default: the run's target)");
  ev->add_option("--iou", ev_iou, "comma-separated IoU thresholds");
  ev->add_flag("--oracle", ev_oracle, "score the labels themselves");
  ev->add_option("--out", ev_out, "report JSON path");

  // plot
  Common pl_c;
  std::string pl_ckpt, pl_data, pl_split = "val", pl_domain, pl_out;
  int pl_frames = 1;
  bool pl_oracle = false;
  CLI::App* pl = app.add_subcommand("plot", "bird's-eye plots of predictions and labels");
  add_common(pl, pl_c);
  pl->add_option("--checkpoint", pl_ckpt, "checkpoint file");
  pl->add_option("--data", pl_data, "dataset directory");
  pl->add_option("--split", pl_split, "train or val");
  pl->add_option("--domain", pl_domain, "vehicle or roadside");
  pl->add_option("--frames", pl_frames, "number of frames")->check(CLI::PositiveNumber);
  pl->add_flag("--oracle", pl_oracle, "plot labels as predictions");
  pl->add_option("--out", pl_out, "image directory")->required();

  // sweep
  Common sw_c;
  std::string sw_data, sw_out, sw_modes = "only_road,addon,iroam", sw_fractions = "1", sw_seeds = "0";
  int sw_workers = 1;
  CLI::App* sw = app.add_subcommand("sweep", "train a grid of modes, roadside fractions and seeds");
  add_common(sw, sw_c);
  sw->add_option("--data", sw_data, "dataset directory");
  sw->add_option("--out", sw_out, "sweep directory")->required();
  sw->add_option("--modes", sw_modes, "comma-separated training modes");
  sw->add_option("--fractions", sw_fractions, "comma-separated roadside fractions");
  sw->add_option("--seeds", sw_seeds, "comma-separated seeds");
  sw->add_option("--workers", sw_workers, "parallel runs")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (gen->parsed()) {
      RunConfig rc;
      apply_common(rc, gen_c);
      if (!gen_out.empty()) rc.data.root = resolve_output(gen_out);
      if (gen_nr) rc.data.n_roadside_train = *gen_nr;
      if (gen_nv) rc.data.n_vehicle_train = *gen_nv;
      if (gen_seed) rc.data.seed = *gen_seed;
      if (rc.data.root.empty()) throw ConfigError("no dataset directory: pass --out or set dataset_root");
      const DatasetManifest m = build_dataset(rc.data);
      write_text(rc.data.root / "config.txt", dump_config(rc, {ConfigSection::Data}));
      out << summarize(m);
    } else if (tr->parsed()) {
      RunConfig rc;
      apply_common(rc, tr_c);
      if (!tr_data.empty()) rc.data.root = tr_data;
      if (!tr_mode.empty()) apply_setting(rc, "mode", tr_mode);
      if (tr_no_cl) rc.train.use_cl = false;
      if (tr_no_dc) {
        rc.train.cl.decouple = false;
        rc.train.model.heads_use_full_query = true;
      }
      if (tr_seed) rc.train.seed = *tr_seed;
      if (tr_epochs) rc.train.epochs = *tr_epochs;
      rc.train.validate();
      if (rc.data.root.empty()) throw ConfigError("no dataset: pass --data or set dataset_root");
      const fs::path dir = resolve_output(tr_out);
      make_dir(dir);
      write_text(dir / "config.txt", dump_config(rc));
      const DatasetManifest m = read_manifest(rc.data.root);
      check_image_size(m, rc.train.model);
      const TrainResult r = train(rc.train, m, dir, [&](const EpochMetrics& em) { out << epoch_line(em) << "\n"; });
      if (!r.history.empty() && r.history.back().val) {
        write_text(dir / "eval.json", r.history.back().val->to_json());
        out << r.history.back().val->to_table();
      }
      out << "checkpoint " << r.checkpoint.string() << "\n";
    } else if (ev->parsed()) {
      if (ev_ckpt.empty() && !ev_oracle) throw ConfigError("eval needs --checkpoint or --oracle");
      RunConfig rc = config_for_checkpoint(ev_ckpt, ev_c);
      if (!ev_data.empty()) rc.data.root = ev_data;
      if (!ev_iou.empty()) rc.train.eval.iou_thresholds = split_list<double>(ev_iou, parse_double);
      if (rc.train.eval.iou_thresholds.empty()) throw ConfigError("--iou needs at least one threshold");
      if (rc.data.root.empty()) throw ConfigError("no dataset: pass --data or set dataset_root");
      const auto samples = eval_samples(rc, ev_split, ev_domain);
      EvalReport report;
      if (ev_oracle) {
        std::vector<std::vector<Detection>> dets;
        std::vector<std::vector<ObjectLabel>> gts;
        for (const DomainSample& s : samples) {
          dets.push_back(oracle_detections(s));
          gts.push_back(s.labels);
        }
        report = evaluate_detections(dets, gts, rc.train.eval);
        report.source = "oracle";
      } else {
        check_image_size(read_manifest(rc.data.root), rc.train.model);
        Detector det(rc.train.model, rc.train.seed);
        load_checkpoint(ev_ckpt, det);
        report = evaluate(det, samples, rc.train.eval);
        report.source = ev_ckpt;
      }
      report.source += " on " + ev_split + " " + std::string(to_string(samples.front().domain));
      out << report.to_table();
      if (!ev_out.empty()) write_text(resolve_output(ev_out), report.to_json());
    } else if (pl->parsed()) {
      if (pl_ckpt.empty() && !pl_oracle) throw ConfigError("plot needs --checkpoint or --oracle");
      RunConfig rc = config_for_checkpoint(pl_ckpt, pl_c);
      if (!pl_data.empty()) rc.data.root = pl_data;
      if (rc.data.root.empty()) throw ConfigError("no dataset: pass --data or set dataset_root");
      auto samples = eval_samples(rc, pl_split, pl_domain);
      samples.resize(std::min(samples.size(), static_cast<size_t>(pl_frames)));
      std::unique_ptr<Detector> det;
      if (!pl_oracle) {
        check_image_size(read_manifest(rc.data.root), rc.train.model);
        det = std::make_unique<Detector>(rc.train.model, rc.train.seed);
        load_checkpoint(pl_ckpt, *det);
      }
      const fs::path dir = resolve_output(pl_out);
      make_dir(dir);
      for (const DomainSample& s : samples) {
        const auto dets = pl_oracle ? oracle_detections(s) : predict(*det, s, rc.train.eval.score_threshold);
        const fs::path p = dir / ("bev_" + std::string(to_string(s.domain)) + "_" + s.id + ".png");
        bev_plot(dets, s.labels, s.cam, p);
        out << p.string() << "\n";
      }
    } else if (sw->parsed()) {
      RunConfig rc;
      apply_common(rc, sw_c);
      if (!sw_data.empty()) rc.data.root = sw_data;
      if (rc.data.root.empty()) throw ConfigError("no dataset: pass --data or set dataset_root");
      const auto modes = split_list<std::string>(sw_modes, identity);
      const auto fractions = split_list<double>(sw_fractions, parse_double);
      const auto seeds = split_list<std::uint64_t>(sw_seeds, parse_seed);
      if (modes.empty() || fractions.empty() || seeds.empty()) throw ConfigError("empty sweep grid");
      const DatasetManifest m = read_manifest(rc.data.root);
      check_image_size(m, rc.train.model);
      const fs::path dir = resolve_output(sw_out);
      make_dir(dir);

      std::vector<SweepJob> jobs;
      for (double f : fractions) {
        for (const std::string& mode : modes) {
          for (std::uint64_t seed : seeds) {
            RunConfig job_rc = rc;
            apply_setting(job_rc, "mode", mode);
            job_rc.train.roadside_fraction = f;
            job_rc.train.seed = seed;
            job_rc.train.validate();
            SweepJob j;
            j.cfg = job_rc.train;
            j.name = mode + "_r" + format_double(f) + "_s" + std::to_string(seed);
            const int all_r = m.count(Domain::Roadside, "train");
            j.n_roadside = j.cfg.mode == TrainMode::OnlyVeh
                               ? 0
                               : std::min(all_r, static_cast<int>(std::ceil(f * all_r - 1e-9)));
            j.n_vehicle = j.cfg.mode == TrainMode::OnlyRoad ? 0 : m.count(Domain::Vehicle, "train");
            make_dir(dir / j.name);
            write_text(dir / j.name / "config.txt", dump_config(job_rc));
            jobs.push_back(std::move(j));
          }
        }
      }
      std::mutex io;
      std::atomic<size_t> next{0};
      std::vector<std::exception_ptr> errors(jobs.size());
      auto worker = [&] {
        for (size_t i; (i = next.fetch_add(1)) < jobs.size();) {
          SweepJob& j = jobs[i];
          try {
            const TrainResult r = train(j.cfg, m, dir / j.name, [&](const EpochMetrics& em) {
              std::lock_guard<std::mutex> lock(io);
              out << j.name << " " << epoch_line(em) << "\n" << std::flush;
            });
            if (!r.history.empty()) j.report = r.history.back().val;
            if (j.report) write_text(dir / j.name / "eval.json", j.report->to_json());
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      };
      std::vector<std::thread> pool;
      const int n_workers = std::min<int>(sw_workers, static_cast<int>(jobs.size()));
      for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
      worker();
      for (std::thread& t : pool) t.join();
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

      const auto& ious = rc.train.eval.iou_thresholds;
      std::ostringstream csv;
      csv << csv_header(ious) << "\n";
      for (const SweepJob& j : jobs) {
        csv << to_string(j.cfg.mode) << "," << format_double(j.cfg.roadside_fraction) << "," << j.cfg.seed << ","
            << j.n_roadside << "," << j.n_vehicle << ","
            << (j.n_roadside > 0 ? format_double(static_cast<double>(j.n_vehicle) / j.n_roadside) : "");
        for (IouKind k : {IouKind::ThreeD, IouKind::Bev})
          for (double t : ious)
            for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
              csv << ",";
              if (j.report)
                if (const auto ap = j.report->at(k, t, d)) csv << format_double(*ap);
            }
        csv << "\n";
      }
      write_text(dir / "sweep.csv", csv.str());
      out << "wrote " << (dir / "sweep.csv").string() << "\n";
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const NonFiniteLoss& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace iroam::cli
