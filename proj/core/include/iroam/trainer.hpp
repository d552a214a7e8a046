#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iroam/crossdomain.hpp"
#include "iroam/detector.hpp"
#include "iroam/evaluator.hpp"
#include "iroam/model_config.hpp"
#include "iroam/synthdata.hpp"

namespace iroam {

enum class TrainMode { OnlyRoad, OnlyVeh, Addon, Iroam };
enum class Pairing { CycleShorter, SampleWithReplacement };

std::string_view to_string(TrainMode m);
std::string_view to_string(Pairing p);
TrainMode train_mode_from_string(std::string_view s);
Pairing pairing_from_string(std::string_view s);

struct TrainConfig {
  TrainMode mode = TrainMode::Iroam;
  int epochs = 40;
  int batch_size = 4;  // images per step; an iroam pair counts as two
  double lr = 5e-4;
  double weight_decay = 1e-4;
  std::vector<int> lr_decay_epochs{25, 33};
  double lr_decay_factor = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global norm, 0 disables
  LossWeights lambdas;
  ModelConfig model;
  std::uint64_t seed = 0;
  Pairing pairing = Pairing::CycleShorter;
  int epoch_pairs = 0;  // iroam pairs per epoch, 0 = one per roadside sample
  double roadside_fraction = 1.0;  // leading share of the roadside train split in use
  bool use_cl = true;
  ContrastiveOptions cl{true, ContrastiveNormalization::ByKSquared};
  CropConfig crop;
  int val_every = 0;  // epochs between val evaluations, 0 = final epoch only
  EvalConfig eval;

  /// Throws ConfigError.
  void validate() const;
};

/// Learning rate in effect during `epoch` (0-based).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Per-branch supervised terms of one image.
struct BranchLoss {
  nn::Var pair;  // sum of pair losses divided by max(K, 1)
  nn::Var dmap;
  PairLoss detail;
  MatchResult match;
  int k = 0;
};

BranchLoss branch_loss(nn::Graph& g, const BranchOutput& out, const DomainSample& sample, const TrainConfig& cfg,
                       const DepthBins& bins);

struct LossBreakdown {
  double l_pair_v = 0.0;
  double l_pair_r = 0.0;
  double l_dmap_v = 0.0;
  double l_dmap_r = 0.0;
  double l_cl = 0.0;
  int k_v = 0;
  int k_r = 0;
  bool cl_active = false;
  nn::Var total_var;  // unset when built from plain numbers

  double total() const { return l_pair_v + l_pair_r + l_dmap_v + l_dmap_r + l_cl; }
};

/// Sum of the branch terms present plus the contrastive term.
LossBreakdown overall_loss(nn::Graph& g, const BranchLoss* vehicle, const BranchLoss* roadside,
                           std::optional<nn::Var> l_cl);

/// Loss of one training item: a vehicle/roadside pair in iroam mode, a
/// single image otherwise (pass nullptr for the absent domain).
LossBreakdown item_loss(nn::Graph& g, const Detector& det, const TrainConfig& cfg, const DomainSample* vehicle,
                        const DomainSample* roadside);

/// Pairs vehicle and roadside indices. CycleShorter walks both domains in
/// reshuffled passes; SampleWithReplacement draws the smaller domain
/// uniformly. Epoch length defaults to the larger domain.
class PairIterator {
 public:
  PairIterator(int n_vehicle, int n_roadside, Pairing pairing, std::uint64_t seed, int epoch_length = 0);

  int epoch_length() const { return epoch_length_; }
  /// (vehicle index, roadside index) pairs of the next epoch.
  std::vector<std::pair<int, int>> next_epoch();

 private:
  struct Cursor {
    std::vector<int> order;
    size_t pos = 0;
  };
  int draw(Cursor& c, int n);

  int n_v_, n_r_;
  Pairing pairing_;
  int epoch_length_;
  std::mt19937_64 rng_;
  Cursor v_, r_;
};

class AdamW {
 public:
  AdamW(nn::ParameterSet& params, const TrainConfig& cfg);
  void step(double lr);
  long steps() const { return t_; }
  std::vector<nn::Tensor>& first_moments() { return m_; }
  std::vector<nn::Tensor>& second_moments() { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<nn::Tensor> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  long t_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
double clip_grad_norm(nn::ParameterSet& params, double max_norm);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  int steps = 0;
  int items = 0;
  int cl_skipped = 0;
  std::array<long, 2> branch_calls{};  // training forward passes per domain
  LossBreakdown mean;  // item-averaged components
  std::optional<EvalReport> val;

  std::string to_json_line() const;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_log;
};

/// Echo of every setting as key=value lines.
std::string config_echo(const TrainConfig& cfg);

void save_checkpoint(const std::filesystem::path& path, const Detector& det, const AdamW* opt,
                     const std::string& config_text, const std::mt19937_64& rng, int epoch);

struct CheckpointInfo {
  int version = 0;
  int epoch = 0;
  long steps = 0;
  std::string config_text;
  std::string rng_state;
};

/// Header fields only; parameters are not read.
CheckpointInfo peek_checkpoint(const std::filesystem::path& path);

/// Restores parameters (and optimizer moments when `opt` is given). Throws
/// IoError on a malformed file or a parameter mismatch.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, Detector& det, AdamW* opt = nullptr);

/// Called after every epoch.
using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains on the manifest's train split, writes `checkpoint.bin` and
/// `metrics.jsonl` into out_dir. Throws NonFiniteLoss after writing
/// `nonfinite_batch.json`.
TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const std::filesystem::path& out_dir,
                  const EpochCallback& on_epoch = {});

/// Same, with preloaded samples. `val` is evaluated on the target domain.
TrainResult train(const TrainConfig& cfg, const std::vector<DomainSample>& vehicle,
                  const std::vector<DomainSample>& roadside, const std::vector<DomainSample>& val,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {},
                  Detector* trained = nullptr);

}  // namespace iroam
