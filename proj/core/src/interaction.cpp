#include "iroam/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "iroam/errors.hpp"

namespace iroam {

using nn::Tensor;
using nn::Var;

Tensor sine_position_embedding(int h, int w, int channels) {
  if (channels % 4 != 0) throw ShapeError("sine embedding needs channels divisible by 4");
  const int npf = channels / 2;
  constexpr double temperature = 10000.0;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Tensor out({h * w, channels});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ye = (y + 1.0) / h * two_pi;
      const double xe = (x + 1.0) / w * two_pi;
      for (int i = 0; i < npf; ++i) {
        const double dim_t = std::pow(temperature, 2.0 * (i / 2) / npf);
        const double py = ye / dim_t;
        const double px = xe / dim_t;
        out.at(y * w + x, i) = (i % 2 == 0) ? std::sin(py) : std::cos(py);
        out.at(y * w + x, npf + i) = (i % 2 == 0) ? std::sin(px) : std::cos(px);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

TransformerEncoder::TransformerEncoder(nn::ParameterSet& ps, const std::string& prefix, int channels,
                                       int heads, int hidden, int blocks) {
  for (int b = 0; b < blocks; ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    blocks_.push_back(Block{nn::LayerNorm::create(ps, p + ".ln1", channels),
                            nn::LayerNorm::create(ps, p + ".ln2", channels),
                            nn::MultiHeadAttention::create(ps, p + ".attn", channels, heads),
                            nn::FeedForward::create(ps, p + ".ffn", channels, hidden)});
  }
  out_norm_ = nn::LayerNorm::create(ps, prefix + ".out_norm", channels);
}

Var TransformerEncoder::operator()(nn::Graph& g, Var tokens, const Tensor& pos,
                                   std::vector<Tensor>* probs) const {
  if (tokens.value().size() != pos.size()) throw ShapeError("positional embedding size mismatch");
  Var x = nn::add_const(tokens, pos);
  for (const Block& b : blocks_) {
    const Var h = b.ln1(g, x);
    x = nn::add(x, b.attn(g, h, h, h, probs));
    x = nn::add(x, b.ffn(g, b.ln2(g, x)));
  }
  return out_norm_(g, x);
}

// ---------------------------------------------------------------------------

DepthAwareDecoder::DepthAwareDecoder(nn::ParameterSet& ps, const ModelConfig& cfg,
                                     const std::string& prefix) {
  const int c = cfg.channels;
  const int h = cfg.attention_heads;
  for (int b = 0; b < cfg.decoder_blocks; ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    blocks_.push_back(Block{nn::LayerNorm::create(ps, p + ".ln_depth", c),
                            nn::LayerNorm::create(ps, p + ".ln_self", c),
                            nn::LayerNorm::create(ps, p + ".ln_content", c),
                            nn::LayerNorm::create(ps, p + ".ln_ffn", c),
                            nn::MultiHeadAttention::create(ps, p + ".depth_attn", c, h),
                            nn::MultiHeadAttention::create(ps, p + ".self_attn", c, h),
                            nn::MultiHeadAttention::create(ps, p + ".content_attn", c, h),
                            nn::FeedForward::create(ps, p + ".ffn", c, cfg.ffn_hidden)});
  }
  out_norm_ = nn::LayerNorm::create(ps, prefix + ".out_norm", c);
  depth_table_ = &ps.create_normal(prefix + ".depth_pos_table", {cfg.depth_bins + 1, c}, 0.1);
}

Var DepthAwareDecoder::depth_positions(nn::Graph& g, std::span<const int> cell_bins) const {
  return nn::gather_rows(g.param(*depth_table_), cell_bins);
}

Var DepthAwareDecoder::operator()(nn::Graph& g, Var queries, const Embeddings& emb) const {
  if (queries.cols() != emb.content.cols() || queries.cols() != emb.depth.cols())
    throw ShapeError("decoder: query and embedding widths differ");
  const Var depth_keys = nn::add(emb.depth, emb.depth_pos);
  const Var content_keys = nn::add(emb.content, emb.content_pos);
  Var q = queries;
  for (const Block& b : blocks_) {
    q = nn::add(q, b.depth_attn(g, b.ln_depth(g, q), depth_keys, emb.depth));
    const Var s = b.ln_self(g, q);
    q = nn::add(q, b.self_attn(g, s, s, s));
    q = nn::add(q, b.content_attn(g, b.ln_content(g, q), content_keys, emb.content));
    q = nn::add(q, b.ffn(g, b.ln_ffn(g, q)));
  }
  return out_norm_(g, q);
}

// ---------------------------------------------------------------------------

PredictionHeads::PredictionHeads(nn::ParameterSet& ps, const ModelConfig& cfg, const std::string& prefix)
    : full_query_(cfg.heads_use_full_query), geometric_depth_(cfg.geometric_depth), channels_(cfg.channels) {
  if (!full_query_ && cfg.channels % 2 != 0)
    throw OddChannelError("query channels must be even to split semantic/geometry halves");
  const int in = full_query_ ? cfg.channels : cfg.channels / 2;
  cls_ = nn::Linear::create(ps, prefix + ".cls", in, cfg.num_classes + 1);
  reg_hidden_ = nn::Linear::create(ps, prefix + ".reg_hidden", in, in);
  box_ = nn::Linear::create(ps, prefix + ".box2d", in, 4);
  center_ = nn::Linear::create(ps, prefix + ".center", in, 2);
  dims_ = nn::Linear::create(ps, prefix + ".dims", in, 3);
  ori_ = nn::Linear::create(ps, prefix + ".ori", in, 2);
  depth_ = nn::Linear::create(ps, prefix + ".depth", in, 1);
  for (int i = 0; i < 3; ++i) dims_.bias->value[static_cast<size_t>(i)] = std::log(cfg.dims_prior[static_cast<size_t>(i)]);
  // Small initial box sizes, centered boxes.
  box_.bias->value[2] = -2.0;
  box_.bias->value[3] = -2.0;
  depth_.bias->value[0] = std::log(cfg.depth_prior);
  if (geometric_depth_) {
    const double box_h = 1.0 / (1.0 + std::exp(-box_.bias->value[3]));
    depth_.bias->value[0] += std::log(box_h / cfg.dims_prior[0]);
  }
  // Start with a low foreground prior so no-object dominates early.
  cls_.bias->value[static_cast<size_t>(cfg.num_classes)] = 2.0;
}

HeadOutputs PredictionHeads::operator()(nn::Graph& g, Var qd) const {
  if (qd.cols() != channels_) throw ShapeError("heads: unexpected query width");
  const int half = channels_ / 2;
  const Var sem = full_query_ ? qd : nn::slice_cols(qd, 0, half);
  const Var geo = full_query_ ? qd : nn::slice_cols(qd, half, channels_);
  const Var h = nn::relu(reg_hidden_(g, geo));
  HeadOutputs out;
  out.logits = cls_(g, sem);
  out.box2d = nn::sigmoid(box_(g, h));
  out.center = nn::sigmoid(center_(g, h));
  out.dims = nn::exp(dims_(g, h));
  out.orientation = ori_(g, h);
  Var log_depth = depth_(g, h);
  if (geometric_depth_)
    log_depth = nn::sub(nn::add(log_depth, nn::log(nn::slice_cols(out.dims, 0, 1))),
                        nn::log(nn::slice_cols(out.box2d, 3, 4)));
  out.depth = nn::exp(log_depth);
  return out;
}

// ---------------------------------------------------------------------------

double combine_cost(const CostTerms& t, const LossWeights& w) {
  return w.cls * t.cls + w.center3d * t.center3d + w.edge * t.edge + w.giou * t.giou;
}

double class_focal_cost(double p, double gamma) {
  p = std::clamp(p, 1e-300, 1.0);
  return -std::pow(1.0 - p, gamma) * std::log(p);
}

namespace {

double foreground_log_prob(const Tensor& logits, int row, int cls) {
  const int c = logits.cols();
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < c; ++j) mx = std::max(mx, logits.at(row, j));
  double s = 0.0;
  for (int j = 0; j < c; ++j) s += std::exp(logits.at(row, j) - mx);
  return logits.at(row, cls) - mx - std::log(s);
}

}  // namespace

CostTerms pair_cost_terms(const HeadOutputs& pred, int q, const ObjectLabel& label, double gamma) {
  CostTerms t;
  const double log_p = foreground_log_prob(pred.logits.value(), q, 0);
  t.cls = -std::pow(1.0 - std::exp(log_p), gamma) * log_p;
  const Tensor& c = pred.center.value();
  t.center3d = std::abs(c.at(q, 0) - label.center2d[0]) + std::abs(c.at(q, 1) - label.center2d[1]);
  const Tensor& b = pred.box2d.value();
  const std::array<double, 4> pb{b.at(q, 0), b.at(q, 1), b.at(q, 2), b.at(q, 3)};
  const std::array<double, 4> tb{label.box2d.cx, label.box2d.cy, label.box2d.w, label.box2d.h};
  for (int k = 0; k < 4; ++k) t.edge += std::abs(pb[static_cast<size_t>(k)] - tb[static_cast<size_t>(k)]);
  t.giou = 1.0 - generalized_iou(pb, tb);
  return t;
}

Tensor matching_cost(const HeadOutputs& pred, std::span<const ObjectLabel> labels,
                     const LossWeights& w, double gamma) {
  if (labels.empty()) throw EmptyGT("matching cost needs at least one ground-truth label");
  const int n = pred.num_queries();
  const int k = static_cast<int>(labels.size());
  Tensor cost({n, k});
  for (int q = 0; q < n; ++q)
    for (int j = 0; j < k; ++j)
      cost.at(q, j) = combine_cost(pair_cost_terms(pred, q, labels[static_cast<size_t>(j)], gamma), w);
  return cost;
}

std::vector<int> MatchResult::query_to_gt() const {
  std::vector<int> out(static_cast<size_t>(num_queries()), -1);
  for (size_t j = 0; j < gt_to_query.size(); ++j) out[static_cast<size_t>(gt_to_query[j])] = static_cast<int>(j);
  return out;
}

MatchResult hungarian(const Tensor& cost) {
  if (cost.rank() != 2) throw ShapeError("hungarian expects an (N, K) matrix");
  const int nq = cost.rows();
  const int ng = cost.dim(1);
  if (nq < ng) throw InfeasibleError("fewer queries than ground-truth labels");
  for (double v : cost.vec())
    if (!std::isfinite(v)) throw std::invalid_argument("hungarian: non-finite cost");

  MatchResult r;
  r.cost = cost;
  r.score = cost;
  for (double& v : r.score.vec()) v = -v;
  if (ng == 0) return r;

  // Shortest augmenting path with potentials; rows = ground truth,
  // columns = queries, 1-based with column 0 as the virtual source.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(ng) + 1, 0.0), v(static_cast<size_t>(nq) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(nq) + 1, 0), way(static_cast<size_t>(nq) + 1, 0);
  auto a = [&](int gt, int q) { return cost.at(q - 1, gt - 1); };
  for (int i = 1; i <= ng; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(nq) + 1, inf);
    std::vector<char> used(static_cast<size_t>(nq) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= nq; ++j) {
        const auto sj = static_cast<size_t>(j);
        if (used[sj]) continue;
        const double cur = a(i0, j) - u[static_cast<size_t>(i0)] - v[sj];
        if (cur < minv[sj]) {
          minv[sj] = cur;
          way[sj] = j0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          j1 = j;
        }
      }
      for (int j = 0; j <= nq; ++j) {
        const auto sj = static_cast<size_t>(j);
        if (used[sj]) {
          u[static_cast<size_t>(p[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  r.gt_to_query.assign(static_cast<size_t>(ng), -1);
  for (int j = 1; j <= nq; ++j) {
    const int gt = p[static_cast<size_t>(j)];
    if (gt != 0) r.gt_to_query[static_cast<size_t>(gt - 1)] = j - 1;
  }
  for (int gt = 0; gt < ng; ++gt) r.total_cost += cost.at(r.gt_to_query[static_cast<size_t>(gt)], gt);
  return r;
}

// ---------------------------------------------------------------------------

PairLoss pair_loss(nn::Graph& g, const HeadOutputs& pred, std::span<const ObjectLabel> labels,
                   const MatchResult& match, const LossWeights& w, double gamma) {
  const int n = pred.num_queries();
  const int k = static_cast<int>(labels.size());
  if (match.num_gt() != k) throw std::invalid_argument("pair_loss: match does not cover the labels");
  const int no_object = pred.logits.cols() - 1;
  const std::vector<int> q2g = k > 0 ? match.query_to_gt() : std::vector<int>(static_cast<size_t>(n), -1);

  std::vector<int> unmatched;
  for (int q = 0; q < n; ++q)
    if (q2g[static_cast<size_t>(q)] < 0) unmatched.push_back(q);

  PairLoss out;
  out.matched = k;
  std::vector<Var> terms;
  std::vector<double> weights;

  if (!unmatched.empty()) {
    const std::vector<int> targets(unmatched.size(), no_object);
    const Var l = nn::focal_loss_rows(nn::gather_rows(pred.logits, unmatched), targets, gamma);
    out.cls_noobject = l.item();
    terms.push_back(l);
    weights.push_back(w.cls);
  }
  if (k > 0) {
    const std::vector<int>& rows = match.gt_to_query;
    Tensor t_center({k, 2}), t_box({k, 4}), t_dims({k, 3}), t_ori({k, 2}), t_depth({k, 1});
    for (int j = 0; j < k; ++j) {
      const ObjectLabel& lb = labels[static_cast<size_t>(j)];
      t_center.at(j, 0) = lb.center2d[0];
      t_center.at(j, 1) = lb.center2d[1];
      t_box.at(j, 0) = lb.box2d.cx;
      t_box.at(j, 1) = lb.box2d.cy;
      t_box.at(j, 2) = lb.box2d.w;
      t_box.at(j, 3) = lb.box2d.h;
      for (int d = 0; d < 3; ++d) t_dims.at(j, d) = lb.box3d.dims[static_cast<size_t>(d)];
      t_ori.at(j, 0) = std::sin(lb.box3d.yaw);
      t_ori.at(j, 1) = std::cos(lb.box3d.yaw);
      t_depth.at(j, 0) = lb.depth;
    }
    const std::vector<int> cls_targets(static_cast<size_t>(k), 0);
    const Var boxes = nn::gather_rows(pred.box2d, rows);
    const Var cls = nn::focal_loss_rows(nn::gather_rows(pred.logits, rows), cls_targets, gamma);
    const Var center = nn::l1_loss(nn::gather_rows(pred.center, rows), t_center);
    const Var edge = nn::l1_loss(boxes, t_box);
    const Var giou = nn::giou_loss_rows(boxes, t_box);
    const Var dim = nn::l1_loss(nn::gather_rows(pred.dims, rows), t_dims);
    const Var ori = nn::l1_loss(nn::gather_rows(pred.orientation, rows), t_ori);
    const Var depth = nn::l1_loss(nn::gather_rows(pred.depth, rows), t_depth);
    out.cls_matched = cls.item();
    out.center3d = center.item();
    out.edge = edge.item();
    out.giou = giou.item();
    out.dim = dim.item();
    out.ori = ori.item();
    out.depth = depth.item();
    for (const Var& v : {cls, center, edge, giou, dim, ori, depth}) terms.push_back(v);
    for (double x : {w.cls, w.center3d, w.edge, w.giou, w.dim, w.ori, w.depth}) weights.push_back(x);
  }
  if (terms.empty()) {
    out.total = g.constant(Tensor::scalar(0.0));
  } else {
    out.total = nn::weighted_sum(terms, weights);
  }
  return out;
}

}  // namespace iroam
