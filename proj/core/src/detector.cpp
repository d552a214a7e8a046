#include "iroam/detector.hpp"

#include "iroam/errors.hpp"

namespace iroam {

namespace {

nn::ParameterSet& seeded(nn::ParameterSet& ps, std::uint64_t seed) {
  ps.seed(seed);
  return ps;
}

}  // namespace

Detector::Detector(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      encoder_(seeded(params_, seed), cfg, "encoder"),
      content_encoder_(params_, "content_encoder", cfg.channels, cfg.attention_heads, cfg.ffn_hidden,
                       cfg.content_encoder_blocks),
      depth_encoder_(params_, "depth_encoder", cfg.channels, cfg.attention_heads, cfg.ffn_hidden,
                     cfg.depth_encoder_blocks),
      decoder_(params_, cfg, "decoder"),
      heads_(params_, cfg, "heads") {
  if (cfg.image_width % 32 != 0 || cfg.image_height % 32 != 0)
    throw ShapeError("image size must be divisible by 32");
  query_embed_ = &params_.create_normal("queries", {cfg.num_queries, cfg.channels}, 1.0);
  pos_ = sine_position_embedding(cfg.image_height / 16, cfg.image_width / 16, cfg.channels);
}

void Detector::reset_counters() {
  for (auto& c : calls_) c.store(0);
}

BranchOutput Detector::forward(nn::Graph& g, const Image& image, Domain domain) const {
  if (image.width() != cfg_.image_width || image.height() != cfg_.image_height)
    throw ShapeError("image size does not match the model configuration");
  return forward(g, g.constant(image_to_tensor(image)), domain);
}

BranchOutput Detector::forward(nn::Graph& g, nn::Var image, Domain domain) const {
  calls_[static_cast<size_t>(domain)].fetch_add(1);
  BranchOutput out;
  out.maps = encoder_.backbone(g, image);
  out.content = encoder_.unify_scales(g, out.maps);
  out.depth_feature = encoder_.depth_feature(g, out.content);
  out.depth_logits = encoder_.depth_map_head(g, out.depth_feature);
  {
    // Cell-major view of the logits for the argmax.
    const nn::Tensor& l = out.depth_logits.value();
    const int ch = l.dim(0);
    const int cells = l.dim(1) * l.dim(2);
    out.cell_bins.assign(static_cast<size_t>(cells), 0);
    for (int i = 0; i < cells; ++i) {
      int best = 0;
      for (int c = 1; c < ch; ++c)
        if (l[static_cast<size_t>(c) * cells + i] > l[static_cast<size_t>(best) * cells + i]) best = c;
      out.cell_bins[static_cast<size_t>(i)] = best;
    }
  }
  const nn::Var content_tokens = nn::map_to_tokens(out.content);
  const nn::Var depth_tokens = nn::map_to_tokens(out.depth_feature);
  if (content_tokens.value().size() != pos_.size())
    throw ShapeError("image size does not match the model configuration");
  out.embeddings.content = content_encoder_(g, content_tokens, pos_);
  out.embeddings.depth = depth_encoder_(g, depth_tokens, pos_);
  out.embeddings.content_pos = g.constant(pos_);
  out.embeddings.depth_pos = decoder_.depth_positions(g, out.cell_bins);
  out.queries = decoder_(g, g.param(*query_embed_), out.embeddings);
  out.heads = heads_(g, out.queries);
  return out;
}

}  // namespace iroam
