#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tandem/actions.hpp"
#include "tandem/kv_cache.hpp"
#include "tandem/transformer.hpp"

namespace tandem {

struct ActionConfig {
  StackConfig stack;
  int tokens_per_frame = 16;
  int history_frames = 4;      // trailing camera frames; +1 for the live frame
  int temporal_points = kTemporalPoints;
  int spatial_points = kSpatialPoints;
  std::uint64_t seed = 99;

  int rgb_tokens() const { return (history_frames + 1) * tokens_per_frame; }
  int obs_tokens() const { return rgb_tokens() + tokens_per_frame + 1; }  // + BEV + ego
  int query_tokens() const { return kDecisionTokens + temporal_points + spatial_points; }
  int total_tokens() const { return obs_tokens() + query_tokens(); }

  void validate() const {
    stack.validate();
    if (tokens_per_frame <= 0 || history_frames < 0)
      throw ConfigError("action expert: bad frame dims");
    if (temporal_points <= 0 || spatial_points <= 0)
      throw ConfigError("action expert: bad plan dims");
    // One query per decision token and per waypoint, nothing shared.
    if (query_tokens() != kDecisionTokens + temporal_points + spatial_points)
      throw ConfigError("action expert: query count mismatch");
  }
};

// Everything the fast side sees at one tick.
template <class S>
struct ObservationT {
  MatT<S> rgb;             // rgb_tokens() x d: history frames then live frame
  MatT<S> bev;             // tokens_per_frame x d
  std::array<S, 3> ego{};  // speed m/s, heading rad, acceleration m/s^2
};

using Observation = ObservationT<double>;

// Fast-clock expert: embeds observations, appends persistent query
// embeddings, runs joint attention against a cached scene snapshot, and
// reads decisions and trajectories off dedicated query rows.
template <class S>
class ActionExpertT {
 public:
  using Id = typename TapeT<S>::Id;

  struct Out {
    Id hidden;    // total_tokens x d final hiddens
    Id h_de;      // decision rows, kDecisionTokens x d
    Id h_bev;     // BEV observation rows, tokens_per_frame x d
    Id logits;    // kDecisionTokens x kVocab
    Id temporal;  // temporal_points x 2
    Id spatial;   // spatial_points x 2
  };

  void init(const ActionConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
    Rng rng(cfg.seed);
    const int d = cfg.stack.width;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    stack_.init("ae", cfg.stack, rng);
    obs_w_.init_gaussian("ae.obs.w", d, d, rng, ws);
    obs_b_.init("ae.obs.b", 1, d);
    ego_w_.init_gaussian("ae.ego.w", 3, d, rng, 1.0 / std::sqrt(3.0));
    ego_b_.init("ae.ego.b", 1, d);
    queries_.init_gaussian("ae.queries", cfg.query_tokens(), d, rng, ws);
    pos_emb_.init_gaussian("ae.pos", cfg.total_tokens(), d, rng, ws);
    dec_w_.init_gaussian("ae.dec.w", d, kVocab, rng, ws);
    dec_b_.init("ae.dec.b", 1, kVocab);
    temp_w_.init_gaussian("ae.temp.w", d, 2, rng, ws);
    temp_b_.init("ae.temp.b", 1, 2);
    spat_w_.init_gaussian("ae.spat.w", d, 2, rng, ws);
    spat_b_.init("ae.spat.b", 1, 2);

    layout_.segments = {
        {SegmentKind::observation, AttentionRule::bidirectional, cfg.obs_tokens()},
        {SegmentKind::decision, AttentionRule::bidirectional, kDecisionTokens},
        {SegmentKind::plan_temporal, AttentionRule::bidirectional, cfg.temporal_points},
        {SegmentKind::plan_spatial, AttentionRule::bidirectional, cfg.spatial_points}};
    layout_.validate();
    self_mask_ = build_mask(layout_);
    joint_mask_ = BoolMat();
  }

  // Precompute the joint mask for a given cached-prefix layout. Must be
  // called before forward() sees a snapshot.
  void wire_cache_layout(const AttentionLayout& prefix) {
    const AttentionLayout joint = concat_layouts(prefix, layout_);
    const BoolMat full = build_mask(joint);
    joint_mask_ = slice_mask_rows(full, prefix.total_tokens(), layout_.total_tokens());
  }

  const ActionConfig& config() const { return cfg_; }
  const AttentionLayout& layout() const { return layout_; }

  std::vector<ParamT<S>*> params() {
    std::vector<ParamT<S>*> ps;
    stack_.collect(ps);
    for (ParamT<S>* p : {&obs_w_, &obs_b_, &ego_w_, &ego_b_, &queries_, &pos_emb_,
                         &dec_w_, &dec_b_, &temp_w_, &temp_b_, &spat_w_, &spat_b_})
      ps.push_back(p);
    return ps;
  }

  std::uint64_t param_digest() {
    std::uint64_t h = kFnvOffset;
    for (ParamT<S>* p : params()) {
      h = fnv1a(p->name, h);
      h = mat_digest(p->value, h);
    }
    return h;
  }

  Out forward(TapeT<S>& t, const ObservationT<S>& obs, const LayerKVCacheT<S>* cache) {
    if (cache && cache->scene_len == 0) cache = nullptr;  // empty cache == no cache
    const int d = cfg_.stack.width;
    if (obs.rgb.rows() != cfg_.rgb_tokens() || obs.rgb.cols() != d)
      throw ShapeError("action expert: rgb " + obs.rgb.shape_str() + ", expected " +
                       std::to_string(cfg_.rgb_tokens()) + "x" + std::to_string(d));
    if (obs.bev.rows() != cfg_.tokens_per_frame || obs.bev.cols() != d)
      throw ShapeError("action expert: bev " + obs.bev.shape_str() + ", expected " +
                       std::to_string(cfg_.tokens_per_frame) + "x" + std::to_string(d));
    if (cache && joint_mask_.rows() == 0)
      throw LayoutError("action expert: snapshot given but cache layout never wired");

    // Fixed input normalization: raw SI ego values arrive here, the token
    // projection sees O(1) ranges.
    MatT<S> ego(1, 3);
    ego(0, 0) = obs.ego[0] / S(10);
    ego(0, 1) = obs.ego[1] / S(M_PI);
    ego(0, 2) = obs.ego[2] / S(3);

    const Id sensors = t.concat_rows({t.input(obs.rgb), t.input(obs.bev)});
    const Id sensor_emb = affine(t, sensors, t.param(obs_w_), t.param(obs_b_));
    const Id ego_emb = affine(t, t.input(std::move(ego)), t.param(ego_w_), t.param(ego_b_));
    const Id x0 = t.concat_rows({sensor_emb, ego_emb, t.param(queries_)});
    const Id x = t.add(x0, t.param(pos_emb_));

    const BoolMat& mask = cache ? joint_mask_ : self_mask_;
    Out out;
    out.hidden = stack_.forward(t, x, mask, cache);
    const int q0 = cfg_.obs_tokens();
    out.h_de = t.slice_rows(out.hidden, q0, kDecisionTokens);
    out.h_bev = t.slice_rows(out.hidden, cfg_.rgb_tokens(), cfg_.tokens_per_frame);
    const Id h_pt = t.slice_rows(out.hidden, q0 + kDecisionTokens, cfg_.temporal_points);
    const Id h_ps = t.slice_rows(out.hidden, q0 + kDecisionTokens + cfg_.temporal_points,
                                 cfg_.spatial_points);
    out.logits = affine(t, out.h_de, t.param(dec_w_), t.param(dec_b_));
    out.temporal = affine(t, h_pt, t.param(temp_w_), t.param(temp_b_));
    out.spatial = affine(t, h_ps, t.param(spat_w_), t.param(spat_b_));
    return out;
  }

 private:
  ActionConfig cfg_;
  StackT<S> stack_;
  ParamT<S> obs_w_, obs_b_, ego_w_, ego_b_, queries_, pos_emb_;
  ParamT<S> dec_w_, dec_b_, temp_w_, temp_b_, spat_w_, spat_b_;
  AttentionLayout layout_;
  BoolMat self_mask_, joint_mask_;
};

using ActionExpert = ActionExpertT<double>;

// Argmax decode per decision token; ties break to the lowest index.
template <class S>
MetaActionSequence decode_decisions(const MatT<S>& logits) {
  if (logits.rows() != kDecisionTokens || logits.cols() != kVocab)
    throw ShapeError("decode_decisions: logits " + logits.shape_str());
  MetaActionSequence seq;
  for (int i = 0; i < kDecisionTokens; ++i) {
    int best = 0;
    for (int j = 1; j < kVocab; ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    seq.tokens[static_cast<std::size_t>(i)] = best;
  }
  return seq;
}

}  // namespace tandem
