#pragma once

#include <cstdint>
#include <vector>

#include "tandem/kv_cache.hpp"
#include "tandem/transformer.hpp"

namespace tandem {

// The slow-clock side: a frozen scene-and-text encoder whose only product is
// a KV snapshot (plus reasoning hiddens) for the fast side to attend into.
struct UnderstandingConfig {
  StackConfig stack;
  int tokens_per_frame = 16;
  int frames = 4;        // consecutive camera frames per encode window
  int prompt_len = 8;    // fixed instruction tokens
  int reasoning_len = 8; // generated reasoning slots
  std::uint64_t seed = 1234;

  int scene_tokens() const { return frames * tokens_per_frame; }
  int text_tokens() const { return prompt_len + reasoning_len; }
  int total_tokens() const { return scene_tokens() + text_tokens(); }

  void validate() const {
    stack.validate();
    if (tokens_per_frame <= 0 || frames <= 0)
      throw ConfigError("understanding: non-positive frame dims");
    if (prompt_len < 0 || reasoning_len < 0)
      throw ConfigError("understanding: negative text lengths");
  }
};

template <class S>
class UnderstandingExpertT {
 public:
  void init(const UnderstandingConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
    Rng rng(cfg.seed);
    const int d = cfg.stack.width;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    stack_.init("ue", cfg.stack, rng);
    scene_w_.init_gaussian("ue.scene.w", d, d, rng, ws);
    scene_b_.init("ue.scene.b", 1, d);
    prompt_emb_.init_gaussian("ue.prompt", cfg.prompt_len, d, rng, ws);
    reason_emb_.init_gaussian("ue.reason", cfg.reasoning_len, d, rng, ws);
    pos_emb_.init_gaussian("ue.pos", cfg.total_tokens(), d, rng, ws);

    layout_.segments = {{SegmentKind::scene, AttentionRule::bidirectional, cfg.scene_tokens()},
                        {SegmentKind::text, AttentionRule::causal, cfg.text_tokens()}};
    layout_.validate();
    mask_ = build_mask(layout_);

    // The whole understanding side stays frozen; it contributes context, not
    // gradient flow.
    for (ParamT<S>* p : params()) p->trainable = false;
  }

  const UnderstandingConfig& config() const { return cfg_; }
  const AttentionLayout& layout() const { return layout_; }

  std::vector<ParamT<S>*> params() {
    std::vector<ParamT<S>*> ps;
    stack_.collect(ps);
    for (ParamT<S>* p : {&scene_w_, &scene_b_, &prompt_emb_, &reason_emb_, &pos_emb_})
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

  // scene: rendered frame features, (frames * tokens_per_frame) x d.
  // Returns a complete snapshot stamped with the given epoch.
  LayerKVCacheT<S> encode(const MatT<S>& scene, std::int64_t epoch) {
    if (scene.rows() != cfg_.scene_tokens() || scene.cols() != cfg_.stack.width)
      throw ShapeError("understanding: scene " + scene.shape_str() + ", expected " +
                       std::to_string(cfg_.scene_tokens()) + "x" +
                       std::to_string(cfg_.stack.width));
    TapeT<S> t(TapeT<S>::Mode::infer);
    const auto s = affine(t, t.input(scene), t.param(scene_w_), t.param(scene_b_));
    const auto x0 = t.concat_rows({s, t.param(prompt_emb_), t.param(reason_emb_)});
    const auto x = t.add(x0, t.param(pos_emb_));

    LayerKVCacheT<S> snap;
    snap.epoch = epoch;
    snap.scene_len = cfg_.total_tokens();
    snap.width = cfg_.stack.width;
    const auto h = stack_.forward(t, x, mask_, nullptr, &snap.k, &snap.v);
    snap.reasoning = slice_rows(t.value(h), cfg_.scene_tokens() + cfg_.prompt_len,
                                cfg_.reasoning_len);
    snap.validate();
    return snap;
  }

 private:
  UnderstandingConfig cfg_;
  StackT<S> stack_;
  ParamT<S> scene_w_, scene_b_, prompt_emb_, reason_emb_, pos_emb_;
  AttentionLayout layout_;
  BoolMat mask_;
};

using UnderstandingExpert = UnderstandingExpertT<double>;

}  // namespace tandem
