#pragma once

#include <cstdint>
#include <vector>

#include "tandem/action_expert.hpp"
#include "tandem/dataset.hpp"
#include "tandem/refiner.hpp"
#include "tandem/understanding.hpp"

namespace tandem {

// One knob set for the whole model; expert- and refiner-specific configs are
// derived so widths and token counts can never drift apart.
struct ModelConfig {
  int width = 64;
  int layers = 4;
  int heads = 4;
  int mlp_ratio = 2;
  int tokens_per_frame = 16;
  int history_frames = 4;
  int prompt_len = 8;
  int reasoning_len = 8;
  int temporal_points = kTemporalPoints;
  int spatial_points = kSpatialPoints;
  double lambda_spatial = 0.5;  // weight of the spatial L1 inside the combined loss
  std::uint64_t ue_seed = 1234;
  std::uint64_t ae_seed = 99;
  RefinerConfig refiner;  // width/heads/points/history overridden to match

  StackConfig stack() const {
    StackConfig s;
    s.layers = layers;
    s.width = width;
    s.heads = heads;
    s.hidden = width * mlp_ratio;
    return s;
  }

  UnderstandingConfig understanding() const {
    UnderstandingConfig u;
    u.stack = stack();
    u.tokens_per_frame = tokens_per_frame;
    u.frames = history_frames;
    u.prompt_len = prompt_len;
    u.reasoning_len = reasoning_len;
    u.seed = ue_seed;
    return u;
  }

  ActionConfig action() const {
    ActionConfig a;
    a.stack = stack();
    a.tokens_per_frame = tokens_per_frame;
    a.history_frames = history_frames;
    a.temporal_points = temporal_points;
    a.spatial_points = spatial_points;
    a.seed = ae_seed;
    return a;
  }

  RefinerConfig refiner_cfg() const {
    RefinerConfig r = refiner;
    r.width = width;
    r.heads = heads;
    r.temporal_points = temporal_points;
    r.spatial_points = spatial_points;
    r.history_frames = history_frames;
    return r;
  }

  void validate() const {
    understanding().validate();
    action().validate();
    refiner_cfg().validate();
    if (lambda_spatial < 0) throw ConfigError("model: negative lambda_spatial");
  }
};

// What one inference pass produces for a sample.
struct PolicyOutput {
  MetaActionSequence decisions;
  TrajectorySet prior;    // straight off the action expert heads
  TrajectorySet refined;  // after diffusion refinement (== prior when off)
  Mat logits;             // kDecisionTokens x kVocab
  std::int64_t cache_epoch = -1;
};

// Loss nodes for one sample on a live tape.
template <class S>
struct SampleLossT {
  typename TapeT<S>::Id nll;        // summed token-wise decision NLL
  typename TapeT<S>::Id l_temporal;
  typename TapeT<S>::Id l_spatial;
  typename TapeT<S>::Id combined;   // l_temporal + lambda * l_spatial
  typename TapeT<S>::Id total;      // nll + combined
};

// The full driving policy: frozen understanding expert feeding a KV snapshot,
// action expert consuming it through joint attention, and the optional
// trajectory refiner on top of the action expert's outputs.
template <class S>
class PolicyT {
 public:
  void init(const ModelConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
    ue_.init(cfg.understanding());
    ae_.init(cfg.action());
    rf_.init(cfg.refiner_cfg());
    ae_.wire_cache_layout(ue_.layout());
  }

  const ModelConfig& config() const { return cfg_; }
  UnderstandingExpertT<S>& understanding() { return ue_; }
  ActionExpertT<S>& action_expert() { return ae_; }
  RefinerT<S>& refiner() { return rf_; }

  // Scene window the understanding expert sees: the history frames only.
  MatT<S> ue_scene(const SyncSample& sample) const {
    const int rows = cfg_.history_frames * cfg_.tokens_per_frame;
    return cast_mat<S>(slice_rows(sample.rgb, 0, rows));
  }

  ObservationT<S> observation(const SyncSample& sample) const {
    ObservationT<S> obs;
    obs.rgb = cast_mat<S>(sample.rgb);
    obs.bev = cast_mat<S>(sample.bev);
    obs.ego = {static_cast<S>(sample.ego[0]), static_cast<S>(sample.ego[1]),
               static_cast<S>(sample.ego[2])};
    return obs;
  }

  // The snapshot for a sample carries the absolute frame index of the last
  // history frame as its epoch; live frames sit at anchor + k >= epoch.
  LayerKVCacheT<S> encode_sample(const SyncSample& sample) {
    return ue_.encode(ue_scene(sample),
                      static_cast<std::int64_t>(sample.anchor) + cfg_.history_frames - 1);
  }

  // Deterministic per-sample stream for refiner noise.
  static std::uint64_t sample_noise_seed(const SyncSample& sample) {
    return derive_seed(0x7261666eu, sample.scenario_id,
                       (static_cast<std::uint64_t>(sample.anchor) << 3) | sample.k);
  }

  RefinerInputT<S> refiner_input(const SyncSample& sample, const LayerKVCacheT<S>& snap,
                                 const MatT<S>& prior_temporal,
                                 const MatT<S>& prior_spatial, const MatT<S>& h_de,
                                 const MatT<S>& h_bev) const {
    RefinerInputT<S> rin;
    rin.prior_temporal = prior_temporal;
    rin.prior_spatial = prior_spatial;
    rin.f_bev = h_bev;
    rin.h_de = h_de;
    rin.reasoning = snap.reasoning;
    rin.ego = {static_cast<S>(sample.ego[0]), static_cast<S>(sample.ego[1]),
               static_cast<S>(sample.ego[2])};
    rin.ego_hist = cast_mat<S>(sample.ego_hist);
    rin.noise_seed = sample_noise_seed(sample);
    return rin;
  }

  // Full inference for one sample against a given snapshot.
  PolicyOutput infer(const SyncSample& sample, const LayerKVCacheT<S>& snap,
                     bool use_refiner) {
    TapeT<S> t(TapeT<S>::Mode::infer);
    const auto out = ae_.forward(t, observation(sample), &snap);
    PolicyOutput po;
    po.logits = cast_mat<double>(t.value(out.logits));
    po.decisions = decode_decisions(po.logits);
    po.prior.temporal = cast_mat<double>(t.value(out.temporal));
    po.prior.spatial = cast_mat<double>(t.value(out.spatial));
    po.cache_epoch = snap.epoch;
    if (use_refiner) {
      const auto rin = refiner_input(sample, snap, t.value(out.temporal),
                                     t.value(out.spatial), t.value(out.h_de),
                                     t.value(out.h_bev));
      MatT<S> rt, rs;
      rf_.refine(rin, &rt, &rs);
      po.refined.temporal = cast_mat<double>(rt);
      po.refined.spatial = cast_mat<double>(rs);
    } else {
      po.refined = po.prior;
    }
    return po;
  }

  // Build the supervised loss graph for one sample on the caller's tape.
  SampleLossT<S> sample_loss(TapeT<S>& t, const SyncSample& sample,
                             const LayerKVCacheT<S>& snap) {
    const auto out = ae_.forward(t, observation(sample), &snap);
    SampleLossT<S> L;
    std::vector<int> labels(sample.labels.tokens.begin(), sample.labels.tokens.end());
    L.nll = t.nll_tokenwise(out.logits, labels);
    L.l_temporal = t.l1_mean(out.temporal, cast_mat<S>(sample.gt.temporal));
    L.l_spatial = t.l1_mean(out.spatial, cast_mat<S>(sample.gt.spatial));
    L.combined = t.add(L.l_temporal,
                       t.scale(L.l_spatial, static_cast<S>(cfg_.lambda_spatial)));
    L.total = t.add(L.nll, L.combined);
    return L;
  }

  // Every parameter, frozen ones included (checkpointing wants all of them).
  std::vector<ParamT<S>*> all_params() {
    std::vector<ParamT<S>*> ps = ue_.params();
    for (ParamT<S>* p : ae_.params()) ps.push_back(p);
    for (ParamT<S>* p : rf_.params()) ps.push_back(p);
    return ps;
  }

  std::vector<ParamT<S>*> action_params() { return ae_.params(); }
  std::vector<ParamT<S>*> refiner_params() { return rf_.params(); }

  std::uint64_t param_digest() {
    std::uint64_t h = kFnvOffset;
    for (ParamT<S>* p : all_params()) {
      h = fnv1a(p->name, h);
      h = mat_digest(p->value, h);
    }
    return h;
  }

 private:
  ModelConfig cfg_;
  UnderstandingExpertT<S> ue_;
  ActionExpertT<S> ae_;
  RefinerT<S> rf_;
};

using Policy = PolicyT<double>;

}  // namespace tandem
