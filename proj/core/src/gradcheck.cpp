#include "tandem/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <vector>

#include "tandem/dataset.hpp"
#include "tandem/policy.hpp"
#include "tandem/refiner.hpp"
#include "tandem/rng.hpp"
#include "tandem/tape.hpp"

namespace tandem {

namespace {

constexpr double kAbsFloor = 1e-7;

ModelConfig tiny_model(std::uint64_t seed) {
  ModelConfig mc;
  mc.width = 16;
  mc.layers = 1;
  mc.heads = 2;
  mc.tokens_per_frame = 2;
  mc.prompt_len = 2;
  mc.reasoning_len = 2;
  mc.ue_seed = derive_seed(seed, 101);
  mc.ae_seed = derive_seed(seed, 102);
  mc.refiner.blocks = 1;
  mc.refiner.cond_hidden = 16;
  mc.refiner.trunc_steps = 4;
  mc.refiner.seed = derive_seed(seed, 103);
  return mc;
}

SyncSample tiny_sample(std::uint64_t seed, const ModelConfig& mc) {
  SynthParams sp;
  sp.scenario_count = 1;
  sp.samples_per_scenario = 1;
  sp.render.tokens_per_frame = mc.tokens_per_frame;
  sp.render.width = mc.width;
  sp.render.seed = derive_seed(seed, 104);
  sp.seed = derive_seed(seed, 105);
  return synth_samples(sp).front();
}

// Probe every tensor in `params` against central differences of `loss_val`.
// loss_val(true) must also populate the analytic gradients.
void probe(const std::vector<Param*>& params, const std::function<double(bool)>& loss_val,
           const GradCheckConfig& cfg, GradCheckReport* rep) {
  for (Param* p : params) p->zero_grad();
  loss_val(true);

  Rng pick(derive_seed(cfg.seed, 202));
  for (Param* p : params) {
    ++rep->tensors;
    for (int e = 0; e < cfg.entries_per_param; ++e) {
      const std::size_t idx = pick.below(p->value.size());
      const double saved = p->value.data()[idx];
      p->value.data()[idx] = saved + cfg.step;
      const double lp = loss_val(false);
      p->value.data()[idx] = saved - cfg.step;
      const double lm = loss_val(false);
      p->value.data()[idx] = saved;
      const double fd = (lp - lm) / (2 * cfg.step);
      const double an = p->grad.data()[idx];
      const double diff = std::abs(fd - an);
      const double rel = diff / std::max({std::abs(fd), std::abs(an), kAbsFloor});
      ++rep->entries;
      if (diff > rep->max_abs) {
        rep->max_abs = diff;
        if (diff > kAbsFloor || rep->worst.empty())
          rep->worst = p->name + "[" + std::to_string(idx) + "]";
      }
      if (diff > kAbsFloor) {
        rep->max_rel = std::max(rep->max_rel, rel);
        if (rel > cfg.tolerance) ++rep->failures;
      }
    }
  }
}

}  // namespace

GradCheckReport grad_check_action(const GradCheckConfig& cfg) {
  const ModelConfig mc = tiny_model(cfg.seed);
  const SyncSample smp = tiny_sample(cfg.seed, mc);
  Policy policy;
  policy.init(mc);
  const LayerKVCache snap = policy.encode_sample(smp);

  auto loss_val = [&](bool train_mode) {
    Tape t(train_mode ? Tape::Mode::train : Tape::Mode::infer);
    const auto L = policy.sample_loss(t, smp, snap);
    if (train_mode) t.backward(L.total);
    return t.value(L.total)(0, 0);
  };

  GradCheckReport rep;
  probe(policy.action_params(), loss_val, cfg, &rep);
  return rep;
}

GradCheckReport grad_check_refiner(const GradCheckConfig& cfg) {
  const ModelConfig mc = tiny_model(cfg.seed);
  const SyncSample smp = tiny_sample(cfg.seed, mc);
  Policy policy;
  policy.init(mc);
  const LayerKVCache snap = policy.encode_sample(smp);

  // Fixed conditioning features from one frozen forward pass.
  Tape feat(Tape::Mode::infer);
  const auto out = policy.action_expert().forward(feat, policy.observation(smp), &snap);
  const RefinerInput rin =
      policy.refiner_input(smp, snap, feat.value(out.temporal), feat.value(out.spatial),
                           feat.value(out.h_de), feat.value(out.h_bev));

  Refiner& rf = policy.refiner();
  Rng nudge(derive_seed(cfg.seed, 203));
  for (Param* p : rf.params())
    for (std::size_t i = 0; i < p->value.size(); ++i)
      p->value.data()[i] += nudge.gaussian(0.0, 0.05);

  const int s = mc.refiner.trunc_steps / 2;
  Rng noise(derive_seed(cfg.seed, 204));
  Mat noisy_t, noisy_s;
  rf.add_noise(rin.prior_temporal, s, noise, &noisy_t);
  rf.add_noise(rin.prior_spatial, s, noise, &noisy_s);
  const Mat gt_t = cast_mat<double>(smp.gt.temporal);
  const Mat gt_s = cast_mat<double>(smp.gt.spatial);

  auto loss_val = [&](bool train_mode) {
    Tape t(train_mode ? Tape::Mode::train : Tape::Mode::infer);
    const auto o = rf.denoise(t, t.input(noisy_t), t.input(noisy_s), s, rin);
    const auto loss =
        t.add(t.l1_mean(o.temporal, gt_t), t.scale(t.l1_mean(o.spatial, gt_s), 0.5));
    if (train_mode) t.backward(loss);
    return t.value(loss)(0, 0);
  };

  GradCheckReport rep;
  probe(rf.params(), loss_val, cfg, &rep);
  return rep;
}

}  // namespace tandem
