#include "tandem/train.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <utility>

#include "tandem/error.hpp"
#include "tandem/hash.hpp"
#include "tandem/refiner.hpp"
#include "tandem/rng.hpp"
#include "tandem/tape.hpp"

namespace tandem {

TrainHead parse_head(const std::string& s) {
  if (s == "mlp") return TrainHead::mlp;
  if (s == "diffusion") return TrainHead::diffusion;
  throw ConfigError("train: head must be mlp or diffusion, got '" + s + "'");
}

const char* head_name(TrainHead head) {
  return head == TrainHead::mlp ? "mlp" : "diffusion";
}

namespace {

std::uint64_t digest_params(const std::vector<Param*>& ps) {
  std::uint64_t h = kFnvOffset;
  for (const Param* p : ps) {
    h = fnv1a(p->name, h);
    h = mat_digest(p->value, h);
  }
  return h;
}

void check_geometry(const ModelConfig& mc, const std::vector<SyncSample>& samples) {
  if (samples.empty()) throw ConfigError("train: empty dataset");
  const SyncSample& s = samples.front();
  const int rgb_rows = (mc.history_frames + 1) * mc.tokens_per_frame;
  if (s.rgb.cols() != mc.width || s.rgb.rows() != rgb_rows || s.bev.cols() != mc.width ||
      s.bev.rows() != mc.tokens_per_frame)
    throw ConfigError("train: dataset geometry does not match the model (rgb " +
                      s.rgb.shape_str() + ", bev " + s.bev.shape_str() + ", model wants " +
                      std::to_string(rgb_rows) + "x" + std::to_string(mc.width) + " rgb)");
  if (s.gt.temporal.rows() != mc.temporal_points || s.gt.spatial.rows() != mc.spatial_points)
    throw ConfigError("train: label geometry does not match the model");
}

class Momentum {
 public:
  void attach(std::vector<Param*> params, const OptimizerState* resume) {
    params_ = std::move(params);
    names_.clear();
    for (const Param* p : params_) names_.push_back(p->name);
    vel_.clear();
    if (resume && !resume->velocity.empty()) {
      if (resume->names != names_)
        throw ConfigError("train: resumed optimizer state belongs to a different phase");
      vel_ = resume->velocity;
      for (std::size_t i = 0; i < vel_.size(); ++i)
        if (vel_[i].rows() != params_[i]->value.rows() ||
            vel_[i].cols() != params_[i]->value.cols())
          throw DataError("train: velocity shape drift for " + names_[i]);
    } else {
      for (const Param* p : params_) vel_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  void zero_grads() {
    for (Param* p : params_) p->zero_grad();
  }

  // v <- momentum v + g / batch; p <- p - lr v
  void step(double lr, double momentum, int batch) {
    const double inv_b = 1.0 / batch;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      Mat& v = vel_[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        v.data()[j] = momentum * v.data()[j] + p.grad.data()[j] * inv_b;
        p.value.data()[j] -= lr * v.data()[j];
      }
      p.grad.set_zero();
    }
  }

  void dump(OptimizerState* out, std::int64_t next_step) const {
    out->step = next_step;
    out->names = names_;
    out->velocity = vel_;
  }

 private:
  std::vector<Param*> params_;
  std::vector<std::string> names_;
  std::vector<Mat> vel_;
};

}  // namespace

TrainResult train(Policy& policy, const std::vector<SyncSample>& samples,
                  const RunConfig& cfg, TrainHead head, OptimizerState* opt_io,
                  const StepHook& hook) {
  cfg.validate();
  check_geometry(policy.config(), samples);
  const TrainConfig& tc = cfg.train;
  const double lambda = policy.config().lambda_spatial;
  const int n = static_cast<int>(samples.size());
  const std::int64_t action_steps = tc.steps;
  const std::int64_t total_steps =
      action_steps + (head == TrainHead::diffusion ? tc.refiner_steps : 0);

  TrainResult result;
  result.ue_digest_before = digest_params(policy.understanding().params());

  std::int64_t start = 0;
  if (opt_io && !opt_io->empty()) {
    start = opt_io->step;
    if (start < 0 || start > total_steps)
      throw ConfigError("train: resume step " + std::to_string(start) +
                        " outside the configured schedule");
  }

  // Frozen scene-encoder snapshots never change during training.
  std::map<std::pair<std::uint32_t, std::uint16_t>, LayerKVCache> snap_memo;
  auto snapshot_for = [&](const SyncSample& s) -> const LayerKVCache& {
    const auto key = std::make_pair(s.scenario_id, s.anchor);
    auto it = snap_memo.find(key);
    if (it == snap_memo.end()) it = snap_memo.emplace(key, policy.encode_sample(s)).first;
    return it->second;
  };

  // During the refiner phase the action expert is frozen too, so its prior
  // and feature outputs per sample are fixed and cached on first use.
  std::vector<std::optional<RefinerInput>> rin_memo;
  auto refiner_input_for = [&](int idx) -> const RefinerInput& {
    if (rin_memo.empty()) rin_memo.resize(static_cast<std::size_t>(n));
    auto& slot = rin_memo[static_cast<std::size_t>(idx)];
    if (!slot) {
      const SyncSample& smp = samples[static_cast<std::size_t>(idx)];
      const LayerKVCache& snap = snapshot_for(smp);
      Tape t(Tape::Mode::infer);
      const auto out = policy.action_expert().forward(t, policy.observation(smp), &snap);
      slot = policy.refiner_input(smp, snap, t.value(out.temporal), t.value(out.spatial),
                                  t.value(out.h_de), t.value(out.h_bev));
    }
    return *slot;
  };

  Momentum opt;
  // Saved velocities describe the phase of the last completed step. A resume
  // that lands in the other phase (e.g. the refiner schedule appended after a
  // finished action run) starts that phase's optimizer from zero, exactly as
  // the uninterrupted run does when it crosses the boundary.
  const char resume_phase =
      (opt_io && !opt_io->empty()) ? (opt_io->step - 1 < action_steps ? 'a' : 'r') : 0;
  char attached_phase = 0;
  auto ensure_phase = [&](char phase) {
    if (attached_phase == phase) return;
    const OptimizerState* resume =
        (attached_phase == 0 && resume_phase == phase) ? opt_io : nullptr;
    opt.attach(phase == 'a' ? policy.action_params() : policy.refiner_params(), resume);
    opt.zero_grads();
    attached_phase = phase;
  };

  Refiner& rf = policy.refiner();
  const int trunc = std::max(1, policy.config().refiner.trunc_steps);

  for (std::int64_t step = start; step < total_steps; ++step) {
    const char phase = step < action_steps ? 'a' : 'r';
    ensure_phase(phase);

    Rng batch_rng(derive_seed(tc.seed, static_cast<std::uint64_t>(step)));
    LossRow row;
    row.step = step;
    row.phase = phase;

    for (int b = 0; b < tc.batch; ++b) {
      const int idx = static_cast<int>(batch_rng.below(static_cast<std::uint64_t>(n)));
      const SyncSample& smp = samples[static_cast<std::size_t>(idx)];
      Tape t(Tape::Mode::train);
      if (phase == 'a') {
        const auto L = policy.sample_loss(t, smp, snapshot_for(smp));
        t.backward(L.total);
        row.nll += t.value(L.nll)(0, 0);
        row.l_temporal += t.value(L.l_temporal)(0, 0);
        row.l_spatial += t.value(L.l_spatial)(0, 0);
        row.total += t.value(L.total)(0, 0);
      } else {
        const RefinerInput& rin = refiner_input_for(idx);
        const int s = static_cast<int>(step % trunc);
        Rng noise(derive_seed(tc.seed ^ 0x72656669ull, static_cast<std::uint64_t>(step),
                              static_cast<std::uint64_t>(b)));
        Mat noisy_t, noisy_s;
        rf.add_noise(rin.prior_temporal, s, noise, &noisy_t);
        rf.add_noise(rin.prior_spatial, s, noise, &noisy_s);
        const auto out = rf.denoise(t, t.input(noisy_t), t.input(noisy_s), s, rin);
        const auto lt = t.l1_mean(out.temporal, cast_mat<double>(smp.gt.temporal));
        const auto ls = t.l1_mean(out.spatial, cast_mat<double>(smp.gt.spatial));
        const auto loss = t.add(lt, t.scale(ls, lambda));
        t.backward(loss);
        row.l_temporal += t.value(lt)(0, 0);
        row.l_spatial += t.value(ls)(0, 0);
        row.total += t.value(loss)(0, 0);
      }
    }
    row.nll /= tc.batch;
    row.l_temporal /= tc.batch;
    row.l_spatial /= tc.batch;
    row.total /= tc.batch;
    if (!std::isfinite(row.total))
      throw NumericError("train: non-finite loss at step " + std::to_string(step));

    opt.step(tc.lr, tc.momentum, tc.batch);
    result.curve.push_back(row);
    ++result.steps_run;
    if (opt_io) opt.dump(opt_io, step + 1);
    if (hook && !hook(row)) break;
  }

  result.ue_digest_after = digest_params(policy.understanding().params());
  if (result.ue_digest_after != result.ue_digest_before)
    throw Error("train: frozen scene encoder drifted during training");
  return result;
}

std::string loss_csv(const std::vector<LossRow>& curve, int log_every) {
  if (log_every < 1) throw ConfigError("loss_csv: log_every must be >= 1");
  std::ostringstream os;
  os << "step,phase,nll,l_temporal,l_spatial,total\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const LossRow& r = curve[i];
    const bool last = i + 1 == curve.size() || curve[i + 1].phase != r.phase;
    if (r.step % log_every != 0 && !last) continue;
    os << r.step << "," << r.phase << "," << r.nll << "," << r.l_temporal << ","
       << r.l_spatial << "," << r.total << "\n";
  }
  return os.str();
}

}  // namespace tandem
