#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tandem/actions.hpp"
#include "tandem/tape.hpp"

namespace tandem {

struct RefinerConfig {
  int blocks = 2;
  int width = 64;          // must match the action expert width
  int heads = 4;
  int cond_hidden = 128;   // conditioning trunk width
  int schedule_steps = 50;  // full noise schedule length
  int trunc_steps = 8;      // reverse steps actually run / trained on
  double sigma_lon = 0.5;   // multiplicative noise scale, forward coordinate
  double sigma_lat = 0.2;   // and lateral coordinate
  bool stochastic = false;  // re-noise between reverse steps when true
  int temporal_points = kTemporalPoints;
  int spatial_points = kSpatialPoints;
  int history_frames = 4;
  std::uint64_t seed = 11;

  int traj_tokens() const { return temporal_points + spatial_points; }
  // Conditioning: normalized step index, noise level, ego (3), ego history.
  int cond_features() const { return 2 + 3 + 3 * history_frames; }

  void validate() const {
    if (blocks <= 0 || width <= 0 || heads <= 0 || cond_hidden <= 0)
      throw ConfigError("refiner: non-positive dims");
    if (width % heads != 0) throw ConfigError("refiner: width not divisible by heads");
    if (schedule_steps <= 0 || trunc_steps < 0 || trunc_steps > schedule_steps)
      throw ConfigError("refiner: bad schedule");
    if (sigma_lon < 0 || sigma_lat < 0) throw ConfigError("refiner: negative sigma");
  }
};

// Noise amplitude for schedule index s under a cosine schedule:
// sqrt(1 - cos^2(pi/2 * (s+1)/T)) = sin(pi/2 * (s+1)/T). Small for the early
// (nearly clean) steps, 1 at the top of the schedule.
inline double noise_level(int s, int schedule_steps) {
  return std::sin(M_PI_2 * (s + 1) / static_cast<double>(schedule_steps));
}

// Multiplicative trajectory corruption: out = (1 + eps) .* traj with eps
// Gaussian per coordinate, column 0 using the longitudinal sigma and column 1
// the lateral one. Draw order is row-major so streams are reproducible.
template <class S>
MatT<S> perturb(const MatT<S>& traj, double sigma_lon, double sigma_lat, Rng& rng) {
  if (sigma_lon < 0 || sigma_lat < 0) throw ConfigError("perturb: negative sigma");
  if (traj.cols() != 2)
    throw ShapeError("perturb: expected Nx2 trajectory, got " + traj.shape_str());
  MatT<S> out(traj.rows(), 2);
  for (int i = 0; i < traj.rows(); ++i) {
    out(i, 0) = traj(i, 0) * static_cast<S>(1.0 + rng.gaussian(0.0, sigma_lon));
    out(i, 1) = traj(i, 1) * static_cast<S>(1.0 + rng.gaussian(0.0, sigma_lat));
  }
  return out;
}

template <class S>
TrajectorySetT<S> perturb(const TrajectorySetT<S>& prior, double sigma_lon,
                          double sigma_lat, std::uint64_t seed) {
  Rng rng(seed);
  TrajectorySetT<S> out;
  out.temporal = perturb(prior.temporal, sigma_lon, sigma_lat, rng);
  out.spatial = perturb(prior.spatial, sigma_lon, sigma_lat, rng);
  return out;
}

// Everything the refiner conditions on for one sample. Feature matrices are
// plain values: the upstream experts are frozen while the refiner trains, so
// no gradient flows back through them.
template <class S>
struct RefinerInputT {
  MatT<S> prior_temporal;  // temporal_points x 2
  MatT<S> prior_spatial;   // spatial_points x 2
  MatT<S> f_bev;           // BEV feature tokens, tokens x d
  MatT<S> h_de;            // latent decision states from the AE, kDecisionTokens x d
  MatT<S> reasoning;       // reasoning hidden states from the scene snapshot, r x d
  std::array<S, 3> ego{};  // raw SI: speed, heading, accel
  MatT<S> ego_hist;        // history_frames x 3, raw SI
  std::uint64_t noise_seed = 0;
};

using RefinerInput = RefinerInputT<double>;

// Truncated-schedule trajectory refiner built from mixture-of-attention
// blocks. Each block runs one joint attention over the trajectory tokens
// themselves, the BEV feature tokens, and — through a tanh(gamma)-gated
// branch — the decision hiddens; mean-pooled BEV and attention-pooled
// reasoning summaries enter as sigmoid-gated bypass residuals. Conditioning
// (denoise step, ego state and history) modulates each block's layernorm and
// scales its residual via an adaLN head that starts at zero, so an untrained
// refiner is exactly the identity on its input trajectories.
template <class S>
class RefinerT {
 public:
  using Id = typename TapeT<S>::Id;

  struct Out {
    Id temporal;  // refined temporal_points x 2
    Id spatial;   // refined spatial_points x 2
  };

  void init(const RefinerConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
    Rng rng(cfg.seed);
    const int d = cfg.width;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    point_w_.init_gaussian("rf.point.w", 2, d, rng, 1.0 / std::sqrt(2.0));
    point_b_.init("rf.point.b", 1, d);
    pos_emb_.init_gaussian("rf.pos", cfg.traj_tokens(), d, rng, ws);
    cond_w1_.init_gaussian("rf.cond.w1", cfg.cond_features(), cfg.cond_hidden, rng,
                           1.0 / std::sqrt(static_cast<double>(cfg.cond_features())));
    cond_b1_.init("rf.cond.b1", 1, cfg.cond_hidden);

    blocks_.resize(static_cast<std::size_t>(cfg.blocks));
    for (int b = 0; b < cfg.blocks; ++b) {
      Block& blk = blocks_[static_cast<std::size_t>(b)];
      const std::string p = "rf.blk" + std::to_string(b);
      blk.wq.init_gaussian(p + ".wq", d, d, rng, ws);
      blk.bq.init(p + ".bq", 1, d);
      blk.wk.init_gaussian(p + ".wk", d, d, rng, ws);
      blk.bk.init(p + ".bk", 1, d);
      blk.wv.init_gaussian(p + ".wv", d, d, rng, ws);
      blk.bv.init(p + ".bv", 1, d);
      blk.wk_bev.init_gaussian(p + ".wk_bev", d, d, rng, ws);
      blk.bk_bev.init(p + ".bk_bev", 1, d);
      blk.wv_bev.init_gaussian(p + ".wv_bev", d, d, rng, ws);
      blk.bv_bev.init(p + ".bv_bev", 1, d);
      blk.wk_de.init_gaussian(p + ".wk_de", d, d, rng, ws);
      blk.bk_de.init(p + ".bk_de", 1, d);
      blk.wv_de.init_gaussian(p + ".wv_de", d, d, rng, ws);
      blk.bv_de.init(p + ".bv_de", 1, d);
      blk.wo.init_gaussian(p + ".wo", d, d, rng, ws);
      blk.bo.init(p + ".bo", 1, d);
      blk.q_rsn.init_gaussian(p + ".q_rsn", 1, d, rng, ws);
      blk.gamma.init(p + ".gamma", 1, 1);     // g = tanh(0) = 0: branch silent
      blk.beta_b.init(p + ".beta_b", 1, 1);   // sigma(0) = 0.5
      blk.beta_r.init(p + ".beta_r", 1, 1);
      // adaLN-zero: [shift | scale | alpha], all zero at init so each block
      // starts as the identity.
      blk.ada_w.init(p + ".ada.w", cfg.cond_hidden, 3 * d);
      blk.ada_b.init(p + ".ada.b", 1, 3 * d);
    }
    out_w_.init("rf.out.w", d, 2);  // zero-init: prediction == noisy input at start
    out_b_.init("rf.out.b", 1, 2);
  }

  const RefinerConfig& config() const { return cfg_; }

  std::vector<ParamT<S>*> params() {
    std::vector<ParamT<S>*> ps{&point_w_, &point_b_, &pos_emb_, &cond_w1_, &cond_b1_};
    for (auto& blk : blocks_)
      for (ParamT<S>* p :
           {&blk.wq, &blk.bq, &blk.wk, &blk.bk, &blk.wv, &blk.bv, &blk.wk_bev,
            &blk.bk_bev, &blk.wv_bev, &blk.bv_bev, &blk.wk_de, &blk.bk_de, &blk.wv_de,
            &blk.bv_de, &blk.wo, &blk.bo, &blk.q_rsn, &blk.gamma, &blk.beta_b,
            &blk.beta_r, &blk.ada_w, &blk.ada_b})
        ps.push_back(p);
    ps.push_back(&out_w_);
    ps.push_back(&out_b_);
    return ps;
  }

  // Close every decision gate (used by invariance checks).
  void zero_gamma() {
    for (auto& blk : blocks_) blk.gamma.value(0, 0) = S(0);
  }

  // One denoising application: predict clean trajectories from noisy ones at
  // schedule index s. noisy_temporal/spatial are tape nodes so the training
  // loss can differentiate end to end.
  Out denoise(TapeT<S>& t, Id noisy_temporal, Id noisy_spatial, int s,
              const RefinerInputT<S>& in) {
    if (s < 0 || s >= cfg_.schedule_steps)
      throw ConfigError("refiner: schedule index " + std::to_string(s) + " out of range");
    if (in.f_bev.cols() != cfg_.width || in.h_de.cols() != cfg_.width ||
        in.reasoning.cols() != cfg_.width)
      throw ShapeError("refiner: feature width mismatch (want " +
                       std::to_string(cfg_.width) + ", got bev " + in.f_bev.shape_str() +
                       ", de " + in.h_de.shape_str() + ", reason " +
                       in.reasoning.shape_str() + ")");
    const int d = cfg_.width;
    const int n = cfg_.traj_tokens();
    const int dh = d / cfg_.heads;
    const S inv_sqrt_dh = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));

    ensure_masks(in);

    // Conditioning vector: schedule position, noise level, ego now, history.
    MatT<S> c(1, cfg_.cond_features());
    int ci = 0;
    c(0, ci++) = static_cast<S>((s + 1) / static_cast<double>(cfg_.schedule_steps));
    c(0, ci++) = static_cast<S>(noise_level(s, cfg_.schedule_steps));
    c(0, ci++) = in.ego[0] / S(10);
    c(0, ci++) = in.ego[1] / S(M_PI);
    c(0, ci++) = in.ego[2] / S(3);
    for (int i = 0; i < in.ego_hist.rows(); ++i) {
      c(0, ci++) = in.ego_hist(i, 0) / S(10);
      c(0, ci++) = in.ego_hist(i, 1) / S(M_PI);
      c(0, ci++) = in.ego_hist(i, 2) / S(3);
    }
    const Id cond_h = t.gelu(affine(t, t.input(std::move(c)), t.param(cond_w1_),
                                    t.param(cond_b1_)));

    const Id pts = t.concat_rows({noisy_temporal, noisy_spatial});  // n x 2
    const Id scaled_pts = t.scale(pts, S(0.1));  // meters -> O(1) embedding range
    Id x = t.add(affine(t, scaled_pts, t.param(point_w_), t.param(point_b_)),
                 t.param(pos_emb_));

    const Id h_de = t.input(in.h_de);
    const Id f_bev = t.input(in.f_bev);
    const Id reason = t.input(in.reasoning);
    const Id ln_gain = t.input(MatT<S>::filled(1, d, S(1)));
    const Id ln_bias = t.input(MatT<S>(1, d));
    const Id ones_row = t.input(MatT<S>::filled(1, d, S(1)));

    for (auto& blk : blocks_) {
      const Id ada = affine(t, cond_h, t.param(blk.ada_w), t.param(blk.ada_b));
      const Id shift = t.slice_cols(ada, 0, d);
      const Id scl = t.slice_cols(ada, d, d);
      const Id alpha = t.slice_cols(ada, 2 * d, d);

      // adaLN modulation: LN(x) * (1 + scale) + shift.
      const Id ln = t.layernorm(x, ln_gain, ln_bias, S(1e-5));
      const Id h = t.add_rowvec(t.mul_rowvec(ln, t.add(scl, ones_row)), shift);

      const Id q = affine(t, h, t.param(blk.wq), t.param(blk.bq));
      const Id k_x = affine(t, h, t.param(blk.wk), t.param(blk.bk));
      const Id v_x = affine(t, h, t.param(blk.wv), t.param(blk.bv));
      const Id k_bev = affine(t, f_bev, t.param(blk.wk_bev), t.param(blk.bk_bev));
      const Id v_bev = affine(t, f_bev, t.param(blk.wv_bev), t.param(blk.bv_bev));
      // Decision branch gated by g = tanh(gamma) on both keys and values:
      // scores for these columns scale by g and their value contribution by
      // g as well, so at gamma = 0 the output carries no dependence on h_de.
      const Id g = t.tanh_op(t.param(blk.gamma));
      const Id k_de = t.mul_scalar_node(
          affine(t, h_de, t.param(blk.wk_de), t.param(blk.bk_de)), g);
      const Id v_de = t.mul_scalar_node(
          affine(t, h_de, t.param(blk.wv_de), t.param(blk.bv_de)), g);

      std::vector<Id> head_outs;
      head_outs.reserve(static_cast<std::size_t>(cfg_.heads));
      for (int hh = 0; hh < cfg_.heads; ++hh) {
        const int c0 = hh * dh;
        const Id qh = t.slice_cols(q, c0, dh);
        const Id kh = t.concat_rows({t.slice_cols(k_x, c0, dh),
                                     t.slice_cols(k_bev, c0, dh),
                                     t.slice_cols(k_de, c0, dh)});
        const Id vh = t.concat_rows({t.slice_cols(v_x, c0, dh),
                                     t.slice_cols(v_bev, c0, dh),
                                     t.slice_cols(v_de, c0, dh)});
        const Id scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dh);
        const Id p = t.masked_softmax(scores, &attn_mask_);
        head_outs.push_back(t.matmul(p, vh));
      }
      const Id o_main = affine(t, t.concat_cols(head_outs), t.param(blk.wo),
                               t.param(blk.bo));

      // Bypass residuals: raw mean over BEV tokens, and a single-query
      // attention pool over the reasoning tokens.
      const Id r_bev = t.mean_rows(f_bev);
      const Id pool_scores = t.scale(t.matmul_nt(t.param(blk.q_rsn), reason),
                                     S(1) / static_cast<S>(std::sqrt(static_cast<double>(d))));
      const Id r_rsn = t.matmul(t.masked_softmax(pool_scores, &rsn_mask_), reason);

      Id inner = t.add(o_main, t.broadcast_row(
          t.mul_scalar_node(r_bev, t.sigmoid_op(t.param(blk.beta_b))), n));
      inner = t.add(inner, t.broadcast_row(
          t.mul_scalar_node(r_rsn, t.sigmoid_op(t.param(blk.beta_r))), n));
      x = t.add(x, t.mul_rowvec(inner, alpha));
    }

    // Coordinate head with skip: the network predicts a correction to the
    // noisy input (x0-prediction).
    const Id delta = affine(t, x, t.param(out_w_), t.param(out_b_));
    const Id clean = t.add(pts, delta);
    Out out;
    out.temporal = t.slice_rows(clean, 0, cfg_.temporal_points);
    out.spatial = t.slice_rows(clean, cfg_.temporal_points, cfg_.spatial_points);
    return out;
  }

  // Truncated reverse denoising. The prior enters the schedule at index
  // steps-1: it is perturbed at that index's noise level, then each step
  // predicts the clean trajectories and (in stochastic mode) re-noises them
  // at the next index down. The default sampler is deterministic: the x0
  // prediction is fed straight back in. steps == 0 leaves the prior
  // untouched (its entry perturbation has zero amplitude).
  void refine(const RefinerInputT<S>& in, int steps, MatT<S>* temporal_out,
              MatT<S>* spatial_out) {
    if (steps < 0 || steps > cfg_.schedule_steps)
      throw ConfigError("refine: truncation " + std::to_string(steps) +
                        " outside schedule of " + std::to_string(cfg_.schedule_steps));
    Rng rng(in.noise_seed);
    const double lvl0 = steps > 0 ? noise_level(steps - 1, cfg_.schedule_steps) : 0.0;
    MatT<S> temporal = perturb(in.prior_temporal, lvl0 * cfg_.sigma_lon,
                               lvl0 * cfg_.sigma_lat, rng);
    MatT<S> spatial = perturb(in.prior_spatial, lvl0 * cfg_.sigma_lon,
                              lvl0 * cfg_.sigma_lat, rng);
    for (int s = steps - 1; s >= 0; --s) {
      TapeT<S> t(TapeT<S>::Mode::infer);
      const Out out = denoise(t, t.input(temporal), t.input(spatial), s, in);
      temporal = t.value(out.temporal);
      spatial = t.value(out.spatial);
      if (cfg_.stochastic && s > 0) {
        const double lvl = noise_level(s - 1, cfg_.schedule_steps);
        temporal = perturb(temporal, lvl * cfg_.sigma_lon, lvl * cfg_.sigma_lat, rng);
        spatial = perturb(spatial, lvl * cfg_.sigma_lon, lvl * cfg_.sigma_lat, rng);
      }
    }
    *temporal_out = std::move(temporal);
    *spatial_out = std::move(spatial);
  }

  void refine(const RefinerInputT<S>& in, MatT<S>* temporal_out, MatT<S>* spatial_out) {
    refine(in, cfg_.trunc_steps, temporal_out, spatial_out);
  }

  // Forward corruption for training at schedule index s: multiplicative
  // noise with the index's amplitude.
  void add_noise(const MatT<S>& clean, int s, Rng& rng, MatT<S>* noisy) const {
    const double lvl = noise_level(s, cfg_.schedule_steps);
    *noisy = perturb(clean, lvl * cfg_.sigma_lon, lvl * cfg_.sigma_lat, rng);
  }

 private:
  struct Block {
    ParamT<S> wq, bq, wk, bk, wv, bv, wk_bev, bk_bev, wv_bev, bv_bev;
    ParamT<S> wk_de, bk_de, wv_de, bv_de, wo, bo, q_rsn, gamma, beta_b, beta_r;
    ParamT<S> ada_w, ada_b;
  };

  void ensure_masks(const RefinerInputT<S>& in) {
    const int n = cfg_.traj_tokens();
    const int cols = n + in.f_bev.rows() + in.h_de.rows();
    if (attn_mask_.rows() != n || attn_mask_.cols() != cols) {
      attn_mask_ = BoolMat(n, cols);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < cols; ++j) attn_mask_(i, j) = 1;
    }
    if (rsn_mask_.cols() != in.reasoning.rows()) {
      rsn_mask_ = BoolMat(1, in.reasoning.rows());
      for (int j = 0; j < in.reasoning.rows(); ++j) rsn_mask_(0, j) = 1;
    }
  }

  RefinerConfig cfg_;
  ParamT<S> point_w_, point_b_, pos_emb_, cond_w1_, cond_b1_, out_w_, out_b_;
  std::vector<Block> blocks_;
  BoolMat attn_mask_, rsn_mask_;
};

using Refiner = RefinerT<double>;

}  // namespace tandem
