#include "tandem/scheduler.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <memory>
#include <thread>

#include "tandem/error.hpp"
#include "tandem/hash.hpp"
#include "tandem/kv_cache.hpp"

namespace tandem {

void ClockConfig::validate() const {
  if (ue_period < 1) throw ConfigError("clock: ue_period must be >= 1");
  if (tick_s <= 0) throw ConfigError("clock: non-positive tick duration");
  if (ue_compute_scale < 1) throw ConfigError("clock: ue_compute_scale must be >= 1");
}

PlaybackEnv::PlaybackEnv(const Scenario& sc, const RenderConfig& render, int history_frames)
    : sc_(&sc), renderer_(render), history_(history_frames) {
  if (history_frames <= 0) throw ConfigError("playback: non-positive history");
  if (sc.frames.empty()) throw DataError("playback: scenario has no frames");
}

int PlaybackEnv::max_ticks() const {
  const int fps = static_cast<int>(sc_->params.rate_hz + 0.5);
  // A live frame still needs the full label/ground-truth horizon ahead of it.
  return sc_->frame_count() - kHorizons * fps;
}

int PlaybackEnv::history_index(std::int64_t epoch, int slot) const {
  // Window of the `history_` frames ending at `epoch`; before the scenario has
  // that much past, the earliest frame repeats (a parked feed, not a hole).
  const std::int64_t idx = epoch - (history_ - 1) + slot;
  return static_cast<int>(std::max<std::int64_t>(0, idx));
}

Mat PlaybackEnv::ue_scene(std::int64_t epoch) const {
  std::vector<Mat> frames;
  frames.reserve(static_cast<std::size_t>(history_));
  for (int f = 0; f < history_; ++f)
    frames.push_back(renderer_.rgb_tokens(*sc_, history_index(epoch, f)));
  std::vector<const Mat*> parts;
  parts.reserve(frames.size());
  for (const Mat& m : frames) parts.push_back(&m);
  return concat_rows(parts);
}

SyncSample PlaybackEnv::sample_at(std::int64_t t, std::int64_t epoch) const {
  if (epoch < 0 || epoch > t)
    throw CacheError("playback: snapshot epoch " + std::to_string(epoch) +
                     " invalid for tick " + std::to_string(t));
  if (t >= max_ticks())
    throw DataError("playback: tick " + std::to_string(t) + " beyond scenario capacity " +
                    std::to_string(max_ticks()));

  SyncSample smp;
  smp.scenario_id = sc_->id;
  const std::int64_t anchor = history_index(epoch, 0);
  const std::int64_t offset = t - anchor;
  if (offset > 255)
    throw DataError("playback: offset " + std::to_string(offset) +
                    " overflows the sample encoding");
  smp.anchor = static_cast<std::uint16_t>(anchor);
  smp.k = static_cast<std::uint8_t>(offset);

  std::vector<Mat> frames;
  frames.reserve(static_cast<std::size_t>(history_) + 1);
  for (int f = 0; f < history_; ++f)
    frames.push_back(renderer_.rgb_tokens(*sc_, history_index(epoch, f)));
  frames.push_back(renderer_.rgb_tokens(*sc_, static_cast<int>(t)));
  std::vector<const Mat*> parts;
  parts.reserve(frames.size());
  for (const Mat& m : frames) parts.push_back(&m);
  smp.rgb = concat_rows(parts);
  smp.bev = renderer_.bev_tokens(*sc_, static_cast<int>(t));

  const EgoState& live = sc_->frames[static_cast<std::size_t>(t)];
  smp.ego = {live.v, live.theta, live.a};
  smp.ego_hist = Mat(history_, 3);
  for (int f = 0; f < history_; ++f) {
    const EgoState& hs = sc_->frames[static_cast<std::size_t>(history_index(epoch, f))];
    smp.ego_hist(f, 0) = hs.v;
    smp.ego_hist(f, 1) = hs.theta;
    smp.ego_hist(f, 2) = hs.a;
  }
  smp.labels = label_decisions(*sc_, static_cast<int>(t));
  smp.gt = ground_truth(*sc_, static_cast<int>(t));
  return smp;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t output_digest(const PolicyOutput& po) {
  std::uint64_t h = kFnvOffset;
  for (int tok : po.decisions.tokens) h = fnv1a_value(tok, h);
  h = mat_digest(po.logits, h);
  h = mat_digest(po.refined.temporal, h);
  h = mat_digest(po.refined.spatial, h);
  return h;
}

}  // namespace

RolloutResult run_rollout(const Scenario& sc, Policy& policy, const ClockConfig& clock,
                          int ticks, const RenderConfig& render, bool use_refiner) {
  clock.validate();
  const ModelConfig& mc = policy.config();
  if (render.width != mc.width || render.tokens_per_frame != mc.tokens_per_frame)
    throw ConfigError("rollout: renderer emits " + std::to_string(render.tokens_per_frame) +
                      "x" + std::to_string(render.width) + " tokens, model expects " +
                      std::to_string(mc.tokens_per_frame) + "x" + std::to_string(mc.width));
  PlaybackEnv env(sc, render, mc.history_frames);
  if (ticks < 1) throw ConfigError("rollout: non-positive tick count");
  if (ticks > env.max_ticks())
    throw DataError("rollout: " + std::to_string(ticks) + " ticks exceed scenario capacity " +
                    std::to_string(env.max_ticks()));

  SnapshotStore store;
  double ue_total = 0;
  std::int64_t ue_count = 0;
  // Encode the scene window ending at `epoch` and publish the snapshot,
  // returning the wall time spent. The repeat count only burns compute; every
  // pass produces the identical snapshot and the last one is published.
  const auto encode_publish = [&](std::int64_t epoch) -> double {
    const auto t0 = Clock::now();
    const Mat scene = env.ue_scene(epoch);
    std::shared_ptr<const LayerKVCache> snap;
    for (int r = 0; r < clock.ue_compute_scale; ++r)
      snap = std::make_shared<const LayerKVCache>(policy.understanding().encode(scene, epoch));
    store.publish(std::move(snap));
    return seconds_since(t0);
  };

  RolloutResult out;
  out.reports.reserve(static_cast<std::size_t>(ticks));
  out.decisions.reserve(static_cast<std::size_t>(ticks));
  out.trajectories.reserve(static_cast<std::size_t>(ticks));

  const auto act_tick = [&](std::int64_t t, TickReport& rep) {
    const auto cur = store.acquire_for(t);
    rep.t = t;
    rep.epoch = cur->epoch;
    rep.staleness = t - cur->epoch;
    const SyncSample smp = env.sample_at(t, cur->epoch);
    const auto t0 = Clock::now();
    const PolicyOutput po = policy.infer(smp, *cur, use_refiner);
    rep.ae_s = seconds_since(t0);
    rep.out_digest = output_digest(po);
    out.decisions.push_back(po.decisions);
    out.trajectories.push_back(po.refined);
    out.reports.push_back(rep);
  };

  if (clock.deterministic || clock.mode == ClockMode::coupled) {
    // One thread, interleaved by schedule. Publish delay is zero: the tick
    // that triggers an encode consumes it immediately.
    for (std::int64_t t = 0; t < ticks; ++t) {
      TickReport rep;
      const bool encode = clock.mode == ClockMode::coupled || t % clock.ue_period == 0;
      if (encode) {
        rep.ue_s = encode_publish(t);
        ue_total += rep.ue_s;
        ++ue_count;
      }
      act_tick(t, rep);
    }
  } else {
    // Benchmark decoupled: the slow clock lives on its own worker and the two
    // sides communicate only through the snapshot store. The forced encode at
    // t=0 (charged to the first tick) is what prevents a cold-cache start.
    std::atomic<std::int64_t> now_tick{0};
    std::atomic<bool> stop{false};
    const double warm_s = encode_publish(0);
    ue_total += warm_s;
    ++ue_count;
    std::vector<double> worker_times;
    std::thread worker([&] {
      std::int64_t next_base = clock.ue_period;
      while (!stop.load(std::memory_order_acquire)) {
        const std::int64_t tick = now_tick.load(std::memory_order_acquire);
        if (tick >= next_base && tick < ticks) {
          // Epoch stamps the tick current when the encode starts; by the time
          // it publishes, the fast clock may have moved on — that lag is the
          // staleness the reports measure.
          const std::int64_t epoch = tick;
          worker_times.push_back(encode_publish(epoch));
          next_base = epoch + clock.ue_period;
        } else {
          std::this_thread::sleep_for(std::chrono::microseconds(100));
        }
      }
    });
    for (std::int64_t t = 0; t < ticks; ++t) {
      now_tick.store(t, std::memory_order_release);
      TickReport rep;
      rep.ue_s = t == 0 ? warm_s : 0.0;
      act_tick(t, rep);
    }
    stop.store(true, std::memory_order_release);
    worker.join();
    for (double s : worker_times) ue_total += s;
    ue_count += static_cast<std::int64_t>(worker_times.size());
  }

  std::uint64_t digest = kFnvOffset;
  double tick_total = 0, ae_total = 0;
  for (const TickReport& rep : out.reports) {
    digest = fnv1a_value(rep.out_digest, digest);
    tick_total += rep.ae_s + rep.ue_s;
    ae_total += rep.ae_s;
  }
  out.digest = digest;
  out.mean_tick_s = tick_total / static_cast<double>(ticks);
  out.mean_ae_s = ae_total / static_cast<double>(ticks);
  out.mean_ue_s = ue_count > 0 ? ue_total / static_cast<double>(ue_count) : 0.0;
  return out;
}

}  // namespace tandem
