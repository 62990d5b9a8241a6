#include "tandem/dataset.hpp"

#include <fstream>

#include "tandem/binio.hpp"
#include "tandem/hash.hpp"

namespace tandem {

namespace {
constexpr char kMagic[9] = "TDMDATA1";

void write_mat_f32(BinWriter& w, const Mat& m) {
  for (std::size_t i = 0; i < m.size(); ++i)
    w.value<float>(static_cast<float>(m.data()[i]));
}

Mat read_mat_f32(BinReader& r, int rows, int cols) {
  Mat m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(r.value<float>());
  return m;
}

void write_mat_f64(BinWriter& w, const Mat& m) {
  w.bytes(m.data(), m.size() * sizeof(double));
}

Mat read_mat_f64(BinReader& r, int rows, int cols) {
  Mat m(rows, cols);
  r.bytes(m.data(), m.size() * sizeof(double));
  return m;
}
}  // namespace

void SynthParams::validate() const {
  if (scenario_count <= 0 || samples_per_scenario <= 0)
    throw ConfigError("synth: non-positive counts");
  if (history_frames <= 0) throw ConfigError("synth: non-positive history");
  if (async_fraction < 0 || async_fraction > 1)
    throw ConfigError("synth: async_fraction outside [0, 1]");
  if (force_k != -1 && (force_k < 3 || force_k > 5))
    throw ConfigError("synth: force_k must be -1 or in [3, 5]");
}

Scenario sample_scenario(const SynthParams& params, std::uint32_t scenario_id) {
  return build_scenario(scenario_id, derive_seed(params.seed, scenario_id, 1),
                        params.scenario);
}

std::vector<SyncSample> synth_samples(const SynthParams& params) {
  params.validate();
  const Renderer renderer(params.render);
  const int kmax = 5;
  std::vector<SyncSample> out;
  out.reserve(static_cast<std::size_t>(params.scenario_count) *
              static_cast<std::size_t>(params.samples_per_scenario));

  for (int s = 0; s < params.scenario_count; ++s) {
    const auto sid = static_cast<std::uint32_t>(s);
    const Scenario sc = sample_scenario(params, sid);
    // Anchor ceiling is computed for the worst-case offset regardless of the
    // draw, so sweeps over forced offsets see identical anchor distributions.
    const int anchor_max =
        std::min(sc.last_anchor_frame(kmax),
                 static_cast<int>(sc.params.duration_s * sc.params.rate_hz));
    if (anchor_max < 0) throw DataError("synth: scenario too short for the protocol");

    Rng rng(derive_seed(params.seed, sid, 2));
    for (int j = 0; j < params.samples_per_scenario; ++j) {
      SyncSample smp;
      smp.scenario_id = sid;
      smp.anchor = static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(anchor_max) + 1));
      if (params.force_k >= 0) {
        smp.k = static_cast<std::uint8_t>(params.force_k);
        (void)rng.uniform();  // keep the stream aligned with the protocol draw
        (void)rng.bernoulli(0.5);
      } else if (rng.uniform() < params.async_fraction) {
        smp.k = rng.bernoulli(0.5) ? 5 : 4;
      } else {
        smp.k = 3;
        (void)rng.bernoulli(0.5);  // stream alignment, as above
      }

      const int t0 = smp.anchor;
      const int live = t0 + smp.k;
      std::vector<Mat> frames;
      frames.reserve(static_cast<std::size_t>(params.history_frames) + 1);
      for (int f = 0; f < params.history_frames; ++f)
        frames.push_back(renderer.rgb_tokens(sc, t0 + f));
      frames.push_back(renderer.rgb_tokens(sc, live));
      std::vector<const Mat*> fp;
      for (const auto& m : frames) fp.push_back(&m);
      smp.rgb = concat_rows(fp);
      smp.bev = renderer.bev_tokens(sc, live);

      const EgoState& st = sc.frames[static_cast<std::size_t>(live)];
      smp.ego = {st.v, st.theta, st.a};
      smp.ego_hist = Mat(params.history_frames, 3);
      for (int f = 0; f < params.history_frames; ++f) {
        const EgoState& hs = sc.frames[static_cast<std::size_t>(t0 + f)];
        smp.ego_hist(f, 0) = hs.v;
        smp.ego_hist(f, 1) = hs.theta;
        smp.ego_hist(f, 2) = hs.a;
      }
      smp.labels = label_decisions(sc, live);
      smp.gt = ground_truth(sc, live);
      out.push_back(std::move(smp));
    }
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<SyncSample>& samples,
                   const SynthParams& params,
                   const std::vector<std::pair<std::string, std::string>>& manifest_extra) {
  const int d = params.render.width;
  const int tpf = params.render.tokens_per_frame;
  {
    BinWriter w(path);
    w.magic(kMagic);
    w.value<std::uint32_t>(1);  // version
    w.value<std::int32_t>(d);
    w.value<std::int32_t>(tpf);
    w.value<std::int32_t>(params.history_frames);
    w.value<std::int32_t>(kTemporalPoints);
    w.value<std::int32_t>(kSpatialPoints);
    w.value<std::int32_t>(kHorizons);
    w.value<std::int32_t>(kDecisionTokens);
    w.value<double>(params.scenario.rate_hz);
    w.value<std::int64_t>(static_cast<std::int64_t>(samples.size()));

    for (const SyncSample& s : samples) {
      const std::uint32_t rgb_bytes =
          static_cast<std::uint32_t>(s.rgb.size() * sizeof(float));
      const std::uint32_t bev_bytes =
          static_cast<std::uint32_t>(s.bev.size() * sizeof(float));
      const std::uint32_t record_len =
          4 + 2 + 1 + rgb_bytes + bev_bytes + 3 * 8 +
          static_cast<std::uint32_t>(s.ego_hist.size() * 8) + kDecisionTokens +
          static_cast<std::uint32_t>((s.gt.temporal.size() + s.gt.spatial.size()) * 8);
      w.value<std::uint32_t>(record_len);
      w.value<std::uint32_t>(s.scenario_id);
      w.value<std::uint16_t>(s.anchor);
      w.value<std::uint8_t>(s.k);
      write_mat_f32(w, s.rgb);
      write_mat_f32(w, s.bev);
      for (double e : s.ego) w.value<double>(e);
      write_mat_f64(w, s.ego_hist);
      for (int t : s.labels.tokens) w.value<std::uint8_t>(static_cast<std::uint8_t>(t));
      write_mat_f64(w, s.gt.temporal);
      write_mat_f64(w, s.gt.spatial);
    }
    w.close();
  }

  // Companion manifest: human-readable provenance and counts.
  std::array<int, 6> k_hist{};
  for (const auto& s : samples)
    if (s.k < k_hist.size()) ++k_hist[s.k];
  std::ofstream mf(path + ".manifest", std::ios::trunc);
  if (!mf) throw DataError("cannot write manifest for " + path);
  mf << "format = tandem-dataset-v1\n";
  mf << "seed = " << params.seed << "\n";
  mf << "scenario_count = " << params.scenario_count << "\n";
  mf << "samples_per_scenario = " << params.samples_per_scenario << "\n";
  mf << "async_fraction = " << params.async_fraction << "\n";
  mf << "force_k = " << params.force_k << "\n";
  mf << "render_seed = " << params.render.seed << "\n";
  mf << "width = " << d << "\n";
  mf << "tokens_per_frame = " << tpf << "\n";
  mf << "history_frames = " << params.history_frames << "\n";
  mf << "rate_hz = " << params.scenario.rate_hz << "\n";
  mf << "count = " << samples.size() << "\n";
  mf << "k3 = " << k_hist[3] << "\n";
  mf << "k4 = " << k_hist[4] << "\n";
  mf << "k5 = " << k_hist[5] << "\n";
  mf << "payload_digest = " << hex_digest(file_digest(path)) << "\n";
  for (const auto& [k, v] : manifest_extra) mf << k << " = " << v << "\n";
  if (!mf.good()) throw DataError("manifest write failed for " + path);
}

std::vector<SyncSample> load_dataset(const std::string& path, DatasetHeader* header_out) {
  BinReader r(path);
  r.expect_magic(kMagic);
  DatasetHeader h;
  h.version = r.value<std::uint32_t>();
  if (h.version != 1)
    throw DataError(path + ": unsupported dataset version " + std::to_string(h.version));
  h.width = r.value<std::int32_t>();
  h.tokens_per_frame = r.value<std::int32_t>();
  h.history_frames = r.value<std::int32_t>();
  h.temporal_points = r.value<std::int32_t>();
  h.spatial_points = r.value<std::int32_t>();
  h.horizons = r.value<std::int32_t>();
  h.decision_tokens = r.value<std::int32_t>();
  h.rate_hz = r.value<double>();
  h.count = r.value<std::int64_t>();
  if (h.width <= 0 || h.tokens_per_frame <= 0 || h.history_frames <= 0 || h.count < 0)
    throw DataError(path + ": implausible dataset header");

  std::vector<SyncSample> out;
  out.reserve(static_cast<std::size_t>(h.count));
  const int rgb_rows = (h.history_frames + 1) * h.tokens_per_frame;
  for (std::int64_t i = 0; i < h.count; ++i) {
    const auto record_len = r.value<std::uint32_t>();
    (void)record_len;
    SyncSample s;
    s.scenario_id = r.value<std::uint32_t>();
    s.anchor = r.value<std::uint16_t>();
    s.k = r.value<std::uint8_t>();
    if (s.k < 3 || s.k > 5)
      throw DataError(path + ": record " + std::to_string(i) + " has offset k=" +
                      std::to_string(s.k));
    s.rgb = read_mat_f32(r, rgb_rows, h.width);
    s.bev = read_mat_f32(r, h.tokens_per_frame, h.width);
    for (double& e : s.ego) e = r.value<double>();
    s.ego_hist = read_mat_f64(r, h.history_frames, 3);
    for (int& t : s.labels.tokens) t = r.value<std::uint8_t>();
    s.labels.validate();
    s.gt.temporal = read_mat_f64(r, h.temporal_points, 2);
    s.gt.spatial = read_mat_f64(r, h.spatial_points, 2);
    out.push_back(std::move(s));
  }
  if (!r.at_eof()) throw DataError(path + ": trailing bytes after last record");
  if (header_out) *header_out = h;
  return out;
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for digest: " + path);
  std::uint64_t h = kFnvOffset;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

}  // namespace tandem
