#include "tandem/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "tandem/error.hpp"
#include "tandem/hash.hpp"

namespace tandem {

void TrainConfig::validate() const {
  if (steps < 0 || refiner_steps < 0) throw ConfigError("train: negative step count");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (!(lr > 0)) throw ConfigError("train: lr must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum outside [0, 1)");
  if (log_every < 1) throw ConfigError("train: log_every must be >= 1");
}

void EvalConfig::validate() const {
  if (ego_radius < 0) throw ConfigError("eval: negative ego_radius");
  if (!(goal_radius > 0)) throw ConfigError("eval: goal_radius must be positive");
  if (max_ticks < 1) throw ConfigError("eval: max_ticks must be >= 1");
  if (!(kappa_max > 0)) throw ConfigError("eval: kappa_max must be positive");
  if (!(accel_max > 0) || !(accel_min < 0))
    throw ConfigError("eval: acceleration bounds must straddle zero");
}

RenderConfig RunConfig::render() const {
  RenderConfig rc;
  rc.tokens_per_frame = model.tokens_per_frame;
  rc.width = model.width;
  rc.seed = render_seed;
  return rc;
}

SynthParams RunConfig::synth() const {
  SynthParams p;
  p.scenario = scenario;
  p.render = render();
  p.scenario_count = scenario_count;
  p.samples_per_scenario = samples_per_scenario;
  p.history_frames = model.history_frames;
  p.async_fraction = async_fraction;
  p.force_k = force_k;
  p.seed = data_seed;
  return p;
}

void RunConfig::validate() const {
  model.validate();
  synth().validate();
  train.validate();
  clock.validate();
  eval.validate();
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_ll(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  return x;
}

int parse_int(const std::string& key, const std::string& v) {
  return static_cast<int>(parse_ll(key, v));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || end != v.c_str() + v.size())
    throw ConfigError("config: bad unsigned integer for " + key + ": '" + v + "'");
  return static_cast<std::uint64_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: bad bool for " + key + " (want true/false): '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct KeyEntry {
  std::string name;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::vector<KeyEntry> build_registry() {
  std::vector<KeyEntry> ks;

  auto add_int = [&ks](const char* name, const char* doc,
                       std::function<int&(RunConfig&)> ref) {
    ks.push_back({name, doc,
                  [ref](const RunConfig& rc) {
                    return std::to_string(ref(const_cast<RunConfig&>(rc)));
                  },
                  [ref, name = std::string(name)](RunConfig& rc, const std::string& v) {
                    ref(rc) = parse_int(name, v);
                  }});
  };
  auto add_u64 = [&ks](const char* name, const char* doc,
                       std::function<std::uint64_t&(RunConfig&)> ref) {
    ks.push_back({name, doc,
                  [ref](const RunConfig& rc) {
                    return std::to_string(ref(const_cast<RunConfig&>(rc)));
                  },
                  [ref, name = std::string(name)](RunConfig& rc, const std::string& v) {
                    ref(rc) = parse_u64(name, v);
                  }});
  };
  auto add_double = [&ks](const char* name, const char* doc,
                          std::function<double&(RunConfig&)> ref) {
    ks.push_back({name, doc,
                  [ref](const RunConfig& rc) {
                    return fmt_double(ref(const_cast<RunConfig&>(rc)));
                  },
                  [ref, name = std::string(name)](RunConfig& rc, const std::string& v) {
                    ref(rc) = parse_double(name, v);
                  }});
  };
  auto add_bool = [&ks](const char* name, const char* doc,
                        std::function<bool&(RunConfig&)> ref) {
    ks.push_back({name, doc,
                  [ref](const RunConfig& rc) {
                    return std::string(ref(const_cast<RunConfig&>(rc)) ? "true" : "false");
                  },
                  [ref, name = std::string(name)](RunConfig& rc, const std::string& v) {
                    ref(rc) = parse_bool(name, v);
                  }});
  };

  add_int("model.width", "transformer width, shared by both experts",
          [](RunConfig& r) -> int& { return r.model.width; });
  add_int("model.layers", "transformer depth, shared by both experts",
          [](RunConfig& r) -> int& { return r.model.layers; });
  add_int("model.heads", "attention heads per layer",
          [](RunConfig& r) -> int& { return r.model.heads; });
  add_int("model.mlp_ratio", "MLP hidden size as a multiple of the width",
          [](RunConfig& r) -> int& { return r.model.mlp_ratio; });
  add_int("model.tokens_per_frame", "visual tokens per rendered frame (and per BEV map)",
          [](RunConfig& r) -> int& { return r.model.tokens_per_frame; });
  add_int("model.history_frames", "observation history length in frames",
          [](RunConfig& r) -> int& { return r.model.history_frames; });
  add_int("model.prompt_len", "learned prompt tokens in the scene encoder",
          [](RunConfig& r) -> int& { return r.model.prompt_len; });
  add_int("model.reasoning_len", "reasoning tokens appended by the scene encoder",
          [](RunConfig& r) -> int& { return r.model.reasoning_len; });
  add_int("model.temporal_points", "temporal waypoints per trajectory (0.5 s apart)",
          [](RunConfig& r) -> int& { return r.model.temporal_points; });
  add_int("model.spatial_points", "arc-length-even spatial route points",
          [](RunConfig& r) -> int& { return r.model.spatial_points; });
  add_u64("model.ue_seed", "init seed of the frozen scene encoder",
          [](RunConfig& r) -> std::uint64_t& { return r.model.ue_seed; });
  add_u64("model.ae_seed", "init seed of the action expert",
          [](RunConfig& r) -> std::uint64_t& { return r.model.ae_seed; });
  add_double("loss.lambda_spatial", "weight of the spatial L1 inside the combined loss",
             [](RunConfig& r) -> double& { return r.model.lambda_spatial; });

  add_int("refiner.blocks", "mixture-attention blocks in the trajectory refiner",
          [](RunConfig& r) -> int& { return r.model.refiner.blocks; });
  add_int("refiner.cond_hidden", "hidden width of the refiner conditioning trunk",
          [](RunConfig& r) -> int& { return r.model.refiner.cond_hidden; });
  add_int("refiner.schedule_steps", "full diffusion schedule length",
          [](RunConfig& r) -> int& { return r.model.refiner.schedule_steps; });
  add_int("refiner.trunc_steps", "truncated reverse steps run at inference",
          [](RunConfig& r) -> int& { return r.model.refiner.trunc_steps; });
  add_double("refiner.sigma_lon", "noise scale on the forward coordinate",
             [](RunConfig& r) -> double& { return r.model.refiner.sigma_lon; });
  add_double("refiner.sigma_lat", "noise scale on the lateral coordinate",
             [](RunConfig& r) -> double& { return r.model.refiner.sigma_lat; });
  add_bool("refiner.stochastic", "re-noise between reverse steps",
           [](RunConfig& r) -> bool& { return r.model.refiner.stochastic; });
  add_u64("refiner.seed", "init seed of the refiner",
          [](RunConfig& r) -> std::uint64_t& { return r.model.refiner.seed; });

  add_u64("render.seed", "seed of the fixed feature-projection matrices",
          [](RunConfig& r) -> std::uint64_t& { return r.render_seed; });

  add_double("scenario.duration_s", "anchor-eligible span of each scripted drive",
             [](RunConfig& r) -> double& { return r.scenario.duration_s; });
  add_double("scenario.margin_s", "simulated tail so every label has a future",
             [](RunConfig& r) -> double& { return r.scenario.margin_s; });
  add_double("scenario.rate_hz", "frame rate of the sampled trace",
             [](RunConfig& r) -> double& { return r.scenario.rate_hz; });
  add_double("scenario.sim_hz", "Euler integration rate",
             [](RunConfig& r) -> double& { return r.scenario.sim_hz; });
  add_int("scenario.obstacles", "static obstacles scripted beside the route",
          [](RunConfig& r) -> int& { return r.scenario.obstacles; });
  add_double("scenario.stop_speed", "below this speed the label reads stop (m/s)",
             [](RunConfig& r) -> double& { return r.scenario.stop_speed; });
  add_double("scenario.accel_delta", "speed gain labeling accelerate (m/s per horizon)",
             [](RunConfig& r) -> double& { return r.scenario.accel_delta; });
  add_double("scenario.slow_delta", "speed loss labeling slow (m/s per horizon)",
             [](RunConfig& r) -> double& { return r.scenario.slow_delta; });
  add_double("scenario.slight_deg_per_s", "heading rate entering the slight-turn band",
             [](RunConfig& r) -> double& { return r.scenario.slight_deg_per_s; });
  add_double("scenario.turn_deg_per_s", "heading rate entering the full-turn band",
             [](RunConfig& r) -> double& { return r.scenario.turn_deg_per_s; });

  add_int("data.scenario_count", "scripted drives in the synthetic dataset",
          [](RunConfig& r) -> int& { return r.scenario_count; });
  add_int("data.samples_per_scenario", "supervised samples drawn from each drive",
          [](RunConfig& r) -> int& { return r.samples_per_scenario; });
  add_double("data.async_fraction", "probability a sample's live frame is stale (k in {4,5})",
             [](RunConfig& r) -> double& { return r.async_fraction; });
  add_int("data.force_k", "pin every sample's offset to this k (-1 leaves it random)",
          [](RunConfig& r) -> int& { return r.force_k; });
  add_u64("data.seed", "dataset sampling seed",
          [](RunConfig& r) -> std::uint64_t& { return r.data_seed; });

  add_int("train.steps", "optimizer steps on the action expert",
          [](RunConfig& r) -> int& { return r.train.steps; });
  add_int("train.refiner_steps", "optimizer steps on the refiner (diffusion head only)",
          [](RunConfig& r) -> int& { return r.train.refiner_steps; });
  add_int("train.batch", "samples per optimizer step",
          [](RunConfig& r) -> int& { return r.train.batch; });
  add_double("train.lr", "learning rate",
             [](RunConfig& r) -> double& { return r.train.lr; });
  add_double("train.momentum", "momentum coefficient",
             [](RunConfig& r) -> double& { return r.train.momentum; });
  add_u64("train.seed", "batch-selection seed",
          [](RunConfig& r) -> std::uint64_t& { return r.train.seed; });
  add_int("train.log_every", "loss-curve row cadence in steps",
          [](RunConfig& r) -> int& { return r.train.log_every; });

  ks.push_back({"clock.mode", "coupled or decoupled expert clocks",
                [](const RunConfig& rc) {
                  return std::string(rc.clock.mode == ClockMode::coupled ? "coupled"
                                                                         : "decoupled");
                },
                [](RunConfig& rc, const std::string& v) {
                  if (v == "coupled")
                    rc.clock.mode = ClockMode::coupled;
                  else if (v == "decoupled")
                    rc.clock.mode = ClockMode::decoupled;
                  else
                    throw ConfigError("config: clock.mode must be coupled or decoupled, got '" +
                                      v + "'");
                }});
  add_int("clock.period", "scene-encoder refresh period in action ticks",
          [](RunConfig& r) -> int& { return r.clock.ue_period; });
  add_double("clock.tick_s", "wall seconds per action tick",
             [](RunConfig& r) -> double& { return r.clock.tick_s; });
  add_bool("clock.deterministic", "single-thread schedule with zero publish delay",
           [](RunConfig& r) -> bool& { return r.clock.deterministic; });
  add_int("clock.ue_compute_scale", "repeat scene encodes to model a heavier encoder",
          [](RunConfig& r) -> int& { return r.clock.ue_compute_scale; });

  add_double("eval.ego_radius", "ego disc radius inflating obstacle circles (m)",
             [](RunConfig& r) -> double& { return r.eval.ego_radius; });
  add_bool("eval.use_refiner", "run the diffusion refiner on predicted trajectories",
           [](RunConfig& r) -> bool& { return r.eval.use_refiner; });
  add_double("eval.goal_radius", "closed-loop goal circle radius (m)",
             [](RunConfig& r) -> double& { return r.eval.goal_radius; });
  add_int("eval.max_ticks", "closed-loop tick budget per scenario",
          [](RunConfig& r) -> int& { return r.eval.max_ticks; });
  add_double("eval.kappa_max", "curvature clamp of the tracking controller (1/m)",
             [](RunConfig& r) -> double& { return r.eval.kappa_max; });
  add_double("eval.accel_min", "acceleration clamp, braking side (m/s^2)",
             [](RunConfig& r) -> double& { return r.eval.accel_min; });
  add_double("eval.accel_max", "acceleration clamp, driving side (m/s^2)",
             [](RunConfig& r) -> double& { return r.eval.accel_max; });

  return ks;
}

const std::vector<KeyEntry>& registry() {
  static const std::vector<KeyEntry> ks = build_registry();
  return ks;
}

const KeyEntry& find_key(const std::string& name) {
  for (const KeyEntry& k : registry())
    if (k.name == name) return k;
  throw ConfigError("config: unknown key '" + name + "'");
}

void apply_line(RunConfig& rc, const std::string& raw, int line_no) {
  std::string line = raw;
  const std::size_t hash = line.find('#');
  if (hash != std::string::npos) line.erase(hash);
  line = trim(line);
  if (line.empty()) return;
  const std::size_t eq = line.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value: '" +
                      trim(raw) + "'");
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(line_no));
  find_key(key).set(rc, value);
}

// Section prefixes covered by the compatibility digest (see config.hpp).
bool digest_covers(const std::string& name) {
  for (const char* prefix : {"model.", "loss.", "refiner.", "render.", "scenario."})
    if (name.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& config_key_docs() {
  static const std::vector<std::pair<std::string, std::string>> docs = [] {
    std::vector<std::pair<std::string, std::string>> d;
    for (const KeyEntry& k : registry()) d.emplace_back(k.name, k.doc);
    return d;
  }();
  return docs;
}

RunConfig parse_config(const std::string& text) {
  RunConfig rc;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) apply_line(rc, line, ++line_no);
  return rc;
}

void apply_override(RunConfig& rc, const std::string& assignment) {
  apply_line(rc, assignment, 0);
}

std::string config_text(const RunConfig& rc) {
  std::ostringstream os;
  std::string section;
  for (const KeyEntry& k : registry()) {
    const std::string sec = k.name.substr(0, k.name.find('.'));
    if (sec != section) {
      if (!section.empty()) os << "\n";
      section = sec;
    }
    os << k.name << " = " << k.get(rc) << "  # " << k.doc << "\n";
  }
  return os.str();
}

std::string default_config_text() { return config_text(RunConfig{}); }

std::string RunConfig::digest_text() const {
  std::ostringstream os;
  for (const KeyEntry& k : registry())
    if (digest_covers(k.name)) os << k.name << " = " << k.get(*this) << "\n";
  return os.str();
}

std::uint64_t RunConfig::digest() const { return fnv1a(digest_text()); }

RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

}  // namespace tandem
