#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tandem/checkpoint.hpp"
#include "tandem/config.hpp"
#include "tandem/dataset.hpp"
#include "tandem/gradcheck.hpp"
#include "tandem/metrics.hpp"
#include "tandem/scheduler.hpp"
#include "tandem/train.hpp"

namespace {

using namespace tandem;

// Shared across all verbs: one config document plus ad-hoc overrides.
struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;

  RunConfig resolve() const {
    RunConfig rc = path.empty() ? RunConfig{} : load_config_file(path);
    for (const std::string& s : sets) apply_override(rc, s);
    rc.validate();
    return rc;
  }
};

void check_dataset_header(const DatasetHeader& h, const RunConfig& rc,
                          const std::string& path) {
  const ModelConfig& mc = rc.model;
  if (h.width != mc.width || h.tokens_per_frame != mc.tokens_per_frame ||
      h.history_frames != mc.history_frames || h.temporal_points != mc.temporal_points ||
      h.spatial_points != mc.spatial_points || h.rate_hz != rc.scenario.rate_hz)
    throw ConfigError(path + ": dataset geometry does not match the config (file " +
                      std::to_string(h.width) + "w/" + std::to_string(h.tokens_per_frame) +
                      "tpf, config " + std::to_string(mc.width) + "w/" +
                      std::to_string(mc.tokens_per_frame) + "tpf)");
}

Policy make_policy(const RunConfig& rc, const std::string& ckpt, bool untrained) {
  Policy policy;
  policy.init(rc.model);
  if (!ckpt.empty()) {
    load_checkpoint(ckpt, policy, rc.digest());
    std::cout << "loaded checkpoint " << ckpt << " (config digest "
              << hex_digest(rc.digest()) << ")\n";
  } else if (!untrained) {
    throw ConfigError("no checkpoint given; pass --ckpt or opt in with --untrained");
  } else {
    std::cout << "using untrained weights (--untrained)\n";
  }
  return policy;
}

std::string decision_csv(const OpenLoopReport& rep) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "metric,at_1s,at_2s,avg\n";
  os << "lateral_acc_pct," << rep.lateral_acc[0] << "," << rep.lateral_acc[1] << ","
     << rep.lateral_avg << "\n";
  os << "longitudinal_acc_pct," << rep.longitudinal_acc[0] << "," << rep.longitudinal_acc[1]
     << "," << rep.longitudinal_avg << "\n";
  os << "joint_acc_pct," << rep.joint_acc[0] << "," << rep.joint_acc[1] << ","
     << rep.joint_avg << "\n";
  return os.str();
}

int run_synth_data(const RunConfig& rc, const std::string& out) {
  const SynthParams params = rc.synth();
  const std::vector<SyncSample> samples = synth_samples(params);
  write_dataset(out, samples, params,
                {{"config_digest", hex_digest(rc.digest())}});
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n"
            << "payload digest " << hex_digest(file_digest(out)) << " (manifest beside it)\n";
  return 0;
}

int run_train(const RunConfig& rc, const std::string& data, const std::string& head_str,
              const std::string& out, const std::string& curve, const std::string& resume,
              int dtype) {
  DatasetHeader header;
  const std::vector<SyncSample> samples = load_dataset(data, &header);
  check_dataset_header(header, rc, data);
  const TrainHead head = parse_head(head_str);

  Policy policy;
  policy.init(rc.model);
  OptimizerState opt;
  if (!resume.empty()) {
    load_checkpoint(resume, policy, rc.digest(), &opt);
    std::cout << "resuming from " << resume << " at step " << opt.step << "\n";
  }

  const TrainResult res =
      train(policy, samples, rc, head, &opt, [&](const LossRow& row) {
        if (row.step % rc.train.log_every == 0)
          std::cout << "step " << row.step << " [" << row.phase << "] total " << row.total
                    << " (nll " << row.nll << ", l_t " << row.l_temporal << ", l_s "
                    << row.l_spatial << ")\n";
        return true;
      });

  save_checkpoint(out, policy, rc.digest(), dtype, &opt);
  if (!curve.empty()) write_text_file(curve, loss_csv(res.curve, rc.train.log_every));

  std::cout << "trained " << res.steps_run << " steps (head " << head_name(head) << ")\n";
  if (!res.curve.empty())
    std::cout << "loss " << res.curve.front().total << " -> " << res.curve.back().total
              << "\n";
  std::cout << "scene-encoder digest unchanged: " << hex_digest(res.ue_digest_after) << "\n"
            << "checkpoint " << out << " (dtype f" << 8 * dtype << ")\n";
  if (!curve.empty()) std::cout << "loss curve " << curve << "\n";
  return 0;
}

int run_eval_openloop(const RunConfig& rc, const std::string& data, const std::string& ckpt,
                      bool untrained, const std::string& csv, const std::string& sweep) {
  Policy policy = make_policy(rc, ckpt, untrained);
  const EvalParams ep{rc.eval.ego_radius, rc.eval.use_refiner};

  if (!sweep.empty()) {
    std::vector<int> offsets;
    std::stringstream ss(sweep);
    std::string tok;
    while (std::getline(ss, tok, ',')) offsets.push_back(std::stoi(tok));
    const std::vector<SweepRow> rows = staleness_sweep(policy, rc.synth(), offsets, ep);
    std::cout << sweep_summary(rows);
    if (!csv.empty()) {
      write_text_file(csv, sweep_csv(rows));
      std::cout << "csv " << csv << "\n";
    }
    return 0;
  }

  DatasetHeader header;
  const std::vector<SyncSample> samples = load_dataset(data, &header);
  check_dataset_header(header, rc, data);
  ScenarioBank bank(rc.synth());
  const OpenLoopReport rep = eval_open_loop(policy, samples, bank, ep);
  std::cout << open_loop_summary(rep);
  if (!csv.empty()) {
    write_text_file(csv, open_loop_csv(rep));
    std::cout << "csv " << csv << "\n";
  }
  return 0;
}

int run_eval_decision(const RunConfig& rc, const std::string& data, const std::string& ckpt,
                      bool untrained, const std::string& csv) {
  Policy policy = make_policy(rc, ckpt, untrained);
  DatasetHeader header;
  const std::vector<SyncSample> samples = load_dataset(data, &header);
  check_dataset_header(header, rc, data);
  ScenarioBank bank(rc.synth());
  const OpenLoopReport rep =
      eval_open_loop(policy, samples, bank, {rc.eval.ego_radius, rc.eval.use_refiner});

  std::cout << std::setprecision(9);
  std::cout << "decision accuracy over " << rep.samples << " samples (%)\n";
  std::cout << "  lateral       1s " << rep.lateral_acc[0] << "  2s " << rep.lateral_acc[1]
            << "  avg " << rep.lateral_avg << "\n";
  std::cout << "  longitudinal  1s " << rep.longitudinal_acc[0] << "  2s "
            << rep.longitudinal_acc[1] << "  avg " << rep.longitudinal_avg << "\n";
  std::cout << "  joint         1s " << rep.joint_acc[0] << "  2s " << rep.joint_acc[1]
            << "  avg " << rep.joint_avg << "\n";
  if (!csv.empty()) {
    write_text_file(csv, decision_csv(rep));
    std::cout << "csv " << csv << "\n";
  }
  return 0;
}

int run_rollout_verb(const RunConfig& rc, const std::string& ckpt, bool untrained, int count,
                     const std::string& csv) {
  Policy policy = make_policy(rc, ckpt, untrained);
  const SynthParams sp = rc.synth();
  std::vector<Scenario> suite;
  for (int id = 0; id < count; ++id)
    suite.push_back(sample_scenario(sp, static_cast<std::uint32_t>(id)));

  ClosedLoopParams params;
  params.clock = rc.clock;
  params.render = rc.render();
  params.max_ticks = rc.eval.max_ticks;
  params.goal_radius = rc.eval.goal_radius;
  params.ego_radius = rc.eval.ego_radius;
  params.accel_min = rc.eval.accel_min;
  params.accel_max = rc.eval.accel_max;
  params.kappa_max = rc.eval.kappa_max;
  params.use_refiner = rc.eval.use_refiner;

  const ClosedLoopReport rep = rollout_closed_loop(policy, suite, params);
  std::cout << closed_loop_summary(rep);
  if (!csv.empty()) {
    write_text_file(csv, closed_loop_csv(rep));
    std::cout << "csv " << csv << "\n";
  }
  return 0;
}

int run_bench_latency(const RunConfig& rc, const std::string& ckpt, bool untrained,
                      int scenario_id, int ticks, bool compare, const std::string& csv) {
  Policy policy;
  policy.init(rc.model);
  if (!ckpt.empty()) {
    load_checkpoint(ckpt, policy, rc.digest());
  } else if (!untrained) {
    std::cout << "note: timing with untrained weights (latency is weight-independent)\n";
  }
  const Scenario sc = sample_scenario(rc.synth(), static_cast<std::uint32_t>(scenario_id));

  auto describe = [&](const char* label, const RolloutResult& rr) {
    std::cout << label << ": mean tick " << rr.mean_tick_s * 1e3 << " ms (action "
              << rr.mean_ae_s * 1e3 << " ms, scene encode " << rr.mean_ue_s * 1e3
              << " ms per encode)\n";
  };

  const RolloutResult rr =
      run_rollout(sc, policy, rc.clock, ticks, rc.render(), rc.eval.use_refiner);
  describe(rc.clock.mode == ClockMode::coupled ? "coupled" : "decoupled", rr);

  if (compare) {
    ClockConfig other = rc.clock;
    other.mode =
        rc.clock.mode == ClockMode::coupled ? ClockMode::decoupled : ClockMode::coupled;
    const RolloutResult ro =
        run_rollout(sc, policy, other, ticks, rc.render(), rc.eval.use_refiner);
    describe(other.mode == ClockMode::coupled ? "coupled" : "decoupled", ro);
    const double dec = rc.clock.mode == ClockMode::coupled ? ro.mean_tick_s : rr.mean_tick_s;
    const double cpl = rc.clock.mode == ClockMode::coupled ? rr.mean_tick_s : ro.mean_tick_s;
    std::cout << "decoupled/coupled mean tick ratio " << dec / cpl << "\n";
  }

  if (!csv.empty()) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "tick,epoch,staleness,ae_s,ue_s\n";
    for (const TickReport& t : rr.reports)
      os << t.t << "," << t.epoch << "," << t.staleness << "," << t.ae_s << "," << t.ue_s
         << "\n";
    write_text_file(csv, os.str());
    std::cout << "csv " << csv << "\n";
  }
  std::cout << "output digest " << hex_digest(rr.digest) << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, int instances, int entries, double step,
                  double tolerance) {
  GradCheckConfig gc;
  gc.entries_per_param = entries;
  gc.step = step;
  gc.tolerance = tolerance;

  bool all_pass = true;
  for (int i = 0; i < instances; ++i) {
    gc.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    const GradCheckReport a = grad_check_action(gc);
    const GradCheckReport r = grad_check_refiner(gc);
    all_pass = all_pass && a.pass() && r.pass();
    std::cout << "instance " << i << ": action " << (a.pass() ? "pass" : "FAIL")
              << " (max |diff| " << a.max_abs << " at " << (a.worst.empty() ? "-" : a.worst)
              << ", " << a.tensors << " tensors), refiner " << (r.pass() ? "pass" : "FAIL")
              << " (max |diff| " << r.max_abs << " at " << (r.worst.empty() ? "-" : r.worst)
              << ", " << r.tensors << " tensors)\n";
  }
  std::cout << (all_pass ? "gradient check passed" : "gradient check FAILED") << "\n";
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "tandem: decoupled dual-expert driving stack — synthetic data, training, and "
      "evaluation.\nEvery verb reads one config document (--config) plus --set overrides."};
  app.require_subcommand(0, 1);

  ConfigArgs cfg_args;
  bool print_config = false;
  app.add_option("--config", cfg_args.path, "run-config path (built-in defaults if omitted)");
  app.add_option("--set", cfg_args.sets, "override, key=value (repeatable)")
      ->type_name("KEY=VALUE");
  app.add_flag("--print-config", print_config, "print the effective config and exit");

  auto* synth = app.add_subcommand("synth-data", "generate the synthetic driving dataset");
  synth->fallthrough();
  std::string synth_out;
  synth->add_option("--out", synth_out, "dataset file to write")->required();

  auto* trn = app.add_subcommand("train", "optimize the action expert (and refiner)");
  trn->fallthrough();
  std::string trn_data, trn_head = "mlp", trn_out, trn_curve, trn_resume;
  int trn_dtype = 8;
  trn->add_option("--data", trn_data, "dataset file")->required();
  trn->add_option("--head", trn_head, "trajectory head: mlp or diffusion")
      ->check(CLI::IsMember({"mlp", "diffusion"}));
  trn->add_option("--out", trn_out, "checkpoint to write")->required();
  trn->add_option("--curve", trn_curve, "loss-curve CSV to write");
  trn->add_option("--resume", trn_resume, "checkpoint to resume from");
  trn->add_option("--dtype", trn_dtype, "checkpoint scalar bytes: 8 (exact) or 4")
      ->check(CLI::IsMember({4, 8}));

  auto* evo = app.add_subcommand("eval-openloop", "open-loop trajectory/decision report");
  evo->fallthrough();
  std::string evo_data, evo_ckpt, evo_csv, evo_sweep;
  bool evo_untrained = false;
  evo->add_option("--data", evo_data, "dataset file");
  evo->add_option("--ckpt", evo_ckpt, "policy checkpoint");
  evo->add_flag("--untrained", evo_untrained, "evaluate fresh weights (baselines)");
  evo->add_option("--csv", evo_csv, "report CSV to write");
  evo->add_option("--sweep", evo_sweep,
                  "staleness sweep over comma-separated offsets (e.g. 0,1,2); "
                  "regenerates pinned-offset datasets instead of reading --data");

  auto* evd = app.add_subcommand("eval-decision", "decision-accuracy report");
  evd->fallthrough();
  std::string evd_data, evd_ckpt, evd_csv;
  bool evd_untrained = false;
  evd->add_option("--data", evd_data, "dataset file")->required();
  evd->add_option("--ckpt", evd_ckpt, "policy checkpoint");
  evd->add_flag("--untrained", evd_untrained, "evaluate fresh weights (baselines)");
  evd->add_option("--csv", evd_csv, "report CSV to write");

  auto* rol = app.add_subcommand("rollout", "closed-loop scenario runs");
  rol->fallthrough();
  std::string rol_ckpt, rol_csv;
  bool rol_untrained = false;
  int rol_count = 8;
  rol->add_option("--ckpt", rol_ckpt, "policy checkpoint");
  rol->add_flag("--untrained", rol_untrained, "roll out fresh weights (baselines)");
  rol->add_option("--count", rol_count, "number of scenarios")->check(CLI::PositiveNumber);
  rol->add_option("--csv", rol_csv, "per-scenario CSV to write");

  auto* ben = app.add_subcommand("bench-latency", "tick-level latency structure");
  ben->fallthrough();
  std::string ben_ckpt, ben_csv;
  bool ben_untrained = false, ben_compare = false;
  int ben_ticks = 40, ben_scenario = 0;
  ben->add_option("--ckpt", ben_ckpt, "policy checkpoint (optional; timing only)");
  ben->add_flag("--untrained", ben_untrained, "silence the untrained-weights note");
  ben->add_option("--ticks", ben_ticks, "action ticks to run")->check(CLI::PositiveNumber);
  ben->add_option("--scenario", ben_scenario, "scenario id");
  ben->add_flag("--compare", ben_compare, "also run the opposite clock mode");
  ben->add_option("--csv", ben_csv, "per-tick CSV to write");

  auto* grd = app.add_subcommand("gradcheck", "finite-difference gradient validation");
  grd->fallthrough();
  int grd_instances = 5, grd_entries = 2;
  double grd_step = 1e-5, grd_tol = 1e-4;
  std::uint64_t grd_seed = 1;
  grd->add_option("--instances", grd_instances, "random instances")
      ->check(CLI::PositiveNumber);
  grd->add_option("--entries", grd_entries, "probed entries per tensor")
      ->check(CLI::PositiveNumber);
  grd->add_option("--step", grd_step, "central-difference step");
  grd->add_option("--tolerance", grd_tol, "relative-error bound");
  grd->add_option("--seed", grd_seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const RunConfig rc = cfg_args.resolve();
    if (print_config) {
      std::cout << config_text(rc);
      std::cout << "# compatibility digest " << hex_digest(rc.digest()) << "\n";
      return 0;
    }
    if (app.got_subcommand(synth)) return run_synth_data(rc, synth_out);
    if (app.got_subcommand(trn))
      return run_train(rc, trn_data, trn_head, trn_out, trn_curve, trn_resume, trn_dtype);
    if (app.got_subcommand(evo)) {
      if (evo_sweep.empty() && evo_data.empty())
        throw ConfigError("eval-openloop needs --data (or --sweep)");
      return run_eval_openloop(rc, evo_data, evo_ckpt, evo_untrained, evo_csv, evo_sweep);
    }
    if (app.got_subcommand(evd))
      return run_eval_decision(rc, evd_data, evd_ckpt, evd_untrained, evd_csv);
    if (app.got_subcommand(rol))
      return run_rollout_verb(rc, rol_ckpt, rol_untrained, rol_count, rol_csv);
    if (app.got_subcommand(ben))
      return run_bench_latency(rc, ben_ckpt, ben_untrained, ben_scenario, ben_ticks,
                               ben_compare, ben_csv);
    if (app.got_subcommand(grd))
      return run_gradcheck(grd_seed, grd_instances, grd_entries, grd_step, grd_tol);
    std::cout << app.help();
    return 0;
  } catch (const tandem::Error& e) {
    std::cerr << "tandem: error: " << e.what() << "\n";
    return 2;
  }
}
