// aoip-sim: peer-to-peer audio-over-IP relay simulator and benchmarking
// harness.  Subcommands mirror the pipeline entry points: simulate one relay,
// generate dynamic-mixing data, sweep impairment grids, aggregate reports.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aoip/aoip.hpp"

namespace {

using nlohmann::json;

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

void notice_ignored_aws_env() {
  if (std::getenv("AWS_ACCESS_KEY_ID") != nullptr ||
      std::getenv("AWS_SECRET_ACCESS_KEY") != nullptr) {
    std::cerr << "notice: AWS credentials in the environment are accepted and ignored; "
                 "this simulator provisions locally\n";
  }
}

struct CommonPaths {
  std::filesystem::path object_root;
  std::filesystem::path corpus_root;
  std::filesystem::path log_root;
};

CommonPaths common_paths() {
  return {env_or("OBJECT_ROOT", "./object_store"), env_or("CORPUS_ROOT", "./corpus"),
          env_or("LOG_ROOT", "./logs")};
}

// Owns every service one command needs.
struct Services {
  aoip::AuditLog audit;
  aoip::provision::Registry registry;
  aoip::storage::ObjectStore store;
  aoip::transport::LocalResolver resolver;
  aoip::transport::LocalExchange exchange;
  aoip::orch::OrchestratorDeps deps;

  Services(const CommonPaths& paths, aoip::provision::Quotas quotas, std::uint64_t seed)
      : registry(quotas, audit, paths.log_root / "keys", seed),
        store(paths.object_root, &audit) {
    audit.set_sink(paths.log_root / "audit.log");
    deps.registry = &registry;
    deps.store = &store;
    deps.audit = &audit;
    deps.resolver = &resolver;
    deps.exchange = &exchange;
    deps.corpus_root = paths.corpus_root;
    deps.log_root = paths.log_root;
  }
};

json record_to_json(const aoip::orch::JobRecord& rec) {
  json timings = json::array();
  for (const auto& t : rec.timings) {
    timings.push_back(
        {{"step", t.step}, {"start_ms", t.start_ms}, {"end_ms", t.end_ms}, {"ok", t.ok}});
  }
  return json{{"job_id", rec.job_id},
              {"tracking_id", rec.tracking_id},
              {"source", rec.source},
              {"success", rec.success},
              {"failed_step", rec.failed_step},
              {"reason", rec.reason},
              {"output_object", rec.output_object},
              {"attempts", rec.attempts},
              {"timings", timings}};
}

json report_to_json(const aoip::orch::RunReport& report) {
  json jobs = json::array();
  for (const auto& rec : report.jobs) jobs.push_back(record_to_json(rec));
  return json{{"total_jobs", report.total_jobs},
              {"successes", report.successes},
              {"failures", report.failures},
              {"completion_accuracy", report.completion_accuracy},
              {"summary", report.summary()},
              {"jobs", jobs}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aoip-sim: audio-over-IP relay simulator and benchmarking harness"};
  app.require_subcommand(1);
  notice_ignored_aws_env();

  // --- simulate -------------------------------------------------------------
  // Required-ness of the core flags is enforced by the config parser itself,
  // so a --config-file can supply any flag the command line leaves out.
  auto* sim = app.add_subcommand("simulate", "Run one relay simulation");
  std::string sreg, rreg, sins, rins, sami, rami, src, s3, tid, config_file;
  int dur = 0, subw = 0, sdbw = 0, rubw = 0, rdbw = 0, disk = 8;
  std::uint64_t sim_seed = 0;
  bool prebaked = false;
  double extra_loss = 0, extra_latency = 0, extra_jitter = 0;
  std::string channel = "mem";
  int frame_ms = aoip::audio::kDefaultFrameMs;
  int sim_max_vcpus = 100, sim_max_connections = 10;
  sim->add_option("--sreg,--sender-region", sreg, "Sender region label");
  sim->add_option("--rreg,--receiver-region", rreg, "Receiver region label");
  sim->add_option("--sins,--sender-instance-type", sins, "Sender instance type");
  sim->add_option("--rins,--receiver-instance-type", rins, "Receiver instance type");
  sim->add_option("--sami,--sender-ami", sami, "Sender image label");
  sim->add_option("--rami,--receiver-ami", rami, "Receiver image label");
  sim->add_option("--src,--src-audio-config", src, "Source set label");
  sim->add_option("--dur,--duration", dur, "Call duration in seconds");
  sim->add_option("--subw", subw, "Sender upload bandwidth, kbps");
  sim->add_option("--sdbw", sdbw, "Sender download bandwidth, kbps");
  sim->add_option("--rubw", rubw, "Receiver upload bandwidth, kbps");
  sim->add_option("--rdbw", rdbw, "Receiver download bandwidth, kbps");
  sim->add_option("--s3,--storage-url", s3, "Storage URL for the recording");
  sim->add_option("--tid,--tracking-id", tid, "Tracking id (generated if absent)");
  sim->add_option("--seed", sim_seed, "Seed for every stochastic element");
  sim->add_option("--disk", disk, "Node disk size, GB");
  sim->add_flag("--prebaked", prebaked, "Use the prebaked image setup path");
  sim->add_option("--config-file", config_file, "key=value file supplying flags");
  sim->add_option("--loss", extra_loss, "Extra packet loss probability [0,1]");
  sim->add_option("--latency", extra_latency, "Extra one-way latency, ms");
  sim->add_option("--jitter", extra_jitter, "Extra jitter half-width, ms");
  sim->add_option("--channel", channel, "Media backend: mem or udp")
      ->check(CLI::IsMember({"mem", "udp"}));
  sim->add_option("--frame-ms", frame_ms, "Media frame size, ms");
  sim->add_option("--max-vcpus", sim_max_vcpus, "vCPU quota");
  sim->add_option("--max-connections", sim_max_connections, "Concurrent connection quota");

  // --- dynamic-mix ------------------------------------------------------------
  auto* mix = app.add_subcommand("dynamic-mix", "Relay a source directory through workers");
  std::string src_dir, relay_dir, clean_dir;
  int num = 0;
  std::uint64_t mix_seed_value = 0;
  int mix_subw = 0, mix_rdbw = 0;
  int mix_max_vcpus = 100, mix_max_connections = 10;
  mix->add_option("--src_dir,--src-dir", src_dir, "Directory with source data")->required();
  mix->add_option("--relay_dir,--relay-dir", relay_dir, "Directory for relayed data")
      ->required();
  mix->add_option("--clean_dir,--clean-dir", clean_dir, "Directory with parallel clean data")
      ->required();
  mix->add_option("--num", num, "Number of parallel simulations")
      ->required()
      ->check(CLI::PositiveNumber);
  mix->add_option("--seed", mix_seed_value, "Seed for every stochastic element");
  mix->add_option("--subw", mix_subw, "Worker uplink bandwidth cap, kbps (0 = uncapped)");
  mix->add_option("--rdbw", mix_rdbw, "Worker downlink bandwidth cap, kbps (0 = uncapped)");
  mix->add_option("--max-vcpus", mix_max_vcpus, "vCPU quota");
  mix->add_option("--max-connections", mix_max_connections, "Concurrent connection quota");

  // --- sweep ----------------------------------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid of impairment profiles, one relay each");
  std::vector<int> rates{1 << 30};
  std::vector<double> losses{0.0};
  std::vector<double> latencies{0.0};
  std::vector<double> jitters{0.0};
  std::string sweep_src = "test_clean";
  int sweep_dur = 10;
  std::uint64_t sweep_seed = 0;
  int offered_kbps = 0;
  sweep_cmd->add_option("--rates", rates, "Uplink rates to sweep, kbps")->delimiter(',');
  sweep_cmd->add_option("--losses", losses, "Loss probabilities to sweep")->delimiter(',');
  sweep_cmd->add_option("--latencies", latencies, "Base latencies to sweep, ms")
      ->delimiter(',');
  sweep_cmd->add_option("--jitters", jitters, "Jitter half-widths to sweep, ms")
      ->delimiter(',');
  sweep_cmd->add_option("--src", sweep_src, "Source set label");
  sweep_cmd->add_option("--dur", sweep_dur, "Stream duration per cell, seconds");
  sweep_cmd->add_option("--seed", sweep_seed, "Base seed; cells derive theirs");
  sweep_cmd->add_option("--offered-kbps", offered_kbps,
                        "Synthetic constant-bit-rate load instead of corpus audio");

  // --- report -----------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "Aggregate completion accuracy from logs");
  std::vector<std::string> report_ids;
  std::string report_log_root;
  rep->add_option("ids", report_ids, "Tracking ids (or 'all'; default all)");
  rep->add_option("--log-root", report_log_root, "Logging directory override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CommonPaths paths = common_paths();

  try {
    if (sim->parsed()) {
      aoip::config::SimulationConfig cfg;
      try {
        std::vector<std::string> argv_cfg;
        if (!config_file.empty()) {
          argv_cfg = aoip::config::load_config_file(config_file);
        }
        auto push = [&](const char* flag, const std::string& value) {
          argv_cfg.emplace_back(flag);
          argv_cfg.push_back(value);
        };
        if (sim->count("--sreg")) push("--sreg", sreg);
        if (sim->count("--rreg")) push("--rreg", rreg);
        if (sim->count("--sins")) push("--sins", sins);
        if (sim->count("--rins")) push("--rins", rins);
        if (sim->count("--sami")) push("--sami", sami);
        if (sim->count("--rami")) push("--rami", rami);
        if (sim->count("--src")) push("--src", src);
        if (sim->count("--dur")) push("--dur", std::to_string(dur));
        if (sim->count("--subw")) push("--subw", std::to_string(subw));
        if (sim->count("--sdbw")) push("--sdbw", std::to_string(sdbw));
        if (sim->count("--rubw")) push("--rubw", std::to_string(rubw));
        if (sim->count("--rdbw")) push("--rdbw", std::to_string(rdbw));
        if (sim->count("--s3")) push("--s3", s3);
        if (sim->count("--tid")) push("--tid", tid);
        if (sim->count("--seed")) push("--seed", std::to_string(sim_seed));
        if (sim->count("--disk")) push("--disk", std::to_string(disk));
        if (prebaked) argv_cfg.emplace_back("--prebaked");
        cfg = aoip::config::validate(aoip::config::parse_simulation_args(argv_cfg));
      } catch (const aoip::Error& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        std::cerr << "run with --help for the flag list\n";
        return 2;
      }

      aoip::provision::Quotas quotas;
      quotas.max_vcpus = sim_max_vcpus;
      quotas.max_concurrent_connections = sim_max_connections;
      Services services(paths, quotas, cfg.seed);
      services.deps.extra_loss = extra_loss;
      services.deps.extra_latency_ms = extra_latency;
      services.deps.extra_jitter_ms = extra_jitter;
      services.deps.frame_ms = frame_ms;
      services.deps.channel_mode = channel == "udp" ? aoip::orch::ChannelMode::UdpLoopback
                                                    : aoip::orch::ChannelMode::InMemory;

      aoip::orch::JobRecord rec = aoip::orch::run_simulation(cfg, services.deps);

      auto record_path = paths.log_root / rec.tracking_id / "job_record.json";
      aoip::write_file_text(record_path, record_to_json(rec).dump(2) + "\n");
      std::cout << "job record: " << record_path.string() << "\n";
      if (rec.success) {
        std::cout << "result: SUCCESS, uploaded " << rec.output_object << "\n";
        return 0;
      }
      std::cout << "result: FAILURE at " << rec.failed_step << " (" << rec.reason << ")\n";
      return 1;
    }

    if (mix->parsed()) {
      aoip::provision::Quotas quotas;
      quotas.max_vcpus = mix_max_vcpus;
      quotas.max_concurrent_connections = mix_max_connections;
      Services services(paths, quotas, mix_seed_value);
      aoip::orch::MixOptions options;
      options.src_dir = src_dir;
      options.relay_dir = relay_dir;
      options.clean_dir = clean_dir;
      options.num = num;
      options.worker_config.seed = mix_seed_value;
      if (mix_subw > 0) options.worker_config.sender_up_kbps = mix_subw;
      if (mix_rdbw > 0) options.worker_config.receiver_down_kbps = mix_rdbw;
      aoip::orch::RunReport report = aoip::orch::dynamic_mix(options, services.deps);
      aoip::write_file_text(paths.log_root / "run_report.json",
                            report_to_json(report).dump(2) + "\n");
      std::cout << report.summary() << "\n";
      return report.failures == 0 ? 0 : 1;
    }

    if (sweep_cmd->parsed()) {
      std::vector<aoip::netem::ImpairmentProfile> grid;
      for (int rate : rates) {
        for (double loss : losses) {
          for (double latency : latencies) {
            for (double jitter : jitters) {
              aoip::netem::ImpairmentProfile p;
              p.rate_kbps = rate;
              p.loss_prob = loss;
              p.base_latency_ms = latency;
              p.jitter_ms = jitter;
              grid.push_back(p);
            }
          }
        }
      }
      aoip::config::SimulationConfig base;
      base.src_audio_config = sweep_src;
      base.duration_s = sweep_dur;
      base.seed = sweep_seed;
      base.receiver_down_kbps = 1 << 30;
      aoip::evalkit::SweepOptions options;
      options.synthetic_offered_kbps = offered_kbps;
      options.synthetic_duration_s = sweep_dur;
      auto rows = aoip::evalkit::sweep(grid, base, paths.corpus_root, options);
      std::string table = aoip::evalkit::render_table(rows);
      std::cout << table;
      aoip::ensure_dir(paths.log_root);
      std::ofstream summary(paths.log_root / "sweep_summary.log", std::ios::app);
      summary << table << "\n";
      return 0;
    }

    if (rep->parsed()) {
      std::filesystem::path root =
          report_log_root.empty() ? paths.log_root : std::filesystem::path(report_log_root);
      if (report_ids.size() == 1 && report_ids.front() == "all") report_ids.clear();
      aoip::orch::RunReport report = aoip::orch::report_from_logs(root, report_ids);
      std::cout << report.summary() << "\n";
      return 0;
    }
  } catch (const aoip::Error& e) {
    switch (e.kind()) {
      case aoip::Err::MissingFlag:
      case aoip::Err::MalformedValue:
      case aoip::Err::DuplicateFlag:
      case aoip::Err::NonPositive:
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
      default:
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
