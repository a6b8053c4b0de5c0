#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "aoip/audio.hpp"
#include "aoip/audit.hpp"
#include "aoip/clock.hpp"
#include "aoip/config.hpp"
#include "aoip/errors.hpp"
#include "aoip/netem.hpp"
#include "aoip/provision.hpp"
#include "aoip/rng.hpp"
#include "aoip/session.hpp"
#include "aoip/storage.hpp"
#include "aoip/transport.hpp"
#include "aoip/util.hpp"

namespace aoip::orch {

// ---------------------------------------------------------------------------
// Records and reports

struct StepTiming {
  std::string step;
  double start_ms = 0;
  double end_ms = 0;
  bool ok = true;
};

struct JobRecord {
  std::string job_id;
  std::string tracking_id;
  std::string source;
  bool success = false;
  std::string failed_step;  // empty on success
  std::string reason;
  std::vector<StepTiming> timings;
  std::string output_object;  // on success
  int attempts = 1;
};

struct WorkerSummary {
  int worker_id = 0;
  std::uint64_t jobs_done = 0;
  bool provisioned = false;
  bool stopped = false;
};

struct RunReport {
  std::uint64_t total_jobs = 0;
  std::uint64_t successes = 0;
  std::uint64_t failures = 0;
  double completion_accuracy = 0;  // successes / total, 0 for an empty run
  std::vector<JobRecord> jobs;
  std::vector<WorkerSummary> workers;  // dynamic-mix runs only
  int peak_in_flight = 0;              // batch instrumentation

  std::string summary() const;
};

// Percentage with two decimals, rounded half up; "n/a" for an empty run.
inline std::string format_accuracy(std::uint64_t successes, std::uint64_t total) {
  if (total == 0) return "n/a";
  double percent = 100.0 * static_cast<double>(successes) / static_cast<double>(total);
  std::int64_t scaled = round_half_away(percent * 100.0);
  return strprintf("%lld.%02lld%%", static_cast<long long>(scaled / 100),
                   static_cast<long long>(scaled % 100));
}

inline std::string RunReport::summary() const {
  return strprintf("completion accuracy: %s (%llu/%llu)",
                   format_accuracy(successes, total_jobs).c_str(),
                   static_cast<unsigned long long>(successes),
                   static_cast<unsigned long long>(total_jobs));
}

inline RunReport compute_report(std::vector<JobRecord> records) {
  RunReport report;
  report.total_jobs = records.size();
  for (const auto& r : records) {
    if (r.success) ++report.successes;
    else ++report.failures;
  }
  report.completion_accuracy =
      report.total_jobs == 0
          ? 0.0
          : static_cast<double>(report.successes) / static_cast<double>(report.total_jobs);
  report.jobs = std::move(records);
  return report;
}

// ---------------------------------------------------------------------------
// Fault injection

// Deterministic plans ("fail step S of job X, twice") plus an optional
// seeded per-step probability.  Probabilistic draws are keyed by
// (seed, scope, step) so outcomes do not depend on thread interleaving.
class FaultInjector {
 public:
  void fail_step(const std::string& scope, const std::string& step, int times = 1) {
    std::lock_guard<std::mutex> lock(mu_);
    plan_[{scope, step}] += times;
  }

  void set_random(double per_step_prob, std::uint64_t seed) {
    std::lock_guard<std::mutex> lock(mu_);
    prob_ = per_step_prob;
    seed_ = seed;
  }

  bool should_fail(const std::string& scope, const std::string& step) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = plan_.find({scope, step});
    if (it == plan_.end()) it = plan_.find({"*", step});
    if (it != plan_.end() && it->second > 0) {
      --it->second;
      return true;
    }
    if (prob_ > 0) {
      SplitMix64 rng(mix_seed(seed_, scope + "/" + step));
      return rng.next_unit() < prob_;
    }
    return false;
  }

 private:
  std::mutex mu_;
  std::map<std::pair<std::string, std::string>, int> plan_;
  double prob_ = 0;
  std::uint64_t seed_ = 0;
};

// ---------------------------------------------------------------------------
// Step logging: <log_root>/<tracking_id>/steps.log

class StepLogger {
 public:
  StepLogger(const std::filesystem::path& log_root, const std::string& tracking_id) {
    dir_ = log_root / tracking_id;
    ensure_dir(dir_);
    out_.open(dir_ / "steps.log", std::ios::app);
  }

  const std::filesystem::path& dir() const { return dir_; }

  void line(double ts_ms, const std::string& step, const std::string& status) {
    if (out_.is_open()) {
      out_ << strprintf("[%13.3f] %-20s %s\n", ts_ms, step.c_str(), status.c_str());
      out_.flush();
    }
  }

 private:
  std::filesystem::path dir_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Environment a simulation runs against

enum class ChannelMode { InMemory, UdpLoopback };

struct OrchestratorDeps {
  provision::Registry* registry = nullptr;
  storage::ObjectStore* store = nullptr;
  AuditLog* audit = nullptr;
  transport::LocalResolver* resolver = nullptr;
  transport::LocalExchange* exchange = nullptr;
  std::filesystem::path corpus_root;
  std::filesystem::path log_root;
  std::shared_ptr<FaultInjector> faults;
  ChannelMode channel_mode = ChannelMode::InMemory;
  int frame_ms = audio::kDefaultFrameMs;
  // CLI extension knobs, applied to the uplink leg.
  double extra_loss = 0;
  double extra_latency_ms = 0;
  double extra_jitter_ms = 0;
  double establish_timeout_ms = 5000;
  std::function<std::unique_ptr<Clock>()> clock_factory;  // default: virtual
  std::function<void(const std::string& tracking_id, const std::string& step)> step_hook;
  // Observes each finished relay; used by the evaluation suite and tests.
  std::function<void(const std::string& tracking_id, const session::RelayOutcome&)> trace_sink;

  std::unique_ptr<Clock> make_clock() const {
    return clock_factory ? clock_factory() : std::make_unique<VirtualClock>();
  }
};

// Owning bundle wiring a complete environment together.
struct Harness {
  AuditLog audit;
  provision::Registry registry;
  storage::ObjectStore store;
  transport::LocalResolver resolver;
  transport::LocalExchange exchange;
  std::shared_ptr<FaultInjector> faults = std::make_shared<FaultInjector>();
  OrchestratorDeps deps;

  Harness(const std::filesystem::path& root, provision::Quotas quotas = {},
          std::uint64_t seed = 0)
      : registry(quotas, audit, root / "keys", seed),
        store(root / "objects", &audit) {
    deps.registry = &registry;
    deps.store = &store;
    deps.audit = &audit;
    deps.resolver = &resolver;
    deps.exchange = &exchange;
    deps.log_root = root / "logs";
    deps.corpus_root = root / "corpus";
    deps.faults = faults;
    ensure_dir(deps.log_root);
  }
};

// ---------------------------------------------------------------------------
// One simulation, start to finish

namespace detail {

struct StepRunner {
  JobRecord& rec;
  Clock& clock;
  StepLogger& log;
  OrchestratorDeps& deps;
  const std::string& tid;
  bool failed = false;

  template <typename F>
  void run(const std::string& name, F&& body, bool even_after_failure = false) {
    if (failed && !even_after_failure) return;
    double t0 = clock.now_ms();
    if (deps.step_hook) deps.step_hook(tid, name);
    try {
      if (deps.faults && deps.faults->should_fail(tid, name)) {
        fail(Err::FaultInjected, name);
      }
      body();
      double t1 = clock.now_ms();
      rec.timings.push_back({name, t0, t1, true});
      log.line(t1, name, "SUCCESS");
    } catch (const std::exception& e) {
      double t1 = clock.now_ms();
      rec.timings.push_back({name, t0, t1, false});
      log.line(t1, name, strprintf("FAILURE(%s)", e.what()));
      if (!failed) {
        rec.failed_step = name;
        rec.reason = e.what();
        failed = true;
      }
    }
  }
};

inline config::TrackingIdGenerator& fallback_id_generator() {
  static config::TrackingIdGenerator gen(0);
  return gen;
}

}  // namespace detail

// Executes the full pipeline for one validated config.  Never throws: every
// failure is captured in the JobRecord, and teardown always runs.
inline JobRecord run_simulation(const config::SimulationConfig& input,
                                OrchestratorDeps& deps,
                                const std::filesystem::path* source_override = nullptr) {
  config::SimulationConfig cfg = input;
  if (cfg.tracking_id.empty()) cfg.tracking_id = detail::fallback_id_generator().next();
  const std::string& tid = cfg.tracking_id;

  JobRecord rec;
  rec.job_id = tid;
  rec.tracking_id = tid;

  std::unique_ptr<Clock> clock = deps.make_clock();
  StepLogger log(deps.log_root, tid);
  detail::StepRunner step{rec, *clock, log, deps, tid};

  provision::Registry& registry = *deps.registry;
  transport::LocalResolver& resolver = *deps.resolver;

  provision::KeyPair sender_key, receiver_key;
  provision::SecurityGroup sender_group, receiver_group;
  provision::ProvisionedNode sender_node, receiver_node;
  std::filesystem::path source_path;
  audio::AudioClip canonical_clip;
  session::PathProfiles path;
  std::unique_ptr<transport::ReceiverEndpoint> receiver_ep;
  std::unique_ptr<transport::CallerEndpoint> caller_ep;
  std::unique_ptr<transport::UdpReceiverAgent> receiver_agent;
  std::unique_ptr<transport::UdpCallerEndpoint> udp_caller;
  transport::CallState call;
  session::RelayOutcome relay;
  std::filesystem::path raw_recording, canonical_recording;
  const std::string receiver_name = "receiver_" + tid;
  const std::string sender_name = "sender_" + tid;

  step.run("create_key", [&] {
    sender_key = registry.create_key(cfg.sender_region, "key_sender_" + tid, tid, *clock);
    receiver_key =
        registry.create_key(cfg.receiver_region, "key_receiver_" + tid, tid, *clock);
  });

  step.run("create_security_group", [&] {
    sender_group =
        registry.create_security_group(cfg.sender_region, "sg_sender_" + tid, tid, *clock);
    receiver_group = registry.create_security_group(cfg.receiver_region,
                                                    "sg_receiver_" + tid, tid, *clock);
  });

  step.run("launch_node", [&] {
    // One connection per node setup, released as soon as the remote
    // commands are dispatched (they run detached); holding two at once
    // would deadlock the pool against the session cap.
    double timeout_s = registry.quotas().connect_timeout_s;
    {
      auto token = registry.connection_gate().acquire(*clock, timeout_s);
      sender_node = registry.launch_node(
          {sender_name, cfg.sender_region, cfg.sender_instance_type, cfg.sender_ami,
           cfg.disk_gb},
          sender_key, sender_group, cfg.use_prebaked_image, *clock, tid);
    }
    {
      auto token = registry.connection_gate().acquire(*clock, timeout_s);
      receiver_node = registry.launch_node(
          {receiver_name, cfg.receiver_region, cfg.receiver_instance_type, cfg.receiver_ami,
           cfg.disk_gb},
          receiver_key, receiver_group, cfg.use_prebaked_image, *clock, tid);
    }
    registry.mark_ready(sender_node, *clock);
    registry.mark_ready(receiver_node, *clock);
  });

  step.run("fetch_source", [&] {
    if (source_override != nullptr) {
      source_path = *source_override;
      if (!std::filesystem::exists(source_path)) fail(Err::NoSource, source_path.string());
    } else {
      auto files = storage::fetch_source(cfg.src_audio_config, deps.corpus_root);
      if (files.empty()) fail(Err::NoSource, cfg.src_audio_config);
      source_path = files.front();
    }
    rec.source = source_path.string();
  });

  step.run("apply_bandwidth", [&] {
    path.uplink.rate_kbps = cfg.sender_up_kbps;
    path.uplink.base_latency_ms = deps.extra_latency_ms;
    path.uplink.jitter_ms = deps.extra_jitter_ms;
    path.uplink.loss_prob = deps.extra_loss;
    path.uplink.seed = mix_seed(cfg.seed, tid + "/uplink");
    path.downlink.rate_kbps = cfg.receiver_down_kbps;
    path.downlink.seed = mix_seed(cfg.seed, tid + "/downlink");
    path.uplink.check();
    path.downlink.check();
    log.line(clock->now_ms(), "apply_bandwidth",
             strprintf("shaping up=%dkbps down=%dkbps loss=%.3f latency=%.1fms",
                       cfg.sender_up_kbps, cfg.receiver_down_kbps, deps.extra_loss,
                       deps.extra_latency_ms));
  });

  step.run("start_receiver", [&] {
    transport::EndpointAddress addr = resolver.resolve(receiver_name);
    if (deps.channel_mode == ChannelMode::InMemory) {
      receiver_ep = std::make_unique<transport::ReceiverEndpoint>(*deps.exchange, addr);
    } else {
      receiver_agent = std::make_unique<transport::UdpReceiverAgent>(addr);
      receiver_agent->start();
    }
  });

  step.run("start_sender", [&] {
    audio::AudioClip clip;
    try {
      clip = audio::read_wav(source_path);
    } catch (const Error& e) {
      fail(Err::FileUnreadable, source_path.string() + " (" + e.what() + ")");
    }
    canonical_clip = audio::canonicalize(clip);
    transport::EndpointAddress sender_addr = resolver.resolve(sender_name);
    if (deps.channel_mode == ChannelMode::InMemory) {
      caller_ep = std::make_unique<transport::CallerEndpoint>(
          *deps.exchange, sender_addr, mix_seed(cfg.seed, tid + "/caller"));
      call = caller_ep->establish_call(receiver_ep->address(), deps.establish_timeout_ms,
                                       *clock);
    } else {
      udp_caller = std::make_unique<transport::UdpCallerEndpoint>(
          sender_addr, mix_seed(cfg.seed, tid + "/caller"));
      call = udp_caller->establish_call(receiver_agent->address(),
                                        deps.establish_timeout_ms);
    }
  });

  step.run("wait_duration", [&] {
    double deadline_ms = cfg.duration_s * 1000.0;
    if (deps.channel_mode == ChannelMode::InMemory) {
      transport::InMemoryChannel channel;
      relay = session::relay_clip(canonical_clip, deadline_ms, path, deps.frame_ms, channel,
                                  call, *clock);
    } else {
      double start_ms = clock->now_ms();
      auto stream = session::sender_schedule(canonical_clip, deadline_ms, deps.frame_ms);
      relay.schedule = netem::effective_path(stream, path.uplink, path.downlink);
      for (auto& d : relay.schedule) {
        d.depart_ms += start_ms;
        if (d.arrive_ms) *d.arrive_ms += start_ms;
      }
      udp_caller->send_media_datagrams(call, relay.schedule, receiver_agent->address().host);
      size_t survivors = 0;
      for (const auto& d : relay.schedule) {
        if (!d.dropped()) ++survivors;
      }
      WallClock wall;
      double wall_deadline = wall.now_ms() + 5000;
      while (receiver_agent->media().size() < survivors && wall.now_ms() < wall_deadline) {
        wall.sleep_ms(10);
      }
      std::map<std::uint32_t, double> arrive_of;
      for (const auto& d : relay.schedule) {
        if (!d.dropped()) arrive_of[d.packet.seq] = *d.arrive_ms;
      }
      for (const auto& p : receiver_agent->media()) {
        auto it = arrive_of.find(p.seq);
        double arrive = it != arrive_of.end() ? it->second : 0.0;
        if (arrive <= start_ms + deadline_ms) relay.delivered.push_back({p, arrive});
      }
      relay.stats.packets_sent = stream.size();
      for (const auto& tp : stream) relay.stats.bytes_sent += tp.packet.payload.size();
      relay.stats.duration_ms = deadline_ms;
      clock->advance_to(start_ms + deadline_ms);
    }
    if (deps.trace_sink) deps.trace_sink(tid, relay);
  });

  step.run("hangup", [&] {
    if (deps.channel_mode == ChannelMode::InMemory) {
      if (caller_ep) caller_ep->hangup(call, receiver_ep->address());
    } else {
      if (udp_caller) udp_caller->hangup(call, receiver_agent->address());
    }
    raw_recording = log.dir() / "recording_raw.wav";
    session::run_receiver({raw_recording, true}, relay.delivered, cfg.duration_s, *clock,
                          deps.frame_ms);
  });

  step.run("remove_bandwidth",
           [&] { log.line(clock->now_ms(), "remove_bandwidth", "shaping removed"); });

  step.run("post_process", [&] { canonical_recording = session::post_process(raw_recording); });

  step.run("upload", [&] {
    std::string object_name = tid + ".wav";
    deps.store->upload(canonical_recording, cfg.storage_url, object_name, tid);
    rec.output_object = cfg.storage_url.render() + object_name;
  });

  step.run(
      "teardown",
      [&] {
        if (receiver_agent) receiver_agent->stop();
        registry.teardown_tracking(tid, *clock);
        resolver.release(receiver_name);
        resolver.release(sender_name);
      },
      /*even_after_failure=*/true);

  // Safety net: an injected teardown fault must still not leak anything.
  if (receiver_agent) receiver_agent->stop();
  registry.teardown_tracking(tid, *clock);
  resolver.release(receiver_name);
  resolver.release(sender_name);

  rec.success = !step.failed;
  log.line(clock->now_ms(), "result",
           rec.success ? "SUCCESS" : strprintf("FAILURE(%s)", rec.failed_step.c_str()));
  return rec;
}

// ---------------------------------------------------------------------------
// Batch execution

// Runs configs through a pool of `parallelism` threads.  Tracking ids are
// assigned up front so results and seeds do not depend on scheduling.
inline RunReport run_batch(std::vector<config::SimulationConfig> configs, int parallelism,
                           OrchestratorDeps& deps) {
  if (parallelism < 1) fail(Err::NonPositive, "parallelism");
  for (size_t i = 0; i < configs.size(); ++i) {
    if (configs[i].tracking_id.empty()) {
      configs[i].tracking_id =
          config::generate_tracking_id(configs[i].seed, static_cast<std::uint64_t>(i));
    }
  }

  std::vector<JobRecord> records(configs.size());
  std::atomic<size_t> next{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};

  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      int now_in_flight = ++in_flight;
      int seen = peak.load();
      while (now_in_flight > seen && !peak.compare_exchange_weak(seen, now_in_flight)) {
      }
      records[i] = run_simulation(configs[i], deps);
      --in_flight;
    }
  };

  size_t pool = std::min(static_cast<size_t>(parallelism), configs.size());
  std::vector<std::thread> threads;
  threads.reserve(pool);
  for (size_t t = 0; t < pool; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  RunReport report = compute_report(std::move(records));
  report.peak_in_flight = peak.load();
  return report;
}

// ---------------------------------------------------------------------------
// Dynamic mixing: persistent workers over a job queue

struct QueueEvent {
  enum class Kind { Enqueue, Dequeue, WaitEmpty, Requeue };
  Kind kind;
  std::string job;
  int worker = -1;
  size_t size_after = 0;
};

namespace detail {

// FIFO job queue that records its event trace.  pop() blocks while jobs may
// still be requeued (failed first attempts) and returns nothing once every
// job has been terminally resolved.
class JobQueue {
 public:
  explicit JobQueue(std::vector<std::string> jobs) : outstanding_(jobs.size()) {
    for (auto& j : jobs) {
      queue_.push_back({std::move(j), 1});
      trace_.push_back({QueueEvent::Kind::Enqueue, queue_.back().first, -1, queue_.size()});
    }
  }

  struct Item {
    std::string job;
    int attempt = 1;
  };

  std::optional<Item> pop(int worker_id) {
    std::unique_lock<std::mutex> lock(mu_);
    for (;;) {
      if (!queue_.empty()) {
        auto [job, attempt] = queue_.front();
        queue_.pop_front();
        trace_.push_back({QueueEvent::Kind::Dequeue, job, worker_id, queue_.size()});
        return Item{job, attempt};
      }
      if (outstanding_ == 0) return std::nullopt;
      trace_.push_back({QueueEvent::Kind::WaitEmpty, "", worker_id, 0});
      cv_.wait_for(lock, std::chrono::milliseconds(20));
    }
  }

  void requeue(const std::string& job, int attempt) {
    std::lock_guard<std::mutex> lock(mu_);
    queue_.push_back({job, attempt});
    trace_.push_back({QueueEvent::Kind::Requeue, job, -1, queue_.size()});
    cv_.notify_all();
  }

  void resolve_one() {
    std::lock_guard<std::mutex> lock(mu_);
    --outstanding_;
    if (outstanding_ == 0) cv_.notify_all();
  }

  std::vector<QueueEvent> trace() const {
    std::lock_guard<std::mutex> lock(mu_);
    return trace_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::string, int>> queue_;
  std::vector<QueueEvent> trace_;
  size_t outstanding_;
};

}  // namespace detail

struct MixOptions {
  std::filesystem::path src_dir;
  std::filesystem::path relay_dir;
  std::filesystem::path clean_dir;
  int num = 1;
  // Channel configuration for the persistent worker simulations.  Dynamic
  // mixing applies no bandwidth cap unless one is configured.
  config::SimulationConfig worker_config = default_worker_config();

  static config::SimulationConfig default_worker_config() {
    config::SimulationConfig cfg;
    cfg.sender_region = "local-1";
    cfg.receiver_region = "local-1";
    cfg.sender_instance_type = "t2.micro";
    cfg.receiver_instance_type = "t2.micro";
    cfg.sender_ami = "ami-local";
    cfg.receiver_ami = "ami-local";
    cfg.sender_up_kbps = cfg.sender_down_kbps = 1 << 30;
    cfg.receiver_up_kbps = cfg.receiver_down_kbps = 1 << 30;
    cfg.src_audio_config = "dynamic";
    cfg.duration_s = 1;  // per-job deadline comes from each clip
    cfg.storage_url = {"dynamic-mix", ""};
    cfg.use_prebaked_image = true;
    return cfg;
  }
};

// Relays every file in src_dir through a pool of `num` persistent worker
// simulations; relayed clips land in relay_dir under mirrored names.  A
// worker that fails mid-job is relaunched and the job retried once.
inline RunReport dynamic_mix(const MixOptions& options, OrchestratorDeps& deps,
                             std::vector<QueueEvent>* trace_out = nullptr) {
  if (options.num < 1) fail(Err::NonPositive, "num");
  if (!std::filesystem::is_directory(options.src_dir)) {
    fail(Err::EmptySource, options.src_dir.string());
  }
  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(options.src_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) fail(Err::EmptySource, options.src_dir.string());
  ensure_dir(options.relay_dir);

  detail::JobQueue queue(names);
  std::mutex results_mu;
  std::map<std::string, JobRecord> results;
  std::vector<WorkerSummary> summaries(options.num);

  provision::Registry& registry = *deps.registry;
  const config::SimulationConfig& base = options.worker_config;

  auto record_result = [&](JobRecord rec) {
    std::lock_guard<std::mutex> lock(results_mu);
    results[rec.job_id] = std::move(rec);
  };

  auto worker_main = [&](int worker_id) {
    WorkerSummary& summary = summaries[worker_id];
    summary.worker_id = worker_id;
    VirtualClock clock;
    int generation = 0;

    std::string tid;
    std::unique_ptr<transport::ReceiverEndpoint> receiver;
    std::unique_ptr<transport::CallerEndpoint> caller;
    session::PathProfiles path;

    auto teardown_worker = [&] {
      if (tid.empty()) return;
      receiver.reset();
      caller.reset();
      registry.teardown_tracking(tid, clock);
      deps.resolver->release("receiver_" + tid);
      deps.resolver->release("sender_" + tid);
      tid.clear();
    };

    auto provision_worker = [&]() -> bool {
      tid = strprintf("dmw-%016llx-w%03d-g%d",
                      static_cast<unsigned long long>(base.seed), worker_id, generation);
      try {
        auto key = registry.create_key(base.sender_region, "key_" + tid, tid, clock);
        auto group =
            registry.create_security_group(base.sender_region, "sg_" + tid, tid, clock);
        double timeout_s = registry.quotas().connect_timeout_s;
        provision::ProvisionedNode sender_node, receiver_node;
        {
          auto token = registry.connection_gate().acquire(clock, timeout_s);
          sender_node = registry.launch_node(
              {"sender_" + tid, base.sender_region, base.sender_instance_type,
               base.sender_ami, base.disk_gb},
              key, group, base.use_prebaked_image, clock, tid);
        }
        {
          auto token = registry.connection_gate().acquire(clock, timeout_s);
          receiver_node = registry.launch_node(
              {"receiver_" + tid, base.receiver_region, base.receiver_instance_type,
               base.receiver_ami, base.disk_gb},
              key, group, base.use_prebaked_image, clock, tid);
        }
        registry.mark_ready(sender_node, clock);
        registry.mark_ready(receiver_node, clock);

        auto receiver_addr = deps.resolver->resolve("receiver_" + tid);
        auto sender_addr = deps.resolver->resolve("sender_" + tid);
        receiver = std::make_unique<transport::ReceiverEndpoint>(*deps.exchange, receiver_addr);
        caller = std::make_unique<transport::CallerEndpoint>(
            *deps.exchange, sender_addr, mix_seed(base.seed, tid + "/caller"));
        path.uplink = netem::ImpairmentProfile::unconstrained();
        path.downlink = netem::ImpairmentProfile::unconstrained();
        if (base.sender_up_kbps > 0) path.uplink.rate_kbps = base.sender_up_kbps;
        if (base.receiver_down_kbps > 0) path.downlink.rate_kbps = base.receiver_down_kbps;
        summary.provisioned = true;
        return true;
      } catch (const std::exception& e) {
        if (deps.audit) {
          deps.audit->append(clock.now_ms(), tid, "worker", "warn",
                             strprintf("worker %d provision failed: %s", worker_id, e.what()));
        }
        teardown_worker();
        return false;
      }
    };

    if (!provision_worker()) {
      summary.stopped = true;
      return;  // degraded pool: remaining workers absorb the queue
    }

    while (auto item = queue.pop(worker_id)) {
      const std::string& name = item->job;
      JobRecord rec;
      rec.job_id = name;
      rec.tracking_id = tid;
      rec.attempts = item->attempt;
      rec.source = (options.src_dir / name).string();
      try {
        if (deps.faults && deps.faults->should_fail(name, "relay")) {
          fail(Err::FaultInjected, "relay " + name);
        }
        if (!std::filesystem::exists(options.clean_dir / name)) {
          fail(Err::MissingCleanPair, name);
        }
        audio::AudioClip clip = audio::canonicalize(audio::read_wav(options.src_dir / name));
        int spf = audio::samples_per_frame(deps.frame_ms);
        std::uint32_t frames =
            static_cast<std::uint32_t>((clip.samples.size() + spf - 1) / spf);
        double deadline_ms = static_cast<double>(frames) * deps.frame_ms;

        // Per-job seeds are keyed by file name: relayed audio does not
        // depend on which worker picked the job up.
        session::PathProfiles job_path = path;
        job_path.uplink.seed = mix_seed(base.seed, name + "/uplink");
        job_path.downlink.seed = mix_seed(base.seed, name + "/downlink");

        auto call = caller->establish_call(receiver->address(), deps.establish_timeout_ms,
                                           clock);
        audio::AudioClip received;
        if (frames > 0) {
          transport::InMemoryChannel channel;
          session::RelayOutcome relay = session::relay_clip(
              clip, deadline_ms, job_path, deps.frame_ms, channel, call, clock);
          std::vector<audio::MediaPacket> packets;
          for (const auto& d : relay.delivered) packets.push_back(d.packet);
          received = audio::depacketize(packets, frames, deps.frame_ms);
          if (deps.trace_sink) deps.trace_sink(tid, relay);
        }
        caller->hangup(call, receiver->address());
        audio::write_wav(received, options.relay_dir / name);
        rec.success = true;
        rec.output_object = (options.relay_dir / name).string();
        record_result(std::move(rec));
        queue.resolve_one();
        ++summary.jobs_done;
      } catch (const std::exception& e) {
        rec.success = false;
        rec.reason = e.what();
        const Error* err = dynamic_cast<const Error*>(&e);
        bool data_fault = err != nullptr && err->kind() == Err::MissingCleanPair;
        bool retriable = item->attempt < 2 && !data_fault;
        if (retriable) {
          // Replace the worker, then put the job back for one more try.
          teardown_worker();
          ++generation;
          if (!provision_worker()) {
            rec.failed_step = "relay";
            record_result(std::move(rec));
            queue.resolve_one();
            summary.stopped = true;
            return;
          }
          queue.requeue(name, item->attempt + 1);
        } else {
          rec.failed_step = "relay";
          record_result(std::move(rec));
          queue.resolve_one();
        }
      }
    }
    teardown_worker();
    summary.stopped = true;
  };

  std::vector<std::thread> threads;
  threads.reserve(options.num);
  for (int w = 0; w < options.num; ++w) threads.emplace_back(worker_main, w);
  for (auto& t : threads) t.join();

  std::vector<JobRecord> records;
  records.reserve(names.size());
  for (const auto& name : names) {
    auto it = results.find(name);
    if (it != results.end()) {
      records.push_back(it->second);
    } else {
      // Every worker died before this job ran (e.g. quota left no pool).
      JobRecord rec;
      rec.job_id = name;
      rec.source = (options.src_dir / name).string();
      rec.success = false;
      rec.failed_step = "worker_pool";
      rec.reason = "no worker available";
      records.push_back(std::move(rec));
    }
  }
  RunReport report = compute_report(std::move(records));
  report.workers = summaries;
  if (trace_out != nullptr) *trace_out = queue.trace();
  return report;
}

// ---------------------------------------------------------------------------
// Log-directory aggregation (the report command)

// Scans <log_root>/<tracking_id>/steps.log result lines.  An empty id list
// means every tracking directory present.
inline RunReport report_from_logs(const std::filesystem::path& log_root,
                                  std::vector<std::string> tracking_ids = {}) {
  if (tracking_ids.empty() && std::filesystem::is_directory(log_root)) {
    for (const auto& entry : std::filesystem::directory_iterator(log_root)) {
      if (entry.is_directory() &&
          std::filesystem::exists(entry.path() / "steps.log")) {
        tracking_ids.push_back(entry.path().filename().string());
      }
    }
    std::sort(tracking_ids.begin(), tracking_ids.end());
  }
  std::vector<JobRecord> records;
  for (const auto& tid : tracking_ids) {
    std::ifstream in(log_root / tid / "steps.log");
    if (!in) continue;
    std::string line, last_result;
    while (std::getline(in, line)) {
      if (line.find("] result ") != std::string::npos) last_result = line;
    }
    if (last_result.empty()) continue;
    JobRecord rec;
    rec.job_id = tid;
    rec.tracking_id = tid;
    rec.success = last_result.find("SUCCESS") != std::string::npos;
    records.push_back(std::move(rec));
  }
  return compute_report(std::move(records));
}

}  // namespace aoip::orch
