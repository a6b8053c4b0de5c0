#pragma once

#include <algorithm>
#include <cstdint>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "aoip/audit.hpp"
#include "aoip/clock.hpp"
#include "aoip/errors.hpp"
#include "aoip/rng.hpp"
#include "aoip/util.hpp"

namespace aoip::provision {

// Base image setup: instantiation plus remote install, 15-17 minutes.
constexpr double kBaseSetupMinMs = 900 * 1000.0;
constexpr double kBaseSetupMaxMs = 1020 * 1000.0;
// Prebaked image: fully configured in 3 minutes or less.
constexpr double kPrebakedSetupMinMs = 60 * 1000.0;
constexpr double kPrebakedSetupMaxMs = 180 * 1000.0;

struct Quotas {
  int max_vcpus = 100;
  int max_concurrent_connections = 10;
  int connect_timeout_s = 60;

  void check() const {
    if (max_vcpus <= 0) fail(Err::NonPositive, "max_vcpus");
    if (max_concurrent_connections <= 0) fail(Err::NonPositive, "max_concurrent_connections");
    if (connect_timeout_s <= 0) fail(Err::NonPositive, "connect_timeout_s");
  }
};

struct KeyPair {
  std::string name;
  std::string region;
  double created_at_ms = 0;
};

struct SecurityRule {
  std::string protocol;
  int port_from = 0;
  int port_to = 0;
  std::string cidr;

  friend bool operator==(const SecurityRule&, const SecurityRule&) = default;
};

struct SecurityGroup {
  std::string name;
  std::string region;
  std::vector<SecurityRule> rules;
};

// SSH from anywhere, media/signaling UDP range from anywhere.  Every
// simulation group carries exactly these two rules.
inline std::vector<SecurityRule> canonical_rules() {
  return {{"tcp", 22, 22, "0.0.0.0/0"}, {"udp", 3000, 9000, "0.0.0.0/0"}};
}

enum class NodeState { Pending, Installing, Ready, Terminated };

struct ProvisionedNode {
  std::string node_id;
  std::string name;  // e.g. "sender_<tracking_id>"
  std::string region;
  std::string instance_type;
  std::string ami;
  int disk_gb = 8;
  int vcpus = 1;
  NodeState state = NodeState::Pending;
  double launched_at_ms = 0;
  double ready_at_ms = 0;
};

struct NodeSpec {
  std::string name;
  std::string region;
  std::string instance_type;
  std::string ami;
  int disk_gb = 8;
};

inline int vcpu_cost(const std::string& instance_type) {
  static const std::map<std::string, int> table = {{"t2.micro", 1}};
  auto it = table.find(instance_type);
  return it == table.end() ? 1 : it->second;
}

// The remote setup commands run during the Installing phase of a base-image
// launch; prebaked images skip them.
inline const std::vector<std::string>& base_setup_steps() {
  static const std::vector<std::string> steps = {
      "install libasound2-dev", "install sox",          "install ffmpeg",
      "install awscli",         "install wondershaper", "install pulseaudio",
      "build relay software",   "pull source audio",
  };
  return steps;
}

// Counting semaphore with FIFO grant order, modeling the host's concurrent
// SSH session limit.  acquire() polls on the caller's clock so virtual-time
// tests don't stall.
class ConnectionGate {
 public:
  explicit ConnectionGate(int capacity) : capacity_(capacity) {}

  class Token {
   public:
    Token() = default;
    explicit Token(ConnectionGate* gate) : gate_(gate) {}
    Token(Token&& other) noexcept : gate_(other.gate_) { other.gate_ = nullptr; }
    Token& operator=(Token&& other) noexcept {
      release();
      gate_ = other.gate_;
      other.gate_ = nullptr;
      return *this;
    }
    ~Token() { release(); }
    void release() {
      if (gate_ != nullptr) {
        gate_->release_one();
        gate_ = nullptr;
      }
    }
    bool held() const { return gate_ != nullptr; }

   private:
    ConnectionGate* gate_ = nullptr;
  };

  Token acquire(Clock& clock, double timeout_s) {
    std::unique_lock<std::mutex> lock(mu_);
    std::uint64_t ticket = next_ticket_++;
    waiters_.push_back(ticket);
    double deadline = clock.now_ms() + timeout_s * 1000.0;
    for (;;) {
      if (waiters_.front() == ticket && live_ < capacity_) {
        waiters_.pop_front();
        ++live_;
        cv_.notify_all();
        return Token(this);
      }
      if (clock.now_ms() >= deadline) {
        waiters_.erase(std::find(waiters_.begin(), waiters_.end(), ticket));
        cv_.notify_all();
        fail(Err::ConnectTimeout, strprintf("after %.0f s", timeout_s));
      }
      // Releases wake us immediately; the short timed wait only drives the
      // waiter's own (possibly virtual) timeout clock forward.
      cv_.wait_for(lock, std::chrono::milliseconds(1));
      clock.sleep_ms(2.0);
    }
  }

  std::optional<Token> try_acquire() {
    std::lock_guard<std::mutex> lock(mu_);
    if (!waiters_.empty() || live_ >= capacity_) return std::nullopt;
    ++live_;
    return Token(this);
  }

  int live() const {
    std::lock_guard<std::mutex> lock(mu_);
    return live_;
  }

  int waiting() const {
    std::lock_guard<std::mutex> lock(mu_);
    return static_cast<int>(waiters_.size());
  }

 private:
  void release_one() {
    std::lock_guard<std::mutex> lock(mu_);
    --live_;
    cv_.notify_all();
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  int capacity_;
  int live_ = 0;
  std::uint64_t next_ticket_ = 0;
  std::deque<std::uint64_t> waiters_;
};

// The mock infrastructure service: keys, security groups, nodes, vCPU
// accounting, and the audit trail.  All mutations are serialized; callers
// may be arbitrarily parallel.
class Registry {
 public:
  Registry(Quotas quotas, AuditLog& audit, std::filesystem::path key_dir,
           std::uint64_t seed = 0)
      : quotas_(quotas),
        audit_(audit),
        key_dir_(std::move(key_dir)),
        seed_(seed),
        gate_(quotas.max_concurrent_connections) {
    quotas_.check();
    ensure_dir(key_dir_);
  }

  const Quotas& quotas() const { return quotas_; }
  ConnectionGate& connection_gate() { return gate_; }

  KeyPair create_key(const std::string& region, const std::string& name,
                     const std::string& tracking_id, Clock& clock) {
    std::lock_guard<std::mutex> lock(mu_);
    auto id = region + "/" + name;
    if (keys_.count(id)) fail(Err::DuplicateKey, id);
    KeyPair key{name, region, clock.now_ms()};
    keys_[id] = key;
    key_owner_[id] = tracking_id;
    // Stored locally like the real credential would be.
    write_file_text(key_path(region, name),
                    "-----BEGIN SIMULATED KEY-----\n" + id + "\n-----END SIMULATED KEY-----\n");
    audit_.append(key.created_at_ms, tracking_id, "key/" + id, "create");
    return key;
  }

  SecurityGroup create_security_group(const std::string& region, const std::string& name,
                                      const std::string& tracking_id, Clock& clock) {
    std::lock_guard<std::mutex> lock(mu_);
    auto id = region + "/" + name;
    if (groups_.count(id)) fail(Err::DuplicateGroup, id);
    SecurityGroup group{name, region, canonical_rules()};
    groups_[id] = group;
    group_owner_[id] = tracking_id;
    audit_.append(clock.now_ms(), tracking_id, "group/" + id, "create",
                  "tcp:22 udp:3000-9000");
    return group;
  }

  // Launches one node.  The setup delay is drawn (seeded) from the base or
  // prebaked range; the caller advances its clock to ready_at_ms.  Fails
  // without side effects when the vCPU quota has no headroom.
  ProvisionedNode launch_node(const NodeSpec& spec, const KeyPair& key,
                              const SecurityGroup& group, bool use_prebaked_image,
                              Clock& clock, const std::string& tracking_id) {
    (void)key;
    (void)group;
    std::lock_guard<std::mutex> lock(mu_);
    int cost = vcpu_cost(spec.instance_type);
    if (vcpu_cost_table_miss(spec.instance_type)) {
      audit_.append(clock.now_ms(), tracking_id, "node/" + spec.name, "warn",
                    "unknown instance type " + spec.instance_type + ", assuming 1 vCPU");
    }
    if (live_vcpus_ + cost > quotas_.max_vcpus) {
      fail(Err::QuotaExceeded,
           strprintf("%d live vCPUs + %d > %d", live_vcpus_, cost, quotas_.max_vcpus));
    }

    ProvisionedNode node;
    node.node_id = strprintf("i-%08llx", static_cast<unsigned long long>(next_node_id_++));
    node.name = spec.name;
    node.region = spec.region;
    node.instance_type = spec.instance_type;
    node.ami = spec.ami;
    node.disk_gb = spec.disk_gb;
    node.vcpus = cost;
    node.launched_at_ms = clock.now_ms();

    SplitMix64 rng(mix_seed(seed_, spec.name + "/" + tracking_id));
    double delay_ms = use_prebaked_image
                          ? rng.next_uniform(kPrebakedSetupMinMs, kPrebakedSetupMaxMs)
                          : rng.next_uniform(kBaseSetupMinMs, kBaseSetupMaxMs);
    node.ready_at_ms = node.launched_at_ms + delay_ms;

    node.state = NodeState::Installing;
    audit_.append(node.launched_at_ms, tracking_id, "node/" + node.name, "create",
                  strprintf("%s %s disk=%dGB", spec.instance_type.c_str(), spec.ami.c_str(),
                            spec.disk_gb));
    if (use_prebaked_image) {
      audit_.append(node.launched_at_ms, tracking_id, "node/" + node.name, "setup",
                    "prebaked image, configuration already applied");
    } else {
      const auto& steps = base_setup_steps();
      for (size_t i = 0; i < steps.size(); ++i) {
        double step_ts = node.launched_at_ms + delay_ms * static_cast<double>(i + 1) /
                                                   static_cast<double>(steps.size());
        audit_.append(step_ts, tracking_id, "node/" + node.name, "setup", steps[i]);
      }
    }

    live_vcpus_ += cost;
    peak_vcpus_ = std::max(peak_vcpus_, live_vcpus_);
    nodes_[node.node_id] = node;
    node_owner_[node.node_id] = tracking_id;
    return node;
  }

  // Transitions a node to Ready once its clock reached ready_at_ms.
  void mark_ready(ProvisionedNode& node, Clock& clock) {
    clock.advance_to(node.ready_at_ms);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = nodes_.find(node.node_id);
    if (it == nodes_.end() || it->second.state != NodeState::Installing) return;
    it->second.state = NodeState::Ready;
    node.state = NodeState::Ready;
    audit_.append(node.ready_at_ms, node_owner_[node.node_id], "node/" + node.name, "ready");
  }

  // Terminates every resource owned by the tracking id.  Idempotent: a
  // second call finds nothing and does nothing.
  void teardown_tracking(const std::string& tracking_id, Clock& clock) {
    std::lock_guard<std::mutex> lock(mu_);
    double ts = clock.now_ms();
    auto owned_by = [&](const std::map<std::string, std::string>& owners,
                        const std::string& id) {
      auto it = owners.find(id);
      return it != owners.end() && it->second == tracking_id;
    };
    for (auto it = nodes_.begin(); it != nodes_.end();) {
      if (owned_by(node_owner_, it->first)) {
        if (it->second.state != NodeState::Terminated) live_vcpus_ -= it->second.vcpus;
        audit_.append(ts, tracking_id, "node/" + it->second.name, "delete");
        node_owner_.erase(it->first);
        it = nodes_.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = groups_.begin(); it != groups_.end();) {
      if (owned_by(group_owner_, it->first)) {
        audit_.append(ts, tracking_id, "group/" + it->first, "delete");
        group_owner_.erase(it->first);
        it = groups_.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = keys_.begin(); it != keys_.end();) {
      if (owned_by(key_owner_, it->first)) {
        std::error_code ec;
        std::filesystem::remove(key_path(it->second.region, it->second.name), ec);
        audit_.append(ts, tracking_id, "key/" + it->first, "delete");
        key_owner_.erase(it->first);
        it = keys_.erase(it);
      } else {
        ++it;
      }
    }
  }

  struct LeakReport {
    int keys = 0;
    int groups = 0;
    int nodes = 0;
    bool clean() const { return keys == 0 && groups == 0 && nodes == 0; }
  };

  LeakReport leaked(const std::string& tracking_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    LeakReport report;
    for (const auto& [id, owner] : key_owner_) {
      if (owner == tracking_id) ++report.keys;
    }
    for (const auto& [id, owner] : group_owner_) {
      if (owner == tracking_id) ++report.groups;
    }
    for (const auto& [id, owner] : node_owner_) {
      if (owner == tracking_id) ++report.nodes;
    }
    return report;
  }

  LeakReport total_live() const {
    std::lock_guard<std::mutex> lock(mu_);
    return {static_cast<int>(keys_.size()), static_cast<int>(groups_.size()),
            static_cast<int>(nodes_.size())};
  }

  int live_vcpus() const {
    std::lock_guard<std::mutex> lock(mu_);
    return live_vcpus_;
  }

  int peak_vcpus() const {
    std::lock_guard<std::mutex> lock(mu_);
    return peak_vcpus_;
  }

  std::optional<SecurityGroup> group(const std::string& region, const std::string& name) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = groups_.find(region + "/" + name);
    if (it == groups_.end()) return std::nullopt;
    return it->second;
  }

  std::filesystem::path key_path(const std::string& region, const std::string& name) const {
    return key_dir_ / (region + "_" + name + ".pem");
  }

 private:
  static bool vcpu_cost_table_miss(const std::string& instance_type) {
    return instance_type != "t2.micro";
  }

  Quotas quotas_;
  AuditLog& audit_;
  std::filesystem::path key_dir_;
  std::uint64_t seed_;
  ConnectionGate gate_;

  mutable std::mutex mu_;
  std::map<std::string, KeyPair> keys_;          // region/name
  std::map<std::string, SecurityGroup> groups_;  // region/name
  std::map<std::string, ProvisionedNode> nodes_;  // node_id
  std::map<std::string, std::string> key_owner_;
  std::map<std::string, std::string> group_owner_;
  std::map<std::string, std::string> node_owner_;
  int live_vcpus_ = 0;
  int peak_vcpus_ = 0;
  std::uint64_t next_node_id_ = 1;
};

}  // namespace aoip::provision
