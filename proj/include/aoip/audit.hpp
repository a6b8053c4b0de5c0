#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "aoip/util.hpp"

namespace aoip {

// One line per resource lifecycle event: timestamp, tracking id, resource,
// action.  Shared between the provisioner and the object store.
struct AuditEvent {
  double ts_ms = 0;
  std::string tracking_id;
  std::string resource;  // e.g. "key/us-east-1/key_sender_sim-..-0"
  std::string action;    // "create", "delete", "upload", "overwrite", ...
  std::string detail;
};

class AuditLog {
 public:
  AuditLog() = default;

  // When set, every event is also appended to this file.
  void set_sink(const std::filesystem::path& file) {
    std::lock_guard<std::mutex> lock(mu_);
    if (file.has_parent_path()) ensure_dir(file.parent_path());
    sink_.open(file, std::ios::app);
  }

  void append(double ts_ms, const std::string& tracking_id,
              const std::string& resource, const std::string& action,
              const std::string& detail = "") {
    std::lock_guard<std::mutex> lock(mu_);
    events_.push_back({ts_ms, tracking_id, resource, action, detail});
    if (sink_.is_open()) {
      sink_ << strprintf("[%.3f] %s %s %s %s\n", ts_ms, tracking_id.c_str(),
                         resource.c_str(), action.c_str(), detail.c_str());
      sink_.flush();
    }
  }

  std::vector<AuditEvent> events() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_;
  }

  size_t count(const std::string& tracking_id, const std::string& action) const {
    std::lock_guard<std::mutex> lock(mu_);
    size_t n = 0;
    for (const auto& e : events_) {
      if (e.tracking_id == tracking_id && e.action == action) ++n;
    }
    return n;
  }

 private:
  mutable std::mutex mu_;
  std::vector<AuditEvent> events_;
  std::ofstream sink_;
};

}  // namespace aoip
