#pragma once

#include <algorithm>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "aoip/audit.hpp"
#include "aoip/errors.hpp"
#include "aoip/util.hpp"

namespace aoip::storage {

// s3-style object URL.  Only the scheme "s3" is accepted; bucket and prefix
// map onto a directory tree under a local object root.
struct StorageUrl {
  std::string bucket;
  std::string key_prefix;  // may be empty, may end in "/"

  friend bool operator==(const StorageUrl&, const StorageUrl&) = default;

  std::string render() const { return "s3://" + bucket + "/" + key_prefix; }
};

inline StorageUrl parse_storage_url(const std::string& text) {
  const std::string scheme = "s3://";
  if (text.rfind(scheme, 0) != 0) fail(Err::BadScheme, text);
  std::string rest = text.substr(scheme.size());
  auto slash = rest.find('/');
  StorageUrl url;
  if (slash == std::string::npos) {
    url.bucket = rest;
  } else {
    url.bucket = rest.substr(0, slash);
    url.key_prefix = rest.substr(slash + 1);
  }
  if (url.bucket.empty()) fail(Err::EmptyBucket, text);
  return url;
}

// Local object root standing in for a blob store.  Objects land at
// <root>/<bucket>/<prefix><object>; uploads to the same key overwrite, and
// both writes show up in the audit log.
class ObjectStore {
 public:
  explicit ObjectStore(std::filesystem::path root, AuditLog* audit = nullptr)
      : root_(std::move(root)), audit_(audit) {}

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path object_path(const StorageUrl& url,
                                    const std::string& object_name) const {
    return root_ / url.bucket / (url.key_prefix + object_name);
  }

  std::filesystem::path upload(const std::filesystem::path& local,
                               const StorageUrl& url,
                               const std::string& object_name,
                               const std::string& tracking_id = "") {
    if (!std::filesystem::exists(local)) fail(Err::IoFailure, "no such file " + local.string());
    auto dest = object_path(url, object_name);
    std::lock_guard<std::mutex> lock(mu_);
    bool existed = std::filesystem::exists(dest);
    ensure_dir(dest.parent_path());
    std::error_code ec;
    std::filesystem::copy_file(local, dest,
                               std::filesystem::copy_options::overwrite_existing, ec);
    if (ec) fail(Err::IoFailure, "copy to " + dest.string() + ": " + ec.message());
    if (audit_) {
      audit_->append(0, tracking_id, "object/" + url.render() + object_name,
                     existed ? "overwrite" : "upload");
    }
    return dest;
  }

 private:
  std::filesystem::path root_;
  AuditLog* audit_;
  std::mutex mu_;
};

// Lists the WAV files of one named source set, lexicographically.  The label
// is a directory under the corpus root.
inline std::vector<std::filesystem::path> fetch_source(
    const std::string& label, const std::filesystem::path& corpus_root) {
  auto dir = corpus_root / label;
  if (!std::filesystem::is_directory(dir)) fail(Err::UnknownCorpus, label);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace aoip::storage
