#include "aoip/storage.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace aoip;
using storage::StorageUrl;

namespace {

TEST(ParseUrl, PaperInvocationUrl) {
  StorageUrl url = storage::parse_storage_url("s3://raw-src-files/src_noisy_test/");
  EXPECT_EQ(url.bucket, "raw-src-files");
  EXPECT_EQ(url.key_prefix, "src_noisy_test/");
}

TEST(ParseUrl, MinimalBucketOnly) {
  StorageUrl url = storage::parse_storage_url("s3://b");
  EXPECT_EQ(url.bucket, "b");
  EXPECT_EQ(url.key_prefix, "");
}

TEST(ParseUrl, WrongSchemeRejected) {
  try {
    storage::parse_storage_url("http://x/y");
    FAIL() << "expected BadScheme";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Err::BadScheme);
  }
}

TEST(ParseUrl, EmptyBucketRejected) {
  try {
    storage::parse_storage_url("s3:///prefix");
    FAIL() << "expected EmptyBucket";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Err::EmptyBucket);
  }
}

// Property: render(parse(u)) == u for normalized urls.
TEST(ParseUrl, RenderRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::string u = "s3://bucket" + std::to_string(rng() % 1000) + "/";
    int segments = static_cast<int>(rng() % 3);
    for (int s = 0; s < segments; ++s) {
      u += "seg" + std::to_string(rng() % 100) + "/";
    }
    EXPECT_EQ(storage::parse_storage_url(u).render(), u);
  }
}

TEST(ObjectStore, UploadThenReadBackIdentical) {
  testutil::TempDir dir("store");
  AuditLog audit;
  storage::ObjectStore store(dir / "root", &audit);
  std::vector<std::uint8_t> payload(4096);
  std::mt19937_64 rng(3);
  for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
  write_file_bytes(dir / "local.bin", payload.data(), payload.size());

  StorageUrl url = storage::parse_storage_url("s3://recordings/run1/");
  auto stored = store.upload(dir / "local.bin", url, "clip.wav", "sim-1");
  EXPECT_EQ(read_file_bytes(stored), payload);
  EXPECT_EQ(stored, store.object_path(url, "clip.wav"));
}

TEST(ObjectStore, PrefixDirectoriesCreatedOnDemand) {
  testutil::TempDir dir("store");
  storage::ObjectStore store(dir / "root");
  write_file_text(dir / "a.txt", "hello");
  StorageUrl url = storage::parse_storage_url("s3://bucket/deep/nested/prefix/");
  auto stored = store.upload(dir / "a.txt", url, "a.txt");
  EXPECT_TRUE(std::filesystem::exists(stored));
}

TEST(ObjectStore, SameKeyOverwritesAndAuditsBoth) {
  testutil::TempDir dir("store");
  AuditLog audit;
  storage::ObjectStore store(dir / "root", &audit);
  write_file_text(dir / "v1.txt", "first");
  write_file_text(dir / "v2.txt", "second");
  StorageUrl url = storage::parse_storage_url("s3://bucket/");
  store.upload(dir / "v1.txt", url, "x.txt", "sim-1");
  auto stored = store.upload(dir / "v2.txt", url, "x.txt", "sim-1");
  EXPECT_EQ(read_file_bytes(stored),
            std::vector<std::uint8_t>({'s', 'e', 'c', 'o', 'n', 'd'}));
  EXPECT_EQ(audit.count("sim-1", "upload"), 1u);
  EXPECT_EQ(audit.count("sim-1", "overwrite"), 1u);
}

TEST(ObjectStore, MissingLocalFileFails) {
  testutil::TempDir dir("store");
  storage::ObjectStore store(dir / "root");
  try {
    store.upload(dir / "ghost.bin", storage::parse_storage_url("s3://b/"), "g");
    FAIL() << "expected IoFailure";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Err::IoFailure);
  }
}

TEST(FetchSource, ListsWavsSorted) {
  testutil::TempDir dir("corpus");
  std::filesystem::create_directories(dir / "test_clean");
  write_file_text(dir.path() / "test_clean" / "b.wav", "x");
  write_file_text(dir.path() / "test_clean" / "a.wav", "x");
  write_file_text(dir.path() / "test_clean" / "c.wav", "x");
  write_file_text(dir.path() / "test_clean" / "notes.txt", "skip me");
  auto files = storage::fetch_source("test_clean", dir.path());
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(files[0].filename(), "a.wav");
  EXPECT_EQ(files[1].filename(), "b.wav");
  EXPECT_EQ(files[2].filename(), "c.wav");
}

TEST(FetchSource, UnknownLabelRejected) {
  testutil::TempDir dir("corpus");
  try {
    storage::fetch_source("missing_set", dir.path());
    FAIL() << "expected UnknownCorpus";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Err::UnknownCorpus);
    EXPECT_EQ(e.detail(), "missing_set");
  }
}

TEST(FetchSource, EmptyDirectoryGivesEmptyList) {
  testutil::TempDir dir("corpus");
  std::filesystem::create_directories(dir / "empty_set");
  EXPECT_TRUE(storage::fetch_source("empty_set", dir.path()).empty());
}

}  // namespace
