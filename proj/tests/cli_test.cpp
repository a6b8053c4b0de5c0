// End-to-end tests of the aoip-sim binary: exit codes, flag grammar, and
// the printed report lines.

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "aoip/audio.hpp"
#include "aoip/util.hpp"
#include "test_util.hpp"

using namespace aoip;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

// Runs the binary with OBJECT_ROOT/CORPUS_ROOT/LOG_ROOT pointed at the
// scratch directory; stdout and stderr are captured together.
CliResult run_cli(const testutil::TempDir& root, const std::string& args,
                  const std::string& corpus_root = "", const std::string& cwd = "",
                  const std::string& extra_env = "") {
  std::string corpus = corpus_root.empty() ? (root / "corpus").string() : corpus_root;
  auto out_file = root / ("cli_out_" + std::to_string(rand()) + ".txt");
  std::ostringstream cmd;
  cmd << "cd " << (cwd.empty() ? root.path().string() : cwd) << " && ";
  cmd << "OBJECT_ROOT=" << (root / "objects").string() << " CORPUS_ROOT=" << corpus
      << " LOG_ROOT=" << (root / "logs").string() << " " << extra_env << " " << AOIP_CLI_BIN
      << " " << args << " > " << out_file.string() << " 2>&1";
  int status = std::system(cmd.str().c_str());
  CliResult result;
  result.exit_code = WEXITSTATUS(status);
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  result.output = ss.str();
  return result;
}

const char* kSimulateArgs =
    "simulate --sreg ap-northeast-2 --rreg ap-northeast-3 --sins t2.micro --rins t2.micro "
    "--sami ami-0c9c942bd7bf113a2 --rami ami-0da13880f921c96a5 --src test_src_noisy "
    "--dur 16 --subw 100 --sdbw 100 --rubw 100 --rdbw 100 "
    "--s3 s3://raw-src-files/src_noisy_test/";

TEST(Cli, SimulateReferenceInvocationSucceeds) {
  testutil::TempDir root("cli");
  CliResult r = run_cli(root, kSimulateArgs, AOIP_DATA_DIR "/corpus");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("SUCCESS"), std::string::npos) << r.output;
  // Recording landed under the bucket/prefix of the --s3 url.
  bool found = false;
  auto prefix = root.path() / "objects" / "raw-src-files" / "src_noisy_test";
  if (std::filesystem::is_directory(prefix)) {
    for (const auto& e : std::filesystem::directory_iterator(prefix)) {
      if (e.path().extension() == ".wav") found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(Cli, MissingStorageFlagExitsTwoAndNamesIt) {
  testutil::TempDir root("cli");
  std::string args(kSimulateArgs);
  auto pos = args.find("--s3");
  args.resize(pos);
  CliResult r = run_cli(root, args, AOIP_DATA_DIR "/corpus");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("--s3"), std::string::npos) << r.output;
}

TEST(Cli, PrebakedSetupFitsThreeMinuteBudget) {
  testutil::TempDir root("cli");
  CliResult r = run_cli(root, std::string(kSimulateArgs) + " --prebaked --tid sim-fast",
                        AOIP_DATA_DIR "/corpus");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  std::ifstream log(root.path() / "logs" / "sim-fast" / "job_record.json");
  nlohmann::json record = nlohmann::json::parse(log);
  bool saw_launch = false;
  for (const auto& t : record["timings"]) {
    if (t["step"] == "launch_node") {
      saw_launch = true;
      EXPECT_LE(t["end_ms"].get<double>() - t["start_ms"].get<double>(), 180000.0);
    }
  }
  EXPECT_TRUE(saw_launch);
}

TEST(Cli, ConfigFileSuppliesMissingFlags) {
  testutil::TempDir root("cli");
  std::string conf =
      "sreg=us-east-1\nrreg=us-east-1\nsins=t2.micro\nrins=t2.micro\n"
      "sami=ami-1\nrami=ami-1\nsrc=test_clean\ndur=2\n"
      "subw=500\nsdbw=500\nrubw=500\nrdbw=500\ns3=s3://bucket/out/\nprebaked=true\n";
  write_file_text(root / "sim.conf", conf);
  CliResult r = run_cli(root, "simulate --config-file sim.conf", AOIP_DATA_DIR "/corpus");
  EXPECT_EQ(r.exit_code, 0) << r.output;
}

TEST(Cli, UnknownCorpusFailsJobExitOne) {
  testutil::TempDir root("cli");
  std::filesystem::create_directories(root / "corpus");
  CliResult r = run_cli(root, kSimulateArgs);  // corpus root lacks the label
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("FAILURE"), std::string::npos) << r.output;
}

TEST(Cli, DynamicMixRelaysDirectory) {
  testutil::TempDir root("cli");
  std::filesystem::copy(AOIP_DATA_DIR "/dynamic/src_noisy", root / "src_noisy",
                        std::filesystem::copy_options::recursive);
  std::filesystem::copy(AOIP_DATA_DIR "/dynamic/src_clean", root / "src_clean",
                        std::filesystem::copy_options::recursive);
  CliResult r = run_cli(root,
                        "dynamic-mix --src_dir src_noisy --relay_dir relayed "
                        "--clean_dir src_clean --num 3");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("completion accuracy: 100.00% (6/6)"), std::string::npos)
      << r.output;
  EXPECT_TRUE(std::filesystem::exists(root.path() / "relayed" / "sample_000.wav"));
}

TEST(Cli, DynamicMixZeroWorkersExitsTwo) {
  testutil::TempDir root("cli");
  CliResult r = run_cli(root,
                        "dynamic-mix --src_dir x --relay_dir y --clean_dir z --num 0");
  EXPECT_EQ(r.exit_code, 2) << r.output;
}

TEST(Cli, DynamicMixEmptySourceExitsOne) {
  testutil::TempDir root("cli");
  std::filesystem::create_directories(root / "empty");
  std::filesystem::create_directories(root / "clean");
  CliResult r = run_cli(root,
                        "dynamic-mix --src_dir empty --relay_dir out --clean_dir clean --num 2");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("EmptySource"), std::string::npos) << r.output;
}

TEST(Cli, ReportWithNoLogsSaysNotApplicable) {
  testutil::TempDir root("cli");
  CliResult r = run_cli(root, "report");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.output.find("completion accuracy: n/a (0/0)"), std::string::npos) << r.output;
}

TEST(Cli, ReportAggregatesAcrossRuns) {
  testutil::TempDir root("cli");
  for (int i = 0; i < 2; ++i) {
    CliResult r = run_cli(root,
                          std::string(kSimulateArgs) + " --prebaked --tid sim-rep-" +
                              std::to_string(i),
                          AOIP_DATA_DIR "/corpus");
    ASSERT_EQ(r.exit_code, 0) << r.output;
  }
  CliResult r = run_cli(root, "report all");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.output.find("completion accuracy: 100.00% (2/2)"), std::string::npos)
      << r.output;
}

TEST(Cli, SweepPrintsTable) {
  testutil::TempDir root("cli");
  CliResult r = run_cli(root, "sweep --rates 50,100 --offered-kbps 80 --dur 5");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("rate_kbps\t"), std::string::npos);
  EXPECT_NE(r.output.find("50\t"), std::string::npos);
  EXPECT_NE(r.output.find("100\t"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(root.path() / "logs" / "sweep_summary.log"));
}

TEST(Cli, SweepOverCorpusAudio) {
  testutil::TempDir root("cli");
  CliResult r = run_cli(root, "sweep --losses 0,0.1 --src test_clean --dur 2",
                        AOIP_DATA_DIR "/corpus");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("inf"), std::string::npos);  // lossless row
}

TEST(Cli, AwsCredentialsAcceptedAndIgnoredWithNotice) {
  testutil::TempDir root("cli");
  CliResult r = run_cli(root, "report", "", "", "AWS_ACCESS_KEY_ID=AKIAFAKE");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.output.find("ignored"), std::string::npos) << r.output;
}

TEST(Cli, NoSubcommandExitsTwo) {
  testutil::TempDir root("cli");
  CliResult r = run_cli(root, "");
  EXPECT_EQ(r.exit_code, 2) << r.output;
}

}  // namespace
