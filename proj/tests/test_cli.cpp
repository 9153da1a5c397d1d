#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// Compile definition supplied by the build: absolute path to the CLI binary.
#ifndef ANCHORSTREAM_CLI_PATH
#error "ANCHORSTREAM_CLI_PATH must be defined"
#endif

namespace fs = std::filesystem;

TEST_SUITE_BEGIN("cli");

namespace {

const fs::path kWorkRoot = "/tmp/anchorstream-cli-tests";

int run_cli(const std::string& args, const fs::path& capture) {
  const std::string command =
      std::string(ANCHORSTREAM_CLI_PATH) + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(command.c_str());
  if (status == -1) return -1;
#ifdef WEXITSTATUS
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -1;
#else
  return status;
#endif
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Pulls `"key": "value"` out of a JSON text without a full parse.
std::string json_string_field(const std::string& text, const std::string& key) {
  const std::string needle = "\"" + key + "\": \"";
  const auto at = text.find(needle);
  if (at == std::string::npos) return {};
  const auto start = at + needle.size();
  const auto end = text.find('"', start);
  if (end == std::string::npos) return {};
  return text.substr(start, end - start);
}

// The shared pipeline: data -> checkpoint -> anchors -> two identical runs.
// Built once; every exit code is recorded for the assertions below.
struct Pipeline {
  fs::path root = kWorkRoot / "pipeline";
  int gen_exit = -1;
  int train_exit = -1;
  int anchors_exit = -1;
  int run1_exit = -1;
  int run2_exit = -1;
  std::string run_overrides;

  static const Pipeline& instance() {
    static const Pipeline p = [] {
      Pipeline x;
      fs::remove_all(x.root);
      fs::create_directories(x.root);
      const std::string root = x.root.string();

      x.gen_exit = run_cli("gen-data --out " + root +
                               "/data --classes 4 --dim 12 --source-per-class 80 "
                               "--target-per-class 40 --seed 7 --family rotation_mix "
                               "--severity 3",
                           x.root / "gen.log");
      x.train_exit = run_cli("train-source --data " + root + "/data/source.bin --out " + root +
                                 "/model.ckpt --hidden 24 --feature-dim 12 --epochs 15 "
                                 "--seed 7",
                             x.root / "train.log");
      x.anchors_exit = run_cli("anchors --model " + root + "/model.ckpt --data " + root +
                                   "/data/source.bin --out " + root + "/anchors.bin",
                               x.root / "anchors.log");
      x.run_overrides =
          " --set batch_size=32 --set queue_capacity=64 --set inner_epochs=1"
          " --family rotation_mix --severity 3";
      const std::string run_common = "run --data " + root + "/data/target.bin --model " + root +
                                     "/model.ckpt --anchors " + root + "/anchors.bin" +
                                     x.run_overrides;
      x.run1_exit = run_cli(run_common + " --out " + root + "/run1", x.root / "run1.log");
      x.run2_exit = run_cli(run_common + " --out " + root + "/run2", x.root / "run2.log");
      return x;
    }();
    return p;
  }
};

}  // namespace

TEST_CASE("the generate/train/anchor/run pipeline succeeds end to end") {
  const Pipeline& p = Pipeline::instance();
  CHECK(p.gen_exit == 0);
  CHECK(p.train_exit == 0);
  CHECK(p.anchors_exit == 0);
  CHECK(p.run1_exit == 0);
  CHECK(p.run2_exit == 0);

  CHECK(fs::exists(p.root / "data" / "source.bin"));
  CHECK(fs::exists(p.root / "data" / "target_clean.bin"));
  CHECK(fs::exists(p.root / "data" / "target.bin"));
  CHECK(fs::exists(p.root / "data" / "manifest.json"));
  CHECK(fs::exists(p.root / "model.ckpt"));
  CHECK(fs::exists(p.root / "anchors.bin"));
  for (const char* artifact : {"report.json", "series.csv", "predictions.csv", "timing.json"}) {
    CHECK(fs::exists(p.root / "run1" / artifact));
  }

  const std::string manifest = slurp(p.root / "data" / "manifest.json");
  CHECK(manifest.find("\"family\": \"rotation_mix\"") != std::string::npos);
  CHECK(manifest.find("\"severity\": 3") != std::string::npos);
}

TEST_CASE("reruns with the same inputs produce byte-identical artifacts") {
  const Pipeline& p = Pipeline::instance();
  REQUIRE(p.run1_exit == 0);
  REQUIRE(p.run2_exit == 0);
  // timing.json is the one artifact allowed to differ
  for (const char* artifact : {"report.json", "series.csv", "predictions.csv"}) {
    const std::string a = slurp(p.root / "run1" / artifact);
    const std::string b = slurp(p.root / "run2" / artifact);
    REQUIRE_FALSE(a.empty());
    CHECK(a == b);
  }
}

TEST_CASE("the report echoes the full effective configuration") {
  const Pipeline& p = Pipeline::instance();
  REQUIRE(p.run1_exit == 0);
  const std::string report = slurp(p.root / "run1" / "report.json");
  CHECK(json_string_field(report, "batch_size") == "32");
  CHECK(json_string_field(report, "queue_capacity") == "64");
  CHECK(json_string_field(report, "inner_epochs") == "1");
  CHECK(json_string_field(report, "protocol") == "one_pass");
  CHECK(json_string_field(report, "strategy") == "filtered");
  CHECK(report.find("\"family\": \"rotation_mix\"") != std::string::npos);
  CHECK(report.find("\"severity\": 3") != std::string::npos);
}

TEST_CASE("recomputing metrics from the prediction log reproduces the run's number") {
  const Pipeline& p = Pipeline::instance();
  REQUIRE(p.run1_exit == 0);
  const int code = run_cli("report --log " + (p.root / "run1" / "predictions.csv").string() +
                               " --out " + (p.root / "replayed.json").string(),
                           p.root / "report.log");
  CHECK(code == 0);
  const std::string from_run = json_string_field(slurp(p.root / "run1" / "report.json"),
                                                 "final_error");
  const std::string replayed = json_string_field(slurp(p.root / "replayed.json"),
                                                 "final_error");
  REQUIRE_FALSE(from_run.empty());
  CHECK(from_run == replayed);
}

TEST_CASE("shuffled replays add an order-robustness block") {
  const Pipeline& p = Pipeline::instance();
  REQUIRE(p.run1_exit == 0);
  const std::string root = p.root.string();
  const int code = run_cli("run --data " + root + "/data/target.bin --model " + root +
                               "/model.ckpt --anchors " + root + "/anchors.bin" +
                               p.run_overrides + " --shuffles 3 --out " + root + "/run-shuffled",
                           p.root / "run-shuffled.log");
  CHECK(code == 0);
  const std::string report = slurp(p.root / "run-shuffled" / "report.json");
  CHECK(report.find("\"order_robustness\"") != std::string::npos);
  CHECK(report.find("\"stddev\"") != std::string::npos);
}

TEST_CASE("source-free mode runs without an anchors file") {
  const Pipeline& p = Pipeline::instance();
  REQUIRE(p.train_exit == 0);
  const std::string root = p.root.string();
  const int code = run_cli(
      "run --data " + root + "/data/target.bin --model " + root +
          "/model.ckpt --set anchor_mode=classifier_prototypes --set batch_size=32 "
          "--set queue_capacity=64 --set inner_epochs=1 --out " +
          root + "/run-sourcefree",
      p.root / "run-sourcefree.log");
  CHECK(code == 0);
  CHECK(fs::exists(p.root / "run-sourcefree" / "report.json"));
}

TEST_CASE("a one-dimensional sweep fans out per-point artifacts") {
  const Pipeline& p = Pipeline::instance();
  REQUIRE(p.anchors_exit == 0);
  const std::string root = p.root.string();
  const int code = run_cli("sweep --data " + root + "/data/target.bin --model " + root +
                               "/model.ckpt --anchors " + root + "/anchors.bin" +
                               " --set batch_size=32 --set queue_capacity=64" +
                               " --param inner_epochs --values 0,1 --out " + root + "/sweep",
                           p.root / "sweep.log");
  CHECK(code == 0);
  CHECK(fs::exists(p.root / "sweep" / "sweep.json"));
  CHECK(fs::exists(p.root / "sweep" / "inner_epochs=0" / "report.json"));
  CHECK(fs::exists(p.root / "sweep" / "inner_epochs=1" / "report.json"));
  const std::string summary = slurp(p.root / "sweep" / "sweep.json");
  CHECK(summary.find("\"param\": \"inner_epochs\"") != std::string::npos);
}

TEST_CASE("a severity sweep corrupts the clean stream per point") {
  const Pipeline& p = Pipeline::instance();
  REQUIRE(p.anchors_exit == 0);
  const std::string root = p.root.string();
  const int code =
      run_cli("sweep --data " + root + "/data/target_clean.bin --model " + root +
                  "/model.ckpt --anchors " + root + "/anchors.bin" +
                  " --set batch_size=32 --set queue_capacity=64 --set inner_epochs=1" +
                  " --param severity --values 0,3 --family rotation_mix --out " + root +
                  "/sweep-severity",
              p.root / "sweep-severity.log");
  CHECK(code == 0);
  CHECK(fs::exists(p.root / "sweep-severity" / "severity=0" / "report.json"));
  CHECK(fs::exists(p.root / "sweep-severity" / "severity=3" / "report.json"));
}

TEST_CASE("usage problems exit with code 2") {
  const Pipeline& p = Pipeline::instance();
  const fs::path log = kWorkRoot / "usage.log";
  // unknown subcommand
  CHECK(run_cli("no-such-command", log) == 2);
  // no subcommand at all
  CHECK(run_cli("", log) == 2);
  // missing required option
  CHECK(run_cli("train-source --data /tmp/nowhere.bin", log) == 2);
  // missing input file
  CHECK(run_cli("train-source --data /tmp/anchorstream-does-not-exist.bin --out /tmp/x.ckpt",
                log) == 2);
  // malformed --set override
  const std::string root = p.root.string();
  CHECK(run_cli("run --data " + root + "/data/target.bin --model " + root +
                    "/model.ckpt --anchors " + root + "/anchors.bin --set nonsense --out " +
                    root + "/run-bad",
                log) == 2);
  // unknown config key
  CHECK(run_cli("run --data " + root + "/data/target.bin --model " + root +
                    "/model.ckpt --anchors " + root + "/anchors.bin --set no_such_knob=1 --out " +
                    root + "/run-bad",
                log) == 2);
  // anchors required in the default mode
  CHECK(run_cli("run --data " + root + "/data/target.bin --model " + root +
                    "/model.ckpt --out " + root + "/run-bad",
                log) == 2);
  // help is not an error
  CHECK(run_cli("--help", log) == 0);
}

TEST_CASE("numerical blow-ups exit with code 3 and leave a state dump") {
  const Pipeline& p = Pipeline::instance();
  REQUIRE(p.anchors_exit == 0);
  const std::string root = p.root.string();
  const fs::path out = p.root / "run-blowup";
  const int code = run_cli("run --data " + root + "/data/target.bin --model " + root +
                               "/model.ckpt --anchors " + root + "/anchors.bin" +
                               " --set batch_size=32 --set queue_capacity=64" +
                               " --set lr=1e100 --out " + out.string(),
                           p.root / "blowup.log");
  CHECK(code == 3);
  bool found_dump = false;
  if (fs::exists(out)) {
    for (const auto& entry : fs::directory_iterator(out)) {
      if (entry.is_directory() &&
          entry.path().filename().string().rfind("numerical-failure-step-", 0) == 0) {
        found_dump = true;
        CHECK(fs::exists(entry.path() / "state.json"));
        CHECK(fs::exists(entry.path() / "model.ckpt"));
        CHECK(fs::exists(entry.path() / "bank.bin"));
      }
    }
  }
  CHECK(found_dump);
  const std::string log_text = slurp(p.root / "blowup.log");
  CHECK(log_text.find("state dump") != std::string::npos);
}

TEST_SUITE_END();
