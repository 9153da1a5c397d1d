#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "anchorstream/config.hpp"
#include "anchorstream/datagen.hpp"
#include "anchorstream/pipeline.hpp"
#include "anchorstream/report.hpp"

using namespace anchorstream;

TEST_SUITE_BEGIN("report");

namespace {

PredictionLog log_from(const std::vector<int>& preds, const std::vector<int>& truth) {
  PredictionLog log;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    PredictionRecord r;
    r.sample_id = static_cast<std::int64_t>(i);
    r.arrival_index = static_cast<std::int64_t>(i);
    r.predicted_class = preds[i];
    r.true_class = truth[i];
    log.records.push_back(r);
  }
  return log;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cumulative error matches a hand computation") {
  // predictions: right, wrong, right, right -> 0%, 50%, 33.33%, 25%
  const PredictionLog log = log_from({1, 0, 2, 3}, {1, 1, 2, 3});
  const std::vector<double> series = cumulative_error(log);
  REQUIRE(series.size() == 4);
  CHECK(series[0] == 0.0);
  CHECK(series[1] == 50.0);
  CHECK(series[2] == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
  CHECK(series[3] == 25.0);
}

TEST_CASE("cumulative error refuses empty or unlabelled logs") {
  CHECK_THROWS_AS(cumulative_error(PredictionLog{}), ReportError);
  PredictionLog unlabelled = log_from({0, 1}, {0, -1});
  CHECK_THROWS_AS(cumulative_error(unlabelled), ReportError);
}

TEST_CASE("plain error rate") {
  CHECK(error_rate({0, 1, 2, 0}, {0, 1, 1, 1}) == 50.0);
  CHECK(error_rate({0}, {0}) == 0.0);
  CHECK(error_rate({1}, {0}) == 100.0);
  CHECK_THROWS_AS(error_rate({}, {}), ReportError);
  CHECK_THROWS_AS(error_rate({0, 1}, {0}), ReportError);
}

TEST_CASE("downsampling keeps the curve's endpoint and stays within budget") {
  std::vector<double> series(1000);
  for (std::size_t i = 0; i < series.size(); ++i) series[i] = static_cast<double>(i);

  const auto down = downsample_series(series, 64);
  CHECK(down.size() <= 64);
  CHECK(down.back().first == 999);
  CHECK(down.back().second == 999.0);
  CHECK(down.front().first >= 0);
  for (std::size_t i = 1; i < down.size(); ++i) CHECK(down[i].first > down[i - 1].first);

  // short series come back whole
  const auto tiny = downsample_series({1.0, 2.0, 3.0}, 64);
  REQUIRE(tiny.size() == 3);
  CHECK(tiny[0] == std::pair<std::int64_t, double>{0, 1.0});
  CHECK(tiny[2] == std::pair<std::int64_t, double>{2, 3.0});
}

TEST_CASE("order robustness aggregates mean and sample deviation") {
  const RobustnessSummary flat = order_robustness([](int) { return 10.0; }, 5);
  CHECK(flat.mean == 10.0);
  CHECK(flat.stddev == 0.0);
  REQUIRE(flat.final_errors.size() == 5);

  const RobustnessSummary spread =
      order_robustness([](int i) { return i == 0 ? 8.0 : 12.0; }, 2);
  CHECK(spread.mean == 10.0);
  CHECK(spread.stddev == doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));  // sample (n-1)

  CHECK_THROWS_AS(order_robustness([](int) { return 0.0; }, 1), ReportError);
}

TEST_CASE("timing summary computes throughput and rejects empty runs") {
  const TimingSummary t = timing_summary(2.0, 500);
  CHECK(t.samples_per_second == 250.0);
  CHECK_THROWS_AS(timing_summary(1.0, 0), ReportError);
}

TEST_CASE("config text parses, applies, and round-trips") {
  const std::string text =
      "# streaming knobs\n"
      "batch_size = 64\n"
      "queue_capacity = 256\n"
      "lr = 0.02\n"
      "protocol = multi_pass\n"
      "passes = 2\n"
      "strategy = soft_assignment\n"
      "anchor_mode = classifier_prototypes\n"
      "count_per = outer\n"
      "freeze_head = true\n";
  const auto pairs = parse_config_text(text);
  const EngineConfig cfg = apply_config_pairs(EngineConfig{}, pairs);
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.queue_capacity == 256);
  CHECK(cfg.lr == 0.02);
  CHECK(cfg.protocol == Protocol::multi_pass);
  CHECK(cfg.passes == 2);
  CHECK(cfg.strategy == Strategy::soft_assignment);
  CHECK(cfg.anchor_mode == AnchorMode::classifier_prototypes);
  CHECK(cfg.count_per == CountPer::outer);
  CHECK(cfg.freeze_head == true);

  // stringify and re-apply: a perfect round trip
  const auto echoed = config_to_map(cfg);
  const EngineConfig again = apply_config_pairs(EngineConfig{}, echoed);
  CHECK(config_to_map(again) == echoed);
}

TEST_CASE("config errors carry their cause") {
  CHECK_THROWS_AS(parse_config_text("batch_size 64\n"), ParseError);     // no '='
  CHECK_THROWS_AS(parse_config_text("a = 1\na = 2\n"), ParseError);      // duplicate
  CHECK_THROWS_AS(parse_config_text("= 3\n"), ParseError);               // empty key
  try {
    parse_config_text("batch_size = 64\nbatch_size 32\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }

  CHECK_THROWS_AS(apply_config_pairs(EngineConfig{}, {{"no_such_knob", "1"}}), ConfigError);
  CHECK_THROWS_AS(apply_config_pairs(EngineConfig{}, {{"batch_size", "many"}}), ConfigError);
  CHECK_THROWS_AS(apply_config_pairs(EngineConfig{}, {{"protocol", "three_pass"}}), ConfigError);
  // values that parse but violate the schema still fail (validated at the end)
  CHECK_THROWS_AS(apply_config_pairs(EngineConfig{}, {{"queue_capacity", "100"}}), ConfigError);
}

TEST_CASE("run reports serialize deterministically with sorted keys") {
  RunReport report;
  report.config = config_to_map(EngineConfig{});
  report.final_error = 12.5;
  report.samples = 400;
  report.series = {{0, 50.0}, {399, 12.5}};
  report.rows.push_back({"rotation_mix", 3, 40.0, 12.5});

  const std::string a = report.to_json();
  const std::string b = report.to_json();
  CHECK(a == b);
  CHECK(a.find("\"final_error\"") != std::string::npos);
  CHECK(a.find("\"format_version\"") != std::string::npos);
  // doubles are printed as round-trip strings, so exact text is stable
  CHECK(a.find("12.5") != std::string::npos);

  const std::string path = "/tmp/anchorstream-report-test.json";
  report.save(path);
  CHECK(slurp(path) == a);
  std::remove(path.c_str());
}

TEST_CASE("series csv has the pinned two-column layout") {
  const std::string path = "/tmp/anchorstream-series-test.csv";
  save_series_csv({{0, 50.0}, {1, 25.0}}, path);
  const std::string text = slurp(path);
  CHECK(text.rfind("arrival_index,cumulative_error\n", 0) == 0);
  CHECK(text.find("0,50") != std::string::npos);
  CHECK(text.find("1,25") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("an end-to-end pipeline run is byte-deterministic") {
  // Small but real: pretrain, compute anchors, adapt over a corrupted
  // stream twice, and require the two report artifacts to match exactly.
  const Dataset source = generate(default_domain(3, 10, 120, 1));
  Dataset target = generate(default_domain(3, 10, 60, 2));
  target = corrupt(target, {CorruptionFamily::rotation_mix, 3, 3});

  Model model = make_model(10, {16}, 8, 3, 4);
  PretrainOptions popts;
  popts.epochs = 15;
  popts.seed = 5;
  pretrain_source(model, source, popts);
  const SourceAnchors anchors = compute_source_anchors(model, source);

  EngineConfig cfg;
  cfg.batch_size = 32;
  cfg.queue_capacity = 64;
  cfg.inner_epochs = 1;

  auto make_report = [&]() {
    const PipelineResult run = run_pipeline(model, anchors, target, cfg);
    RunReport report;
    report.config = config_to_map(cfg);
    report.final_error = run.final_error;
    report.samples = run.log.records.size();
    report.series = downsample_series(run.series, 200);
    return report.to_json();
  };
  const std::string first = make_report();
  const std::string second = make_report();
  CHECK(first == second);
  CHECK(first.find("\"samples\"") != std::string::npos);
}

TEST_CASE("pipeline shuffling permutes rows and labels together") {
  Dataset data;
  data.inputs = Matrix::Zero(6, 2);
  for (int i = 0; i < 6; ++i) data.inputs(i, 0) = static_cast<double>(i);
  data.labels = {0, 1, 2, 3, 4, 5};

  const Dataset shuffled = shuffle_dataset(data, 9);
  REQUIRE(shuffled.rows() == 6);
  bool moved = false;
  for (int i = 0; i < 6; ++i) {
    // the label always travels with its row
    CHECK(shuffled.labels[static_cast<std::size_t>(i)] ==
          static_cast<int>(shuffled.inputs(i, 0)));
    moved = moved || (shuffled.labels[static_cast<std::size_t>(i)] != i);
  }
  CHECK(moved);
  // deterministic in the seed
  const Dataset again = shuffle_dataset(data, 9);
  CHECK((again.inputs.array() == shuffled.inputs.array()).all());

  // the unlabelled variant shuffles rows only
  Dataset unlabelled;
  unlabelled.inputs = data.inputs;
  CHECK(shuffle_dataset(unlabelled, 9).labels.empty());
}

TEST_CASE("pipeline requires labels and reports a baseline") {
  const Dataset source = generate(default_domain(2, 6, 60, 11));
  Model model = make_model(6, {8}, 6, 2, 12);
  PretrainOptions popts;
  popts.epochs = 10;
  popts.seed = 13;
  pretrain_source(model, source, popts);
  const SourceAnchors anchors = compute_source_anchors(model, source);

  Dataset unlabelled;
  unlabelled.inputs = source.inputs.topRows(32);
  EngineConfig cfg;
  cfg.batch_size = 16;
  cfg.queue_capacity = 32;
  CHECK_THROWS_AS(run_pipeline(model, anchors, unlabelled, cfg), ReportError);

  Dataset labelled;
  labelled.inputs = source.inputs.topRows(64);
  labelled.labels.assign(source.labels.begin(), source.labels.begin() + 64);
  const PipelineResult result = run_pipeline(model, anchors, labelled, cfg);
  CHECK(result.series.size() == 64);
  CHECK(result.final_error == result.series.back());
  CHECK(result.baseline_error >= 0.0);
  CHECK(result.timing.samples == 64);
  CHECK(result.timing.wall_seconds > 0.0);
}

TEST_SUITE_END();
