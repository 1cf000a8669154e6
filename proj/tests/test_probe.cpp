#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "desk.hpp"
#include "kvsim/calibration.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/latency_model.hpp"
#include "kvsim/probe.hpp"

using namespace kvsim;
namespace fs = std::filesystem;

namespace {

enum F { kMean, kMedian, kP95, kStd, kMin, kMax, kLast, kSlope };

SimConfig quiet_node() {
  SimConfig c = presets::desk_node();
  c.latency.noise_stddev_frac = 0.0;
  return c;
}

std::vector<LabeledSample> samples_for(const SimConfig& node) {
  return collect_probe_samples(node, CalibrationPlan::for_bins(10, 60 * kMicrosPerSecond));
}

// Best accuracy any monotone set of thresholds on mean ITL can reach:
// dynamic program over the samples sorted by mean, segment k labeled bin k.
double threshold_oracle_accuracy(std::vector<LabeledSample> s, int bins) {
  std::sort(s.begin(), s.end(),
            [](const auto& a, const auto& b) { return a.features[kMean] < b.features[kMean]; });
  const std::size_t n = s.size();
  // best[k] = max correct over the prefix with the last segment labeled k.
  std::vector<std::int64_t> best(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t carry = best[0];
    for (int k = 0; k < bins; ++k) {
      carry = std::max(carry, best[static_cast<std::size_t>(k)]);
      best[static_cast<std::size_t>(k)] = carry + (s[i].true_bin == k ? 1 : 0);
    }
  }
  return static_cast<double>(*std::max_element(best.begin(), best.end())) / static_cast<double>(n);
}

// Window the probe would see at a fixed usage with nothing else changing.
ItlWindow steady_window(const SimConfig& node, double usage) {
  LatencyModel m(node.latency, RandomStream(1, "latency"));
  BatchLoad load;
  load.total_ctx_tokens = static_cast<std::int64_t>(usage * static_cast<double>(node.kv.capacity_tokens()));
  const auto gap = static_cast<Micros>(std::llround(m.mean_duration_us(load)));
  return ItlWindow{std::vector<Micros>(16, gap), 1, 0};
}

}  // namespace

TEST(Features, ConstantGaps) {
  const auto f = extract_features({{50, 50, 50, 50, 50, 50, 50, 50}, 1, 0});
  EXPECT_DOUBLE_EQ(f[kMean], 50.0);
  EXPECT_DOUBLE_EQ(f[kStd], 0.0);
  EXPECT_DOUBLE_EQ(f[kSlope], 0.0);
  EXPECT_DOUBLE_EQ(f[kMedian], 50.0);
}

TEST(Features, RampHandArithmetic) {
  const auto f = extract_features({{10, 20, 30, 40, 50, 60, 70, 80}, 1, 0});
  EXPECT_DOUBLE_EQ(f[kMean], 45.0);
  EXPECT_DOUBLE_EQ(f[kSlope], 10.0);
  EXPECT_DOUBLE_EQ(f[kMedian], 45.0);  // (40 + 50) / 2
  EXPECT_DOUBLE_EQ(f[kP95], 80.0);     // nearest rank 8 of 8
  EXPECT_DOUBLE_EQ(f[kMin], 10.0);
  EXPECT_DOUBLE_EQ(f[kMax], 80.0);
  EXPECT_DOUBLE_EQ(f[kLast], 80.0);
  EXPECT_NEAR(f[kStd], std::sqrt(525.0), 1e-12);  // population variance of 10..80
}

TEST(Features, ShortWindowThrows) {
  EXPECT_THROW(extract_features({{1, 2, 3, 4, 5, 6, 7}, 1, 0}, 8), WindowTooShort);
  EXPECT_NO_THROW(extract_features({{1, 2, 3, 4, 5, 6, 7, 8}, 1, 0}, 8));
}

TEST(Bins, UniformEdges) {
  EXPECT_EQ(usage_to_bin(0.0, 10), 0);
  EXPECT_EQ(usage_to_bin(0.02, 10), 0);
  EXPECT_EQ(usage_to_bin(0.1, 10), 1);
  EXPECT_EQ(usage_to_bin(0.97, 10), 9);
  EXPECT_EQ(usage_to_bin(1.0, 10), 9);
  EXPECT_EQ(usage_to_bin(0.975, 40), 39);
  EXPECT_EQ(usage_to_bin(0.974, 40), 38);
}

TEST(Coverage, MissingTopBinThrows) {
  std::vector<LabeledSample> s;
  for (int b = 0; b < 9; ++b) {
    for (int i = 0; i < 60; ++i) s.push_back({FeatureVector{double(b), 0, 0, 0, 0, 0, 0, 0}, b});
  }
  EXPECT_THROW(check_coverage(s, 10), InsufficientCoverage);
  ProbeConfig cfg;
  EXPECT_THROW(train(s, cfg), InsufficientCoverage);
}

TEST(Coverage, TooFewSamplesThrows) {
  std::vector<LabeledSample> s;
  for (int b = 0; b < 10; ++b) {
    for (int i = 0; i < 20; ++i) s.push_back({FeatureVector{double(b), 0, 0, 0, 0, 0, 0, 0}, b});
  }
  EXPECT_THROW(check_coverage(s, 10), InsufficientCoverage);
}

TEST(Split, StratifiedAndDeterministic) {
  std::vector<LabeledSample> s;
  for (int b = 0; b < 4; ++b) {
    for (int i = 0; i < 50; ++i) s.push_back({FeatureVector{double(i), 0, 0, 0, 0, 0, 0, 0}, b});
  }
  const auto a = split_holdout(s, 4, 0.2, 3);
  const auto b = split_holdout(s, 4, 0.2, 3);
  ASSERT_EQ(a.test.size(), 40u);
  EXPECT_EQ(a.train.size(), 160u);
  for (int bin = 0; bin < 4; ++bin) {
    EXPECT_EQ(std::count_if(a.test.begin(), a.test.end(), [&](const auto& x) { return x.true_bin == bin; }), 10);
  }
  for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].features, b.test[i].features);
}

class NoiselessProbe : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    node_ = new SimConfig(quiet_node());
    samples_ = new std::vector<LabeledSample>(samples_for(*node_));
    const auto split = split_holdout(*samples_, 10, 0.2, 1);
    model_ = new ProbeModel(train(split.train, node_->probe));
    test_ = new std::vector<LabeledSample>(split.test);
  }
  static void TearDownTestSuite() {
    delete node_;
    delete samples_;
    delete model_;
    delete test_;
  }
  static SimConfig* node_;
  static std::vector<LabeledSample>* samples_;
  static ProbeModel* model_;
  static std::vector<LabeledSample>* test_;
};

SimConfig* NoiselessProbe::node_ = nullptr;
std::vector<LabeledSample>* NoiselessProbe::samples_ = nullptr;
ProbeModel* NoiselessProbe::model_ = nullptr;
std::vector<LabeledSample>* NoiselessProbe::test_ = nullptr;

TEST_F(NoiselessProbe, HeldOutAccuracyAtLeast95Percent) {
  EXPECT_GE(evaluate(*model_, *test_).accuracy, 0.95);
}

TEST_F(NoiselessProbe, MatchesThresholdOracleWithinTwoPoints) {
  const double gbdt = evaluate(*model_, *test_).accuracy;
  const double oracle = threshold_oracle_accuracy(*test_, 10);
  EXPECT_GE(gbdt, oracle - 0.02) << "oracle " << oracle;
}

TEST_F(NoiselessProbe, ExtremeUsagesLandInEdgeBins) {
  EXPECT_EQ(model_->predict(steady_window(*node_, 0.02)).bin, 0);
  EXPECT_EQ(model_->predict(steady_window(*node_, 0.97)).bin, 9);
}

TEST_F(NoiselessProbe, BinSweepIsMonotone) {
  int prev = -1;
  for (int i = 0; i < 100; ++i) {
    const double u = i / 99.0;
    const int bin = model_->predict(steady_window(*node_, u)).bin;
    EXPECT_GE(bin, prev) << "usage " << u;
    prev = std::max(prev, bin);
  }
}

TEST_F(NoiselessProbe, PredictionIsDeterministic) {
  const auto w = steady_window(*node_, 0.5);
  EXPECT_EQ(model_->predict(w).bin, model_->predict(w).bin);
  EXPECT_EQ(model_->predict(w).usage_estimate, model_->predict(w).usage_estimate);
}

TEST_F(NoiselessProbe, EstimateIsBinMidpoint) {
  const auto p = model_->predict(steady_window(*node_, 0.52));
  EXPECT_DOUBLE_EQ(p.usage_estimate, (p.bin + 0.5) / 10.0);
}

TEST_F(NoiselessProbe, JsonRoundTripKeepsPredictions) {
  const auto path = fs::temp_directory_path() / "kvsim_test_model.json";
  model_->save(path);
  const ProbeModel back = ProbeModel::load(path);
  EXPECT_EQ(back.to_json().dump(), model_->to_json().dump());
  for (const auto& s : *test_) {
    EXPECT_EQ(back.predict_features(s.features).bin, model_->predict_features(s.features).bin);
  }
  fs::remove(path);
}

TEST_F(NoiselessProbe, TrainingIsDeterministic) {
  const auto split = split_holdout(*samples_, 10, 0.2, 1);
  EXPECT_EQ(train(split.train, node_->probe).to_json().dump(), model_->to_json().dump());
}

TEST(DefaultNoiseProbe, HeldOutAccuracyAtLeast85Percent) {
  const SimConfig node = presets::desk_node();
  const auto samples = samples_for(node);
  const auto split = split_holdout(samples, 10, 0.2, 1);
  const ProbeModel m = train(split.train, node.probe);
  const auto ev = evaluate(m, split.test);
  EXPECT_GE(ev.accuracy, 0.85);
  std::int64_t total = 0;
  for (const auto& row : ev.confusion) for (auto c : row) total += c;
  EXPECT_EQ(static_cast<std::size_t>(total), split.test.size());
}

TEST(SamplesCsv, RoundTrip) {
  std::vector<LabeledSample> s = {{FeatureVector{1.5, 2, 3, 4, 5, 6, 7, -0.25}, 3},
                                  {FeatureVector{10, 20, 30, 40, 50, 60, 70, 80}, 0}};
  const auto path = fs::temp_directory_path() / "kvsim_test_samples.csv";
  write_samples_csv(path, s);
  const auto back = read_samples_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].features, s[0].features);
  EXPECT_EQ(back[1].true_bin, 0);
  fs::remove(path);
}
