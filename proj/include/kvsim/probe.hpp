#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "kvsim/types.hpp"

namespace kvsim {

inline constexpr std::size_t kFeatureCount = 8;
using FeatureVector = std::array<double, kFeatureCount>;

/// Names in extraction order.
const std::array<std::string_view, kFeatureCount>& feature_names();

struct ItlWindow {
  std::vector<Micros> gaps_us;
  RequestId request_id = 0;
  Micros t_end_us = 0;
};

/// [mean, median, p95, stddev, min, max, last gap, least-squares slope per
/// step]. Median averages the two middle values for even lengths; p95 is
/// nearest-rank; stddev is the population deviation. Throws WindowTooShort.
FeatureVector extract_features(const ItlWindow& window, std::size_t min_window = 8);

/// Uniform bin containing `usage`; usage 1.0 lands in the top bin.
int usage_to_bin(double usage, int n_bins);

struct LabeledSample {
  FeatureVector features{};
  int true_bin = 0;
};

struct GbdtParams {
  int n_rounds = 60;
  int max_depth = 4;
  double learning_rate = 0.3;
  double l2 = 1.0;
  double min_child_hessian = 1.0;
  int max_bins = 256;
};

struct ProbeConfig {
  int n_bins = 10;
  std::size_t window_len = 16;
  std::size_t min_window = 8;
  GbdtParams hyper;
  double holdout_fraction = 0.2;

  void validate() const;
};

/// Softmax gradient-boosted ensemble. Each round adds one regression tree per
/// class; leaves already include the round's learning-rate weight.
class ProbeModel {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  struct Tree {
    int cls = 0;
    double weight = 1.0;
    std::vector<Node> nodes;
  };
  struct Prediction {
    int bin = 0;
    double usage_estimate = 0.0;
  };

  static constexpr int kFormatVersion = 1;

  ProbeModel() = default;
  ProbeModel(int n_bins, std::size_t window_len, std::size_t min_window,
             std::vector<double> base_score, std::vector<Tree> trees);

  Prediction predict(const ItlWindow& window) const;
  Prediction predict_features(const FeatureVector& f) const;
  std::vector<double> raw_scores(const FeatureVector& f) const;

  int n_bins() const { return n_bins_; }
  std::size_t window_len() const { return window_len_; }
  std::size_t min_window() const { return min_window_; }
  const std::vector<double>& bin_edges() const { return bin_edges_; }
  const std::vector<Tree>& trees() const { return trees_; }
  bool empty() const { return trees_.empty() && base_score_.empty(); }

  nlohmann::json to_json() const;
  static ProbeModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ProbeModel load(const std::filesystem::path& path);

 private:
  int n_bins_ = 0;
  std::size_t window_len_ = 16;
  std::size_t min_window_ = 8;
  std::vector<double> bin_edges_;
  std::vector<double> base_score_;
  std::vector<Tree> trees_;
};

/// Throws InsufficientCoverage when any bin has fewer than 10 samples or the
/// set is smaller than n_bins * 50.
void check_coverage(const std::vector<LabeledSample>& samples, int n_bins);

ProbeModel train(const std::vector<LabeledSample>& samples, const ProbeConfig& config);

struct Evaluation {
  double accuracy = 0.0;
  std::size_t n = 0;
  /// confusion[true][predicted]
  std::vector<std::vector<std::int64_t>> confusion;
};

Evaluation evaluate(const ProbeModel& model, const std::vector<LabeledSample>& samples);

struct TrainTestSplit {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

/// Deterministic stratified split: every bin contributes the same fraction.
TrainTestSplit split_holdout(const std::vector<LabeledSample>& samples, int n_bins,
                             double test_fraction, std::uint64_t seed);

std::string samples_csv_header();
void write_samples_csv(const std::filesystem::path& path,
                       const std::vector<LabeledSample>& samples);
std::vector<LabeledSample> read_samples_csv(const std::filesystem::path& path);

}  // namespace kvsim
