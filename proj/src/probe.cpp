#include "kvsim/probe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "kvsim/errors.hpp"
#include "kvsim/rng.hpp"

namespace kvsim {

using nlohmann::json;

const std::array<std::string_view, kFeatureCount>& feature_names() {
  static const std::array<std::string_view, kFeatureCount> names = {
      "mean", "median", "p95", "stddev", "min", "max", "last", "slope"};
  return names;
}

FeatureVector extract_features(const ItlWindow& window, std::size_t min_window) {
  const auto& g = window.gaps_us;
  if (g.size() < std::max<std::size_t>(min_window, 1)) {
    throw WindowTooShort(fmt::format("window has {} gaps, need {}", g.size(), min_window));
  }
  const std::size_t n = g.size();
  const auto nd = static_cast<double>(n);
  std::vector<double> sorted(g.begin(), g.end());
  std::sort(sorted.begin(), sorted.end());

  double sum = 0.0;
  for (double v : sorted) sum += v;
  const double mean = sum / nd;
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);

  const double median = n % 2 == 1 ? sorted[n / 2]
                                   : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const auto p95_rank = static_cast<std::size_t>(std::ceil(0.95 * nd));
  const double p95 = sorted[std::max<std::size_t>(p95_rank, 1) - 1];

  // Least-squares slope against the step index 0..n-1.
  const double x_mean = (nd - 1.0) / 2.0;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - x_mean;
    sxy += dx * (static_cast<double>(g[i]) - mean);
    sxx += dx * dx;
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;

  return {mean, median, p95, std::sqrt(ss / nd), sorted.front(), sorted.back(),
          static_cast<double>(g.back()), slope};
}

int usage_to_bin(double usage, int n_bins) {
  const double clamped = std::clamp(usage, 0.0, 1.0);
  return std::min(static_cast<int>(std::floor(clamped * n_bins)), n_bins - 1);
}

void ProbeConfig::validate() const {
  if (n_bins < 2) throw ConfigError("probe.n_bins must be >= 2");
  if (min_window < 2) throw ConfigError("probe.min_window must be >= 2");
  if (window_len < min_window) throw ConfigError("probe.window_len must be >= probe.min_window");
  if (hyper.n_rounds < 1) throw ConfigError("probe.n_trees must be >= 1");
  if (hyper.max_depth < 1) throw ConfigError("probe.max_depth must be >= 1");
  if (!(hyper.learning_rate > 0)) throw ConfigError("probe.learning_rate must be > 0");
  if (hyper.l2 < 0) throw ConfigError("probe.l2 must be >= 0");
  if (hyper.max_bins < 2) throw ConfigError("probe.max_bins must be >= 2");
  if (!(holdout_fraction > 0 && holdout_fraction < 1)) {
    throw ConfigError("probe.holdout_fraction must be in (0, 1)");
  }
}

// ---------------------------------------------------------------- model

ProbeModel::ProbeModel(int n_bins, std::size_t window_len, std::size_t min_window,
                       std::vector<double> base_score, std::vector<Tree> trees)
    : n_bins_(n_bins), window_len_(window_len), min_window_(min_window),
      base_score_(std::move(base_score)), trees_(std::move(trees)) {
  for (int i = 0; i <= n_bins_; ++i) {
    bin_edges_.push_back(static_cast<double>(i) / n_bins_);
  }
}

std::vector<double> ProbeModel::raw_scores(const FeatureVector& f) const {
  std::vector<double> s = base_score_;
  for (const Tree& t : trees_) {
    int i = 0;
    while (t.nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const Node& nd = t.nodes[static_cast<std::size_t>(i)];
      i = f[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    s[static_cast<std::size_t>(t.cls)] += t.weight * t.nodes[static_cast<std::size_t>(i)].value;
  }
  return s;
}

ProbeModel::Prediction ProbeModel::predict_features(const FeatureVector& f) const {
  const std::vector<double> s = raw_scores(f);
  const auto best = std::max_element(s.begin(), s.end()) - s.begin();
  Prediction p;
  p.bin = static_cast<int>(best);
  p.usage_estimate = 0.5 * (bin_edges_[static_cast<std::size_t>(p.bin)] +
                            bin_edges_[static_cast<std::size_t>(p.bin) + 1]);
  return p;
}

ProbeModel::Prediction ProbeModel::predict(const ItlWindow& window) const {
  return predict_features(extract_features(window, min_window_));
}

json ProbeModel::to_json() const {
  json trees = json::array();
  for (const Tree& t : trees_) {
    json nodes = json::array();
    for (const Node& n : t.nodes) {
      if (n.feature < 0) {
        nodes.push_back({{"leaf", n.value}});
      } else {
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right}});
      }
    }
    trees.push_back({{"class", t.cls}, {"weight", t.weight}, {"nodes", std::move(nodes)}});
  }
  json names = json::array();
  for (auto n : feature_names()) names.push_back(std::string(n));
  return {{"format", "kvsim-probe-model"},
          {"version", kFormatVersion},
          {"n_bins", n_bins_},
          {"bin_edges", bin_edges_},
          {"feature_spec", std::move(names)},
          {"window_len", window_len_},
          {"min_window", min_window_},
          {"base_score", base_score_},
          {"trees", std::move(trees)}};
}

ProbeModel ProbeModel::from_json(const json& j) {
  try {
    if (j.at("format") != "kvsim-probe-model") {
      throw ConfigError("not a probe model document");
    }
    if (j.at("version").get<int>() != kFormatVersion) {
      throw ConfigError(fmt::format("unsupported probe model version {}",
                                    j.at("version").dump()));
    }
    std::vector<std::string> names = j.at("feature_spec");
    if (names.size() != kFeatureCount ||
        !std::equal(names.begin(), names.end(), feature_names().begin())) {
      throw ConfigError("probe model feature_spec does not match this build");
    }
    const int n_bins = j.at("n_bins");
    std::vector<Tree> trees;
    for (const json& jt : j.at("trees")) {
      Tree t;
      t.cls = jt.at("class");
      t.weight = jt.at("weight");
      if (t.cls < 0 || t.cls >= n_bins) throw ConfigError("probe model tree class out of range");
      for (const json& jn : jt.at("nodes")) {
        Node n;
        if (jn.contains("leaf")) {
          n.value = jn.at("leaf");
        } else {
          n.feature = jn.at("feature");
          n.threshold = jn.at("threshold");
          n.left = jn.at("left");
          n.right = jn.at("right");
        }
        t.nodes.push_back(n);
      }
      const auto size = static_cast<int>(t.nodes.size());
      for (const Node& n : t.nodes) {
        if (n.feature >= static_cast<int>(kFeatureCount) ||
            (n.feature >= 0 && (n.left <= 0 || n.left >= size || n.right <= 0 || n.right >= size))) {
          throw ConfigError("probe model has a malformed tree");
        }
      }
      if (t.nodes.empty()) throw ConfigError("probe model has an empty tree");
      trees.push_back(std::move(t));
    }
    std::vector<double> base = j.at("base_score");
    if (static_cast<int>(base.size()) != n_bins) {
      throw ConfigError("probe model base_score size mismatch");
    }
    return ProbeModel(n_bins, j.at("window_len"), j.at("min_window"), std::move(base),
                      std::move(trees));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed probe model: ") + e.what());
  }
}

void ProbeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write probe model " + path.string());
  out << to_json().dump(1) << '\n';
}

ProbeModel ProbeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open probe model " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("probe model " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------- training

void check_coverage(const std::vector<LabeledSample>& samples, int n_bins) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_bins), 0);
  for (const auto& s : samples) {
    if (s.true_bin < 0 || s.true_bin >= n_bins) {
      throw InsufficientCoverage(fmt::format("sample label {} outside 0..{}", s.true_bin, n_bins - 1));
    }
    ++counts[static_cast<std::size_t>(s.true_bin)];
  }
  for (int b = 0; b < n_bins; ++b) {
    if (counts[static_cast<std::size_t>(b)] < 10) {
      throw InsufficientCoverage(fmt::format("bin {} has {} samples (need >= 10)", b,
                                             counts[static_cast<std::size_t>(b)]));
    }
  }
  const auto need = static_cast<std::size_t>(n_bins) * 50;
  if (samples.size() < need) {
    throw InsufficientCoverage(fmt::format("{} samples, need >= {}", samples.size(), need));
  }
}

namespace {

struct BinnedData {
  // thresholds[f][b]: samples with bin index <= b satisfy value <= thresholds[f][b]
  std::vector<std::vector<double>> thresholds;
  std::vector<std::array<std::uint16_t, kFeatureCount>> bins;
};

BinnedData bin_features(const std::vector<LabeledSample>& samples, int max_bins) {
  BinnedData d;
  d.thresholds.resize(kFeatureCount);
  d.bins.resize(samples.size());
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    std::vector<double> vals;
    vals.reserve(samples.size());
    for (const auto& s : samples) vals.push_back(s.features[f]);
    std::sort(vals.begin(), vals.end());
    std::vector<double> uniq = vals;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double>& th = d.thresholds[f];
    if (uniq.size() <= static_cast<std::size_t>(max_bins)) {
      for (std::size_t i = 0; i + 1 < uniq.size(); ++i) {
        th.push_back(0.5 * (uniq[i] + uniq[i + 1]));
      }
    } else {
      for (int q = 1; q < max_bins; ++q) {
        const std::size_t idx = static_cast<std::size_t>(q) * vals.size() / static_cast<std::size_t>(max_bins);
        const double cut = vals[idx];
        if (cut < vals.back() && (th.empty() || cut > th.back())) th.push_back(cut);
      }
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double v = samples[i].features[f];
      d.bins[i][f] = static_cast<std::uint16_t>(
          std::lower_bound(th.begin(), th.end(), v) - th.begin());
    }
  }
  return d;
}

class TreeBuilder {
 public:
  TreeBuilder(const BinnedData& data, const std::vector<double>& grad,
              const std::vector<double>& hess, const GbdtParams& p)
      : data_(data), g_(grad), h_(hess), p_(p) {}

  std::vector<ProbeModel::Node> build(std::vector<std::size_t> rows) {
    nodes_.clear();
    grow(std::move(rows), 0);
    return std::move(nodes_);
  }

 private:
  int grow(std::vector<std::size_t> rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double G = 0.0;
    double H = 0.0;
    for (std::size_t r : rows) {
      G += g_[r];
      H += h_[r];
    }
    const double leaf = -G / (H + p_.l2);

    int best_f = -1;
    std::size_t best_b = 0;
    double best_gain = 1e-9;
    if (depth < p_.max_depth && rows.size() >= 2) {
      const double parent = G * G / (H + p_.l2);
      for (std::size_t f = 0; f < kFeatureCount; ++f) {
        const std::size_t nb = data_.thresholds[f].size() + 1;
        if (nb < 2) continue;
        std::vector<double> hg(nb, 0.0);
        std::vector<double> hh(nb, 0.0);
        for (std::size_t r : rows) {
          hg[data_.bins[r][f]] += g_[r];
          hh[data_.bins[r][f]] += h_[r];
        }
        double gl = 0.0;
        double hl = 0.0;
        for (std::size_t b = 0; b + 1 < nb; ++b) {
          gl += hg[b];
          hl += hh[b];
          const double gr = G - gl;
          const double hr = H - hl;
          if (hl < p_.min_child_hessian || hr < p_.min_child_hessian) continue;
          const double gain = gl * gl / (hl + p_.l2) + gr * gr / (hr + p_.l2) - parent;
          if (gain > best_gain) {
            best_gain = gain;
            best_f = static_cast<int>(f);
            best_b = b;
          }
        }
      }
    }
    if (best_f < 0) {
      nodes_[static_cast<std::size_t>(id)].value = leaf;
      return id;
    }
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (std::size_t r : rows) {
      (data_.bins[r][static_cast<std::size_t>(best_f)] <= best_b ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(std::move(left), depth + 1);
    const int rr = grow(std::move(right), depth + 1);
    ProbeModel::Node& n = nodes_[static_cast<std::size_t>(id)];
    n.feature = best_f;
    n.threshold = data_.thresholds[static_cast<std::size_t>(best_f)][best_b];
    n.left = l;
    n.right = rr;
    return id;
  }

  const BinnedData& data_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  const GbdtParams& p_;
  std::vector<ProbeModel::Node> nodes_;
};

}  // namespace

ProbeModel train(const std::vector<LabeledSample>& samples, const ProbeConfig& config) {
  config.validate();
  check_coverage(samples, config.n_bins);
  const std::size_t n = samples.size();
  const auto K = static_cast<std::size_t>(config.n_bins);

  std::vector<double> base(K, 0.0);
  {
    std::vector<double> counts(K, 0.0);
    for (const auto& s : samples) counts[static_cast<std::size_t>(s.true_bin)] += 1.0;
    for (std::size_t k = 0; k < K; ++k) base[k] = std::log(counts[k] / static_cast<double>(n));
  }

  const BinnedData data = bin_features(samples, config.hyper.max_bins);
  std::vector<double> scores(n * K);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(base.begin(), base.end(), scores.begin() + static_cast<std::ptrdiff_t>(i * K));
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});

  std::vector<ProbeModel::Tree> trees;
  std::vector<double> prob(n * K);
  std::vector<double> grad(n);
  std::vector<double> hess(n);
  const double lr = config.hyper.learning_rate;
  for (int round = 0; round < config.hyper.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* s = &scores[i * K];
      const double mx = *std::max_element(s, s + K);
      double z = 0.0;
      for (std::size_t k = 0; k < K; ++k) z += std::exp(s[k] - mx);
      for (std::size_t k = 0; k < K; ++k) prob[i * K + k] = std::exp(s[k] - mx) / z;
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = prob[i * K + k];
        const double y = static_cast<std::size_t>(samples[i].true_bin) == k ? 1.0 : 0.0;
        grad[i] = p - y;
        hess[i] = std::max(p * (1.0 - p), 1e-12);
      }
      TreeBuilder builder(data, grad, hess, config.hyper);
      ProbeModel::Tree t;
      t.cls = static_cast<int>(k);
      t.weight = lr;
      t.nodes = builder.build(all);
      for (std::size_t i = 0; i < n; ++i) {
        int node = 0;
        while (t.nodes[static_cast<std::size_t>(node)].feature >= 0) {
          const auto& nd = t.nodes[static_cast<std::size_t>(node)];
          node = samples[i].features[static_cast<std::size_t>(nd.feature)] <= nd.threshold
                     ? nd.left
                     : nd.right;
        }
        scores[i * K + k] += lr * t.nodes[static_cast<std::size_t>(node)].value;
      }
      trees.push_back(std::move(t));
    }
  }
  return ProbeModel(config.n_bins, config.window_len, config.min_window, std::move(base),
                    std::move(trees));
}

Evaluation evaluate(const ProbeModel& model, const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw EmptyInput("cannot evaluate on an empty sample set");
  const auto K = static_cast<std::size_t>(model.n_bins());
  Evaluation e;
  e.n = samples.size();
  e.confusion.assign(K, std::vector<std::int64_t>(K, 0));
  std::size_t hit = 0;
  for (const auto& s : samples) {
    const int pred = model.predict_features(s.features).bin;
    if (pred == s.true_bin) ++hit;
    if (s.true_bin >= 0 && static_cast<std::size_t>(s.true_bin) < K) {
      ++e.confusion[static_cast<std::size_t>(s.true_bin)][static_cast<std::size_t>(pred)];
    }
  }
  e.accuracy = static_cast<double>(hit) / static_cast<double>(e.n);
  return e;
}

TrainTestSplit split_holdout(const std::vector<LabeledSample>& samples, int n_bins,
                             double test_fraction, std::uint64_t seed) {
  RandomStream rng(seed, "probe.holdout");
  std::vector<std::vector<std::size_t>> by_bin(static_cast<std::size_t>(std::max(n_bins, 1)));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int b = std::clamp(samples[i].true_bin, 0, n_bins - 1);
    by_bin[static_cast<std::size_t>(b)].push_back(i);
  }
  std::vector<bool> is_test(samples.size(), false);
  for (auto& idx : by_bin) {
    for (std::size_t i = idx.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(idx[i - 1], idx[j]);
    }
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_test; ++i) is_test[idx[i]] = true;
  }
  TrainTestSplit out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (is_test[i] ? out.test : out.train).push_back(samples[i]);
  }
  return out;
}

// ---------------------------------------------------------------- CSV

std::string samples_csv_header() {
  std::string h;
  for (std::size_t f = 0; f < kFeatureCount; ++f) h += fmt::format("feature_{},", f);
  return h + "true_bin";
}

void write_samples_csv(const std::filesystem::path& path,
                       const std::vector<LabeledSample>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << samples_csv_header() << '\n';
  for (const auto& s : samples) {
    for (double v : s.features) out << fmt::format("{},", v);
    out << s.true_bin << '\n';
  }
}

std::vector<LabeledSample> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != samples_csv_header()) {
    throw ConfigError(path.string() + ": expected header '" + samples_csv_header() + "'");
  }
  std::vector<LabeledSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LabeledSample s;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto fail = [&] {
      return ConfigError(fmt::format("{}:{}: malformed sample row", path.string(), lineno));
    };
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      auto r = std::from_chars(p, end, s.features[f]);
      if (r.ec != std::errc{} || r.ptr == end || *r.ptr != ',') throw fail();
      p = r.ptr + 1;
    }
    auto r = std::from_chars(p, end, s.true_bin);
    if (r.ec != std::errc{} || r.ptr != end) throw fail();
    out.push_back(s);
  }
  return out;
}

}  // namespace kvsim
