#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hallu/mixture.hpp"

namespace hallu {

/// Coins with head probabilities in (0, 1). Distinct probabilities are required
/// unless `allow_repeats` is set.
class CoinSet {
 public:
  explicit CoinSet(std::vector<double> head_probs, bool allow_repeats = false);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t j) const { return probs_[j]; }
  const std::vector<double>& probs() const { return probs_; }

 private:
  std::vector<double> probs_;
};

/// A latent state flips `subset` and shows `label` (coin indices) to the learner.
struct CoinState {
  std::vector<std::size_t> subset;
  std::vector<std::size_t> label;
  double probability = 0.0;
};

class LatentCoinTask {
 public:
  LatentCoinTask(CoinSet coins, std::vector<CoinState> states);

  const CoinSet& coins() const { return coins_; }
  const std::vector<CoinState>& states() const { return states_; }
  std::size_t encoding_size() const { return coins_.size(); }

  std::vector<std::uint8_t> encode(std::size_t state) const;
  std::vector<double> subset_probs(std::size_t state) const;
  /// Exact count law of a state.
  const std::vector<double>& state_pmf(std::size_t state) const { return pmfs_[state]; }
  double state_mean(std::size_t state) const;

 private:
  CoinSet coins_;
  std::vector<CoinState> states_;
  std::vector<std::vector<double>> pmfs_;
};

/// Every state shows its own subset as the label (label reveals the state).
LatentCoinTask make_subset_task(CoinSet coins, std::vector<std::vector<std::size_t>> subsets,
                                std::vector<double> probabilities);

/// Two states over disjoint halves of 2n coins with head probabilities p_low and
/// p_high; both show the full 2n-coin label, so the label does not reveal the state.
LatentCoinTask make_two_latent_task(std::size_t n, double p_low, double p_high);

/// Law of a sum of independent Bernoulli(p_j): the convolution recurrence.
std::vector<double> poisson_binomial_pmf(std::span<const double> probs);

struct FlipRow {
  std::vector<std::uint8_t> encoding;
  int heads = 0;
  std::size_t state = 0;
};

struct FlipDataset {
  std::size_t encoding_size = 0;
  std::vector<FlipRow> rows;
};

FlipDataset generate_dataset(const LatentCoinTask& task, std::size_t flips, std::uint64_t seed, bool parallel = true);

/// Conditional mean of the count given the label: Σ_z Pr[z | label] Σ_{j∈S_z} p_j.
double bayes_prediction(const LatentCoinTask& task, std::span<const std::uint8_t> encoding);

/// Nearest integer, ties to even.
long round_half_even(double x);

struct LinearModel {
  Vector weights;
  double predict(std::span<const std::uint8_t> encoding) const;
};

struct TraceRow {
  int epoch = 0;
  double loss = 0.0;
  double mean_conditional_pmf = 0.0;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;
};

struct TrainConfig {
  int epochs = 30;
  /// <= 0 selects 0.1 / max‖x‖² (a safe step for the variance-reduced update).
  double learning_rate = 0.0;
  std::size_t batch_size = 32;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct TrainResult {
  LinearModel model;
  TrainingTrace trace;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
};

/// Minibatch SGD with an SVRG control variate on mean squared error of a linear
/// map (no bias) from the label encoding. Row 0 of the trace is the zero model.
/// The last `validation_fraction` of rows is held out for the conditional pmf.
TrainResult train_estimator(const LatentCoinTask& task, const FlipDataset& dataset, const TrainConfig& config);

double mean_squared_error(const LinearModel& model, std::span<const FlipRow> rows);

struct DemoReport {
  double prediction = 0.0;
  long rounded = 0;
  std::vector<double> per_state_pmf;
  bool hallucinates = false;
};

/// Rounds the Bayes prediction for the shared label and evaluates its exact pmf
/// under each state; hallucinates iff every pmf <= delta.
DemoReport hallucination_demo(const LatentCoinTask& task, double delta);

std::string dataset_csv(const FlipDataset& dataset);
FlipDataset dataset_from_csv(const std::string& text);
std::string trace_csv(const TrainingTrace& trace);

}  // namespace hallu
