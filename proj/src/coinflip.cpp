#include "hallu/coinflip.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "hallu/errors.hpp"

namespace hallu {

CoinSet::CoinSet(std::vector<double> head_probs, bool allow_repeats) : probs_(std::move(head_probs)) {
  if (probs_.empty()) throw InputError("coin set is empty");
  for (double p : probs_) {
    if (!(p > 0.0 && p < 1.0)) throw InputError("head probabilities must lie in (0, 1)");
  }
  if (!allow_repeats) {
    std::vector<double> sorted = probs_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw InputError("head probabilities must be pairwise distinct");
    }
  }
}

LatentCoinTask::LatentCoinTask(CoinSet coins, std::vector<CoinState> states)
    : coins_(std::move(coins)), states_(std::move(states)) {
  if (states_.empty()) throw InputError("task needs at least one latent state");
  std::vector<double> probs;
  for (const auto& s : states_) {
    if (s.subset.empty() || s.label.empty()) throw InputError("state subsets and labels must be nonempty");
    for (auto j : s.subset) {
      if (j >= coins_.size()) throw InputError("subset references a coin out of range");
    }
    for (auto j : s.label) {
      if (j >= coins_.size()) throw InputError("label references a coin out of range");
    }
    if (std::set<std::size_t>(s.subset.begin(), s.subset.end()).size() != s.subset.size()) {
      throw InputError("subset lists a coin twice");
    }
    probs.push_back(s.probability);
  }
  check_probability_vector(probs, "state probabilities");
  for (std::size_t i = 0; i < states_.size(); ++i) {
    const auto p = subset_probs(i);
    pmfs_.push_back(poisson_binomial_pmf(p));
  }
}

std::vector<std::uint8_t> LatentCoinTask::encode(std::size_t state) const {
  std::vector<std::uint8_t> bits(coins_.size(), 0);
  for (auto j : states_.at(state).label) bits[j] = 1;
  return bits;
}

std::vector<double> LatentCoinTask::subset_probs(std::size_t state) const {
  std::vector<double> p;
  for (auto j : states_.at(state).subset) p.push_back(coins_[j]);
  return p;
}

double LatentCoinTask::state_mean(std::size_t state) const {
  const auto p = subset_probs(state);
  return std::accumulate(p.begin(), p.end(), 0.0);
}

LatentCoinTask make_subset_task(CoinSet coins, std::vector<std::vector<std::size_t>> subsets,
                                std::vector<double> probabilities) {
  if (subsets.size() != probabilities.size()) throw InputError("need one probability per subset");
  std::vector<CoinState> states;
  for (std::size_t i = 0; i < subsets.size(); ++i) states.push_back({subsets[i], subsets[i], probabilities[i]});
  return LatentCoinTask(std::move(coins), std::move(states));
}

LatentCoinTask make_two_latent_task(std::size_t n, double p_low, double p_high) {
  if (n == 0) throw InputError("subset size must be positive");
  std::vector<double> probs(2 * n);
  std::vector<std::size_t> low(n);
  std::vector<std::size_t> high(n);
  std::vector<std::size_t> all(2 * n);
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] = p_low;
    probs[n + j] = p_high;
    low[j] = j;
    high[j] = n + j;
  }
  std::iota(all.begin(), all.end(), std::size_t{0});
  return LatentCoinTask(CoinSet(std::move(probs), true), {{low, all, 0.5}, {high, all, 0.5}});
}

std::vector<double> poisson_binomial_pmf(std::span<const double> probs) {
  if (probs.empty()) throw InputError("Poisson-binomial needs a nonempty subset");
  std::vector<double> f(probs.size() + 1, 0.0);
  f[0] = 1.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double p = probs[j];
    if (!(p > 0.0 && p < 1.0)) throw InputError("head probabilities must lie in (0, 1)");
    for (std::size_t k = j + 1; k > 0; --k) f[k] = f[k] * (1.0 - p) + f[k - 1] * p;
    f[0] *= 1.0 - p;
  }
  return f;
}

FlipDataset generate_dataset(const LatentCoinTask& task, std::size_t flips, std::uint64_t seed, bool parallel) {
  if (flips == 0) throw InputError("dataset needs at least one flip");
  std::vector<double> state_probs;
  std::vector<std::vector<std::uint8_t>> labels;
  std::vector<std::vector<double>> subset_p;
  for (std::size_t i = 0; i < task.states().size(); ++i) {
    state_probs.push_back(task.states()[i].probability);
    labels.push_back(task.encode(i));
    subset_p.push_back(task.subset_probs(i));
  }

  FlipDataset data;
  data.encoding_size = task.encoding_size();
  data.rows.resize(flips);
  constexpr std::size_t chunk = 1024;
  const auto chunks = static_cast<std::ptrdiff_t>((flips + chunk - 1) / chunk);
  auto fill = [&](std::ptrdiff_t c) {
    Rng rng = make_rng(seed, "coinflip-dataset", static_cast<std::uint64_t>(c));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t begin = static_cast<std::size_t>(c) * chunk;
    const std::size_t end = std::min(flips, begin + chunk);
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t s = sample_index(state_probs, rng);
      int heads = 0;
      for (double p : subset_p[s]) heads += unit(rng) < p ? 1 : 0;
      data.rows[r] = FlipRow{labels[s], heads, s};
    }
  };
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < chunks; ++c) fill(c);
  } else {
    for (std::ptrdiff_t c = 0; c < chunks; ++c) fill(c);
  }
  return data;
}

double bayes_prediction(const LatentCoinTask& task, std::span<const std::uint8_t> encoding) {
  double mass = 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < task.states().size(); ++i) {
    const auto label = task.encode(i);
    if (!std::equal(label.begin(), label.end(), encoding.begin(), encoding.end())) continue;
    const double p = task.states()[i].probability;
    mass += p;
    mean += p * task.state_mean(i);
  }
  if (!(mass > 0.0)) throw InputError("encoding matches no latent state with positive probability");
  return mean / mass;
}

long round_half_even(double x) {
  const double lower = std::floor(x);
  const double diff = x - lower;
  auto l = static_cast<long>(lower);
  if (diff > 0.5) return l + 1;
  if (diff < 0.5) return l;
  return (l % 2 == 0) ? l : l + 1;
}

double LinearModel::predict(std::span<const std::uint8_t> encoding) const {
  double y = 0.0;
  for (std::size_t j = 0; j < encoding.size(); ++j) {
    if (encoding[j]) y += weights(static_cast<Eigen::Index>(j));
  }
  return y;
}

double mean_squared_error(const LinearModel& model, std::span<const FlipRow> rows) {
  if (rows.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& r : rows) {
    const double e = model.predict(r.encoding) - r.heads;
    acc += e * e;
  }
  return acc / static_cast<double>(rows.size());
}

namespace {

double mean_conditional_pmf(const LatentCoinTask& task, const LinearModel& model, std::span<const FlipRow> rows) {
  if (rows.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& r : rows) {
    const long k = round_half_even(model.predict(r.encoding));
    const auto& pmf = task.state_pmf(r.state);
    if (k >= 0 && static_cast<std::size_t>(k) < pmf.size()) acc += pmf[static_cast<std::size_t>(k)];
  }
  return acc / static_cast<double>(rows.size());
}

}  // namespace

TrainResult train_estimator(const LatentCoinTask& task, const FlipDataset& dataset, const TrainConfig& config) {
  if (dataset.rows.empty()) throw InputError("dataset is empty");
  if (config.epochs < 0) throw InputError("epochs must be nonnegative");
  if (config.batch_size == 0) throw InputError("batch size must be positive");
  if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0)) {
    throw InputError("validation fraction must lie in [0, 1)");
  }
  const std::size_t total = dataset.rows.size();
  std::size_t validation = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(total)));
  if (validation >= total) validation = total - 1;
  const std::size_t n = total - validation;
  const std::span<const FlipRow> train(dataset.rows.data(), n);
  const std::span<const FlipRow> held(dataset.rows.data() + n, validation);
  const std::span<const FlipRow> pmf_rows = validation > 0 ? held : train;

  const auto dim = static_cast<Eigen::Index>(dataset.encoding_size);
  Matrix x(static_cast<Eigen::Index>(n), dim);
  Vector y(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    for (Eigen::Index j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(r), j) = train[r].encoding[static_cast<std::size_t>(j)];
    y(static_cast<Eigen::Index>(r)) = train[r].heads;
  }
  double lr = config.learning_rate;
  if (lr <= 0.0) lr = 0.1 / std::max(1.0, x.rowwise().squaredNorm().maxCoeff());

  TrainResult result;
  result.train_rows = n;
  result.validation_rows = validation;
  result.model.weights = Vector::Zero(dim);
  result.trace.rows.push_back({0, mean_squared_error(result.model, train), mean_conditional_pmf(task, result.model, pmf_rows)});

  Rng rng = make_rng(config.seed, "coinflip-train");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Vector& w = result.model.weights;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const Vector snapshot = w;
    const Vector snapshot_resid = x * snapshot - y;
    const Vector full_grad = (2.0 / static_cast<double>(n)) * (x.transpose() * snapshot_resid);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::size_t e = std::min(n, b + config.batch_size);
      Vector g = Vector::Zero(dim);
      for (std::size_t k = b; k < e; ++k) {
        const auto r = static_cast<Eigen::Index>(order[k]);
        const double diff = x.row(r).dot(w) - x.row(r).dot(snapshot);
        g += (2.0 * diff) * x.row(r).transpose();
      }
      g /= static_cast<double>(e - b);
      w -= lr * (g + full_grad);
    }
    const double loss = mean_squared_error(result.model, train);
    if (!std::isfinite(loss) || loss > 1e12) {
      throw ModelError("training diverged at epoch " + std::to_string(epoch) + "; lower the learning rate");
    }
    result.trace.rows.push_back({epoch, loss, mean_conditional_pmf(task, result.model, pmf_rows)});
  }
  return result;
}

DemoReport hallucination_demo(const LatentCoinTask& task, double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("delta must lie in (0, 1]");
  const auto label = task.encode(0);
  DemoReport report;
  report.prediction = bayes_prediction(task, label);
  report.rounded = round_half_even(report.prediction);
  report.hallucinates = true;
  for (std::size_t i = 0; i < task.states().size(); ++i) {
    if (task.encode(i) != label) continue;
    const auto& pmf = task.state_pmf(i);
    const double f = (report.rounded >= 0 && static_cast<std::size_t>(report.rounded) < pmf.size())
                         ? pmf[static_cast<std::size_t>(report.rounded)]
                         : 0.0;
    report.per_state_pmf.push_back(f);
    report.hallucinates = report.hallucinates && f <= delta;
  }
  return report;
}

std::string dataset_csv(const FlipDataset& dataset) {
  std::ostringstream out;
  for (std::size_t j = 0; j < dataset.encoding_size; ++j) out << 'b' << j << ',';
  out << "count,state\n";
  for (const auto& r : dataset.rows) {
    for (auto bit : r.encoding) out << static_cast<int>(bit) << ',';
    out << r.heads << ',' << r.state << '\n';
  }
  return out.str();
}

FlipDataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InputError("dataset CSV is empty");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 3) throw InputError("dataset CSV needs encoding bits, count and state columns");
  FlipDataset data;
  data.encoding_size = columns - 2;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string cell;
    std::vector<long> values;
    while (std::getline(cells, cell, ',')) values.push_back(std::stol(cell));
    if (values.size() != columns) throw InputError("dataset CSV row has the wrong number of columns");
    FlipRow row;
    for (std::size_t j = 0; j < data.encoding_size; ++j) row.encoding.push_back(static_cast<std::uint8_t>(values[j] != 0));
    row.heads = static_cast<int>(values[data.encoding_size]);
    row.state = static_cast<std::size_t>(values[data.encoding_size + 1]);
    data.rows.push_back(std::move(row));
  }
  return data;
}

std::string trace_csv(const TrainingTrace& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,mean_conditional_pmf\n";
  for (const auto& r : trace.rows) out << r.epoch << ',' << r.loss << ',' << r.mean_conditional_pmf << '\n';
  return out.str();
}

}  // namespace hallu
