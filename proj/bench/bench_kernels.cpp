#include <benchmark/benchmark.h>

#include <random>

#include "hallu/kernels.hpp"
#include "hallu/mixture.hpp"

using namespace hallu;

namespace {

LatentMixture bench_mixture() {
  return LatentMixture({0.3, 0.7}, {GaussianComponent::isotropic(Vector::Constant(2, -1.0), 0.8),
                                    GaussianComponent::diagonal(Vector::Constant(2, 1.5), Vector::Constant(2, 0.4))});
}

const Grid& bench_grid() {
  static const Grid g = Grid::plane({-5.0, -5.0}, {5.0, 5.0}, {512, 512});
  return g;
}

template <bool Parallel>
void BM_EvaluateGrid(benchmark::State& state) {
  kernels::set_workers(static_cast<int>(state.range(0)));
  const auto m = bench_mixture();
  const kernels::DensityFn f = [&](const Vector& x) { return mixture_density(m, x); };
  for (auto _ : state) {
    auto v = Parallel ? kernels::parallel::evaluate_grid(f, bench_grid()) : kernels::serial::evaluate_grid(f, bench_grid());
    benchmark::DoNotOptimize(v.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(bench_grid().size()));
}

struct GmmData {
  std::vector<GaussianComponent> comps;
  Vector log_weights;
  Matrix rows;
};

const GmmData& gmm_data() {
  static const GmmData d = [] {
    GmmData out;
    std::mt19937_64 gen(1);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int k = 0; k < 8; ++k) {
      Vector mean(16);
      for (auto& x : mean) x = z(gen);
      out.comps.push_back(GaussianComponent::diagonal(mean, Vector::Constant(16, 0.5 + 0.1 * k)));
    }
    out.log_weights = Vector::Constant(8, std::log(1.0 / 8));
    out.rows.resize(20000, 16);
    for (Eigen::Index i = 0; i < out.rows.size(); ++i) out.rows.data()[i] = z(gen);
    return out;
  }();
  return d;
}

template <bool Parallel>
void BM_WeightedLogDensities(benchmark::State& state) {
  kernels::set_workers(static_cast<int>(state.range(0)));
  const auto& d = gmm_data();
  for (auto _ : state) {
    Matrix out = Parallel ? kernels::parallel::weighted_log_densities(d.comps, d.log_weights, d.rows)
                          : kernels::serial::weighted_log_densities(d.comps, d.log_weights, d.rows);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * d.rows.rows());
}

template <bool Parallel>
void BM_PartitionedCount(benchmark::State& state) {
  kernels::set_workers(static_cast<int>(state.range(0)));
  const kernels::TrialFn<1> trial = [](Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    double s = 0.0;
    for (int i = 0; i < 8; ++i) s += z(rng);
    return std::array<bool, 1>{s > 0.0};
  };
  constexpr std::size_t trials = 200000;
  for (auto _ : state) {
    auto c = Parallel ? kernels::parallel::partitioned_count<1>(trials, 7, trial)
                      : kernels::serial::partitioned_count<1>(trials, 7, trial);
    benchmark::DoNotOptimize(c);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(trials));
}

void worker_args(benchmark::internal::Benchmark* b) {
  for (int w : {1, 2, 4}) b->Arg(w);
  b->Unit(benchmark::kMillisecond)->UseRealTime();
}

}  // namespace

BENCHMARK(BM_EvaluateGrid<false>)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateGrid<true>)->Apply(worker_args);
BENCHMARK(BM_WeightedLogDensities<false>)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WeightedLogDensities<true>)->Apply(worker_args);
BENCHMARK(BM_PartitionedCount<false>)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PartitionedCount<true>)->Apply(worker_args);

BENCHMARK_MAIN();
