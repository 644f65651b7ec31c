// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include <random>

#include "placekd/kernels.h"

namespace {

using placekd::Tensor3;
namespace k = placekd::kernels;

struct ConvCase {
  Tensor3<float> input;
  std::vector<float> weights, bias;
  Tensor3<float> output;
};

ConvCase make_conv(int in_c, int out_c, int size) {
  std::mt19937 rng(7);
  std::normal_distribution<float> dist(0.f, 1.f);
  ConvCase c;
  c.input = Tensor3<float>(in_c, size, size);
  for (auto& v : c.input.data) v = dist(rng);
  c.weights.resize(static_cast<std::size_t>(out_c) * in_c * 9);
  for (auto& v : c.weights) v = dist(rng);
  c.bias.assign(out_c, 0.1f);
  c.output = Tensor3<float>(out_c, k::conv_output_size(size, 2), k::conv_output_size(size, 2));
  return c;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  ConvCase c = make_conv(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                         static_cast<int>(state.range(2)));
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::conv3x3_forward<float>(c.input, c.weights, c.bias, 2, c.output);
    } else {
      k::serial::conv3x3_forward<float>(c.input, c.weights, c.bias, 2, c.output);
    }
    benchmark::DoNotOptimize(c.output.data.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  ConvCase c = make_conv(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                         static_cast<int>(state.range(2)));
  Tensor3<float> grad_in;
  std::vector<float> gw(c.weights.size()), gb(c.bias.size());
  Tensor3<float> grad_out = c.output;
  for (auto& v : grad_out.data) v = 0.5f;
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::conv3x3_backward<float>(c.input, c.weights, grad_out, 2, &grad_in, gw, gb);
    } else {
      k::serial::conv3x3_backward<float>(c.input, c.weights, grad_out, 2, &grad_in, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Parallel>
void BM_PairwiseL2(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int dim = 448;
  std::mt19937 rng(11);
  std::normal_distribution<float> dist(0.f, 1.f);
  std::vector<float> q(static_cast<std::size_t>(n) * dim), db(q.size());
  for (auto& v : q) v = dist(rng);
  for (auto& v : db) v = dist(rng);
  for (auto _ : state) {
    auto d = Parallel ? k::parallel::pairwise_sq_l2(q, db, dim) : k::serial::pairwise_sq_l2(q, db, dim);
    benchmark::DoNotOptimize(d.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Args({3, 16, 64})->Args({32, 96, 16});
BENCHMARK(BM_ConvForward<true>)->Args({3, 16, 64})->Args({32, 96, 16});
BENCHMARK(BM_ConvBackward<false>)->Args({3, 16, 64})->Args({32, 96, 16});
BENCHMARK(BM_ConvBackward<true>)->Args({3, 16, 64})->Args({32, 96, 16});
BENCHMARK(BM_PairwiseL2<false>)->Arg(100)->Arg(500);
BENCHMARK(BM_PairwiseL2<true>)->Arg(100)->Arg(500);

BENCHMARK_MAIN();
