#include "placekd/kernels.h"

#include <algorithm>

#include "placekd/errors.h"

namespace placekd::kernels {
namespace {

// Output positions whose tap (k in 0..2) lands inside an input of length n.
struct TapRange {
  int lo;
  int hi;  // inclusive
};

inline TapRange tap_range(int k, int stride, int in_size, int out_size) {
  if (in_size - k < 0) return {0, -1};
  return {k == 0 ? 1 : 0, std::min(out_size - 1, (in_size - k) / stride)};
}

template <typename T>
void check_shapes(const Tensor3<T>& input, std::span<const T> weights, std::span<const T> bias, int out_channels) {
  if (weights.size() != static_cast<std::size_t>(out_channels) * input.channels * 9) {
    throw ModelError("conv3x3: weight count does not match " + std::to_string(out_channels) + "x" +
                     std::to_string(input.channels) + "x3x3");
  }
  if (bias.size() != static_cast<std::size_t>(out_channels)) throw ModelError("conv3x3: bias size mismatch");
}

template <typename T>
void forward_channel(const Tensor3<T>& input, std::span<const T> weights, std::span<const T> bias, int stride,
                     Tensor3<T>& output, int o) {
  T* out = output.channel(o);
  std::fill(out, out + output.plane(), bias[o]);
  const int ow = output.width;
  for (int i = 0; i < input.channels; ++i) {
    const T* in = input.channel(i);
    const T* w = weights.data() + (static_cast<std::size_t>(o) * input.channels + i) * 9;
    for (int ky = 0; ky < 3; ++ky) {
      const TapRange ry = tap_range(ky, stride, input.height, output.height);
      for (int kx = 0; kx < 3; ++kx) {
        const TapRange rx = tap_range(kx, stride, input.width, output.width);
        const T wv = w[ky * 3 + kx];
        for (int y = ry.lo; y <= ry.hi; ++y) {
          const T* in_row = in + static_cast<std::size_t>(y * stride + ky - 1) * input.width;
          T* out_row = out + static_cast<std::size_t>(y) * ow;
          if (stride == 1) {
            for (int x = rx.lo; x <= rx.hi; ++x) out_row[x] += wv * in_row[x + kx - 1];
          } else {
            for (int x = rx.lo; x <= rx.hi; ++x) out_row[x] += wv * in_row[x * stride + kx - 1];
          }
        }
      }
    }
  }
}

template <typename T>
void weight_grad_channel(const Tensor3<T>& input, const Tensor3<T>& grad_output, int stride, std::span<T> grad_weights,
                         std::span<T> grad_bias, int o) {
  const T* g = grad_output.channel(o);
  T gb = 0;
  for (std::size_t k = 0; k < grad_output.plane(); ++k) gb += g[k];
  grad_bias[o] += gb;
  for (int i = 0; i < input.channels; ++i) {
    const T* in = input.channel(i);
    T* gw = grad_weights.data() + (static_cast<std::size_t>(o) * input.channels + i) * 9;
    for (int ky = 0; ky < 3; ++ky) {
      const TapRange ry = tap_range(ky, stride, input.height, grad_output.height);
      for (int kx = 0; kx < 3; ++kx) {
        const TapRange rx = tap_range(kx, stride, input.width, grad_output.width);
        T acc = 0;
        for (int y = ry.lo; y <= ry.hi; ++y) {
          const T* in_row = in + static_cast<std::size_t>(y * stride + ky - 1) * input.width;
          const T* g_row = g + static_cast<std::size_t>(y) * grad_output.width;
          for (int x = rx.lo; x <= rx.hi; ++x) acc += g_row[x] * in_row[x * stride + kx - 1];
        }
        gw[ky * 3 + kx] += acc;
      }
    }
  }
}

template <typename T>
void input_grad_channel(const Tensor3<T>& input, std::span<const T> weights, const Tensor3<T>& grad_output,
                        int stride, Tensor3<T>& grad_input, int i) {
  T* gin = grad_input.channel(i);
  std::fill(gin, gin + grad_input.plane(), T(0));
  for (int o = 0; o < grad_output.channels; ++o) {
    const T* g = grad_output.channel(o);
    const T* w = weights.data() + (static_cast<std::size_t>(o) * input.channels + i) * 9;
    for (int ky = 0; ky < 3; ++ky) {
      const TapRange ry = tap_range(ky, stride, input.height, grad_output.height);
      for (int kx = 0; kx < 3; ++kx) {
        const TapRange rx = tap_range(kx, stride, input.width, grad_output.width);
        const T wv = w[ky * 3 + kx];
        for (int y = ry.lo; y <= ry.hi; ++y) {
          T* gin_row = gin + static_cast<std::size_t>(y * stride + ky - 1) * input.width;
          const T* g_row = g + static_cast<std::size_t>(y) * grad_output.width;
          for (int x = rx.lo; x <= rx.hi; ++x) gin_row[x * stride + kx - 1] += wv * g_row[x];
        }
      }
    }
  }
}

template <typename T>
void prepare_output(const Tensor3<T>& input, std::span<const T> weights, std::span<const T> bias, int stride,
                    Tensor3<T>& output) {
  const int out_channels = static_cast<int>(bias.size());
  check_shapes(input, weights, bias, out_channels);
  if (stride < 1) throw ModelError("conv3x3: stride must be >= 1");
  const int oh = conv_output_size(input.height, stride);
  const int ow = conv_output_size(input.width, stride);
  if (output.channels != out_channels || output.height != oh || output.width != ow) {
    output = Tensor3<T>(out_channels, oh, ow);
  }
}

template <typename T>
void prepare_backward(const Tensor3<T>& input, std::span<const T> weights, const Tensor3<T>& grad_output,
                      Tensor3<T>* grad_input, std::span<T> grad_weights, std::span<T> grad_bias) {
  if (grad_weights.size() != weights.size() || grad_bias.size() != static_cast<std::size_t>(grad_output.channels)) {
    throw ModelError("conv3x3 backward: gradient buffer size mismatch");
  }
  if (grad_input && (grad_input->channels != input.channels || grad_input->height != input.height ||
                     grad_input->width != input.width)) {
    *grad_input = Tensor3<T>(input.channels, input.height, input.width);
  }
}

}  // namespace

namespace serial {

template <typename T>
void conv3x3_forward(const Tensor3<T>& input, std::span<const T> weights, std::span<const T> bias, int stride,
                     Tensor3<T>& output) {
  prepare_output(input, weights, bias, stride, output);
  for (int o = 0; o < output.channels; ++o) forward_channel(input, weights, bias, stride, output, o);
}

template <typename T>
void conv3x3_backward(const Tensor3<T>& input, std::span<const T> weights, const Tensor3<T>& grad_output, int stride,
                      Tensor3<T>* grad_input, std::span<T> grad_weights, std::span<T> grad_bias) {
  prepare_backward(input, weights, grad_output, grad_input, grad_weights, grad_bias);
  for (int o = 0; o < grad_output.channels; ++o) {
    weight_grad_channel(input, grad_output, stride, grad_weights, grad_bias, o);
  }
  if (grad_input) {
    for (int i = 0; i < input.channels; ++i) input_grad_channel(input, weights, grad_output, stride, *grad_input, i);
  }
}

std::vector<float> pairwise_sq_l2(std::span<const float> queries, std::span<const float> database, int dim) {
  const std::size_t nq = queries.size() / dim;
  const std::size_t nd = database.size() / dim;
  std::vector<float> out(nq * nd);
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t d = 0; d < nd; ++d) {
      double s = 0;
      for (int k = 0; k < dim; ++k) {
        const double diff = static_cast<double>(queries[q * dim + k]) - database[d * dim + k];
        s += diff * diff;
      }
      out[q * nd + d] = static_cast<float>(s);
    }
  }
  return out;
}

template void conv3x3_forward<float>(const Tensor3<float>&, std::span<const float>, std::span<const float>, int,
                                     Tensor3<float>&);
template void conv3x3_forward<double>(const Tensor3<double>&, std::span<const double>, std::span<const double>, int,
                                      Tensor3<double>&);
template void conv3x3_backward<float>(const Tensor3<float>&, std::span<const float>, const Tensor3<float>&, int,
                                      Tensor3<float>*, std::span<float>, std::span<float>);
template void conv3x3_backward<double>(const Tensor3<double>&, std::span<const double>, const Tensor3<double>&, int,
                                       Tensor3<double>*, std::span<double>, std::span<double>);

}  // namespace serial

namespace parallel {

template <typename T>
void conv3x3_forward(const Tensor3<T>& input, std::span<const T> weights, std::span<const T> bias, int stride,
                     Tensor3<T>& output) {
  prepare_output(input, weights, bias, stride, output);
  const int out_channels = output.channels;
#pragma omp parallel for schedule(static)
  for (int o = 0; o < out_channels; ++o) forward_channel(input, weights, bias, stride, output, o);
}

template <typename T>
void conv3x3_backward(const Tensor3<T>& input, std::span<const T> weights, const Tensor3<T>& grad_output, int stride,
                      Tensor3<T>* grad_input, std::span<T> grad_weights, std::span<T> grad_bias) {
  prepare_backward(input, weights, grad_output, grad_input, grad_weights, grad_bias);
  const int out_channels = grad_output.channels;
  const int in_channels = input.channels;
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (int o = 0; o < out_channels; ++o) weight_grad_channel(input, grad_output, stride, grad_weights, grad_bias, o);
    if (grad_input) {
#pragma omp for schedule(static)
      for (int i = 0; i < in_channels; ++i) input_grad_channel(input, weights, grad_output, stride, *grad_input, i);
    }
  }
}

std::vector<float> pairwise_sq_l2(std::span<const float> queries, std::span<const float> database, int dim) {
  const std::size_t nq = queries.size() / dim;
  const std::size_t nd = database.size() / dim;
  std::vector<float> out(nq * nd);
#pragma omp parallel for schedule(static)
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t d = 0; d < nd; ++d) {
      double s = 0;
      for (int k = 0; k < dim; ++k) {
        const double diff = static_cast<double>(queries[q * dim + k]) - database[d * dim + k];
        s += diff * diff;
      }
      out[q * nd + d] = static_cast<float>(s);
    }
  }
  return out;
}

template void conv3x3_forward<float>(const Tensor3<float>&, std::span<const float>, std::span<const float>, int,
                                     Tensor3<float>&);
template void conv3x3_forward<double>(const Tensor3<double>&, std::span<const double>, std::span<const double>, int,
                                      Tensor3<double>&);
template void conv3x3_backward<float>(const Tensor3<float>&, std::span<const float>, const Tensor3<float>&, int,
                                      Tensor3<float>*, std::span<float>, std::span<float>);
template void conv3x3_backward<double>(const Tensor3<double>&, std::span<const double>, const Tensor3<double>&, int,
                                       Tensor3<double>*, std::span<double>, std::span<double>);

}  // namespace parallel

}  // namespace placekd::kernels
