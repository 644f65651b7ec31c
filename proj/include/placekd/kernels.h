#pragma once

#include <span>
#include <vector>

#include "placekd/tensor.h"

// Compute kernels shared by the model and retrieval code. Every kernel exists
// in two flavors: `serial` is the straightforward reference used by tests, and
// `parallel` splits independent outputs across OpenMP threads. Both flavors
// accumulate each output in the same order, so results are bit-identical.
namespace placekd::kernels {

inline int conv_output_size(int input, int stride) { return (input - 1) / stride + 1; }

// Weights are laid out [out][in][3][3]; padding is 1 on every side.
namespace serial {

template <typename T>
void conv3x3_forward(const Tensor3<T>& input, std::span<const T> weights, std::span<const T> bias,
                     int stride, Tensor3<T>& output);

// Accumulates into grad_weights/grad_bias; overwrites grad_input when non-null.
template <typename T>
void conv3x3_backward(const Tensor3<T>& input, std::span<const T> weights, const Tensor3<T>& grad_output,
                      int stride, Tensor3<T>* grad_input, std::span<T> grad_weights, std::span<T> grad_bias);

// Row-major query x database matrix of squared L2 distances.
std::vector<float> pairwise_sq_l2(std::span<const float> queries, std::span<const float> database, int dim);

}  // namespace serial

namespace parallel {

template <typename T>
void conv3x3_forward(const Tensor3<T>& input, std::span<const T> weights, std::span<const T> bias,
                     int stride, Tensor3<T>& output);

template <typename T>
void conv3x3_backward(const Tensor3<T>& input, std::span<const T> weights, const Tensor3<T>& grad_output,
                      int stride, Tensor3<T>* grad_input, std::span<T> grad_weights, std::span<T> grad_bias);

std::vector<float> pairwise_sq_l2(std::span<const float> queries, std::span<const float> database, int dim);

}  // namespace parallel

}  // namespace placekd::kernels
