#include <atomic>

#include "bayernet/kernels.hpp"

namespace bayernet::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::OpenMP};
}

Backend default_backend() { return g_backend.load(std::memory_order_relaxed); }

void set_default_backend(Backend backend) { g_backend.store(backend, std::memory_order_relaxed); }

void conv2d_forward(Backend b, const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output) {
  if (b == Backend::Serial) return serial::conv2d_forward(d, input, weight, bias, output);
  omp::conv2d_forward(d, input, weight, bias, output);
}

void conv2d_backward(Backend b, const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_out, std::span<float> grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias) {
  if (b == Backend::Serial) {
    return serial::conv2d_backward(d, input, weight, grad_out, grad_input, grad_weight, grad_bias);
  }
  omp::conv2d_backward(d, input, weight, grad_out, grad_input, grad_weight, grad_bias);
}

void deform_conv2d_forward(Backend b, const DeformDims& d, std::span<const float> input,
                           std::span<const float> weight, std::span<const float> offsets, std::span<float> output) {
  if (b == Backend::Serial) return serial::deform_conv2d_forward(d, input, weight, offsets, output);
  omp::deform_conv2d_forward(d, input, weight, offsets, output);
}

void deform_conv2d_backward(Backend b, const DeformDims& d, std::span<const float> input,
                            std::span<const float> weight, std::span<const float> offsets,
                            std::span<const float> grad_out, std::span<float> grad_input,
                            std::span<float> grad_weight, std::span<float> grad_offsets) {
  if (b == Backend::Serial) {
    return serial::deform_conv2d_backward(d, input, weight, offsets, grad_out, grad_input, grad_weight,
                                          grad_offsets);
  }
  omp::deform_conv2d_backward(d, input, weight, offsets, grad_out, grad_input, grad_weight, grad_offsets);
}

void upsample_bilinear_forward(Backend b, int channels, int height, int width, int factor,
                               std::span<const float> input, std::span<float> output) {
  if (b == Backend::Serial) return serial::upsample_bilinear_forward(channels, height, width, factor, input, output);
  omp::upsample_bilinear_forward(channels, height, width, factor, input, output);
}

void upsample_bilinear_backward(Backend b, int channels, int height, int width, int factor,
                                std::span<const float> grad_out, std::span<float> grad_input) {
  if (b == Backend::Serial) {
    return serial::upsample_bilinear_backward(channels, height, width, factor, grad_out, grad_input);
  }
  omp::upsample_bilinear_backward(channels, height, width, factor, grad_out, grad_input);
}

void max_pool2_forward(Backend b, int channels, int height, int width, std::span<const float> input,
                       std::span<float> output, std::span<std::int32_t> argmax) {
  if (b == Backend::Serial) return serial::max_pool2_forward(channels, height, width, input, output, argmax);
  omp::max_pool2_forward(channels, height, width, input, output, argmax);
}

}  // namespace bayernet::kernels
