#pragma once

// Compute kernels behind the network. Each kernel has a straightforward
// serial version in `reference` that the tests and the benchmark compare
// against. The main versions split work across OpenMP threads by output
// channel (forward, weight gradients) or input channel (input gradients),
// so every output element is accumulated by one thread in a fixed order and
// results do not depend on the thread count.

#include <cstddef>

namespace imitate::kernels {

struct ConvShape {
    int in_channels = 0;
    int in_height = 0;
    int in_width = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 2;
    int pad = 0;

    int out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
    int out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
    std::size_t in_size() const { return static_cast<std::size_t>(in_channels) * in_height * in_width; }
    std::size_t out_size() const { return static_cast<std::size_t>(out_channels) * out_height() * out_width(); }
};

/// in: C x H x W, weight: O x C x K x K, out: O x H' x W' (overwritten).
void conv2d_forward(const ConvShape& s, const double* in, const float* weight, const float* bias, double* out,
                    int threads = 1);

/// Accumulates into dweight / dbias; overwrites din when it is non-null.
void conv2d_backward(const ConvShape& s, const double* in, const float* weight, const double* dout, double* din,
                     double* dweight, double* dbias, int threads = 1);

/// out[o] = bias[o] + sum_i weight[o, i] * in[i].
void dense_forward(int in_dim, int out_dim, const double* in, const float* weight, const float* bias, double* out);

/// Accumulates dweight / dbias; overwrites din when non-null.
void dense_backward(int in_dim, int out_dim, const double* in, const float* weight, const double* dout, double* din,
                    double* dweight, double* dbias);

namespace reference {

void conv2d_forward(const ConvShape& s, const double* in, const float* weight, const float* bias, double* out);

void conv2d_backward(const ConvShape& s, const double* in, const float* weight, const double* dout, double* din,
                     double* dweight, double* dbias);

}  // namespace reference

}  // namespace imitate::kernels
