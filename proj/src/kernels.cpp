#include "imitate/kernels.hpp"

#include <algorithm>

namespace imitate::kernels {

namespace {

// Output columns [lo, hi) whose input column ox*stride - pad + kw lies inside the row.
void valid_range(int out_len, int in_len, int stride, int pad, int tap, int& lo, int& hi) {
    lo = 0;
    while (lo < out_len && lo * stride - pad + tap < 0) ++lo;
    hi = out_len;
    while (hi > lo && (hi - 1) * stride - pad + tap >= in_len) --hi;
}

void conv_forward_channel(const ConvShape& s, int o, const double* in, const float* weight, const float* bias,
                          double* out) {
    const int oh = s.out_height(), ow = s.out_width();
    double* op = out + static_cast<std::size_t>(o) * oh * ow;
    std::fill(op, op + static_cast<std::size_t>(oh) * ow, static_cast<double>(bias[o]));
    for (int c = 0; c < s.in_channels; ++c) {
        const double* ip = in + static_cast<std::size_t>(c) * s.in_height * s.in_width;
        for (int kh = 0; kh < s.kernel; ++kh) {
            int ylo, yhi;
            valid_range(oh, s.in_height, s.stride, s.pad, kh, ylo, yhi);
            for (int kw = 0; kw < s.kernel; ++kw) {
                const double wv = weight[((static_cast<std::size_t>(o) * s.in_channels + c) * s.kernel + kh) * s.kernel + kw];
                int xlo, xhi;
                valid_range(ow, s.in_width, s.stride, s.pad, kw, xlo, xhi);
                for (int oy = ylo; oy < yhi; ++oy) {
                    const double* irow = ip + static_cast<std::size_t>(oy * s.stride - s.pad + kh) * s.in_width;
                    double* orow = op + static_cast<std::size_t>(oy) * ow;
                    for (int ox = xlo; ox < xhi; ++ox) orow[ox] += wv * irow[ox * s.stride - s.pad + kw];
                }
            }
        }
    }
}

void conv_weight_grad_channel(const ConvShape& s, int o, const double* in, const double* dout, double* dweight,
                              double* dbias) {
    const int oh = s.out_height(), ow = s.out_width();
    const double* gp = dout + static_cast<std::size_t>(o) * oh * ow;
    double gb = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) gb += gp[i];
    dbias[o] += gb;
    for (int c = 0; c < s.in_channels; ++c) {
        const double* ip = in + static_cast<std::size_t>(c) * s.in_height * s.in_width;
        for (int kh = 0; kh < s.kernel; ++kh) {
            int ylo, yhi;
            valid_range(oh, s.in_height, s.stride, s.pad, kh, ylo, yhi);
            for (int kw = 0; kw < s.kernel; ++kw) {
                int xlo, xhi;
                valid_range(ow, s.in_width, s.stride, s.pad, kw, xlo, xhi);
                double acc = 0.0;
                for (int oy = ylo; oy < yhi; ++oy) {
                    const double* irow = ip + static_cast<std::size_t>(oy * s.stride - s.pad + kh) * s.in_width;
                    const double* grow = gp + static_cast<std::size_t>(oy) * ow;
                    for (int ox = xlo; ox < xhi; ++ox) acc += grow[ox] * irow[ox * s.stride - s.pad + kw];
                }
                dweight[((static_cast<std::size_t>(o) * s.in_channels + c) * s.kernel + kh) * s.kernel + kw] += acc;
            }
        }
    }
}

void conv_input_grad_channel(const ConvShape& s, int c, const float* weight, const double* dout, double* din) {
    const int oh = s.out_height(), ow = s.out_width();
    double* dp = din + static_cast<std::size_t>(c) * s.in_height * s.in_width;
    std::fill(dp, dp + static_cast<std::size_t>(s.in_height) * s.in_width, 0.0);
    for (int o = 0; o < s.out_channels; ++o) {
        const double* gp = dout + static_cast<std::size_t>(o) * oh * ow;
        for (int kh = 0; kh < s.kernel; ++kh) {
            int ylo, yhi;
            valid_range(oh, s.in_height, s.stride, s.pad, kh, ylo, yhi);
            for (int kw = 0; kw < s.kernel; ++kw) {
                const double wv = weight[((static_cast<std::size_t>(o) * s.in_channels + c) * s.kernel + kh) * s.kernel + kw];
                int xlo, xhi;
                valid_range(ow, s.in_width, s.stride, s.pad, kw, xlo, xhi);
                for (int oy = ylo; oy < yhi; ++oy) {
                    double* drow = dp + static_cast<std::size_t>(oy * s.stride - s.pad + kh) * s.in_width;
                    const double* grow = gp + static_cast<std::size_t>(oy) * ow;
                    for (int ox = xlo; ox < xhi; ++ox) drow[ox * s.stride - s.pad + kw] += wv * grow[ox];
                }
            }
        }
    }
}

}  // namespace

void conv2d_forward(const ConvShape& s, const double* in, const float* weight, const float* bias, double* out,
                    int threads) {
    if (threads <= 1) {
        for (int o = 0; o < s.out_channels; ++o) conv_forward_channel(s, o, in, weight, bias, out);
        return;
    }
#pragma omp parallel for num_threads(threads) schedule(static)
    for (int o = 0; o < s.out_channels; ++o) conv_forward_channel(s, o, in, weight, bias, out);
}

void conv2d_backward(const ConvShape& s, const double* in, const float* weight, const double* dout, double* din,
                     double* dweight, double* dbias, int threads) {
    if (threads <= 1) {
        for (int o = 0; o < s.out_channels; ++o) conv_weight_grad_channel(s, o, in, dout, dweight, dbias);
        if (din) {
            for (int c = 0; c < s.in_channels; ++c) conv_input_grad_channel(s, c, weight, dout, din);
        }
        return;
    }
#pragma omp parallel num_threads(threads)
    {
#pragma omp for schedule(static)
        for (int o = 0; o < s.out_channels; ++o) conv_weight_grad_channel(s, o, in, dout, dweight, dbias);
        if (din) {
#pragma omp for schedule(static)
            for (int c = 0; c < s.in_channels; ++c) conv_input_grad_channel(s, c, weight, dout, din);
        }
    }
}

void dense_forward(int in_dim, int out_dim, const double* in, const float* weight, const float* bias, double* out) {
    for (int o = 0; o < out_dim; ++o) {
        const float* wr = weight + static_cast<std::size_t>(o) * in_dim;
        double acc = bias[o];
        for (int i = 0; i < in_dim; ++i) acc += wr[i] * in[i];
        out[o] = acc;
    }
}

void dense_backward(int in_dim, int out_dim, const double* in, const float* weight, const double* dout, double* din,
                    double* dweight, double* dbias) {
    if (din) std::fill(din, din + in_dim, 0.0);
    for (int o = 0; o < out_dim; ++o) {
        const double g = dout[o];
        dbias[o] += g;
        double* dwr = dweight + static_cast<std::size_t>(o) * in_dim;
        const float* wr = weight + static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) dwr[i] += g * in[i];
        if (din) {
            for (int i = 0; i < in_dim; ++i) din[i] += g * wr[i];
        }
    }
}

namespace reference {

void conv2d_forward(const ConvShape& s, const double* in, const float* weight, const float* bias, double* out) {
    const int oh = s.out_height(), ow = s.out_width();
    for (int o = 0; o < s.out_channels; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias[o];
                for (int c = 0; c < s.in_channels; ++c) {
                    for (int kh = 0; kh < s.kernel; ++kh) {
                        for (int kw = 0; kw < s.kernel; ++kw) {
                            const int iy = oy * s.stride - s.pad + kh;
                            const int ix = ox * s.stride - s.pad + kw;
                            if (iy < 0 || iy >= s.in_height || ix < 0 || ix >= s.in_width) continue;
                            acc += weight[((o * s.in_channels + c) * s.kernel + kh) * s.kernel + kw] *
                                   in[(c * s.in_height + iy) * s.in_width + ix];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

void conv2d_backward(const ConvShape& s, const double* in, const float* weight, const double* dout, double* din,
                     double* dweight, double* dbias) {
    const int oh = s.out_height(), ow = s.out_width();
    if (din) std::fill(din, din + s.in_size(), 0.0);
    for (int o = 0; o < s.out_channels; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double g = dout[(o * oh + oy) * ow + ox];
                dbias[o] += g;
                for (int c = 0; c < s.in_channels; ++c) {
                    for (int kh = 0; kh < s.kernel; ++kh) {
                        for (int kw = 0; kw < s.kernel; ++kw) {
                            const int iy = oy * s.stride - s.pad + kh;
                            const int ix = ox * s.stride - s.pad + kw;
                            if (iy < 0 || iy >= s.in_height || ix < 0 || ix >= s.in_width) continue;
                            const std::size_t wi = ((o * s.in_channels + c) * s.kernel + kh) * s.kernel + kw;
                            const std::size_t ii = (c * s.in_height + iy) * s.in_width + ix;
                            dweight[wi] += g * in[ii];
                            if (din) din[ii] += g * weight[wi];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace reference

}  // namespace imitate::kernels
