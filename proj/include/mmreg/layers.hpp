#pragma once

// Building blocks of the registration network, each with an exact backward.
// Tensors are channel-major (C x H x W) dense arrays.

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace mmreg::nn {

/// Storage for everything Eigen maps. Eigen picks its vectorized summation
/// order from the runtime address alignment, so buffers must be aligned for
/// results to be reproducible across allocations.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct Tensor {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    Buffer<T> data;

    Tensor() = default;
    Tensor(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), data(c * h * w, T(0)) {}

    std::size_t plane() const { return height * width; }
    T* channel(std::size_t c) { return data.data() + c * plane(); }
    const T* channel(std::size_t c) const { return data.data() + c * plane(); }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

/// Unfolds 3x3 zero-padded neighbourhoods: row (c * 9 + ky * 3 + kx), column y * W + x.
template <typename T>
void im2col3x3(const Tensor<T>& in, Buffer<T>& col) {
    const std::size_t h = in.height, w = in.width, hw = in.plane();
    col.assign(in.channels * 9 * hw, T(0));
    for (std::size_t c = 0; c < in.channels; ++c) {
        const T* src = in.channel(c);
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                T* dst = col.data() + ((c * 9) + ky * 3 + kx) * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    const long sy = static_cast<long>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    const T* srow = src + static_cast<std::size_t>(sy) * w;
                    T* drow = dst + y * w;
                    const std::size_t x_begin = kx == 0 ? 1 : 0;
                    const std::size_t x_end = kx == 2 ? w - 1 : w;
                    for (std::size_t x = x_begin; x < x_end; ++x) {
                        drow[x] = srow[x + kx - 1];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col3x3: scatters column gradients back onto the input.
template <typename T>
void col2im3x3(const Buffer<T>& col, Tensor<T>& din) {
    const std::size_t h = din.height, w = din.width, hw = din.plane();
    std::fill(din.data.begin(), din.data.end(), T(0));
    for (std::size_t c = 0; c < din.channels; ++c) {
        T* dst = din.channel(c);
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const T* src = col.data() + ((c * 9) + ky * 3 + kx) * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    const long sy = static_cast<long>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    T* drow = dst + static_cast<std::size_t>(sy) * w;
                    const T* srow = src + y * w;
                    const std::size_t x_begin = kx == 0 ? 1 : 0;
                    const std::size_t x_end = kx == 2 ? w - 1 : w;
                    for (std::size_t x = x_begin; x < x_end; ++x) {
                        drow[x + kx - 1] += srow[x];
                    }
                }
            }
        }
    }
}

/// Same-padded 3x3 convolution. `weight` is (cout x cin x 3 x 3), `bias` has cout entries.
template <typename T>
Tensor<T> conv3x3_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                          std::size_t cout, Buffer<T>& scratch) {
    const std::size_t k = in.channels * 9;
    if (weight.size() != cout * k || bias.size() != cout) {
        throw std::invalid_argument("conv3x3_forward: parameter shape mismatch");
    }
    im2col3x3(in, scratch);
    Tensor<T> out(cout, in.height, in.width);
    const std::size_t hw = in.plane();
    ConstMatMap<T> wmat(weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k));
    ConstMatMap<T> cmat(scratch.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    MatMap<T> omat(out.data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
    omat.noalias() = wmat * cmat;
    for (std::size_t c = 0; c < cout; ++c) {
        omat.row(static_cast<Eigen::Index>(c)).array() += bias[c];
    }
    return out;
}

/// Accumulates weight/bias gradients and, when `din` is non-null, writes the input gradient.
template <typename T>
void conv3x3_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& dout, std::span<T> dweight,
                      std::span<T> dbias, Tensor<T>* din, Buffer<T>& scratch) {
    const std::size_t cout = dout.channels;
    const std::size_t k = in.channels * 9;
    const std::size_t hw = in.plane();
    im2col3x3(in, scratch);
    ConstMatMap<T> cmat(scratch.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    ConstMatMap<T> gmat(dout.data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
    MatMap<T> dw(dweight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k));
    dw.noalias() += gmat * cmat.transpose();
    for (std::size_t c = 0; c < cout; ++c) {
        dbias[c] += gmat.row(static_cast<Eigen::Index>(c)).sum();
    }
    if (din != nullptr) {
        ConstMatMap<T> wmat(weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k));
        Buffer<T> dcol(k * hw);
        MatMap<T> dcmat(dcol.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
        dcmat.noalias() = wmat.transpose() * gmat;
        *din = Tensor<T>(in.channels, in.height, in.width);
        col2im3x3(dcol, *din);
    }
}

template <typename T>
void leaky_relu_inplace(Tensor<T>& t, T slope) {
    for (T& v : t.data) {
        if (v < T(0)) v *= slope;
    }
}

/// Gradient through LeakyReLU given the pre-activation; derivative at 0 taken as 1.
template <typename T>
void leaky_relu_backward_inplace(const Tensor<T>& pre, Tensor<T>& grad, T slope) {
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        if (pre.data[i] < T(0)) grad.data[i] *= slope;
    }
}

/// 2x2 average pooling, stride 2. Height and width must be even.
template <typename T>
Tensor<T> avgpool2_forward(const Tensor<T>& in) {
    if (in.height % 2 != 0 || in.width % 2 != 0) {
        throw std::invalid_argument("avgpool2_forward: odd spatial size");
    }
    Tensor<T> out(in.channels, in.height / 2, in.width / 2);
    for (std::size_t c = 0; c < in.channels; ++c) {
        const T* src = in.channel(c);
        T* dst = out.channel(c);
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width; ++x) {
                const T* p = src + (2 * y) * in.width + 2 * x;
                dst[y * out.width + x] = T(0.25) * (p[0] + p[1] + p[in.width] + p[in.width + 1]);
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& dout) {
    Tensor<T> din(dout.channels, dout.height * 2, dout.width * 2);
    for (std::size_t c = 0; c < dout.channels; ++c) {
        const T* src = dout.channel(c);
        T* dst = din.channel(c);
        for (std::size_t y = 0; y < din.height; ++y) {
            for (std::size_t x = 0; x < din.width; ++x) {
                dst[y * din.width + x] = T(0.25) * src[(y / 2) * dout.width + x / 2];
            }
        }
    }
    return din;
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& in) {
    Tensor<T> out(in.channels, in.height * 2, in.width * 2);
    for (std::size_t c = 0; c < in.channels; ++c) {
        const T* src = in.channel(c);
        T* dst = out.channel(c);
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width; ++x) {
                dst[y * out.width + x] = src[(y / 2) * in.width + x / 2];
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dout) {
    Tensor<T> din(dout.channels, dout.height / 2, dout.width / 2);
    for (std::size_t c = 0; c < dout.channels; ++c) {
        const T* src = dout.channel(c);
        T* dst = din.channel(c);
        for (std::size_t y = 0; y < dout.height; ++y) {
            for (std::size_t x = 0; x < dout.width; ++x) {
                dst[(y / 2) * din.width + x / 2] += src[y * dout.width + x];
            }
        }
    }
    return din;
}

/// Channel concatenation [a; b].
template <typename T>
Tensor<T> concat_forward(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument("concat_forward: spatial size mismatch");
    }
    Tensor<T> out(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    return out;
}

/// Splits a concatenated gradient back into the parts for `a` (first `channels_a`) and `b`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>& dout, std::size_t channels_a) {
    Tensor<T> da(channels_a, dout.height, dout.width);
    Tensor<T> db(dout.channels - channels_a, dout.height, dout.width);
    const auto split = static_cast<std::ptrdiff_t>(da.data.size());
    std::copy(dout.data.begin(), dout.data.begin() + split, da.data.begin());
    std::copy(dout.data.begin() + split, dout.data.end(), db.data.begin());
    return {std::move(da), std::move(db)};
}

} // namespace mmreg::nn
