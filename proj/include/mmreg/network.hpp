#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mmreg/field.hpp"
#include "mmreg/image.hpp"
#include "mmreg/layers.hpp"

namespace mmreg {

/// One row of the frozen layer table. Layer names are part of the checkpoint format.
struct LayerSpec {
    std::string_view name;
    std::size_t in_channels;
    std::size_t out_channels;
    bool activation;  ///< LeakyReLU(0.2) after the convolution.
};

/// enc1a, enc1b, [pool], enc2a, enc2b, [pool], bottleneck, [up, concat enc2b],
/// dec1, [up, concat enc1b], dec2, flow.
inline constexpr std::array<LayerSpec, 8> kLayerTable{{
    {"enc1a", 2, 16, true},
    {"enc1b", 16, 16, true},
    {"enc2a", 16, 32, true},
    {"enc2b", 32, 32, true},
    {"bottleneck", 32, 32, true},
    {"dec1", 64, 32, true},
    {"dec2", 48, 16, true},
    {"flow", 16, 2, false},
}};

inline constexpr double kLeakySlope = 0.2;

/// Analytic parameter count: sum over layers of 9 * cin * cout + cout.
constexpr std::size_t architecture_parameter_count() {
    std::size_t n = 0;
    for (const auto& l : kLayerTable) n += 9 * l.in_channels * l.out_channels + l.out_channels;
    return n;
}

/// Kernel and bias of one 3x3 convolution.
template <typename T>
struct ParamBlock {
    std::string name;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    nn::Buffer<T> weight;  ///< cout x cin x 3 x 3
    nn::Buffer<T> bias;    ///< cout

    friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

template <typename T>
struct NetParams {
    std::vector<ParamBlock<T>> blocks;

    /// All-zero parameters with the architecture's shapes.
    static NetParams zeros();

    std::size_t parameter_count() const;

    /// Flat view helpers used by the optimizer and by gradient tests.
    T& at(std::size_t flat_index);
    T at(std::size_t flat_index) const;

    /// Throws ParameterError unless the block shapes match the layer table.
    void check_architecture() const;
    bool all_finite() const;

    /// FNV-1a hash of the parameter bytes; used to detect stale tapes.
    std::uint64_t fingerprint() const;

    template <typename U>
    NetParams<U> cast() const {
        NetParams<U> out;
        for (const auto& b : blocks) {
            out.blocks.push_back({b.name, b.in_channels, b.out_channels,
                                  nn::Buffer<U>(b.weight.begin(), b.weight.end()),
                                  nn::Buffer<U>(b.bias.begin(), b.bias.end())});
        }
        return out;
    }

    friend bool operator==(const NetParams&, const NetParams&) = default;
};

/// He-normal kernels (variance 2 / fan_in) from the pinned PRNG, zero biases.
/// With `zero_flow` the final layer is all zeros so the untrained network
/// outputs the identity field.
template <typename T>
NetParams<T> init_params(std::uint64_t seed, bool zero_flow = true);

/// Activations recorded by forward, consumed by one backward call.
template <typename T>
struct Tape {
    std::uint64_t params_fingerprint = 0;
    std::size_t width = 0;
    std::size_t height = 0;
    bool consumed = false;
    std::array<nn::Tensor<T>, kLayerTable.size()> conv_inputs;
    std::array<nn::Tensor<T>, kLayerTable.size()> pre_activations;
};

template <typename T>
struct ForwardResult {
    DisplacementField field;
    Tape<T> tape;
};

/// Runs g(F, M). Input channel 0 is F, channel 1 is M. Dimensions must be divisible by 4.
template <typename T>
ForwardResult<T> forward(const NetParams<T>& params, const GrayImage& fixed, const GrayImage& moving);

/// Forward pass without keeping the tape.
template <typename T>
DisplacementField predict(const NetParams<T>& params, const GrayImage& fixed, const GrayImage& moving);

/// Exact parameter gradients of <grad_field, g(F, M)>. The tape is consumed;
/// reusing it, or using it with different parameters, throws.
template <typename T>
NetParams<T> backward(const NetParams<T>& params, Tape<T>& tape, const DisplacementField& grad_field);

/// Adds `src` into `dst` element-wise (same architecture).
template <typename T>
void accumulate(NetParams<T>& dst, const NetParams<T>& src, T scale = T(1));

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
    NetParams<T> first_moment;
    NetParams<T> second_moment;
    std::uint64_t step = 0;

    static AdamState fresh() { return {NetParams<T>::zeros(), NetParams<T>::zeros(), 0}; }

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update in place; increments state.step.
template <typename T>
void adam_step(NetParams<T>& params, const NetParams<T>& grads, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {});

} // namespace mmreg
