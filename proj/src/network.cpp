#include "mmreg/network.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "mmreg/error.hpp"
#include "mmreg/rng.hpp"

namespace mmreg {

template <typename T>
NetParams<T> NetParams<T>::zeros() {
    NetParams p;
    for (const auto& l : kLayerTable) {
        p.blocks.push_back({std::string(l.name), l.in_channels, l.out_channels,
                            nn::Buffer<T>(9 * l.in_channels * l.out_channels, T(0)),
                            nn::Buffer<T>(l.out_channels, T(0))});
    }
    return p;
}

template <typename T>
std::size_t NetParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.weight.size() + b.bias.size();
    return n;
}

template <typename T>
T& NetParams<T>::at(std::size_t flat_index) {
    for (auto& b : blocks) {
        if (flat_index < b.weight.size()) return b.weight[flat_index];
        flat_index -= b.weight.size();
        if (flat_index < b.bias.size()) return b.bias[flat_index];
        flat_index -= b.bias.size();
    }
    throw ParameterError("NetParams::at: index out of range");
}

template <typename T>
T NetParams<T>::at(std::size_t flat_index) const {
    return const_cast<NetParams&>(*this).at(flat_index);
}

template <typename T>
void NetParams<T>::check_architecture() const {
    if (blocks.size() != kLayerTable.size()) {
        throw ParameterError("NetParams: expected " + std::to_string(kLayerTable.size()) + " layers, got " +
                             std::to_string(blocks.size()));
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const auto& l = kLayerTable[i];
        if (b.name != l.name || b.in_channels != l.in_channels || b.out_channels != l.out_channels ||
            b.weight.size() != 9 * l.in_channels * l.out_channels || b.bias.size() != l.out_channels) {
            throw ParameterError("NetParams: block " + std::to_string(i) + " (" + b.name +
                                 ") does not match the layer table");
        }
    }
}

template <typename T>
bool NetParams<T>::all_finite() const {
    for (const auto& b : blocks) {
        for (T v : b.weight) {
            if (!std::isfinite(v)) return false;
        }
        for (T v : b.bias) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

template <typename T>
std::uint64_t NetParams<T>::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const nn::Buffer<T>& values) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
        for (std::size_t i = 0; i < values.size() * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& b : blocks) {
        mix(b.weight);
        mix(b.bias);
    }
    return h;
}

template <typename T>
NetParams<T> init_params(std::uint64_t seed, bool zero_flow) {
    NetParams<T> p = NetParams<T>::zeros();
    Xoshiro256pp rng(seed);
    for (auto& b : p.blocks) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(9 * b.in_channels));
        for (T& w : b.weight) w = static_cast<T>(stddev * rng.normal());
    }
    if (zero_flow) {
        auto& flow = p.blocks.back();
        std::fill(flow.weight.begin(), flow.weight.end(), T(0));
    }
    return p;
}

namespace {

template <typename T>
nn::Tensor<T> stack_inputs(const GrayImage& fixed, const GrayImage& moving) {
    if (!fixed.same_shape(moving)) {
        throw ParameterError("forward: fixed and moving dimensions differ");
    }
    const std::size_t w = fixed.width(), h = fixed.height();
    if (w < 4 || h < 4 || w % 4 != 0 || h % 4 != 0) {
        throw ParameterError("forward: image dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                             " must be multiples of 4; pad or resize the inputs");
    }
    nn::Tensor<T> x(2, h, w);
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        x.data[i] = static_cast<T>(fixed[i]);
        x.data[fixed.size() + i] = static_cast<T>(moving[i]);
    }
    return x;
}

template <typename T>
ForwardResult<T> run_forward(const NetParams<T>& params, const GrayImage& fixed, const GrayImage& moving,
                             bool record) {
    params.check_architecture();
    const nn::Tensor<T> x = stack_inputs<T>(fixed, moving);
    ForwardResult<T> result;
    Tape<T>& tape = result.tape;
    tape.width = fixed.width();
    tape.height = fixed.height();
    if (record) {
        tape.params_fingerprint = params.fingerprint();
    }
    nn::Buffer<T> scratch;
    const T slope = static_cast<T>(kLeakySlope);

    auto conv = [&](std::size_t li, const nn::Tensor<T>& in) {
        const auto& b = params.blocks[li];
        if (record) tape.conv_inputs[li] = in;
        nn::Tensor<T> out = nn::conv3x3_forward<T>(in, b.weight, b.bias, b.out_channels, scratch);
        if (kLayerTable[li].activation) {
            if (record) tape.pre_activations[li] = out;
            nn::leaky_relu_inplace(out, slope);
        }
        return out;
    };

    const auto e1a = conv(0, x);
    const auto e1b = conv(1, e1a);
    const auto e2a = conv(2, nn::avgpool2_forward(e1b));
    const auto e2b = conv(3, e2a);
    const auto bottleneck = conv(4, nn::avgpool2_forward(e2b));
    const auto d1 = conv(5, nn::concat_forward(nn::upsample2_forward(bottleneck), e2b));
    const auto d2 = conv(6, nn::concat_forward(nn::upsample2_forward(d1), e1b));
    const auto flow = conv(7, d2);

    const std::size_t n = fixed.size();
    std::vector<double> dx(n), dy(n);
    for (std::size_t i = 0; i < n; ++i) {
        dx[i] = static_cast<double>(flow.data[i]);
        dy[i] = static_cast<double>(flow.data[n + i]);
    }
    result.field = DisplacementField(fixed.width(), fixed.height(), std::move(dx), std::move(dy));
    if (!record) {
        tape.consumed = true;
    }
    return result;
}

template <typename T>
nn::Tensor<T> add(nn::Tensor<T> a, const nn::Tensor<T>& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
    return a;
}

} // namespace

template <typename T>
ForwardResult<T> forward(const NetParams<T>& params, const GrayImage& fixed, const GrayImage& moving) {
    return run_forward(params, fixed, moving, true);
}

template <typename T>
DisplacementField predict(const NetParams<T>& params, const GrayImage& fixed, const GrayImage& moving) {
    return run_forward(params, fixed, moving, false).field;
}

template <typename T>
NetParams<T> backward(const NetParams<T>& params, Tape<T>& tape, const DisplacementField& grad_field) {
    if (tape.consumed) {
        throw ParameterError("backward: tape has already been consumed");
    }
    if (tape.params_fingerprint != params.fingerprint()) {
        throw ParameterError("backward: tape was recorded with different parameters");
    }
    if (grad_field.width() != tape.width || grad_field.height() != tape.height) {
        throw ParameterError("backward: gradient field dimensions do not match the tape");
    }
    tape.consumed = true;

    NetParams<T> grads = NetParams<T>::zeros();
    nn::Buffer<T> scratch;
    const T slope = static_cast<T>(kLeakySlope);

    auto conv_back = [&](std::size_t li, nn::Tensor<T> dout, bool need_input) {
        if (kLayerTable[li].activation) {
            nn::leaky_relu_backward_inplace(tape.pre_activations[li], dout, slope);
        }
        auto& g = grads.blocks[li];
        nn::Tensor<T> din;
        nn::conv3x3_backward<T>(tape.conv_inputs[li], params.blocks[li].weight, dout, g.weight, g.bias,
                                need_input ? &din : nullptr, scratch);
        tape.conv_inputs[li] = {};
        tape.pre_activations[li] = {};
        return din;
    };

    const std::size_t n = grad_field.size();
    nn::Tensor<T> g_flow(2, tape.height, tape.width);
    for (std::size_t i = 0; i < n; ++i) {
        g_flow.data[i] = static_cast<T>(grad_field.dx()[i]);
        g_flow.data[n + i] = static_cast<T>(grad_field.dy()[i]);
    }

    const auto g_d2 = conv_back(7, std::move(g_flow), true);
    const auto g_cat2 = conv_back(6, g_d2, true);
    auto [g_up2, g_skip1] = nn::concat_backward(g_cat2, kLayerTable[5].out_channels);
    const auto g_cat1 = conv_back(5, nn::upsample2_backward(g_up2), true);
    auto [g_up1, g_skip2] = nn::concat_backward(g_cat1, kLayerTable[4].out_channels);
    const auto g_pool2 = conv_back(4, nn::upsample2_backward(g_up1), true);
    const auto g_e2a = conv_back(3, add(nn::avgpool2_backward(g_pool2), g_skip2), true);
    const auto g_pool1 = conv_back(2, g_e2a, true);
    const auto g_e1a = conv_back(1, add(nn::avgpool2_backward(g_pool1), g_skip1), true);
    conv_back(0, g_e1a, false);
    return grads;
}

template <typename T>
void accumulate(NetParams<T>& dst, const NetParams<T>& src, T scale) {
    if (dst.blocks.size() != src.blocks.size()) {
        throw ParameterError("accumulate: architecture mismatch");
    }
    for (std::size_t b = 0; b < dst.blocks.size(); ++b) {
        auto& d = dst.blocks[b];
        const auto& s = src.blocks[b];
        if (d.weight.size() != s.weight.size() || d.bias.size() != s.bias.size()) {
            throw ParameterError("accumulate: block shape mismatch");
        }
        for (std::size_t i = 0; i < d.weight.size(); ++i) d.weight[i] += scale * s.weight[i];
        for (std::size_t i = 0; i < d.bias.size(); ++i) d.bias[i] += scale * s.bias[i];
    }
}

template <typename T>
void adam_step(NetParams<T>& params, const NetParams<T>& grads, AdamState<T>& state, double lr,
               const AdamConfig& cfg) {
    params.check_architecture();
    grads.check_architecture();
    state.first_moment.check_architecture();
    state.second_moment.check_architecture();

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);

    auto update = [&](nn::Buffer<T>& theta, const nn::Buffer<T>& g, nn::Buffer<T>& m, nn::Buffer<T>& v) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double m_hat = mi / correction1;
            const double v_hat = vi / correction2;
            theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
        }
    };
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        update(params.blocks[b].weight, grads.blocks[b].weight, state.first_moment.blocks[b].weight,
               state.second_moment.blocks[b].weight);
        update(params.blocks[b].bias, grads.blocks[b].bias, state.first_moment.blocks[b].bias,
               state.second_moment.blocks[b].bias);
    }
}

#define MMREG_INSTANTIATE(T)                                                                                    \
    template struct NetParams<T>;                                                                               \
    template NetParams<T> init_params<T>(std::uint64_t, bool);                                                 \
    template ForwardResult<T> forward<T>(const NetParams<T>&, const GrayImage&, const GrayImage&);             \
    template DisplacementField predict<T>(const NetParams<T>&, const GrayImage&, const GrayImage&);            \
    template NetParams<T> backward<T>(const NetParams<T>&, Tape<T>&, const DisplacementField&);                \
    template void accumulate<T>(NetParams<T>&, const NetParams<T>&, T);                                        \
    template void adam_step<T>(NetParams<T>&, const NetParams<T>&, AdamState<T>&, double, const AdamConfig&);

MMREG_INSTANTIATE(float)
MMREG_INSTANTIATE(double)

#undef MMREG_INSTANTIATE

} // namespace mmreg
