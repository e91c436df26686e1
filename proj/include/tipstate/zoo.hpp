// Architecture builders for the three network families.
//
//  squeezenet : ten 3x3 convs, channels 32..1024 doubling every two layers,
//               strides alternating 1/2, conv -> batchnorm -> elu, head
//               global-average-pool -> dense(classes).
//  vgg/vgg-bn : four blocks of [2x conv3x3 (+ batchnorm), maxpool2] with
//               channels 32/64/128/256, head dense(256) -> dense(classes).
//  rw         : small stand-in CNN (conv16 -> pool -> conv32 -> pool ->
//               dense128 -> dense(classes)); a configurable surrogate, not a
//               reimplementation of the original publication.
//
// The head activation is softmax or sigmoid per the loss configuration.
#pragma once

#include <cmath>
#include <map>
#include <string>

#include "tipstate/image.hpp"
#include "tipstate/network.hpp"
#include "tipstate/rng.hpp"

namespace tipstate {

enum class HeadActivation { Softmax, Sigmoid };

inline const char* head_activation_name(HeadActivation h) {
    return h == HeadActivation::Softmax ? "softmax" : "sigmoid";
}

inline HeadActivation head_activation_from_name(const std::string& s) {
    if (s == "softmax") return HeadActivation::Softmax;
    if (s == "sigmoid") return HeadActivation::Sigmoid;
    fail(ErrorCode::BadConfig, "unknown head activation '" + s + "'");
}

namespace detail {

// He-uniform: U(-sqrt(6/fan_in), +sqrt(6/fan_in)). Biases stay zero.
template <typename T>
void he_uniform(T* data, std::size_t n, int fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < n; ++i) data[i] = T(rng.uniform(-limit, limit));
}

template <typename T>
void init_params(NetworkGraph<T>& net, std::uint64_t seed) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        Rng rng(derive_seed(seed, net.architecture_id + "/layer", i));
        if (auto* conv = std::get_if<Conv2D<T>>(&net.layers[i])) {
            he_uniform(conv->w.v.data(), conv->w.size(),
                       conv->in_ch * conv->kernel * conv->kernel, rng);
        } else if (auto* dense = std::get_if<Dense<T>>(&net.layers[i])) {
            he_uniform(dense->w.data(), dense->w.size(), dense->in_features, rng);
        }
    }
}

template <typename T>
void push_head_activation(NetworkGraph<T>& net, HeadActivation head) {
    if (head == HeadActivation::Softmax)
        net.layers.push_back(Softmax{});
    else
        net.layers.push_back(Sigmoid{});
}

template <typename T>
void set_common_hyperparams(NetworkGraph<T>& net, HeadActivation head, std::uint64_t seed) {
    net.hyperparams["classes"] = std::to_string(net.num_classes);
    net.hyperparams["side"] = std::to_string(net.input_side);
    net.hyperparams["head"] = head_activation_name(head);
    net.hyperparams["init_seed"] = std::to_string(seed);
}

}  // namespace detail

template <typename T = double>
NetworkGraph<T> build_squeezenet_like(int num_classes, int input_side = 128,
                                      HeadActivation head = HeadActivation::Softmax,
                                      std::uint64_t seed = 0) {
    require(num_classes >= 2, ErrorCode::BadConfig, "need at least two classes");
    require(supported_side(input_side), ErrorCode::UnsupportedSize, "unsupported input side");
    NetworkGraph<T> net;
    net.architecture_id = "squeezenet";
    net.num_classes = num_classes;
    net.input_side = input_side;

    const int channels[10] = {32, 64, 64, 128, 128, 256, 256, 512, 512, 1024};
    const int strides[10] = {1, 2, 1, 2, 1, 2, 1, 2, 1, 2};
    int in_ch = 1;
    for (int i = 0; i < 10; ++i) {
        net.layers.push_back(Conv2D<T>(in_ch, channels[i], 3, strides[i]));
        net.layers.push_back(BatchNorm<T>(channels[i]));
        net.layers.push_back(Elu{});
        in_ch = channels[i];
    }
    net.layers.push_back(GlobalAvgPool{});
    net.layers.push_back(Dense<T>(1024, num_classes));
    detail::push_head_activation(net, head);
    detail::set_common_hyperparams(net, head, seed);
    detail::init_params(net, seed);
    return net;
}

template <typename T = double>
NetworkGraph<T> build_vgg_like(int num_classes, bool with_batchnorm, int input_side = 128,
                               HeadActivation head = HeadActivation::Softmax,
                               std::uint64_t seed = 0) {
    require(num_classes >= 2, ErrorCode::BadConfig, "need at least two classes");
    require(supported_side(input_side), ErrorCode::UnsupportedSize, "unsupported input side");
    NetworkGraph<T> net;
    net.architecture_id = with_batchnorm ? "vgg-bn" : "vgg";
    net.num_classes = num_classes;
    net.input_side = input_side;

    const int channels[4] = {32, 64, 128, 256};
    int in_ch = 1;
    int side = input_side;
    for (int blk = 0; blk < 4; ++blk) {
        for (int rep = 0; rep < 2; ++rep) {
            net.layers.push_back(Conv2D<T>(in_ch, channels[blk], 3, 1));
            if (with_batchnorm) net.layers.push_back(BatchNorm<T>(channels[blk]));
            net.layers.push_back(Elu{});
            in_ch = channels[blk];
        }
        net.layers.push_back(MaxPool{});
        side /= 2;
    }
    net.layers.push_back(Dense<T>(256 * side * side, 256));
    net.layers.push_back(Elu{});
    net.layers.push_back(Dense<T>(256, num_classes));
    detail::push_head_activation(net, head);
    detail::set_common_hyperparams(net, head, seed);
    detail::init_params(net, seed);
    return net;
}

template <typename T = double>
NetworkGraph<T> build_rw(int num_classes, int input_side,
                         HeadActivation head = HeadActivation::Softmax, std::uint64_t seed = 0) {
    require(num_classes >= 2, ErrorCode::BadConfig, "need at least two classes");
    require(input_side == 32 || input_side == 64 || input_side == 128, ErrorCode::UnsupportedSize,
            "rw accepts sides 32, 64, 128");
    NetworkGraph<T> net;
    net.architecture_id = "rw";
    net.num_classes = num_classes;
    net.input_side = input_side;

    net.layers.push_back(Conv2D<T>(1, 16, 3, 1));
    net.layers.push_back(Elu{});
    net.layers.push_back(MaxPool{});
    net.layers.push_back(Conv2D<T>(16, 32, 3, 1));
    net.layers.push_back(Elu{});
    net.layers.push_back(MaxPool{});
    const int side = input_side / 4;
    net.layers.push_back(Dense<T>(32 * side * side, 128));
    net.layers.push_back(Elu{});
    net.layers.push_back(Dense<T>(128, num_classes));
    detail::push_head_activation(net, head);
    detail::set_common_hyperparams(net, head, seed);
    detail::init_params(net, seed);
    return net;
}

template <typename T = double>
NetworkGraph<T> build_network(const std::string& architecture_id, int num_classes, int input_side,
                              HeadActivation head = HeadActivation::Softmax,
                              std::uint64_t seed = 0) {
    if (architecture_id == "squeezenet")
        return build_squeezenet_like<T>(num_classes, input_side, head, seed);
    if (architecture_id == "vgg") return build_vgg_like<T>(num_classes, false, input_side, head, seed);
    if (architecture_id == "vgg-bn")
        return build_vgg_like<T>(num_classes, true, input_side, head, seed);
    if (architecture_id == "rw") return build_rw<T>(num_classes, input_side, head, seed);
    fail(ErrorCode::BadConfig, "unknown architecture '" + architecture_id + "'");
}

// Structural depth: convolution, pooling, and dense layers only.
template <typename T>
int structural_layer_count(const NetworkGraph<T>& net) {
    int count = 0;
    for (const auto& layer : net.layers) {
        if (std::holds_alternative<Conv2D<T>>(layer) || std::holds_alternative<MaxPool>(layer) ||
            std::holds_alternative<Dense<T>>(layer))
            ++count;
    }
    return count;
}

// Shape-checks the layer chain by pushing one zero image through Infer mode.
template <typename T>
void validate_chain(NetworkGraph<T>& net) {
    const Mode saved = net.mode;
    net.mode = Mode::Infer;
    Tensor4<T> probe(1, 1, net.input_side, net.input_side);
    const Tensor4<T> out = net.forward(probe);
    net.mode = saved;
    require(out.c == net.num_classes && out.h == 1 && out.w == 1, ErrorCode::ShapeMismatch,
            "network head width != num_classes");
}

}  // namespace tipstate
