// NetworkGraph: an ordered list of layers with Train/Infer mode, a forward
// trace for backpropagation, and flat parameter/gradient views for the
// optimizers and the checkpoint writer.
#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "tipstate/common.hpp"
#include "tipstate/layers.hpp"
#include "tipstate/tensor.hpp"

namespace tipstate {

template <typename T>
using LayerVariant =
    std::variant<Conv2D<T>, BatchNorm<T>, Elu, Sigmoid, Softmax, MaxPool, GlobalAvgPool, Dense<T>>;

template <typename T>
struct ParamView {
    std::string name;
    T* data = nullptr;
    T* grad = nullptr;
    std::size_t size = 0;
};

// Non-trained state that still belongs in checkpoints (batchnorm running stats).
template <typename T>
struct StatView {
    std::string name;
    T* data = nullptr;
    std::size_t size = 0;
};

template <typename T>
struct NetworkGraph {
    std::string architecture_id;
    std::map<std::string, std::string> hyperparams;
    int num_classes = 0;
    int input_side = 0;
    Mode mode = Mode::Train;

    std::vector<LayerVariant<T>> layers;

    Tensor4<T> forward(const Tensor4<T>& x) {
        Tensor4<T> cur = x;
        if (mode == Mode::Train) trace_.clear();
        for (auto& layer : layers) {
            if (mode == Mode::Train) trace_.push_back(cur);
            cur = std::visit(
                [&](auto& l) -> Tensor4<T> {
                    using L = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<L, BatchNorm<T>>)
                        return l.forward(cur, mode);
                    else
                        return l.forward(cur);
                },
                layer);
        }
        return cur;
    }

    // Backpropagate from d(loss)/d(output); returns d(loss)/d(input).
    // Parameter gradients land in each layer's grad buffers.
    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        require(mode == Mode::Train, ErrorCode::ModeError, "backward requires Train mode");
        require(trace_.size() == layers.size(), ErrorCode::ModeError,
                "backward without a matching forward");
        Tensor4<T> g = grad_out;
        for (std::size_t i = layers.size(); i-- > 0;) {
            g = std::visit([&](auto& l) -> Tensor4<T> { return l.backward(trace_[i], g); },
                           layers[i]);
        }
        return g;
    }

    std::vector<ParamView<T>> params() {
        std::vector<ParamView<T>> out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string prefix = "layer" + std::to_string(i);
            std::visit(
                [&](auto& l) {
                    using L = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<L, Conv2D<T>>) {
                        out.push_back({prefix + "/conv_w", l.w.v.data(), l.gw.v.data(),
                                       l.w.size()});
                        out.push_back({prefix + "/conv_b", l.b.data(), l.gb.data(), l.b.size()});
                    } else if constexpr (std::is_same_v<L, BatchNorm<T>>) {
                        out.push_back({prefix + "/bn_gamma", l.gamma.data(), l.ggamma.data(),
                                       l.gamma.size()});
                        out.push_back(
                            {prefix + "/bn_beta", l.beta.data(), l.gbeta.data(), l.beta.size()});
                    } else if constexpr (std::is_same_v<L, Dense<T>>) {
                        out.push_back({prefix + "/dense_w", l.w.data(), l.gw.data(), l.w.size()});
                        out.push_back({prefix + "/dense_b", l.b.data(), l.gb.data(), l.b.size()});
                    }
                },
                layers[i]);
        }
        return out;
    }

    std::vector<StatView<T>> running_stats() {
        std::vector<StatView<T>> out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (auto* bn = std::get_if<BatchNorm<T>>(&layers[i])) {
                const std::string prefix = "layer" + std::to_string(i);
                out.push_back({prefix + "/bn_mean", bn->running_mean.data(),
                               bn->running_mean.size()});
                out.push_back(
                    {prefix + "/bn_var", bn->running_var.data(), bn->running_var.size()});
            }
        }
        return out;
    }

    std::size_t param_count() {
        std::size_t total = 0;
        for (const auto& p : params()) total += p.size;
        return total;
    }

private:
    std::vector<Tensor4<T>> trace_;
};

}  // namespace tipstate
