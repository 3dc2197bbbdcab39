#include "jacmatch/nn.hpp"

#include <algorithm>
#include <cmath>

namespace jm::nn {

using namespace jm::ad;

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::global_avg_pool: return "global_avg_pool";
        case LayerKind::softmax_t: return "softmax_t";
    }
    return "?";
}

Tensor init_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(-a, a);
    return t;
}

Layer Layer::dense(int in, int out, Rng& rng) {
    Layer l{LayerKind::dense, {}, 1.0};
    l.params.push_back(init_uniform({out, in}, in, out, rng));
    l.params.push_back(Tensor::zeros({out}));
    return l;
}

Layer Layer::conv(int cin, int cout, Rng& rng) {
    Layer l{LayerKind::conv2d, {}, 1.0};
    l.params.push_back(init_uniform({cout, cin, 3, 3}, cin * 9, cout * 9, rng));
    l.params.push_back(Tensor::zeros({cout}));
    return l;
}

std::vector<std::pair<std::string, Tensor>> Network::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    const char* pname[2] = {"W", "b"};
    for (std::size_t i = 0; i < trunk.size(); ++i) {
        for (std::size_t p = 0; p < trunk[i].params.size(); ++p) {
            out.emplace_back(strcat("trunk.", i, ".", pname[p]), trunk[i].params[p]);
        }
    }
    for (std::size_t i = 0; i < heads.size(); ++i) {
        for (std::size_t p = 0; p < heads[i].params.size(); ++p) {
            out.emplace_back(strcat("head.", i, ".", pname[p]), heads[i].params[p]);
        }
    }
    return out;
}

std::vector<Tensor> Network::param_list() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

void Network::set_params(const std::vector<Tensor>& values) {
    std::size_t idx = 0;
    auto assign = [&](Layer& layer) {
        for (Tensor& p : layer.params) {
            JM_CHECK(idx < values.size(), "set_params: too few tensors");
            JM_CHECK(values[idx].shape() == p.shape(), "set_params: shape mismatch at index ", idx);
            p = values[idx].clone();
            ++idx;
        }
    };
    for (Layer& l : trunk) assign(l);
    for (Layer& l : heads) assign(l);
    JM_CHECK(idx == values.size(), "set_params: too many tensors");
}

Network Network::clone() const {
    Network out = *this;
    for (Layer& l : out.trunk)
        for (Tensor& p : l.params) p = p.clone();
    for (Layer& l : out.heads)
        for (Tensor& p : l.params) p = p.clone();
    return out;
}

std::vector<Tensor> bind_params(const Network& net, Tape& tape) {
    std::vector<Tensor> bound;
    for (const Tensor& p : net.param_list()) bound.push_back(tape.variable(p));
    return bound;
}

namespace {

Tensor apply_dense(const Tensor& w, const Tensor& b, Tensor x) {
    if (x.ndim() > 1) x = reshape(x, {static_cast<int>(x.numel())});
    JM_CHECK(w.shape()[1] == x.shape()[0], "dense: input length ", x.shape()[0],
             " does not match weight ", shape_str(w.shape()));
    return add(matmul(w, x), b);
}

Tensor apply_conv(const Tensor& w, const Tensor& b, const Tensor& x) {
    Tensor y = conv2d(x, w);
    // per-channel bias as an outer product so gradients reach b
    const int f = w.shape()[0];
    const int h = y.shape()[1];
    const int wd = y.shape()[2];
    Tensor plane = matmul(reshape(b, {f, 1}), Tensor::ones({1, h * wd}));
    return add(y, reshape(plane, {f, h, wd}));
}

}  // namespace

ForwardResult forward(const Network& net, const Tensor& x, Head head,
                      const std::vector<Tensor>* bound, ActivationPattern* pattern_out) {
    JM_CHECK(!net.trunk.empty() || !net.heads.empty(), "forward: empty network");
    JM_CHECK(net.head_count() >= 1 && net.head_count() <= 2, "forward: network must have 1 or 2 heads");
    if (net.head_count() == 1) {
        JM_CHECK(head == Head::only || head == Head::source,
                 "forward: unknown head '", head == Head::target ? "target" : "?",
                 "' on a one-headed network");
    } else {
        JM_CHECK(head != Head::only, "forward: two-headed network requires an explicit head");
    }
    JM_CHECK(x.shape() == net.input_shape, "forward: input shape ", shape_str(x.shape()),
             " does not match network input ", shape_str(net.input_shape));
    if (bound != nullptr) {
        JM_CHECK(bound->size() == net.param_list().size(), "forward: bound parameter count mismatch");
    }

    ForwardResult result;
    result.taps.resize(net.feature_taps.size());

    std::size_t pidx = 0;  // walks param_list order
    auto take_params = [&](const Layer& layer, Tensor& w, Tensor& b) {
        if (bound != nullptr) {
            w = (*bound)[pidx];
            b = (*bound)[pidx + 1];
        } else {
            w = layer.params[0];
            b = layer.params[1];
        }
        pidx += 2;
    };

    Tensor cur = x;
    for (std::size_t li = 0; li < net.trunk.size(); ++li) {
        const Layer& layer = net.trunk[li];
        switch (layer.kind) {
            case LayerKind::dense: {
                Tensor w, b;
                take_params(layer, w, b);
                cur = apply_dense(w, b, cur);
                break;
            }
            case LayerKind::conv2d: {
                Tensor w, b;
                take_params(layer, w, b);
                cur = apply_conv(w, b, cur);
                break;
            }
            case LayerKind::relu: {
                if (pattern_out != nullptr) {
                    for (double v : cur.data()) pattern_out->relu_signs.push_back(v > 0.0 ? 1 : 0);
                }
                cur = relu(cur);
                break;
            }
            case LayerKind::sigmoid:
                cur = sigmoid(cur);
                break;
            case LayerKind::maxpool: {
                std::vector<int> indices;
                cur = maxpool2d(cur, 2, 2, pattern_out != nullptr ? &indices : nullptr);
                if (pattern_out != nullptr) {
                    pattern_out->pool_argmax.insert(pattern_out->pool_argmax.end(),
                                                    indices.begin(), indices.end());
                }
                break;
            }
            case LayerKind::global_avg_pool:
                cur = global_avg_pool(cur);
                break;
            case LayerKind::softmax_t:
                cur = softmax_t(cur, layer.temperature);
                break;
        }
        for (std::size_t t = 0; t < net.feature_taps.size(); ++t) {
            if (net.feature_taps[t] == static_cast<int>(li)) result.taps[t] = cur;
        }
    }

    const int head_index = (net.head_count() == 1 || head == Head::source) ? 0 : 1;
    // parameter indices of the heads follow the trunk's in param_list order
    for (int h = 0; h < head_index; ++h) pidx += net.heads[static_cast<std::size_t>(h)].params.size();
    const Layer& head_layer = net.heads[static_cast<std::size_t>(head_index)];
    JM_CHECK(head_layer.kind == LayerKind::dense, "forward: heads must be dense layers");
    Tensor w, b;
    take_params(head_layer, w, b);
    result.logits = apply_dense(w, b, cur);
    return result;
}

ActivationPattern activation_pattern(const Network& net, const Tensor& x) {
    for (const Layer& l : net.trunk) {
        JM_CHECK(!l.smooth(), "activation_pattern: network contains smooth nonlinearity (",
                 layer_kind_name(l.kind), ") in the trunk");
    }
    ActivationPattern pattern;
    Head head = net.head_count() == 1 ? Head::only : Head::source;
    (void)forward(net, x.detached(), head, nullptr, &pattern);
    return pattern;
}

Network permute_hidden(const Network& net, int trunk_index, const std::vector<int>& perm) {
    JM_CHECK(trunk_index >= 0 && trunk_index < static_cast<int>(net.trunk.size()),
             "permute_hidden: trunk index ", trunk_index, " out of range");
    const Layer& producer = net.trunk[static_cast<std::size_t>(trunk_index)];
    JM_CHECK(!producer.params.empty(), "permute_hidden: layer ", trunk_index,
             " (", layer_kind_name(producer.kind), ") has no parameters");
    const int width = producer.params[0].shape()[0];
    JM_CHECK(static_cast<int>(perm.size()) == width, "permute_hidden: permutation length ",
             perm.size(), " does not match layer width ", width);
    {
        std::vector<char> seen(static_cast<std::size_t>(width), 0);
        for (int p : perm) {
            JM_CHECK(p >= 0 && p < width && !seen[static_cast<std::size_t>(p)],
                     "permute_hidden: not a bijection");
            seen[static_cast<std::size_t>(p)] = 1;
        }
    }

    Network out = net.clone();

    // permute producer output rows/channels: new[i] = old[perm[i]]
    Layer& prod = out.trunk[static_cast<std::size_t>(trunk_index)];
    {
        const Tensor& old_w = net.trunk[static_cast<std::size_t>(trunk_index)].params[0];
        const Tensor& old_b = net.trunk[static_cast<std::size_t>(trunk_index)].params[1];
        auto wd = prod.params[0].mutable_data();
        auto bd = prod.params[1].mutable_data();
        const std::size_t row = static_cast<std::size_t>(old_w.numel() / width);
        for (int i = 0; i < width; ++i) {
            const auto src = old_w.data().subspan(static_cast<std::size_t>(perm[i]) * row, row);
            std::copy(src.begin(), src.end(), wd.begin() + static_cast<std::size_t>(i) * row);
            bd[static_cast<std::size_t>(i)] = old_b.data()[static_cast<std::size_t>(perm[i])];
        }
    }

    // fix up the consuming layer(s): the next parameterized trunk layer, or
    // every head if none follows. Layers in between are channelwise.
    auto permute_consumer_cols = [&](Layer& consumer, const Layer& original) {
        if (consumer.kind == LayerKind::dense) {
            const int rows = consumer.params[0].shape()[0];
            const int cols = consumer.params[0].shape()[1];
            JM_CHECK(cols == width, "permute_hidden: consumer expects ", cols,
                     " inputs but producer has ", width);
            auto dst = consumer.params[0].mutable_data();
            const auto src = original.params[0].data();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    dst[static_cast<std::size_t>(r) * cols + c] =
                        src[static_cast<std::size_t>(r) * cols + perm[static_cast<std::size_t>(c)]];
        } else if (consumer.kind == LayerKind::conv2d) {
            const int f = consumer.params[0].shape()[0];
            const int cin = consumer.params[0].shape()[1];
            JM_CHECK(cin == width, "permute_hidden: consumer expects ", cin,
                     " channels but producer has ", width);
            auto dst = consumer.params[0].mutable_data();
            const auto src = original.params[0].data();
            for (int ff = 0; ff < f; ++ff)
                for (int c = 0; c < cin; ++c)
                    for (int t = 0; t < 9; ++t)
                        dst[(static_cast<std::size_t>(ff) * cin + c) * 9 + t] =
                            src[(static_cast<std::size_t>(ff) * cin +
                                 perm[static_cast<std::size_t>(c)]) * 9 + t];
        } else {
            JM_CHECK(false, "permute_hidden: consumer has unexpected kind");
        }
    };

    for (std::size_t li = static_cast<std::size_t>(trunk_index) + 1; li < out.trunk.size(); ++li) {
        if (!out.trunk[li].params.empty()) {
            permute_consumer_cols(out.trunk[li], net.trunk[li]);
            return out;
        }
    }
    JM_CHECK(!out.heads.empty(), "permute_hidden: no consuming layer exists after index ",
             trunk_index);
    for (std::size_t h = 0; h < out.heads.size(); ++h) {
        permute_consumer_cols(out.heads[h], net.heads[h]);
    }
    return out;
}

Network make_vgg2t(Shape input_shape, int classes, Rng& rng) {
    JM_CHECK(input_shape.size() == 3, "make_vgg2t: input must be (C,H,W)");
    Network net;
    net.input_shape = input_shape;
    net.trunk.push_back(Layer::conv(input_shape[0], 8, rng));
    net.trunk.push_back(Layer::relu());
    net.trunk.push_back(Layer::maxpool());
    net.trunk.push_back(Layer::conv(8, 16, rng));
    net.trunk.push_back(Layer::relu());
    net.trunk.push_back(Layer::maxpool());
    net.trunk.push_back(Layer::global_avg_pool());
    net.heads.push_back(Layer::dense(16, classes, rng));
    net.feature_taps = {1, 4};  // after each ReLU block
    return net;
}

Network make_vgg1s(Shape input_shape, int classes, Rng& rng) {
    JM_CHECK(input_shape.size() == 3, "make_vgg1s: input must be (C,H,W)");
    Network net;
    net.input_shape = input_shape;
    net.trunk.push_back(Layer::conv(input_shape[0], 8, rng));
    net.trunk.push_back(Layer::relu());
    net.trunk.push_back(Layer::maxpool());
    net.trunk.push_back(Layer::global_avg_pool());
    net.heads.push_back(Layer::dense(8, classes, rng));
    net.feature_taps = {1, 2};  // after ReLU (full size) and after pool (half size)
    return net;
}

Network make_vgg1s_two_headed(Shape input_shape, int source_classes, int target_classes,
                              Rng& rng) {
    Network net = make_vgg1s(std::move(input_shape), source_classes, rng);
    net.heads.push_back(Layer::dense(8, target_classes, rng));
    return net;
}

Network make_mlp(int in_dim, const std::vector<int>& hidden, int classes, LayerKind activation,
                 Rng& rng) {
    JM_CHECK(activation == LayerKind::relu || activation == LayerKind::sigmoid,
             "make_mlp: activation must be relu or sigmoid");
    Network net;
    net.input_shape = {in_dim};
    int cur = in_dim;
    for (int h : hidden) {
        net.trunk.push_back(Layer::dense(cur, h, rng));
        net.trunk.push_back(activation == LayerKind::relu ? Layer::relu() : Layer::sigmoid());
        cur = h;
    }
    net.heads.push_back(Layer::dense(cur, classes, rng));
    return net;
}

}  // namespace jm::nn
