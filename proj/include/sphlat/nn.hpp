#pragma once

// Small trainable building blocks on top of the tape: linear layers and MLPs.

#include <string>
#include <vector>

#include "sphlat/rng.hpp"
#include "sphlat/tensor.hpp"

namespace sphlat {

using ParamRefs = std::vector<Parameter*>;

struct LinearLayer {
    Parameter weight;
    Parameter bias;

    LinearLayer() = default;
    LinearLayer(const std::string& name, std::size_t in, std::size_t out, RngStream& rng,
                double weight_scale = 1.0)
        : weight(name + ".w", {in, out}), bias(name + ".b", {out}) {
        const double s = weight_scale / std::sqrt(static_cast<double>(in));
        for (double& v : weight.value) v = s * rng.normal();
    }

    Tensor forward(Tape& t, Tensor x) const {
        auto& self = const_cast<LinearLayer&>(*this);
        return affine(x, t.param(self.weight), t.param(self.bias));
    }

    void collect(ParamRefs& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// Stack of affine layers with SiLU between them; the last layer is linear.
struct Mlp {
    std::vector<LinearLayer> layers;

    Mlp() = default;
    Mlp(const std::string& name, const std::vector<std::size_t>& widths, RngStream& rng,
        double out_scale = 1.0) {
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            const bool last = (i + 2 == widths.size());
            layers.emplace_back(name + ".l" + std::to_string(i), widths[i], widths[i + 1], rng,
                                last ? out_scale : 1.0);
        }
    }

    Tensor forward(Tape& t, Tensor x) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            x = layers[i].forward(t, x);
            if (i + 1 < layers.size()) x = silu(x);
        }
        return x;
    }

    void collect(ParamRefs& out) {
        for (auto& l : layers) l.collect(out);
    }
};

inline void zero_grads(const ParamRefs& params) {
    for (Parameter* p : params) p->zero_grad();
}

}  // namespace sphlat
