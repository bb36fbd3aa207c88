#pragma once

// AdamW with decoupled weight decay and bias correction.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sphlat/nn.hpp"

namespace sphlat {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamW {
  public:
    AdamW(ParamRefs params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->value.size(), 0.0);
            v_[i].assign(params_[i]->value.size(), 0.0);
        }
    }

    // One update. Gradients are consumed but left intact for inspection.
    void step() {
        for (Parameter* p : params_)
            if (!p->has_grad)
                throw std::invalid_argument("adamw: missing gradient for parameter '" + p->name + "'");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                const double g = p.grad[j];
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                p.value[j] -= cfg_.lr * cfg_.weight_decay * p.value[j];
                p.value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    std::uint64_t step_count() const { return step_count_; }
    void set_step_count(std::uint64_t s) { step_count_ = s; }
    const ParamRefs& params() const { return params_; }
    std::vector<Vec>& first_moments() { return m_; }
    std::vector<Vec>& second_moments() { return v_; }
    const AdamWConfig& config() const { return cfg_; }

  private:
    ParamRefs params_;
    AdamWConfig cfg_;
    std::uint64_t step_count_ = 0;
    std::vector<Vec> m_;
    std::vector<Vec> v_;
};

}  // namespace sphlat
