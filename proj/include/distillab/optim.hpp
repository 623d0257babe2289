#pragma once

// AdamW with decoupled weight decay and bias correction.

#include <cstdint>
#include <vector>

#include "distillab/tensor.hpp"

namespace distillab {

template <typename T>
class AdamW {
public:
    struct Options {
        T lr = T(1e-3);
        T beta1 = T(0.9);
        T beta2 = T(0.999);
        T eps = T(1e-8);
        T weight_decay = T(0.01);
    };

    AdamW(std::vector<Tensor<T>> params, Options opt = {}) : params_(std::move(params)), opt_(opt) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(static_cast<size_t>(params_[i].size()), T(0));
            v_[i].assign(static_cast<size_t>(params_[i].size()), T(0));
        }
    }

    // One update from the grads currently held by the parameters.  Parameters
    // whose grad buffer was never touched this step are left alone entirely.
    void step() {
        ++t_;
        T bc1 = T(1) - std::pow(opt_.beta1, static_cast<T>(t_));
        T bc2 = T(1) - std::pow(opt_.beta2, static_cast<T>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            T* pv = p.data();
            for (size_t j = 0; j < g.size(); ++j) {
                m_[i][j] = opt_.beta1 * m_[i][j] + (T(1) - opt_.beta1) * g[j];
                v_[i][j] = opt_.beta2 * v_[i][j] + (T(1) - opt_.beta2) * g[j] * g[j];
                T mhat = m_[i][j] / bc1;
                T vhat = v_[i][j] / bc2;
                pv[j] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * pv[j]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    T lr() const { return opt_.lr; }
    void set_lr(T lr) { opt_.lr = lr; }
    int64_t steps() const { return t_; }
    const std::vector<Tensor<T>>& params() const { return params_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    Options opt_;
    int64_t t_ = 0;
};

}  // namespace distillab
