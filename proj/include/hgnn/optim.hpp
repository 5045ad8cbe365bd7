#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hgnn/errors.hpp"
#include "hgnn/numgrad.hpp"

namespace hgnn {

using numgrad::Index;

struct AdamWOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    bool operator==(const AdamWOptions&) const = default;
};

template <class T>
struct AdamWState {
    numgrad::Mat<T> m;
    numgrad::Mat<T> v;
};

/// One decoupled-weight-decay Adam update of a single tensor. `step` is 1-based.
/// A null gradient is treated as zero.
template <class T>
void adamw_step(numgrad::Mat<T>& param, const numgrad::Mat<T>* grad, AdamWState<T>& state,
                const AdamWOptions& opt, long step) {
    if (state.m.rows() != param.rows() || state.m.cols() != param.cols()) {
        state.m = numgrad::Mat<T>::Zero(param.rows(), param.cols());
        state.v = numgrad::Mat<T>::Zero(param.rows(), param.cols());
    }
    if (grad && (grad->rows() != param.rows() || grad->cols() != param.cols()))
        throw DimensionError("adamw_step: gradient " + numgrad::shape_str(grad->rows(), grad->cols()) +
                             " for parameter " + numgrad::shape_str(param.rows(), param.cols()));
    const T lr = static_cast<T>(opt.lr);
    const T decay = T(1) - lr * static_cast<T>(opt.weight_decay);
    const T b1 = static_cast<T>(opt.beta1);
    const T b2 = static_cast<T>(opt.beta2);
    const T step_size = lr / (T(1) - static_cast<T>(std::pow(opt.beta1, static_cast<double>(step))));
    const T inv_c2 = T(1) / (T(1) - static_cast<T>(std::pow(opt.beta2, static_cast<double>(step))));
    const T eps = static_cast<T>(opt.eps);
    T* p = param.data();
    T* m = state.m.data();
    T* v = state.v.data();
    const T* g = grad ? grad->data() : nullptr;
    const Index n = param.size();
    // single fused pass; a missing gradient only decays the moments
    for (Index i = 0; i < n; ++i) {
        const T gi = g ? g[i] : T(0);
        m[i] = b1 * m[i] + (T(1) - b1) * gi;
        v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
        p[i] = p[i] * decay - step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
}

/// AdamW over a fixed, ordered list of tensors.
template <class T>
class AdamW {
public:
    explicit AdamW(AdamWOptions opt) : opt_(opt) {}

    void step(std::span<numgrad::Mat<T>* const> params, std::span<const numgrad::Mat<T>* const> grads) {
        if (params.size() != grads.size()) throw ContractError("AdamW::step: params/grads length mismatch");
        if (state_.size() != params.size()) state_.assign(params.size(), {});
        ++step_;
        for (std::size_t i = 0; i < params.size(); ++i) adamw_step(*params[i], grads[i], state_[i], opt_, step_);
    }

    long steps() const { return step_; }
    const AdamWOptions& options() const { return opt_; }

private:
    AdamWOptions opt_;
    std::vector<AdamWState<T>> state_;
    long step_ = 0;
};

} // namespace hgnn
