#pragma once

#include "scbn/tensor.hpp"

#include <cmath>
#include <string>

namespace scbn {

// Per-parameter Adam moments plus the shared step count.
template <class S>
struct AdamState {
    Tensor<S> m, v;
    std::int64_t t = 0;
    S lr = S(1e-3);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);

    static AdamState init(Shape shape, S lr) {
        AdamState st;
        st.m = Tensor<S>::zeros(shape);
        st.v = Tensor<S>::zeros(shape);
        st.lr = lr;
        return st;
    }
};

// One bias-corrected Adam update, in place. `name` only labels errors.
template <class S>
void adam_step(Tensor<S>& param, const Tensor<S>& grad, AdamState<S>& state,
               const std::string& name = "param") {
    require(param.shape == grad.shape && param.shape == state.m.shape,
            "adam_step: shape mismatch for " + name);
    if (!grad.all_finite())
        throw NumericError("adam_step: non-finite gradient for " + name);
    state.t += 1;
    state.m.data = state.beta1 * state.m.data + (S(1) - state.beta1) * grad.data;
    state.v.data = state.beta2 * state.v.data + (S(1) - state.beta2) * grad.data.square();
    const S bc1 = S(1) - std::pow(state.beta1, S(state.t));
    const S bc2 = S(1) - std::pow(state.beta2, S(state.t));
    param.data -= state.lr * (state.m.data / bc1) /
                  ((state.v.data / bc2).sqrt() + state.eps);
}

}  // namespace scbn
