#include "ccv/optim.hpp"

#include <cmath>
#include <string>

namespace ccv {

namespace {

template <typename T>
void ensure_state(const std::vector<Tensor<T>*>& params, AdamState<T>& st) {
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i]->numel(), T(0));
      st.v[i].assign(params[i]->numel(), T(0));
    }
    return;
  }
  if (st.m.size() != params.size())
    throw std::invalid_argument("adam_step: state holds " + std::to_string(st.m.size()) +
                                " moment buffers for " + std::to_string(params.size()) +
                                " parameters");
  for (size_t i = 0; i < params.size(); ++i)
    if (static_cast<int64_t>(st.m[i].size()) != params[i]->numel())
      throw std::invalid_argument("adam_step: parameter " + std::to_string(i) +
                                  " shape does not match its moment buffer");
}

template <typename T>
void step_impl(const std::vector<Tensor<T>*>& params,
               const std::vector<const std::vector<T>*>& grads, AdamState<T>& st, T lr,
               T beta1, T beta2, T eps) {
  ensure_state(params, st);
  st.step += 1;
  const T bc1 = T(1) - std::pow(beta1, static_cast<T>(st.step));
  const T bc2 = T(1) - std::pow(beta2, static_cast<T>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const std::vector<T>* g = grads[i];
    if (g && static_cast<int64_t>(g->size()) != p.numel())
      throw std::invalid_argument("adam_step: gradient " + std::to_string(i) +
                                  " has length " + std::to_string(g->size()) +
                                  ", parameter has " + std::to_string(p.numel()));
    auto& m = st.m[i];
    auto& v = st.v[i];
    T* pd = p.ptr();
    const int64_t n = p.numel();
    for (int64_t j = 0; j < n; ++j) {
      const T gj = g ? (*g)[j] : T(0);
      m[j] = beta1 * m[j] + (T(1) - beta1) * gj;
      v[j] = beta2 * v[j] + (T(1) - beta2) * gj * gj;
      const T mh = m[j] / bc1;
      const T vh = v[j] / bc2;
      pd[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

}  // namespace

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& state, T lr, T beta1,
               T beta2, T eps) {
  std::vector<const std::vector<T>*> grads(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    grads[i] = params[i]->has_grad() ? &params[i]->grad() : nullptr;
  step_impl(params, grads, state, lr, beta1, beta2, eps);
}

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params,
               const std::vector<const std::vector<T>*>& grads, AdamState<T>& state, T lr,
               T beta1, T beta2, T eps) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(params.size()) +
                                " parameters");
  step_impl(params, grads, state, lr, beta1, beta2, eps);
}

template void adam_step<float>(const std::vector<Tensor<float>*>&, AdamState<float>&, float,
                               float, float, float);
template void adam_step<double>(const std::vector<Tensor<double>*>&, AdamState<double>&,
                                double, double, double, double);
template void adam_step<float>(const std::vector<Tensor<float>*>&,
                               const std::vector<const std::vector<float>*>&,
                               AdamState<float>&, float, float, float, float);
template void adam_step<double>(const std::vector<Tensor<double>*>&,
                                const std::vector<const std::vector<double>*>&,
                                AdamState<double>&, double, double, double, double);

}  // namespace ccv
