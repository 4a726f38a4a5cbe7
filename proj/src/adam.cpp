#include "oescn/adam.hpp"

#include <cmath>

namespace oescn {

AdamState AdamState::for_shapes(
    const std::vector<std::vector<std::size_t>>& shapes,
    const AdamConfig& cfg) {
  AdamState st;
  st.cfg = cfg;
  st.m.reserve(shapes.size());
  st.v.reserve(shapes.size());
  for (const auto& s : shapes) {
    st.m.emplace_back(s);
    st.v.emplace_back(s);
  }
  return st;
}

void adam_update(Grid& param, const Grid& grad, Grid& m, Grid& v,
                 std::uint64_t t, const AdamConfig& cfg) {
  if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v))
    throw InvalidArgument("adam: parameter/gradient/state shape mismatch");
  if (t < 1) throw InvalidArgument("adam: step counter must be >= 1");
  if (!grad.all_finite())
    throw NumericError("adam: non-finite gradient");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void adam_step(const std::vector<Grid*>& params,
               const std::vector<const Grid*>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw InvalidArgument("adam: parameter/state count mismatch");
  ++state.step_count;
  for (std::size_t i = 0; i < params.size(); ++i)
    adam_update(*params[i], *grads[i], state.m[i], state.v[i],
                state.step_count, state.cfg);
}

}  // namespace oescn
