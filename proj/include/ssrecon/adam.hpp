#pragma once

#include <vector>

#include "array.hpp"

// Standard bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8), one moment
// pair per parameter tensor, applied in a fixed parameter order.

namespace ssr::train {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<Array> m, v;

  void init(const std::vector<Array*>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const Array* p : params) {
      m.emplace_back(p->shape());
      v.emplace_back(p->shape());
    }
  }

  void step(const std::vector<Array*>& params, const std::vector<const Array*>& grads,
            double lr) {
    SSR_CHECK(params.size() == m.size() && grads.size() == m.size(),
              "adam: parameter list changed size");
    for (size_t k = 0; k < grads.size(); ++k)
      SSR_CHECK(grads[k]->all_finite(), "adam: non-finite gradient in tensor " << k);
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t k = 0; k < params.size(); ++k) {
      Array& p = *params[k];
      const Array& g = *grads[k];
      SSR_CHECK(p.same_shape(g), "adam: grad shape mismatch for tensor " << k);
      Array& mk = m[k];
      Array& vk = v[k];
      for (int64_t i = 0; i < p.numel(); ++i) {
        mk[i] = beta1 * mk[i] + (1.0 - beta1) * g[i];
        vk[i] = beta2 * vk[i] + (1.0 - beta2) * g[i] * g[i];
        double mh = mk[i] / bc1;
        double vh = vk[i] / bc2;
        p[i] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

}  // namespace ssr::train
