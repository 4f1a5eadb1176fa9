#pragma once

#include <functional>

#include "ops.hpp"
#include "rng.hpp"

// Central finite-difference verification of tape gradients. The FD side is
// the independent oracle for every differentiable path in the project.

namespace ssr::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t worst_index = -1;
  int n_checked = 0;
  bool pass = false;
};

using ScalarFn = std::function<Var(Tape&, Var)>;

// Compares tape gradient of f at x0 against (f(x+h)-f(x-h))/2h per element.
// Relative error uses max(|g|,|fd|) with a 1e-4 absolute floor so exact-zero
// and near-zero components do not blow up the ratio. max_probes < 0 checks
// every element; otherwise a deterministic random subset.
inline GradCheckReport grad_check(const ScalarFn& f, const Array& x0, double step, double tol,
                                  int max_probes = -1, uint64_t probe_seed = 12345) {
  GradCheckReport rep;

  Array analytic(x0.shape());
  {
    Tape tape;
    Var x = tape.leaf(x0);
    Var y = f(tape, x);
    SSR_CHECK(y.val().numel() == 1, "grad_check: f must be scalar-valued");
    tape.backward(y);
    analytic = x.grad();
  }

  std::vector<int64_t> probes;
  if (max_probes < 0 || x0.numel() <= max_probes) {
    probes.resize(static_cast<size_t>(x0.numel()));
    for (int64_t i = 0; i < x0.numel(); ++i) probes[static_cast<size_t>(i)] = i;
  } else {
    Rng rng(probe_seed);
    std::vector<int64_t> all(static_cast<size_t>(x0.numel()));
    for (int64_t i = 0; i < x0.numel(); ++i) all[static_cast<size_t>(i)] = i;
    rng.shuffle(all);
    probes.assign(all.begin(), all.begin() + max_probes);
  }

  auto eval = [&f](const Array& x) {
    Tape tape;
    Var v = tape.leaf(x);
    return f(tape, v).val().item();
  };

  for (int64_t i : probes) {
    Array xp = x0, xm = x0;
    xp[i] += step;
    xm[i] -= step;
    double fd = (eval(xp) - eval(xm)) / (2.0 * step);
    double g = analytic[i];
    double abs_err = std::fabs(g - fd);
    double scale = std::max(std::fabs(g), std::fabs(fd));
    double rel = abs_err / std::max(scale, 1e-4);
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
    }
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    ++rep.n_checked;
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace ssr::ad
