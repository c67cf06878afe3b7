#include "fednnu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fednnu/error.hpp"

namespace fednnu {

GradCheckResult grad_check(const DifferentiableFn& f, const StateDict& params, const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0 && opts.eps <= 1e-2)) throw UsageError("grad_check eps must be in (0, 1e-2]");
  if (!(opts.floor > 0.0) || !std::isfinite(opts.floor)) throw UsageError("grad_check floor must be finite and > 0");
  for (const auto& [id, t] : params.entries()) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) throw UsageError("grad_check: non-finite parameter in " + id.str());
    }
  }
  auto eval = [&](const StateDict& p) {
    ValueAndGrad r = f(p);
    if (!std::isfinite(r.value)) throw NumericError("grad_check: non-finite function value");
    return r;
  };

  const ValueAndGrad base = eval(params);
  std::mt19937_64 rng(opts.seed);
  StateDict probe = params;
  GradCheckResult out;
  for (const auto& [id, t] : params.entries()) {
    const Tensor* g = base.grad.find(id);
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.samples_per_layer != 0 && opts.samples_per_layer < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.samples_per_layer);
      std::sort(idx.begin(), idx.end());
    }
    Tensor& p = *probe.find(id);
    for (std::size_t i : idx) {
      const double orig = p[i];
      p[i] = orig + opts.eps;
      const ValueAndGrad up = eval(probe);
      p[i] = orig - opts.eps;
      const ValueAndGrad down = eval(probe);
      p[i] = orig;
      const double numeric = (up.value - down.value) / (2.0 * opts.eps);
      const double analytic = g != nullptr ? (*g)[i] : 0.0;
      const double rel =
          std::abs(analytic - numeric) / std::max({opts.floor, std::abs(analytic), std::abs(numeric)});
      if (base.kink_signature && (up.kink_signature != base.kink_signature || down.kink_signature != base.kink_signature)) {
        ++out.kink_crossings;
        out.max_kink_error = std::max(out.max_kink_error, rel);
        continue;
      }
      ++out.checked;
      if (out.checked == 1 || rel > out.max_relative_error) {
        out.max_relative_error = rel;
        out.worst_layer = id;
        out.worst_index = i;
      }
    }
  }
  return out;
}

}  // namespace fednnu
