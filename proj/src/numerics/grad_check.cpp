#include "masktab/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "masktab/errors.hpp"

namespace masktab::num {

namespace {

double evaluate(const LossBuilder& f) {
  Tape tape;
  const double v = f(tape).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckResult grad_check_detailed(const LossBuilder& f, ParamStore& params,
                                    const std::vector<std::string>& names, double step) {
  const std::vector<std::string> targets = names.empty() ? params.names() : names;
  params.zero_grad();
  {
    Tape tape;
    const Var loss = f(tape);
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss evaluated to a non-finite value");
    tape.backward(loss);
  }

  GradCheckResult result;
  for (const auto& name : targets) {
    Tensor& p = params.at(name);
    const std::vector<double> analytic = p.grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values[i];
      p.values[i] = saved + step;
      const double plus = evaluate(f);
      p.values[i] = saved - step;
      const double minus = evaluate(f);
      p.values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      const double err = std::abs(analytic[i] - numeric) / denom;
      ++result.entries_checked;
      if (err > result.max_relative_error || result.worst_parameter.empty()) {
        result.max_relative_error = err;
        result.worst_parameter = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace masktab::num
