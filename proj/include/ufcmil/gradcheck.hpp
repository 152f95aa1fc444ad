#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ufcmil/autodiff.hpp"

namespace ufcmil {

struct GradCheckReport {
  double max_rel_error = 0.0;
  /// Worst relative error per input tensor.
  std::vector<double> per_input;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<BasicTensor<double>> analytic;
};

/// Relative error with denominator max(|a|, |n|, 1e-8).
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Scalar function of several tensors, built on a fresh tape.
template <class T>
using MultiTensorFn = std::function<Var<T>(Tape<T>&, std::span<const Var<T>>)>;

/// Compares reverse-mode gradients of `f` at `inputs` with central
/// differences (f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h, element by element.
template <class T>
GradCheckReport finite_diff_check(const MultiTensorFn<T>& f,
                                  std::vector<BasicTensor<T>> inputs, double h) {
  std::vector<BasicTensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
    Var<T> loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  auto eval = [&]() {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x, false));
    return double(f(tape, vars).value().item());
  };

  GradCheckReport report;
  report.per_input.assign(inputs.size(), 0.0);
  for (const auto& a : analytic) report.analytic.push_back(a.template cast<double>());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
      const T saved = inputs[t][i];
      inputs[t][i] = static_cast<T>(saved + h);
      const double up = eval();
      inputs[t][i] = static_cast<T>(saved - h);
      const double down = eval();
      inputs[t][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[t][i], numeric);
      report.per_input[t] = std::max(report.per_input[t], err);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = t;
        report.worst_index = i;
        report.worst_analytic = analytic[t][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

/// Single-input convenience overload returning the max relative error.
template <class T>
double finite_diff_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& f,
                         const BasicTensor<T>& x, double h) {
  MultiTensorFn<T> g = [&](Tape<T>& tape, std::span<const Var<T>> vars) {
    return f(tape, vars[0]);
  };
  return finite_diff_check<T>(g, {x}, h).max_rel_error;
}

}  // namespace ufcmil
