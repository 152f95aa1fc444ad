#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "ufcmil/autodiff.hpp"
#include "ufcmil/gradcheck.hpp"
#include "ufcmil/kernels.hpp"

using namespace ufcmil;
using doctest::Approx;

namespace {

template <class T = double>
BasicTensor<T> row(std::initializer_list<T> v) {
  return BasicTensor<T>({1, v.size()}, std::vector<T>(v));
}

}  // namespace

TEST_CASE("elementwise activations") {
  Tape<double> t;
  auto r = ad::relu(t.constant(row({-0.3, 0.0, 1.2}))).value();
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 1.2);
  CHECK(ad::sigmoid(t.constant(row({0.0}))).value()[0] == 0.5);
  CHECK(ad::elu(t.constant(row({-1.0}))).value()[0] == Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
  CHECK(ad::elu(t.constant(row({-1.0}))).value()[0] == Approx(-0.63212).epsilon(1e-5));
}

TEST_CASE("matmul") {
  Tape<double> t;
  auto m = BasicTensor<double>::matrix(2, 2, {1, 2, 3, 4});
  auto p = ad::matmul(t.constant(BasicTensor<double>::identity(2)), t.constant(m)).value();
  CHECK(p == m);
  auto c = ad::matmul(t.constant(m), t.constant(BasicTensor<double>::matrix(2, 1, {1, 1}))).value();
  CHECK(c[0] == 3.0);
  CHECK(c[1] == 7.0);
  const std::size_t k = 37;
  auto s = ad::matmul(t.constant(BasicTensor<double>({1, k}, 1.0)),
                      t.constant(BasicTensor<double>({k, 1}, 1.0)))
               .value();
  CHECK(s.item() == double(k));
  CHECK_THROWS_AS(ad::matmul(t.constant(m), t.constant(BasicTensor<double>({3, 1}))), ShapeError);
}

TEST_CASE("softmax and max") {
  Tape<double> t;
  auto u = ad::softmax_rows(t.constant(row({0.0, 0.0}))).value();
  CHECK(u[0] == 0.5);
  CHECK(u[1] == 0.5);
  auto s = ad::softmax_rows(t.constant(row({1.0, 2.0, 3.0}))).value();
  CHECK(s[0] == Approx(0.09003).epsilon(1e-4));
  CHECK(s[1] == Approx(0.24473).epsilon(1e-4));
  CHECK(s[2] == Approx(0.66524).epsilon(1e-4));

  auto x = t.leaf(BasicTensor<double>({3, 1}, std::vector<double>{0.2, 0.9, 0.9}), true);
  auto mx = ad::max_axis(x, 0);
  CHECK(mx.value().item() == 0.9);
  t.backward(ad::sum_all(mx));
  auto g = t.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("structural ops") {
  Tape<double> t;
  auto v = BasicTensor<double>::matrix(2, 2, {1, 2, 3, 4});
  auto rep = ad::repeat_rows(t.constant(v), 2).value();
  CHECK(rep == BasicTensor<double>::matrix(4, 2, {1, 2, 1, 2, 3, 4, 3, 4}));

  int calls = 0;
  auto drop = ad::dropout(t.constant(v), 0.5, false, [&] { ++calls; return 0.0; }).value();
  CHECK(drop == v);
  CHECK(calls == 0);

  auto cat = ad::concat_rows<double>({t.constant(v), t.constant(row({5.0, 6.0}))}).value();
  CHECK(cat == BasicTensor<double>::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_AS(ad::concat_rows<double>({t.constant(v), t.constant(row({5.0}))}), ShapeError);
}

TEST_CASE("dropout in train mode scales survivors") {
  Tape<double> t;
  std::vector<double> draws{0.1, 0.9, 0.6, 0.2};
  std::size_t i = 0;
  auto out = ad::dropout(t.constant(row({1.0, 1.0, 1.0, 1.0})), 0.5, true,
                         [&] { return draws[i++]; })
                 .value();
  CHECK(out == row({0.0, 2.0, 2.0, 0.0}));
}

TEST_CASE("reverse mode examples") {
  Tape<double> t;
  auto x = t.leaf(row({1.0, 2.0}), true);
  t.backward(ad::sum_all(x));
  CHECK(t.grad(x) == row({1.0, 1.0}));

  t.backward(ad::sum_all(ad::mul(x, x)));
  CHECK(t.grad(x) == row({2.0, 4.0}));

  Tape<double> t2;
  auto y = t2.leaf(BasicTensor<double>({2, 1}, std::vector<double>{3.0, 5.0}), true);
  t2.backward(ad::sum_all(ad::max_axis(y, 0)));
  CHECK(t2.grad(y)[0] == 0.0);
  CHECK(t2.grad(y)[1] == 1.0);
}

TEST_CASE("finite difference checker") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  BasicTensor<double> x({3, 4});
  for (auto& v : x.data()) v = n(rng);
  const double err = finite_diff_check<double>(
      [](Tape<double>&, Var<double> v) { return ad::sum_all(ad::mul(v, v)); }, x, 1e-3);
  CHECK(err < 1e-4);

  const double flat = finite_diff_check<double>(
      [](Tape<double>& tape, Var<double>) {
        return tape.constant(BasicTensor<double>::scalar(4.0));
      },
      x, 1e-3);
  CHECK(flat == 0.0);
}

TEST_CASE("every differentiable op matches central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  BasicTensor<double> a({3, 4}), b({4, 2}), c({3, 4});
  for (auto* t : {&a, &b, &c})
    for (auto& v : t->data()) v = u(rng);
  const std::vector<std::vector<std::size_t>> adj{{1}, {0, 2}, {1}};

  MultiTensorFn<double> f = [&](Tape<double>&, std::span<const Var<double>> v) {
    Var<double> h = ad::tanh(ad::matmul(v[0], v[1]));
    h = ad::add(h, ad::sigmoid(ad::matmul(ad::elu(v[2]), v[1])));
    h = ad::softmax_rows(h);
    Var<double> s = ad::slice_cols(ad::matmul(v[2], v[1]), 0, 1);
    Var<double> agg = ad::neighbor_aggregate(s, v[0], adj);
    Var<double> rep = ad::repeat_rows(ad::slice_rows(agg, 0, 2), 2);
    Var<double> tail = ad::mean_axis(ad::exp(ad::scale(rep, 0.3)), 0);
    Var<double> lg = ad::log(ad::add_scalar(h, 0.5));
    return ad::add(ad::sum_all(ad::mul(lg, lg)),
                   ad::sum_all(ad::concat_cols<double>({tail, ad::transpose(ad::sum_axis(h, 1))})));
  };
  std::vector<BasicTensor<double>> inputs{a, b, c};
  const auto report = finite_diff_check<double>(f, inputs, 1e-5);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("tensor construction errors") {
  CHECK_THROWS_AS(BasicTensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tape<double> t;
  auto x = t.leaf(row({1.0, 2.0}), true);
  CHECK_THROWS_AS(t.backward(x), ShapeError);
  CHECK_THROWS_AS(t.leaf(row<double>({NAN})), NumericError);
}

TEST_CASE("parallel kernels reproduce the serial reference bit for bit") {
  const int saved = kernels::max_threads();
  kernels::set_num_threads(4);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n;
  for (auto [m, k, p] : {std::array<std::size_t, 3>{1, 7, 3}, {17, 33, 9}, {96, 80, 64},
                         {130, 64, 129}}) {
    std::vector<float> a(m * k), b(k * p), bt(p * k), at(k * m);
    for (auto& v : a) v = n(rng);
    for (auto& v : b) v = n(rng);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < p; ++j) bt[j * k + i] = b[i * p + j];
    std::vector<float> ref(m * p), par(m * p);

    kernels::serial::gemm_nn<float>(m, k, p, a, b, ref);
    kernels::parallel::gemm_nn<float>(m, k, p, a, b, par);
    CHECK(ref == par);
    kernels::serial::gemm_nt<float>(m, k, p, a, bt, ref);
    kernels::parallel::gemm_nt<float>(m, k, p, a, bt, par);
    CHECK(ref == par);
    kernels::serial::gemm_tn<float>(m, k, p, at, b, ref);
    kernels::parallel::gemm_tn<float>(m, k, p, at, b, par);
    CHECK(ref == par);
  }
  kernels::set_num_threads(saved);
}
