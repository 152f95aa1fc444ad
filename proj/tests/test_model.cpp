#include <cmath>
#include <random>

#include "doctest.h"
#include "ufcmil/losses.hpp"
#include "ufcmil/model.hpp"
#include "ufcmil/model_gradcheck.hpp"
#include "ufcmil/synth.hpp"

using namespace ufcmil;
using doctest::Approx;
using Mat = BasicTensor<double>;

namespace {

Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat m({r, c});
  for (auto& v : m.data()) v = u(rng);
  return m;
}

// Plain loops, no tape.
Mat mm(const Mat& a, const Mat& b) {
  Mat c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Mat attention_oracle(const Mat& query, const Mat& ctx, const Mat& wq, const Mat& wk,
                     const Mat& wv, const Mat& wo) {
  const Mat q = mm(query, wq), k = mm(ctx, wk), v = mm(ctx, wv);
  const double scale = 1.0 / std::sqrt(double(query.cols()));
  Mat mixed({query.rows(), query.cols()});
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<double> s(k.rows());
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      for (std::size_t c = 0; c < q.cols(); ++c) s[j] += q(i, c) * k(j, c);
      s[j] *= scale;
      mx = std::max(mx, s[j]);
    }
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < k.rows(); ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) mixed(i, c) += s[j] / z * v(j, c);
  }
  Mat out = mm(mixed, wo);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += query[i];
  return out;
}

double gated_score(const Mat& z, std::size_t k, const Mat& w, const Mat& at, const Mat& as) {
  double s = 0;
  for (std::size_t i = 0; i < at.cols(); ++i) {
    double t = 0, g = 0;
    for (std::size_t j = 0; j < z.cols(); ++j) {
      t += z(k, j) * at(j, i);
      g += z(k, j) * as(j, i);
    }
    s += w[i] * std::tanh(t) / (1.0 + std::exp(-g));
  }
  return s;
}

ResolutionLevel level(std::size_t w, std::size_t h) {
  ResolutionLevel l;
  l.grid_w = w;
  l.grid_h = h;
  return l;
}

MultiResBag toy_bag(std::size_t levels, std::size_t w, std::size_t h, std::size_t d, int label,
                    std::uint64_t seed) {
  SynthConfig sc;
  sc.samples = 1;
  sc.levels = levels;
  sc.grid_w = w;
  sc.grid_h = h;
  sc.dim = d;
  sc.pos_fraction = double(label);
  sc.lesion_size = 1;
  sc.seed = seed;
  return synth_bags(sc).front();
}

}  // namespace

TEST_CASE("attention block") {
  Tape<double> t;
  const std::size_t d = 3;
  auto id = t.constant(Mat::identity(d));
  auto zero = t.constant(Mat({d, d}));
  model::AttentionVars<double> w{id, id, id, zero};
  auto x = Mat::matrix(1, 3, {0.3, -1.0, 2.0});
  auto cls = Mat::matrix(1, 3, {0.5, 0.1, -0.2});
  auto out = model::attention_block(t.constant(x), t.constant(cls), w, 1).value();
  CHECK(out == Mat::matrix(2, 3, {0.5, 0.1, -0.2, 0.3, -1.0, 2.0}));

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t dim = 4;
    Mat z = random_mat(2, dim, rng), c = random_mat(1, dim, rng);
    Mat wq = random_mat(dim, dim, rng), wk = random_mat(dim, dim, rng);
    Mat wv = random_mat(dim, dim, rng), wo = random_mat(dim, dim, rng);
    Tape<double> tape;
    model::AttentionVars<double> av{tape.constant(wq), tape.constant(wk), tape.constant(wv),
                                    tape.constant(wo)};
    auto got = model::attention_block(tape.constant(z), tape.constant(c), av, 1).value();
    Mat x2({3, dim});
    for (std::size_t j = 0; j < dim; ++j) {
      x2(0, j) = c(0, j);
      x2(1, j) = z(0, j);
      x2(2, j) = z(1, j);
    }
    const Mat want = attention_oracle(x2, x2, wq, wk, wv, wo);
    for (std::size_t i = 0; i < want.numel(); ++i) CHECK(got[i] == Approx(want[i]).epsilon(1e-12));

    // Cross attention: fused rows query the other level.
    Mat fused = random_mat(3, dim, rng), ctx = random_mat(3, dim, rng);
    auto xa = model::cross_attention(tape.constant(fused), tape.constant(ctx), av, 1).value();
    const Mat xw = attention_oracle(fused, ctx, wq, wk, wv, wo);
    for (std::size_t i = 0; i < xw.numel(); ++i) CHECK(xa[i] == Approx(xw[i]).epsilon(1e-12));
  }
}

TEST_CASE("cross attention degenerate cases") {
  Tape<double> t;
  const std::size_t d = 2;
  auto id = t.constant(Mat::identity(d));
  model::AttentionVars<double> w{id, id, id, t.constant(Mat({d, d}))};
  auto f = Mat::matrix(1, 2, {0.7, -0.4});
  CHECK(model::cross_attention(t.constant(f), t.constant(Mat::matrix(1, 2, {3.0, 1.0})), w, 1)
            .value() == f);

  std::mt19937_64 rng(2);
  Mat z = random_mat(3, d, rng), cls = random_mat(1, d, rng);
  model::AttentionVars<double> r{t.constant(random_mat(d, d, rng)), t.constant(random_mat(d, d, rng)),
                                 t.constant(random_mat(d, d, rng)), t.constant(random_mat(d, d, rng))};
  auto self = model::attention_block(t.constant(z), t.constant(cls), r, 1);
  auto x = ad::concat_rows<double>({t.constant(cls), t.constant(z)});
  CHECK(model::cross_attention(x, x, r, 1).value() == self.value());
}

TEST_CASE("TNAM weights") {
  std::mt19937_64 rng(4);
  const std::size_t d = 5;
  Mat w = random_mat(d, 1, rng), at = random_mat(d, d, rng), as = random_mat(d, d, rng);
  Mat z = random_mat(4, d, rng);

  auto single = model::tnam_weights(z, {2}, w, at, as);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == 1.0);

  Mat twin = z;
  for (std::size_t j = 0; j < d; ++j) twin(3, j) = twin(1, j);
  auto pair = model::tnam_weights(twin, {1, 3}, w, at, as);
  CHECK(pair[0] == Approx(0.5));
  CHECK(pair[1] == Approx(0.5));

  const std::vector<std::size_t> hood{0, 1, 3};
  auto got = model::tnam_weights(z, hood, w, at, as);
  std::vector<double> e;
  double zsum = 0;
  for (auto k : hood) zsum += std::exp(e.emplace_back(gated_score(z, k, w, at, as)));
  double total = 0;
  for (std::size_t i = 0; i < hood.size(); ++i) {
    CHECK(got[i] == Approx(std::exp(e[i]) / zsum).epsilon(1e-12));
    total += got[i];
  }
  CHECK(total == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("TNAM aggregation") {
  std::mt19937_64 rng(6);
  const std::size_t d = 3;
  Tape<double> t;
  model::TnamVars<double> p{t.constant(random_mat(d, 1, rng)), t.constant(random_mat(d, d, rng)),
                            t.constant(random_mat(d, d, rng))};

  Mat one = random_mat(2, d, rng);
  CHECK(model::tnam_aggregate(t.constant(one), adjacency(level(1, 1)), p).value() == one);

  Mat two = random_mat(3, d, rng);
  auto f = model::tnam_aggregate(t.constant(two), adjacency(level(2, 1)), p).value();
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(f(0, j) == two(0, j));
    CHECK(f(1, j) == Approx(two(1, j) + two(2, j)).epsilon(1e-12));
    CHECK(f(2, j) == Approx(two(2, j) + two(1, j)).epsilon(1e-12));
  }

  // 3×3 grid against the scalar score oracle.
  const auto lv = level(3, 3);
  Mat z = random_mat(10, d, rng);
  Mat patches({9, d});
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < d; ++j) patches(i, j) = z(i + 1, j);
  auto got = model::tnam_aggregate(t.constant(z), adjacency(lv), p).value();
  for (std::size_t n = 0; n < 9; ++n) {
    const auto hood = neighbors(lv, n);
    std::vector<double> e;
    double zs = 0;
    for (auto k : hood)
      zs += std::exp(e.emplace_back(gated_score(patches, k, p.w.value(), p.at.value(), p.as.value())));
    for (std::size_t j = 0; j < d; ++j) {
      double want = patches(n, j);
      for (std::size_t i = 0; i < hood.size(); ++i) want += std::exp(e[i]) / zs * patches(hood[i], j);
      CHECK(got(n + 1, j) == Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("entropy map") {
  Tape<double> t;
  auto h = model::entropy_map(t.constant(Mat::matrix(3, 2, {0.5, 0.5, 1.0, 0.0, 0.9, 0.1}))).value();
  CHECK(h[0] == Approx(1.0).epsilon(1e-12));
  CHECK(h[1] >= 0.0);
  CHECK(h[1] < 3e-5);
  CHECK(h[2] == Approx(0.46900).epsilon(1e-5));
  CHECK_THROWS(model::entropy_map(t.constant(Mat::matrix(1, 2, {0.5, 0.6}))));
}

TEST_CASE("deterministic Gumbel mask") {
  Tape<double> t;
  auto h = t.constant(Mat({3, 1}, std::vector<double>{0.7, 0.3, 0.5}));
  auto m = model::gumbel_mask(h, {0, 0, 0}, 1.0, 0.5, MaskGradient::kStraightThrough);
  CHECK(m.hard == std::vector<std::uint8_t>{1, 0, 0});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m.probability.value()[i] == Approx(h.value()[i]).epsilon(1e-12));
    CHECK(m.mask.value()[i] == double(m.hard[i]));
  }
  // Straight-through: the hard forward value carries the relaxed gradient dq/dH.
  Tape<double> g;
  auto hv = g.leaf(Mat({1, 1}, std::vector<double>{0.7}), true);
  auto mv = model::gumbel_mask(hv, {0}, 1.0, 0.5, MaskGradient::kStraightThrough);
  g.backward(ad::sum_all(mv.mask));
  CHECK(g.grad(hv)[0] == Approx(1.0).epsilon(1e-9));

  // Noise can flip a decision either way.
  auto noisy = model::gumbel_mask(h, {-5.0, 5.0, 0.0}, 1.0, 0.5, MaskGradient::kStraightThrough);
  CHECK(noisy.hard == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("feature fusion") {
  Tape<double> t;
  std::mt19937_64 rng(8);
  const std::size_t d = 2, k = 2;
  Mat coarse = random_mat(2, d, rng), zt = random_mat(5, d, rng);
  auto fuse = [&](std::vector<double> m) {
    return model::fuse_features(t.constant(Mat({2, 1}, m)), t.constant(coarse), t.constant(zt), k)
        .value();
  };
  CHECK(fuse({0, 0}) == zt);
  auto all = fuse({1, 1});
  auto mixed = fuse({1, 0});
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(all(0, j) == zt(0, j));
    for (std::size_t r = 1; r < 5; ++r) CHECK(all(r, j) == coarse((r - 1) / k, j));
    CHECK(mixed(0, j) == zt(0, j));
    CHECK(mixed(1, j) == coarse(0, j));
    CHECK(mixed(2, j) == coarse(0, j));
    CHECK(mixed(3, j) == zt(3, j));
    CHECK(mixed(4, j) == zt(4, j));
  }
}

TEST_CASE("reduction head") {
  Tape<double> t;
  auto zeros = [&](std::size_t r, std::size_t c) { return t.constant(Mat({r, c})); };
  model::HeadVars<double> h0{zeros(3, 4), zeros(1, 4), zeros(4, 2), zeros(1, 2)};
  auto never = [] { return 0.0; };
  auto p = model::reduce_head(t.constant(Mat::matrix(2, 3, {1, 2, 3, -4, 5, 6})), h0, 0.5, false,
                              never)
               .value();
  for (auto v : p.data()) CHECK(v == 0.5);

  const Mat x = Mat::matrix(1, 2, {0.5, -1.0});
  const Mat w1 = Mat::matrix(2, 2, {0.2, -0.1, 0.3, 0.4}), b1 = Mat::matrix(1, 2, {0.05, -0.02});
  const Mat w2 = Mat::matrix(2, 2, {0.6, -0.3, -0.2, 0.1}), b2 = Mat::matrix(1, 2, {0.01, 0.0});
  model::HeadVars<double> hv{t.constant(w1), t.constant(b1), t.constant(w2), t.constant(b2)};
  auto got = model::reduce_head(t.constant(x), hv, 0.5, false, never).value();
  double hid[2];
  for (int j = 0; j < 2; ++j) {
    const double a = x[0] * w1(0, j) + x[1] * w1(1, j) + b1[j];
    hid[j] = a > 0 ? a : std::exp(a) - 1.0;
  }
  double lg[2];
  for (int c = 0; c < 2; ++c) lg[c] = hid[0] * w2(0, c) + hid[1] * w2(1, c) + b2[c];
  const double p1 = 1.0 / (1.0 + std::exp(lg[0] - lg[1]));
  CHECK(got[1] == Approx(p1).epsilon(1e-12));
  CHECK(got[0] == Approx(1.0 - p1).epsilon(1e-12));
}

TEST_CASE("forward pass shapes and determinism") {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.levels = 2;
  const auto bag = toy_bag(2, 2, 2, 8, 1, 3);
  const Params params = init_params(cfg, 9);
  const auto out = predict(params, bag, cfg);
  REQUIRE(out.levels.size() == 2);
  CHECK(out.levels[0].p_inst.shape() == Shape{4, 2});
  CHECK(out.levels[1].p_inst.shape() == Shape{16, 2});
  CHECK(out.levels[0].entropy.size() == 4);
  CHECK(out.levels[1].entropy.size() == 16);
  CHECK(out.levels[0].mask.size() == 4);
  CHECK(out.levels[1].mask.size() == 16);
  for (const auto& lv : out.levels) {
    CHECK(lv.p_agg[0] + lv.p_agg[1] == Approx(1.0).epsilon(1e-6));
    for (std::size_t i = 0; i < lv.p_inst.rows(); ++i)
      CHECK(lv.p_inst(i, 0) + lv.p_inst(i, 1) == Approx(1.0).epsilon(1e-6));
    for (std::size_t i = 0; i < lv.entropy.size(); ++i)
      CHECK((lv.mask[i] == 1) == (lv.entropy[i] > 0.5f));
  }
  CHECK(out.final_p[1] == Approx((out.levels[0].p_agg[1] + out.levels[1].p_agg[1]) / 2).epsilon(1e-6));

  const auto again = predict(params, bag, cfg);
  CHECK(again.final_p == out.final_p);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(again.levels[r].p_inst == out.levels[r].p_inst);
    CHECK(again.levels[r].entropy == out.levels[r].entropy);
  }

  // A bag of the wrong depth is rejected.
  cfg.levels = 3;
  CHECK_THROWS_AS(predict(init_params(cfg, 9), bag, cfg), ShapeError);
}

TEST_CASE("single resolution pipeline has no fusion") {
  ModelConfig cfg;
  cfg.dim = 4;
  cfg.levels = 1;
  const auto bag = toy_bag(1, 3, 2, 4, 1, 5);
  const Params params = init_params(cfg, 1);
  for (const auto& [name, value] : params.entries()) CHECK(name.find("xattn") == std::string::npos);
  const auto out = predict(params, bag, cfg);
  REQUIRE(out.levels.size() == 1);
  CHECK(out.final_p[1] == Approx(out.levels[0].p_agg[1]).epsilon(1e-7));
}

TEST_CASE("grid relabeling permutes coarse outputs") {
  ModelConfig cfg;
  cfg.dim = 6;
  cfg.levels = 1;
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t w = 2 + trial % 3, h = 1 + trial % 2;
    const auto bag = toy_bag(1, w, h, cfg.dim, trial % 2, rng());
    const Params params = init_params(cfg, rng());
    // Mirror the grid left to right.
    const auto& lv = bag.levels[0];
    MultiResBag flipped = bag;
    std::vector<std::size_t> to(lv.num_patches());
    for (std::size_t p = 0; p < to.size(); ++p) {
      auto pos = patch_position(lv, p);
      pos.x = w - 1 - pos.x;
      to[p] = patch_index(lv, pos);
      for (std::size_t j = 0; j < cfg.dim; ++j)
        flipped.levels[0].features(to[p], j) = lv.features(p, j);
    }
    const auto a = predict(params, bag, cfg).levels[0];
    const auto b = predict(params, flipped, cfg).levels[0];
    CHECK(a.p_agg[1] == Approx(b.p_agg[1]).epsilon(1e-5));
    for (std::size_t p = 0; p < to.size(); ++p) {
      CHECK(a.p_inst(p, 1) == Approx(b.p_inst(to[p], 1)).epsilon(1e-5));
      CHECK(a.entropy[p] == Approx(b.entropy[to[p]]).epsilon(1e-5));
      CHECK(a.mask[p] == b.mask[to[p]]);
    }
  }
}

TEST_CASE("fusion gradient reaches exactly the coarse patches under a live PW term") {
  // With two levels, a substituted coarse row changes only its children and
  // their TNAM neighbours at the finer level, and those outputs enter the
  // loss only through the negative-bag PW hinges p > δ.
  std::mt19937_64 rng(21);
  const double delta = 0.49;
  std::size_t live = 0, dead = 0;
  for (int trial = 0; trial < 40; ++trial) {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.hidden = 8;
    cfg.levels = 2;
    const std::size_t w = 1 + rng() % 4, h = 1 + rng() % 4;
    const auto bag = toy_bag(2, w, h, cfg.dim, 0, rng());
    const Params params = init_params(cfg, rng());
    const std::size_t n = w * h;
    std::vector<std::uint8_t> coarse(n);
    for (auto& m : coarse) m = rng() % 2;
    coarse[rng() % n] = 1;

    ForwardOptions opt;
    opt.track_fusion_sources = true;
    opt.mask_override = {coarse};
    Tape<float> tape;
    ParamVars<float> pv(tape, params, true);
    const auto fv = model::forward_bag(tape, pv, bag, cfg, opt);
    tape.backward(total_loss(fv, 0, delta, Phase::kMain));
    const Tensor g = tape.grad(fv.levels[0].fusion_source);
    const Tensor& p_fine = fv.levels[1].p_inst.value();
    const auto& fine = bag.levels[1];

    for (std::size_t p = 0; p < n; ++p) {
      if (!coarse[p]) continue;
      bool reaches_hinge = false;
      for (std::size_t c = p * 4; c < p * 4 + 4; ++c) {
        reaches_hinge = reaches_hinge || p_fine(c, 1) > delta;
        for (auto q : neighbors(fine, c)) reaches_hinge = reaches_hinge || p_fine(q, 1) > delta;
      }
      bool nonzero = false;
      for (std::size_t j = 0; j < cfg.dim; ++j) nonzero = nonzero || g(p, j) != 0.0f;
      CHECK(nonzero == reaches_hinge);
      (reaches_hinge ? live : dead) += 1;
    }
  }
  CHECK(live > 20);
}

TEST_CASE("total loss gradient matches central differences on the toy bag") {
  const auto report = model_gradcheck(0, 1e-3);
  CHECK(report.max_rel_error < 1e-3);
  CHECK(report.parameters > 0);
  for (const char* group : {"attn", "xattn", "tnam", "head", "cls"}) {
    REQUIRE(report.group_grad_max.count(group) == 1);
    CHECK(report.group_grad_max.at(group) > 0.0);
  }
}
