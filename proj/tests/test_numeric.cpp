#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "octlat/autodiff.hpp"
#include "octlat/checkpoint.hpp"
#include "octlat/gradcheck.hpp"
#include "octlat/optimizer.hpp"
#include "octlat/rng.hpp"
#include "octlat/tensor.hpp"

using namespace octlat;

TEST_CASE("matmul hand case") {
  ad::Graph g;
  auto a = g.constant(Tensor::from({1, 2, 3, 4}, {2, 2}));
  auto b = g.constant(Tensor::from({1, 1}, {2, 1}));
  auto c = g.matmul(a, b);
  auto vals = g.evaluate({});
  CHECK(vals[c].at(0) == 3.0);
  CHECK(vals[c].at(1) == 7.0);
}

TEST_CASE("softmax cross entropy of uniform logits is ln(K)") {
  ad::Graph g;
  auto logits = g.constant(Tensor({1, 4}, 0.0));
  auto ce = g.softmax_xent(logits, {2});
  auto vals = g.evaluate({});
  CHECK_THAT(vals[ce].at(0), Catch::Matchers::WithinAbs(std::log(4.0), 1e-12));
}

TEST_CASE("gaussian KL at the prior is zero, closed-form cases") {
  ad::Graph g;
  auto mu = g.input("mu", {1, 1});
  auto lv = g.input("lv", {1, 1});
  auto kl = g.gaussian_kl(mu, lv);
  auto vals = g.evaluate({{"mu", Tensor::scalar(0).reshaped({1, 1})},
                          {"lv", Tensor::scalar(0).reshaped({1, 1})}});
  CHECK(vals[kl].at(0) == 0.0);

  auto vals2 = g.evaluate({{"mu", Tensor::scalar(1).reshaped({1, 1})},
                           {"lv", Tensor::scalar(0).reshaped({1, 1})}});
  CHECK_THAT(vals2[kl].at(0), Catch::Matchers::WithinAbs(0.5, 1e-15));
}

TEST_CASE("gradient of x*x at x=3 is 6; KL grad wrt mu at mu=1 is 1") {
  ad::Graph g;
  auto x = g.param("x", {1});
  auto loss = g.sum(g.mul(x, x));
  auto res = g.gradient(loss, {"x"}, {{"x", Tensor::scalar(3.0)}});
  CHECK_THAT(res.grads.at("x").at(0), Catch::Matchers::WithinAbs(6.0, 1e-12));

  ad::Graph g2;
  auto mu = g2.param("mu", {1, 1});
  auto lv = g2.constant(Tensor({1, 1}, 0.0));
  auto loss2 = g2.sum(g2.gaussian_kl(mu, lv));
  auto res2 = g2.gradient(loss2, {"mu"}, {{"mu", Tensor({1, 1}, 1.0)}});
  CHECK_THAT(res2.grads.at("mu").at(0), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("unused params get zero gradients; non-scalar loss rejected") {
  ad::Graph g;
  auto x = g.param("x", {2});
  auto y = g.param("unused", {3});
  auto loss = g.sum(g.mul(x, x));
  auto res = g.gradient(loss, {"x", "unused"},
                        {{"x", Tensor({2}, 1.0)}, {"unused", Tensor({3}, 5.0)}});
  CHECK(res.grads.at("unused") == Tensor({3}, 0.0));
  CHECK_THROWS_WITH(g.gradient(x, {"x"}, {{"x", Tensor({2}, 1.0)},
                                          {"unused", Tensor({3}, 0.0)}}),
                    Catch::Matchers::ContainsSubstring("not scalar"));
  CHECK_THROWS_WITH(g.gradient(loss, {"nope"}, {{"x", Tensor({2}, 1.0)},
                                                {"unused", Tensor({3}, 0.0)}}),
                    Catch::Matchers::ContainsSubstring("unknown param"));
}

TEST_CASE("shape errors name the op and extents; non-finite names the op") {
  ad::Graph g;
  auto a = g.constant(Tensor({2, 3}, 1.0));
  auto b = g.constant(Tensor({2, 2}, 1.0));
  CHECK_THROWS_WITH(g.matmul(a, b),
                    Catch::Matchers::ContainsSubstring("matmul") &&
                        Catch::Matchers::ContainsSubstring("[2,3]"));

  ad::Graph g2;
  auto x = g2.input("x", {1});
  auto y = g2.log(x);
  (void)y;
  CHECK_THROWS_WITH(g2.evaluate({{"x", Tensor({1}, -1.0)}}),
                    Catch::Matchers::ContainsSubstring("non-finite") &&
                        Catch::Matchers::ContainsSubstring("log"));
}

TEST_CASE("evaluate is pure: repeated calls bit-identical") {
  Rng r(99);
  ad::Graph g;
  auto x = g.input("x", {4, 3});
  auto w = g.input("w", {3, 5});
  auto out = g.tanh(g.matmul(x, w));
  std::map<std::string, Tensor> binds{{"x", r.normal_tensor({4, 3})},
                                      {"w", r.normal_tensor({3, 5})}};
  auto v1 = g.evaluate(binds);
  auto v2 = g.evaluate(binds);
  CHECK(v1[out] == v2[out]);
}

TEST_CASE("scatter-add then gather along unique indices is the identity") {
  Rng rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    Rng r = rng.derive(uint64_t(trial));
    int64_t rows = 1 + int64_t(r.uniform() * 12);
    int64_t cols = 1 + int64_t(r.uniform() * 5);
    int64_t out_rows = rows + int64_t(r.uniform() * 6);
    // unique permutation-ish indices
    std::vector<int64_t> idx(size_t(rows));
    std::vector<int64_t> pool(size_t(out_rows));
    for (int64_t i = 0; i < out_rows; ++i) pool[size_t(i)] = i;
    for (int64_t i = 0; i < rows; ++i) {
      int64_t j = i + r.uniform_int(0, out_rows - 1 - i);
      std::swap(pool[size_t(i)], pool[size_t(j)]);
      idx[size_t(i)] = pool[size_t(i)];
    }
    ad::Graph g;
    auto x = g.input("x", {rows, cols});
    auto s = g.scatter_add(x, idx, out_rows);
    auto back = g.gather(s, idx);
    Tensor xv = r.normal_tensor({rows, cols});
    auto vals = g.evaluate({{"x", xv}});
    CHECK(vals[back] == xv);
  }
}

// Finite-difference oracle over every op with an adjoint rule, randomized
// shapes, 20+ seeds. This is the layer-less part of the gradient-integrity
// story; composite layers get their own checks in test_nets.
TEST_CASE("per-op gradients match central finite differences") {
  for (uint64_t seed = 0; seed < 22; ++seed) {
    Rng r(seed, 77);
    int64_t n = 2 + int64_t(r.uniform() * 3);
    int64_t m = 2 + int64_t(r.uniform() * 3);
    int64_t k = 2 + int64_t(r.uniform() * 3);

    ad::Graph g;
    auto a = g.param("a", {n, m});
    auto b = g.param("b", {n, m});
    auto w = g.param("w", {m, k});
    auto bias = g.param("bias", {k});
    auto gate = g.param("gate", {1, k});

    std::vector<int64_t> gidx;
    for (int64_t i = 0; i < n + 2; ++i)
      gidx.push_back(r.uniform_int(-1, n - 1));  // includes padding rows
    std::vector<int64_t> sidx;
    for (int64_t i = 0; i < n; ++i) sidx.push_back(r.uniform_int(-1, n));
    std::vector<double> rw;
    for (int64_t i = 0; i < n + 2; ++i) rw.push_back(0.25 + r.uniform());

    auto h = g.mul(g.add(a, b), g.sub(a, g.scale(b, 0.5)));
    auto mm = g.matmul(g.tanh(h), w);              // [n,k]
    auto ab = g.add_bias(mm, bias);                // broadcast add
    auto mr = g.mul_row(ab, gate);                 // broadcast mul
    auto ga = g.gather(mr, gidx);                  // [n+2,k]
    auto rs = g.row_scale(ga, rw);
    auto sc = g.scatter_add(rs, {gidx}, n + 1);    // reuse same map shape-wise
    auto cc = g.concat({sc, g.exp(g.scale(mr, 0.1))}, 0);
    auto lg = g.log(g.add(g.mul(cc, cc), g.constant(Tensor({2 * n + 3, k}, 1.0))));
    auto klm = g.gaussian_kl(g.reshape(a, {n * m, 1}), g.reshape(b, {n * m, 1}));
    auto bce = g.sigmoid_bce(mm, g.constant(Tensor({n, k}, 0.3)));
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < n; ++i) labels.push_back(r.uniform_int(0, k - 1));
    auto ce = g.softmax_xent(mm, labels);
    auto loss = g.sum(g.concat({g.reshape(g.sum(lg), {1, 1}),
                                g.reshape(g.sum(klm), {1, 1}),
                                g.reshape(g.sum(bce), {1, 1}),
                                g.reshape(g.sum(ce), {1, 1})},
                               0));

    std::map<std::string, Tensor> binds{
        {"a", r.normal_tensor({n, m})},   {"b", r.normal_tensor({n, m})},
        {"w", r.normal_tensor({m, k})},   {"bias", r.normal_tensor({k})},
        {"gate", r.uniform_tensor({1, k}, 0.5, 1.5)}};
    auto rep = gradient_check(g, loss, {"a", "b", "w", "bias", "gate"}, binds);
    INFO("seed " << seed << " worst " << rep.worst << " at " << rep.worst_param);
    CHECK(rep.ok);
  }
}

TEST_CASE("adam: first-step magnitude ~ lr, zero grad is a no-op, convex convergence") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.eps = 1e-12;

  Tensor p({3}, 1.0);
  Tensor gr = Tensor::from({0.7, -2.0, 0.001}, {3});
  AdamState st;
  adam_step(p, gr, st, cfg);
  for (int64_t i = 0; i < 3; ++i) {
    double delta = p.at(i) - 1.0;
    CHECK_THAT(std::fabs(delta), Catch::Matchers::WithinAbs(cfg.lr, 1e-6));
    CHECK(std::signbit(delta) == !std::signbit(gr.at(i)));
  }

  Tensor q({2}, 3.0);
  AdamState st2;
  adam_step(q, Tensor({2}, 0.0), st2, cfg);
  CHECK(q == Tensor({2}, 3.0));

  // 500 steps on f(x) = (x-2)^2, the convex scalar oracle.
  Tensor x({1}, 0.0);
  AdamState st3;
  for (int i = 0; i < 500; ++i) {
    Tensor grad({1}, 2.0 * (x.at(0) - 2.0));
    adam_step(x, grad, st3, cfg);
  }
  CHECK(std::fabs(x.at(0) - 2.0) < 1e-3);
}

TEST_CASE("rng determinism and stream separation") {
  Rng a(42, 7);
  Rng b(42, 7);
  Tensor ta = a.normal_tensor({32});
  Tensor tb = b.normal_tensor({32});
  CHECK(ta == tb);

  Rng c(42, 8);
  CHECK_FALSE(ta == c.normal_tensor({32}));

  CHECK(rng_normal(Rng(1, 2), {8}) == rng_normal(Rng(1, 2), {8}));
}

TEST_CASE("rng normal moments over 1e6 draws") {
  Rng r(2024, 1);
  const int64_t n = 1000000;
  double sum = 0, sumsq = 0;
  for (int64_t i = 0; i < n; ++i) {
    double v = r.normal();
    sum += v;
    sumsq += v * v;
  }
  double mean = sum / double(n);
  double var = sumsq / double(n) - mean * mean;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("checkpoint round-trips bit-exact") {
  Rng r(5150);
  std::map<std::string, Tensor> params;
  params["enc.w"] = r.normal_tensor({7, 3});
  params["enc.b"] = r.normal_tensor({3});
  params["odd/name with spaces"] = r.uniform_tensor({2, 2, 2}, -4, 4);
  auto bytes = encode_checkpoint(params);
  auto back = decode_checkpoint(bytes, "<mem>");
  REQUIRE(back.size() == params.size());
  for (const auto& [k, v] : params) CHECK(back.at(k) == v);

  // header checks
  CHECK(bytes[0] == 'O');
  CHECK(bytes[3] == '1');
  auto broken = bytes;
  broken[1] = 'X';
  CHECK_THROWS_WITH(decode_checkpoint(broken, "<mem>"),
                    Catch::Matchers::ContainsSubstring("bad magic"));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_WITH(decode_checkpoint(truncated, "<mem>"),
                    Catch::Matchers::ContainsSubstring("truncated"));
}
