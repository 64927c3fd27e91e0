#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>

#include "helpers.hpp"
#include "luna/grad_check.hpp"
#include "luna/nn.hpp"
#include "luna/tensor.hpp"

using namespace luna;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and annihilator") {
  Mat a(2, 2), b(2, 2);
  a << 1, 0, 0, 1;
  b << 3, 4, 5, 6;
  CHECK(matmul(Tensor(a), Tensor(b)).value() == b);

  Mat z = Mat::Zero(2, 2);
  CHECK(matmul(Tensor(z), Tensor(b)).value() == z);
}

TEST_CASE("matmul row times column") {
  Mat a(1, 2), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  CHECK(matmul(Tensor(a), Tensor(b)).item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a(Mat::Zero(2, 3));
  Tensor b(Mat::Zero(4, 5));
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x5") != std::string::npos);
  }
}

TEST_CASE("matmul agrees with scalar-loop oracle") {
  Mat a = random_mat(3, 4, 11);
  Mat b = random_mat(4, 5, 12);
  Mat got = matmul(Tensor(a), Tensor(b)).value();
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 5; ++j) {
      double acc = 0;
      for (Index k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
      CHECK(got(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("softmax symmetry and row normalization") {
  Tensor s = softmax(Tensor(row3(0, 0, 0)));
  for (Index c = 0; c < 3; ++c)
    CHECK(s.at(0, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Mat x = random_mat(5, 7, 21, 10.0);
  Mat p = softmax(Tensor(x)).value();
  for (Index r = 0; r < p.rows(); ++r)
    CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-12);
}

TEST_CASE("softmax survives huge logits via max subtraction") {
  Tensor s = softmax(Tensor(row2(1000, 0)));
  CHECK(s.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at(0, 1) < 1e-300);
  CHECK(std::isfinite(s.at(0, 0)));
}

TEST_CASE("softmax matches scalar oracle on [1,2,3]") {
  Mat x = row3(1, 2, 3);
  Mat p = softmax(Tensor(x)).value();
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (Index c = 0; c < 3; ++c)
    CHECK(p(0, c) == doctest::Approx(std::exp(x(0, c)) / z).epsilon(1e-14));
}

TEST_CASE("softmax along axis 0 normalizes columns") {
  Mat x = random_mat(4, 3, 33);
  Mat p = softmax(Tensor(x), 0).value();
  for (Index c = 0; c < 3; ++c)
    CHECK(std::abs(p.col(c).sum() - 1.0) < 1e-12);
}

TEST_CASE("softmax rejects non-finite input") {
  Mat x = row2(1, std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(softmax(Tensor(x)), NumericError);
}

TEST_CASE("layer_norm collapses constant rows to bias") {
  Tensor gain(Mat::Ones(1, 4));
  Tensor bias(Mat::Zero(1, 4));
  Tensor out = layer_norm(Tensor(Mat::Constant(2, 4, 7.0)), gain, bias);
  CHECK(out.value().cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("layer_norm on [1,3] gives +-1 up to eps") {
  Tensor out = layer_norm(Tensor(row2(1, 3)), Tensor(Mat::Ones(1, 2)),
                          Tensor(Mat::Zero(1, 2)));
  // population variance 1, so the eps inside the sqrt shades the result
  double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(out.at(0, 0) == doctest::Approx(-expect).epsilon(1e-14));
  CHECK(out.at(0, 1) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("layer_norm agrees with scalar-loop oracle") {
  Mat x = random_mat(3, 4, 41);
  Mat g = random_mat(1, 4, 42);
  Mat b = random_mat(1, 4, 43);
  Mat got = layer_norm(Tensor(x), Tensor(g), Tensor(b)).value();
  for (Index r = 0; r < 3; ++r) {
    double mean = x.row(r).mean();
    double var = 0;
    for (Index c = 0; c < 4; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= 4.0;
    for (Index c = 0; c < 4; ++c) {
      double xhat = (x(r, c) - mean) / std::sqrt(var + 1e-5);
      CHECK(got(r, c) == doctest::Approx(g(0, c) * xhat + b(0, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("feed_forward zero weights yield outer bias only") {
  Tensor x(random_mat(3, 4, 51));
  Tensor w1(Mat::Zero(4, 16)), b1(Mat::Zero(1, 16));
  Tensor w2(Mat::Zero(16, 4));
  Mat b2v = random_mat(1, 4, 52);
  Tensor out = feed_forward(x, w1, b1, w2, Tensor(b2v));
  for (Index r = 0; r < 3; ++r)
    CHECK((out.value().row(r) - b2v.row(0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("feed_forward clamps negative pre-activations") {
  Tensor x(Mat::Ones(1, 2));
  Tensor w1(Mat::Constant(2, 3, -1.0)), b1(Mat::Zero(1, 3));
  Tensor w2(random_mat(3, 2, 53));
  Tensor b2(Mat::Zero(1, 2));
  CHECK(feed_forward(x, w1, b1, w2, b2).value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("feed_forward agrees with scalar-loop oracle") {
  Mat x = random_mat(3, 4, 61), w1 = random_mat(4, 6, 62), b1 = random_mat(1, 6, 63);
  Mat w2 = random_mat(6, 4, 64), b2 = random_mat(1, 4, 65);
  Mat got = feed_forward(Tensor(x), Tensor(w1), Tensor(b1), Tensor(w2), Tensor(b2))
                .value();
  for (Index r = 0; r < 3; ++r)
    for (Index j = 0; j < 4; ++j) {
      double acc = b2(0, j);
      for (Index k = 0; k < 6; ++k) {
        double h = b1(0, k);
        for (Index i = 0; i < 4; ++i) h += x(r, i) * w1(i, k);
        acc += std::max(h, 0.0) * w2(k, j);
      }
      CHECK(got(r, j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("backward on sum of elementwise product recovers the other factor") {
  Mat xv = random_mat(3, 4, 71);
  Tensor w(random_mat(3, 4, 72), /*requires_grad=*/true);
  Tensor loss = sum_all(cmul(w, Tensor(xv)));
  loss.backward();
  CHECK((w.grad() - xv).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("backward through log-softmax cross-entropy gives p minus onehot") {
  Tensor z(random_mat(1, 5, 81), /*requires_grad=*/true);
  const Index target = 2;
  Tensor loss = logsumexp_all(z) - slice_cols(z, target, 1);
  loss.backward();
  Mat p = softmax(z).value();
  p(0, target) -= 1.0;
  CHECK((z.grad() - p).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward leaves frozen parameters without gradient") {
  Parameter frozen("w", random_mat(2, 2, 91), /*frozen=*/true);
  Tensor loss = sum_all(frozen.tensor());
  loss.backward();
  CHECK(frozen.grad().size() == 0);
}

TEST_CASE("backward rejects non-scalar roots") {
  Tensor x(random_mat(2, 2, 92), true);
  CHECK_THROWS_AS((x + x).backward(), ContractError);
}

TEST_CASE("gradients accumulate across backward calls until cleared") {
  Tensor w(Mat::Ones(1, 1), true);
  Tensor loss1 = sum_all(scale(w, 3.0));
  loss1.backward();
  Tensor loss2 = sum_all(scale(w, 4.0));
  loss2.backward();
  CHECK(w.grad()(0, 0) == 7.0);
  w.zero_grad();
  CHECK(w.grad()(0, 0) == 0.0);
}

TEST_CASE("no-grad guard suppresses graph construction") {
  Tensor w(Mat::Ones(2, 2), true);
  NoGradGuard guard;
  Tensor y = sum_all(cmul(w, w));
  CHECK(y.node()->parents.empty());
}

TEST_CASE("slicing and concatenation round-trip with correct gradients") {
  Tensor x(random_mat(4, 6, 101), true);
  Tensor top = slice_rows(x, 0, 2);
  Tensor bottom = slice_rows(x, 2, 2);
  Tensor rebuilt = concat_rows({top, bottom});
  CHECK(rebuilt.value() == x.value());

  Tensor left = slice_cols(x, 0, 3);
  Tensor loss = sum_all(cmul(left, left));
  loss.backward();
  Mat g = x.grad();
  CHECK((g.block(0, 0, 4, 3) - 2.0 * x.value().block(0, 0, 4, 3))
            .cwiseAbs()
            .maxCoeff() < 1e-14);
  CHECK(g.block(0, 3, 4, 3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gather_rows accumulates gradient over duplicate indices") {
  Tensor table(random_mat(5, 3, 111), true);
  Tensor picked = gather_rows(table, {1, 1, 4});
  Tensor loss = sum_all(picked);
  loss.backward();
  CHECK(table.grad()(1, 0) == 2.0);
  CHECK(table.grad()(4, 0) == 1.0);
  CHECK(table.grad()(0, 0) == 0.0);
}

TEST_CASE("gather_rows rejects out-of-range indices") {
  Tensor table(random_mat(3, 2, 112));
  CHECK_THROWS_AS(gather_rows(table, {3}), ContractError);
  CHECK_THROWS_AS(gather_rows(table, {-1}), ContractError);
}

TEST_CASE("forward pass is bitwise deterministic") {
  auto run = [] {
    ParamStore store(1234);
    AttentionConfig cfg(8, 2);
    MultiHeadAttention mha(store, "a", cfg, 0.1);
    Tensor x(random_mat(3, 8, 7));
    return mha.apply(x, x, x).value();
  };
  Mat first = run();
  Mat second = run();
  CHECK(first == second);
}

TEST_CASE("finite differences on a quadratic") {
  ParamStore store(0);
  Parameter theta = store.add("theta", 1, 1, [](Mat& m, std::mt19937_64&) {
    m(0, 0) = 3.0;
  });
  auto f = [&] { return sum_all(cmul(theta.tensor(), theta.tensor())); };
  GradCheckReport report = finite_diff_check(f, {&theta});
  CHECK(report.coords_checked == 1);
  CHECK(report.worst.analytic == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(std::abs(report.worst.numeric - 6.0) < 1e-8);
  CHECK(report.pass());
}

TEST_CASE("finite differences on the zero function") {
  ParamStore store(0);
  Parameter theta = store.add("theta", 2, 2, ParamStore::normal_init(1.0));
  auto f = [&] { return sum_all(scale(theta.tensor(), 0.0)); };
  GradCheckReport report = finite_diff_check(f, {&theta});
  CHECK(report.coords_checked == 4);
  CHECK(report.max_rel_err == 0.0);
  CHECK(report.pass());
}

TEST_CASE("finite differences through a deep composite") {
  ParamStore store(5);
  Parameter w = store.add("w", 4, 4, ParamStore::normal_init(0.5));
  Parameter b = store.add("b", 1, 4, ParamStore::normal_init(0.5));
  Parameter g = store.add("g", 1, 4, ParamStore::ones_init());
  Mat xv = random_mat(3, 4, 121);
  auto f = [&] {
    Tensor h = add_rowwise(matmul(Tensor(xv), w.tensor()), b.tensor());
    Tensor n = layer_norm(relu(h) + h, g.tensor(), b.tensor());
    Tensor s = softmax(n);
    return logsumexp_all(n) + sum_all(cmul(s, sigmoid(n)));
  };
  GradCheckReport report = finite_diff_check(f, {&w, &b, &g});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("finite differences through exp log sqrt") {
  ParamStore store(6);
  Parameter w = store.add("w", 2, 3, [](Mat& m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = u(rng);
  });
  auto f = [&] {
    Tensor t = w.tensor();
    return sum_all(luna::log(t)) + sum_all(luna::sqrt(t)) +
           sum_all(luna::exp(scale(t, -1.0)));
  };
  GradCheckReport report = finite_diff_check(f, {&w});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("log rejects non-positive input") {
  CHECK_THROWS_AS(luna::log(Tensor(row2(1.0, 0.0))), NumericError);
  CHECK_THROWS_AS(luna::sqrt(Tensor(row2(1.0, -1.0))), NumericError);
}

TEST_CASE("rowwise broadcast ops propagate gradients to the row") {
  Tensor row(random_mat(1, 3, 131), true);
  Tensor x(random_mat(4, 3, 132), true);
  Tensor loss = sum_all(add_rowwise(x, row)) + sum_all(sub_rowwise(x, row));
  loss.backward();
  CHECK(row.grad().cwiseAbs().maxCoeff() < 1e-15);  // +4 and -4 cancel
  CHECK((x.grad() - Mat::Constant(4, 3, 2.0)).cwiseAbs().maxCoeff() < 1e-15);

  Tensor row2v(random_mat(1, 3, 133), true);
  Tensor loss2 = sum_all(cmul(broadcast_row(row2v, 5), broadcast_row(row2v, 5)));
  loss2.backward();
  CHECK((row2v.grad() - 10.0 * row2v.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_SUITE_END();
