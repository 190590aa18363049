#include "doctest.h"
#include "embridge/tape.hpp"
#include "oracles.hpp"

using namespace embridge;

namespace {

Mat rnd(Rng& rng, long r, long c) { return rng.normal_mat(r, c); }

}  // namespace

TEST_CASE("matmul gradients match finite differences in all transpose modes") {
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 * seed + 10 * uint64_t(ta) + uint64_t(tb) + 1);
        Mat A = ta ? rnd(rng, 4, 3) : rnd(rng, 3, 4);
        Mat B = tb ? rnd(rng, 5, 4) : rnd(rng, 4, 5);
        Tape t;
        Tape::NodeId a = t.leaf(A, true);
        Tape::NodeId b = t.leaf(B, true);
        t.backward(t.sum(t.matmul(a, b, ta != 0, tb != 0)));

        auto fa = [&](const Mat& X) {
          Mat L = ta ? X.transpose() : X;
          Mat R = tb ? Mat(B.transpose()) : B;
          return (L * R).sum();
        };
        auto fb = [&](const Mat& X) {
          Mat L = ta ? Mat(A.transpose()) : A;
          Mat R = tb ? X.transpose() : X;
          return (L * R).sum();
        };
        CHECK(oracle::rel_err(t.grad(a), oracle::fd_grad(fa, A)) < 1e-7);
        CHECK(oracle::rel_err(t.grad(b), oracle::fd_grad(fb, B)) < 1e-7);
      }
    }
  }
}

TEST_CASE("elementwise chain add/scale/tanh/add_rowvec matches FD") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 31);
    Mat A = rnd(rng, 4, 6), B = rnd(rng, 4, 6), V = rnd(rng, 1, 6);
    Tape t;
    Tape::NodeId a = t.leaf(A, true);
    Tape::NodeId b = t.leaf(B, true);
    Tape::NodeId v = t.leaf(V, true);
    t.backward(t.sum(t.tanh(t.scale(t.add_rowvec(t.add(a, b), v), 0.7))));

    auto f = [&](const Mat& X, int which) {
      Mat aa = which == 0 ? X : A;
      Mat bb = which == 1 ? X : B;
      Mat vv = which == 2 ? X : V;
      Mat s = aa + bb;
      for (long i = 0; i < s.rows(); ++i) s.row(i) += vv.row(0);
      return (0.7 * s).array().tanh().sum();
    };
    CHECK(oracle::rel_err(t.grad(a), oracle::fd_grad(
                                         [&](const Mat& X) { return f(X, 0); },
                                         A)) < 1e-6);
    CHECK(oracle::rel_err(t.grad(b), oracle::fd_grad(
                                         [&](const Mat& X) { return f(X, 1); },
                                         B)) < 1e-6);
    CHECK(oracle::rel_err(t.grad(v), oracle::fd_grad(
                                         [&](const Mat& X) { return f(X, 2); },
                                         V)) < 1e-6);
  }
}

TEST_CASE("row_normalize gradient matches FD") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 77);
    Mat X = rnd(rng, 5, 4);
    Mat C = rnd(rng, 5, 4);
    Tape t;
    Tape::NodeId x = t.leaf(X, true);
    Tape::NodeId c = t.leaf(C, false);
    t.backward(t.mean(t.rowwise_dot(t.row_normalize(x), c)));

    auto f = [&](const Mat& M) {
      double acc = 0.0;
      for (long i = 0; i < M.rows(); ++i)
        acc += M.row(i).dot(C.row(i)) / M.row(i).norm();
      return acc / double(M.rows());
    };
    CHECK(oracle::rel_err(t.grad(x), oracle::fd_grad(f, X)) < 1e-6);
  }
}

TEST_CASE("row_normalize throws on a vanishing row") {
  Tape t;
  Mat X = Mat::Zero(2, 3);
  X(0, 0) = 1.0;
  Tape::NodeId x = t.leaf(X, true);
  CHECK_THROWS_AS(t.row_normalize(x), DegenerateVector);
}

TEST_CASE("project_rows gradient matches FD with frozen directions") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 113);
    Mat X = rnd(rng, 4, 5), D = rnd(rng, 4, 5), C = rnd(rng, 4, 5);
    const double eps = (seed % 2) ? 1e-8 : 0.0;
    Tape t;
    Tape::NodeId x = t.leaf(X, true);
    t.backward(t.mean(t.rowwise_dot(t.project_rows(x, D, eps), t.leaf(C))));

    auto f = [&](const Mat& M) {
      double acc = 0.0;
      for (long i = 0; i < M.rows(); ++i) {
        Vec v = D.row(i).transpose();
        Vec r = M.row(i).transpose();
        Vec p = r - v * (v.dot(r) / (v.squaredNorm() + eps));
        acc += p.dot(C.row(i).transpose());
      }
      return acc / double(M.rows());
    };
    CHECK(oracle::rel_err(t.grad(x), oracle::fd_grad(f, X)) < 1e-6);
  }
}

TEST_CASE("select_rows routes gradient to the gathered rows only") {
  Rng rng(9);
  Mat X = rnd(rng, 4, 3);
  Tape t;
  Tape::NodeId x = t.leaf(X, true);
  t.backward(t.sum(t.select_rows(x, {2, 0})));
  Mat g = t.grad(x);
  CHECK(g.row(0).isOnes());
  CHECK(g.row(1).isZero());
  CHECK(g.row(2).isOnes());
  CHECK(g.row(3).isZero());

  Tape t2;
  CHECK_THROWS_AS(t2.select_rows(t2.leaf(X, true), {}), EmptyInput);
}

TEST_CASE("rowwise_dot gradients are the opposite operands") {
  Rng rng(21);
  Mat X = rnd(rng, 6, 4), Y = rnd(rng, 6, 4);
  Tape t;
  Tape::NodeId x = t.leaf(X, true);
  Tape::NodeId y = t.leaf(Y, true);
  t.backward(t.sum(t.rowwise_dot(x, y)));
  CHECK((t.grad(x) - Y).norm() < 1e-14);
  CHECK((t.grad(y) - X).norm() < 1e-14);
}

TEST_CASE("sumsq gradient on [1,2] is [2,4] and value is 5") {
  Tape t;
  Mat X(1, 2);
  X << 1.0, 2.0;
  Tape::NodeId x = t.leaf(X, true);
  Tape::NodeId l = t.sumsq(x);
  CHECK(t.scalar(l) == doctest::Approx(5.0).epsilon(1e-15));
  t.backward(l);
  CHECK(t.grad(x)(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(t.grad(x)(0, 1) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("mean gradient spreads 1/n") {
  Rng rng(33);
  Mat X = rnd(rng, 3, 4);
  Tape t;
  Tape::NodeId x = t.leaf(X, true);
  t.backward(t.mean(x));
  CHECK((t.grad(x).array() - 1.0 / 12.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("mse_const value and gradient") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 55);
    Mat X = rnd(rng, 5, 3), T = rnd(rng, 5, 3);
    Tape t;
    Tape::NodeId x = t.leaf(X, true);
    Tape::NodeId l = t.mse_const(x, T);
    double want = (X - T).array().square().matrix().rowwise().sum().mean();
    CHECK(t.scalar(l) == doctest::Approx(want).epsilon(1e-12));
    t.backward(l);
    Mat g_exact = 2.0 / double(X.rows()) * (X - T);
    CHECK((t.grad(x) - g_exact).norm() < 1e-13);
  }
}

TEST_CASE("softmax cross-entropy value and FD gradient") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 201);
    Mat L = rnd(rng, 4, 5);
    std::vector<int> targets = {1, 0, 3, 2};
    Tape t;
    Tape::NodeId x = t.leaf(L, true);
    Tape::NodeId loss = t.softmax_xent_rows(x, targets);

    auto f = [&](const Mat& M) {
      double acc = 0.0;
      for (long i = 0; i < M.rows(); ++i) {
        double mx = M.row(i).maxCoeff();
        double z = (M.row(i).array() - mx).exp().sum();
        acc += -(M(i, targets[size_t(i)]) - mx) + std::log(z);
      }
      return acc / double(M.rows());
    };
    CHECK(t.scalar(loss) == doctest::Approx(f(L)).epsilon(1e-12));
    t.backward(loss);
    CHECK(oracle::rel_err(t.grad(x), oracle::fd_grad(f, L)) < 1e-6);
  }
}

TEST_CASE("lincomb combines scalar losses with the given weights") {
  Rng rng(71);
  Mat X = rnd(rng, 3, 3);
  Tape t;
  Tape::NodeId x = t.leaf(X, true);
  Tape::NodeId l1 = t.sum(x);
  Tape::NodeId l2 = t.sumsq(x);
  Tape::NodeId l = t.lincomb({l1, l2}, {0.5, 2.0});
  CHECK(t.scalar(l) ==
        doctest::Approx(0.5 * X.sum() + 2.0 * X.squaredNorm()).epsilon(1e-13));
  t.backward(l);
  Mat want = Mat::Constant(3, 3, 0.5) + 4.0 * X;
  CHECK((t.grad(x) - want).norm() < 1e-12);
}

TEST_CASE("stop_gradient freezes its operand") {
  Rng rng(87);
  Mat X = rnd(rng, 4, 3);
  Tape t;
  Tape::NodeId x = t.leaf(X, true);
  t.backward(t.mean(t.rowwise_dot(x, t.stop_gradient(x))));
  // d/dx mean_i <x_i, sg(x_i)> = x / R; the unstopped function would give 2x/R
  CHECK((t.grad(x) - X / 4.0).norm() < 1e-14);
}

TEST_CASE("backward can rerun from different roots on one tape") {
  Rng rng(93);
  Mat X = rnd(rng, 3, 4);
  Tape t;
  Tape::NodeId x = t.leaf(X, true);
  Tape::NodeId l1 = t.sum(x);
  Tape::NodeId l2 = t.sumsq(x);
  t.backward(l1);
  CHECK((t.grad(x).array() - 1.0).abs().maxCoeff() < 1e-15);
  t.backward(l2);
  CHECK((t.grad(x) - 2.0 * X).norm() < 1e-13);
  t.backward(l1);
  CHECK((t.grad(x).array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("non-finite loss values are rejected") {
  Tape t;
  Mat X(1, 2);
  X << 1.0, std::numeric_limits<double>::infinity();
  Tape::NodeId x = t.leaf(X, true);
  Tape::NodeId l = t.sum(x);
  CHECK_THROWS_AS(t.backward(l), NonFiniteLoss);
}

TEST_CASE("backward requires a scalar root") {
  Tape t;
  Tape::NodeId x = t.leaf(Mat::Ones(2, 2), true);
  CHECK_THROWS_AS(t.backward(x), Error);
}
