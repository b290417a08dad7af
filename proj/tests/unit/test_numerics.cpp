#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "lcreg/autograd.hpp"
#include "lcreg/gaussian.hpp"
#include "lcreg/gradcheck.hpp"
#include "lcreg/rng.hpp"
#include "lcreg/serialize.hpp"

using namespace lcreg;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double s = 1.0) {
  Tensor t({r, c});
  for (auto& v : t.storage()) v = s * rng.normal();
  return t;
}

// Brute-force dense product, independent of the blocked kernels.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

}  // namespace

TEST(Tensor, ShapeInvariants) {
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
  EXPECT_THROW(Tensor({0, 3}), std::invalid_argument);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW((void)t.reshaped({4, 2}), std::invalid_argument);
}

TEST(Softmax, UniformForEqualLogits) {
  const Tensor p = softmax(Tensor::vector({0, 0, 0}));
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, StableForLargeLogits) {
  const Tensor p = softmax(Tensor::vector({1000, 0}));
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
}

TEST(Softmax, KnownValues) {
  // exp/normalize at 30 digits (mpmath)
  const Tensor p = softmax(Tensor::vector({1, 2, 3}));
  EXPECT_NEAR(p[0], 0.0900305731703804580, 1e-12);
  EXPECT_NEAR(p[1], 0.2447284710547976525, 1e-12);
  EXPECT_NEAR(p[2], 0.6652409557748218895, 1e-12);
}

TEST(Softmax, RejectsNonFinite) {
  try {
    (void)softmax(Tensor::vector({1.0, std::nan("")}));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "non-finite logits");
  }
}

TEST(Softmax, SimplexPropertyOnRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(12);
    Tensor v({n});
    for (auto& x : v.storage()) x = rng.uniform(-300, 300);
    const Tensor p = softmax(v);
    double s = 0.0;
    for (double x : p.data()) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    const auto arg_in = std::max_element(v.data().begin(), v.data().end()) - v.data().begin();
    const auto arg_out = std::max_element(p.data().begin(), p.data().end()) - p.data().begin();
    EXPECT_EQ(arg_in, arg_out);
  }
}

TEST(Sigmoid, Values) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0))[0], 0.5);
  EXPECT_NEAR(sigmoid(Tensor::scalar(2.0))[0], 0.8807970779778824, 1e-12);
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-30, 30);
    const double a = sigmoid(Tensor::scalar(x))[0], b = sigmoid(Tensor::scalar(-x))[0];
    EXPECT_NEAR(a + b, 1.0, 1e-12);
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
}

TEST(CrossEntropy, Values) {
  const std::vector<double> equal(7, 0.25);
  EXPECT_NEAR(cross_entropy_logits(equal, 3), std::log(7.0), 1e-14);
  EXPECT_NEAR(cross_entropy_logits(std::vector<double>{50, 0, 0, 0}, 0), 0.0, 1e-20);
  EXPECT_NEAR(cross_entropy_logits(std::vector<double>{1, 0}, 0), 0.3132616875182228340, 1e-14);
  EXPECT_THROW((void)cross_entropy_logits(std::vector<double>{1, 0}, 2), std::out_of_range);
}

TEST(Backward, SumAndDot) {
  Rng rng(5);
  Var x = Var::parameter(random_matrix(3, 4, rng));
  backward(sum(x));
  const Tensor gx = x.grad();
  for (double g : gx.data()) EXPECT_EQ(g, 1.0);

  Var a = Var::parameter(random_matrix(1, 5, rng));
  Var b = Var::parameter(random_matrix(1, 5, rng));
  backward(dot(a, b));
  EXPECT_LT(max_abs_diff(a.grad(), b.value()), 1e-15);
  EXPECT_LT(max_abs_diff(b.grad(), a.value()), 1e-15);
}

TEST(Backward, RejectsNonScalar) {
  Var x = Var::parameter(Tensor({2, 2}));
  EXPECT_THROW(backward(x), std::invalid_argument);
}

TEST(Backward, AccumulatesAcrossSharedUse) {
  Var x = Var::parameter(Tensor::vector({1.0, 2.0}));
  backward(add(sum(x), sum(scale(x, 3.0))));
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Matmul, MatchesNaiveProduct) {
  Rng rng(9);
  const Tensor a = random_matrix(5, 7, rng), b = random_matrix(7, 3, rng);
  EXPECT_LT(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
  EXPECT_LT(max_abs_diff(matmul_nt(a, b.transposed()), naive_matmul(a, b)), 1e-12);
}

TEST(FiniteDiff, Oracles) {
  Rng rng(1);
  const Tensor x = random_matrix(2, 3, rng);
  const Tensor g_sum = finite_diff_gradient(
      [](const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }, x, 1e-5);
  for (double v : g_sum.data()) EXPECT_NEAR(v, 1.0, 1e-9);

  const Tensor g_sq = finite_diff_gradient(
      [](const Tensor& t) {
        double s = 0;
        for (double v : t.data()) s += 0.5 * v * v;
        return s;
      },
      x, 1e-5);
  EXPECT_LT(max_abs_diff(g_sq, x), 1e-8);

  const Tensor g_ce = finite_diff_gradient(
      [](const Tensor& t) { return cross_entropy_logits(t.data(), 0); }, Tensor::vector({1.0, 0.0}), 1e-5);
  // analytic: softmax - onehot = [-sigma(-1), sigma(-1)]
  EXPECT_NEAR(g_ce[0], -0.2689414213699951207, 1e-10);
  EXPECT_NEAR(g_ce[1], 0.2689414213699951207, 1e-10);

  EXPECT_THROW((void)finite_diff_gradient([](const Tensor&) { return 0.0; }, x, 0.0), std::invalid_argument);
  EXPECT_THROW((void)finite_diff_gradient([](const Tensor&) { return std::nan(""); }, x, 1e-5),
               std::runtime_error);
}

// Every op in the set against central differences at random points.
TEST(GradCheck, EveryOperation) {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    Var a = Var::parameter(random_matrix(6, 4, rng));
    Var b = Var::parameter(random_matrix(4, 5, rng));
    Var c = Var::parameter(random_matrix(6, 4, rng));
    Var bias = Var::parameter(random_matrix(1, 5, rng).reshaped({5}));
    std::vector<std::size_t> targets = {0, 4, 2, 1, 3, 2};
    std::vector<NamedParam> params = {{"a", a}, {"b", b}, {"c", c}, {"bias", bias}};

    auto loss = [&] {
      Var h = sigmoid(add_row(matmul(a, b), bias));           // 6x5
      Var s = softmax_rows(matmul_nt(c, a));                  // 6x6
      Var g = block_gram(mul(a, c), sub(c, scale(a, 0.3)), 3);  // 6x3
      Var cat = concat_cols(h, g);                            // 6x8
      Var pooled = segment_mean(cat, 2);                      // 3x8
      Var ce = cross_entropy_rows(cat, targets);
      Var r = relu(add(a, c));
      return add(add(add(ce, mean(pooled)), scale(sum(mul(s, s)), 0.1)),
                 add(scale(sum(r), 0.05), dot(reshape(a, {24}), reshape(c, {24}))));
    };
    const auto report = check_gradients(loss, params, 1e-5);
    EXPECT_LE(report.max_rel_error, 1e-4) << "worst: " << report.worst_param;
  }
}

TEST(Gaussian, DegenerateCasesReturnMean) {
  Rng rng(4);
  const Tensor mean = Tensor::vector({1.0, -2.0, 0.5});
  Tensor cov = Tensor::identity(3);
  EXPECT_EQ(sample_gaussian(mean, cov, 0.0, rng), mean);
  EXPECT_EQ(sample_gaussian(mean, Tensor({3, 3}), 1.0, rng), mean);
}

TEST(Gaussian, RejectsBadCovariance) {
  Rng rng(4);
  const Tensor mean = Tensor::vector({0.0, 0.0});
  try {
    (void)sample_gaussian(mean, Tensor::matrix(2, 2, {1, 0.5, 0.0, 1}), 1.0, rng);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("covariance not PSD"), std::string::npos);
  }
  EXPECT_THROW((void)sample_gaussian(mean, Tensor::matrix(2, 2, {1, 0, 0, -1}), 1.0, rng),
               std::invalid_argument);
  // Slightly indefinite within tolerance is clamped, not rejected.
  EXPECT_NO_THROW((void)sample_gaussian(mean, Tensor::matrix(2, 2, {1, 0, 0, -5e-9}), 1.0, rng));
}

TEST(Gaussian, EmpiricalMomentsIdentity) {
  Rng rng(77);
  const std::size_t d = 3, n = 100000;
  const Tensor mean = Tensor::vector({0.5, -1.0, 2.0});
  const GaussianSampler sampler(mean, Tensor::identity(d), 1.0);
  std::vector<double> s(d, 0.0), s2(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor x = sampler.sample(rng);
    for (std::size_t k = 0; k < d; ++k) {
      s[k] += x[k];
      s2[k] += x[k] * x[k];
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    const double m = s[k] / n, var = s2[k] / n - m * m;
    EXPECT_NEAR(m, mean[k], 0.02);
    EXPECT_NEAR(var, 1.0, 0.05);
  }
}

TEST(Gaussian, ClampRepairsSmallNegativeEigenvalues) {
  const Tensor cov = Tensor::matrix(2, 2, {1.0, 1.0, 1.0, 1.0 - 1e-9});
  const Tensor fixed = clamp_psd(cov);
  EXPECT_NO_THROW(check_psd(fixed));
  EXPECT_LT(max_abs_diff(fixed, cov), 1e-8);
}

TEST(Rng, ReproducibleStreams) {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.normal(), b.normal());
  }
  EXPECT_NE(Rng(123).next_u64(), Rng(124).next_u64());
  // Child streams are pure functions of (seed, key).
  EXPECT_EQ(Rng(5).derive(2).next_u64(), Rng(5).derive(2).next_u64());
  EXPECT_NE(Rng(5).derive(2).next_u64(), Rng(5).derive(3).next_u64());

  Rng u(8);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
    EXPECT_LT(u.uniform_index(7), 7u);
  }
}

TEST(Rng, SampleGaussianBitReproducible) {
  const Tensor cov = Tensor::matrix(2, 2, {2.0, 0.3, 0.3, 0.5});
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(sample_gaussian(Tensor::vector({1, 2}), cov, 0.7, a),
              sample_gaussian(Tensor::vector({1, 2}), cov, 0.7, b));
  }
}

TEST(Serialize, LayoutAndRoundTrip) {
  const Tensor t({2, 1, 3}, {1.5, -2.0, 0.0, 3.25, 1e-300, -7.0});
  const auto bytes = encode_tensor(t);
  ASSERT_EQ(bytes.size(), 4u + 4u + 3u * 8u + 6u * 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LCT1");
  EXPECT_EQ(bytes[4], 3);  // rank, little-endian u32
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[8], 2);  // first dim, little-endian u64
  EXPECT_EQ(decode_tensor(bytes), t);

  const auto path = std::filesystem::temp_directory_path() / "lcreg_serialize_test.lct";
  write_tensor(path, t);
  EXPECT_EQ(read_tensor(path), t);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW((void)decode_tensor(bad), std::runtime_error);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW((void)decode_tensor(bad), std::runtime_error);
}

TEST(Serialize, RandomTensorsRoundTripBitExact) {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    Shape shape;
    const std::size_t rank = 1 + rng.uniform_index(4);
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + rng.uniform_index(5));
    Tensor t(shape);
    for (auto& v : t.storage()) v = rng.normal() * std::pow(10.0, rng.uniform(-200, 200));
    EXPECT_EQ(decode_tensor(encode_tensor(t)), t);
  }
}
