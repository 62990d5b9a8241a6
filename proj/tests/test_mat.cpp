#include <doctest.h>

#include <cmath>

#include "tandem/mat.hpp"
#include "tandem/rng.hpp"

using namespace tandem;

namespace {

Mat random_mat(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
  return m;
}

// Reference product, textbook ordering.
Mat mm_ref(const Mat& a, const Mat& b) {
  Mat c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double acc = 0;
      for (int k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

void check_close(const Mat& a, const Mat& b, double tol) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(std::abs(a.data()[i] - b.data()[i]) <= tol);
}

}  // namespace

TEST_CASE("matmul variants match the reference product") {
  const Mat a = random_mat(7, 11, 1);
  const Mat b = random_mat(11, 5, 2);
  check_close(matmul(a, b), mm_ref(a, b), 1e-12);

  const Mat bt = transpose(b);
  check_close(matmul_nt(a, bt), mm_ref(a, b), 1e-12);

  const Mat at = transpose(a);
  check_close(matmul_tn(at, b), mm_ref(a, b), 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes with both shapes in the message") {
  const Mat a(3, 4);
  const Mat b(5, 2);
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3x4") != std::string::npos);
    CHECK(msg.find("5x2") != std::string::npos);
  }
}

TEST_CASE("masked softmax matches a direct high-precision evaluation") {
  Rng rng(3);
  const int rows = 9, cols = 17;
  Mat s(rows, cols);
  BoolMat mask(rows, cols);
  for (int i = 0; i < rows; ++i) {
    mask(i, i % cols) = 1;  // guarantee a permitted entry per row
    for (int j = 0; j < cols; ++j) {
      s(i, j) = rng.gaussian(0.0, 30.0);  // large spread to stress stability
      if (rng.bernoulli(0.5)) mask(i, j) = 1;
    }
  }
  const Mat p = masked_softmax(s, mask);
  for (int i = 0; i < rows; ++i) {
    long double denom = 0;
    for (int j = 0; j < cols; ++j)
      if (mask(i, j)) denom += std::exp(static_cast<long double>(s(i, j)));
    double row_sum = 0;
    for (int j = 0; j < cols; ++j) {
      if (mask(i, j)) {
        const long double want = std::exp(static_cast<long double>(s(i, j))) / denom;
        CHECK(std::abs(p(i, j) - static_cast<double>(want)) <= 1e-12);
      } else {
        CHECK(p(i, j) == 0.0);
      }
      row_sum += p(i, j);
    }
    CHECK(std::abs(row_sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("masked softmax rejects a row with nothing permitted") {
  Mat s(2, 3);
  BoolMat mask(2, 3);
  mask(0, 1) = 1;  // row 1 left empty
  CHECK_THROWS_AS(masked_softmax(s, mask), LayoutError);
}

TEST_CASE("layernorm output has zero mean and unit variance before gain/bias") {
  const Mat x = random_mat(6, 32, 4);
  const Mat gain = Mat::filled(1, 32, 1.0);
  const Mat bias(1, 32);
  const Mat y = layernorm(x, gain, bias, 1e-5);
  for (int i = 0; i < y.rows(); ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < y.cols(); ++j) mu += y(i, j);
    mu /= y.cols();
    for (int j = 0; j < y.cols(); ++j) var += (y(i, j) - mu) * (y(i, j) - mu);
    var /= y.cols();
    CHECK(std::abs(mu) <= 1e-12);
    CHECK(std::abs(var - 1.0) <= 1e-3);  // eps shifts variance slightly below 1
  }
}

TEST_CASE("slice and concat round trips") {
  const Mat a = random_mat(8, 6, 5);
  const Mat top = slice_rows(a, 0, 3);
  const Mat bottom = slice_rows(a, 3, 5);
  check_close(concat_rows<double>({&top, &bottom}), a, 0.0);

  const Mat left = slice_cols(a, 0, 2);
  const Mat right = slice_cols(a, 2, 4);
  check_close(concat_cols<double>({&left, &right}), a, 0.0);

  CHECK_THROWS_AS(slice_rows(a, 5, 9), ShapeError);
  CHECK_THROWS_AS(slice_cols(a, -1, 2), ShapeError);
}

TEST_CASE("non-finite kernel output is rejected with the op name") {
  Mat a(1, 2);
  a(0, 0) = 1e308;
  a(0, 1) = 1e308;
  Mat b(2, 1);
  b(0, 0) = 1e308;
  b(1, 0) = 1e308;
  try {
    matmul(a, b);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("gelu matches reference values") {
  // Spot values of the tanh-form GELU.
  Mat x(1, 3);
  x(0, 0) = 0.0;
  x(0, 1) = 1.0;
  x(0, 2) = -2.0;
  const Mat y = gelu(x);
  CHECK(y(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y(0, 1) == doctest::Approx(0.841192).epsilon(1e-5));
  CHECK(y(0, 2) == doctest::Approx(-0.0454023).epsilon(1e-4));
}

TEST_CASE("rng streams are deterministic and reasonable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng g(7);
  double mean = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += g.gaussian();
  mean /= n;
  CHECK(std::abs(mean) < 0.05);

  // derive_seed decorrelates nearby indices.
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
}

TEST_CASE("mean_rows and broadcast_row") {
  Mat x(2, 3);
  x(0, 0) = 1; x(0, 1) = 2; x(0, 2) = 3;
  x(1, 0) = 3; x(1, 1) = 4; x(1, 2) = 5;
  const Mat m = mean_rows(x);
  CHECK(m(0, 0) == doctest::Approx(2.0));
  CHECK(m(0, 1) == doctest::Approx(3.0));
  CHECK(m(0, 2) == doctest::Approx(4.0));
  const Mat b = broadcast_row(m, 4);
  CHECK(b.rows() == 4);
  CHECK(b(3, 2) == doctest::Approx(4.0));
}
