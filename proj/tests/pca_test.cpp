#include "doctest.h"

#include <cmath>
#include <vector>

#include "cardecon/pca.hpp"
#include "cardecon/rng.hpp"
#include "oracles.hpp"

using namespace cardecon;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  CounterRng rng(seed, "matrix");
  for (auto& v : m.data) v = rng.next_normal();
  return m;
}

}  // namespace

TEST_SUITE("correlation") {
  TEST_CASE("unit diagonal and perfect anticorrelation") {
    Matrix x(5, 2);
    CounterRng rng(1, "corr");
    for (std::size_t r = 0; r < 5; ++r) {
      x.at(r, 0) = rng.next_normal();
      x.at(r, 1) = -3.0 * x.at(r, 0);
    }
    const Matrix r = correlation_matrix(x);
    CHECK(r.at(0, 0) == 1.0);
    CHECK(r.at(1, 1) == 1.0);
    CHECK(r.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
  }

  TEST_CASE("matches the elementwise covariance formula") {
    const Matrix x = random_matrix(5, 3, 2);
    const Matrix r = correlation_matrix(x);
    // brute force: C(i,j)/sqrt(C(i,i) C(j,j)) with its own loops
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double mi = 0, mj = 0;
        for (std::size_t k = 0; k < 5; ++k) {
          mi += x.at(k, i);
          mj += x.at(k, j);
        }
        mi /= 5;
        mj /= 5;
        double cij = 0, cii = 0, cjj = 0;
        for (std::size_t k = 0; k < 5; ++k) {
          cij += (x.at(k, i) - mi) * (x.at(k, j) - mj);
          cii += (x.at(k, i) - mi) * (x.at(k, i) - mi);
          cjj += (x.at(k, j) - mj) * (x.at(k, j) - mj);
        }
        CHECK(std::fabs(r.at(i, j) - cij / std::sqrt(cii * cjj)) < 1e-12);
      }
  }

  TEST_CASE("zero-variance column is named") {
    Matrix x(4, 2, 1.0);
    for (std::size_t r = 0; r < 4; ++r) x.at(r, 0) = static_cast<double>(r);
    CHECK_THROWS_WITH_AS(correlation_matrix(x), doctest::Contains("column 1"),
                         std::invalid_argument);
  }

  TEST_CASE("invariant under positive affine column rescaling") {
    const Matrix x = random_matrix(12, 4, 3);
    Matrix y = x;
    for (std::size_t r = 0; r < y.rows; ++r) y.at(r, 2) = 5.5 * y.at(r, 2) + 100.0;
    const Matrix rx = correlation_matrix(x);
    const Matrix ry = correlation_matrix(y);
    for (std::size_t i = 0; i < rx.data.size(); ++i)
      CHECK(std::fabs(rx.data[i] - ry.data[i]) < 1e-12);
  }
}

TEST_SUITE("pca") {
  TEST_CASE("rank-1 data concentrates all variance in one component") {
    Matrix x(20, 6);
    CounterRng rng(4, "rank1");
    std::vector<double> direction(6);
    for (auto& d : direction) d = rng.next_normal();
    for (std::size_t r = 0; r < 20; ++r) {
      const double t = rng.next_normal();
      for (std::size_t c = 0; c < 6; ++c) x.at(r, c) = t * direction[c];
    }
    const PCAModel model = fit_pca(x);
    CHECK(model.explained_fraction[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 1; i < model.k_max(); ++i) CHECK(model.eigenvalues[i] <= 1e-12);
  }

  TEST_CASE("isotropic two-column data splits variance evenly") {
    Matrix x(100000, 2);
    CounterRng rng(5, "iso");
    for (auto& v : x.data) v = rng.next_normal();
    const PCAModel model = fit_pca(x);
    CHECK(std::fabs(model.explained_fraction[0] - 0.5) < 0.02);
    CHECK(std::fabs(model.explained_fraction[1] - 0.5) < 0.02);
  }

  TEST_CASE("components are orthonormal and fractions sum to one") {
    const Matrix x = random_matrix(40, 8, 6);
    const PCAModel model = fit_pca(x);
    for (std::size_t i = 0; i < model.k_max(); ++i)
      for (std::size_t j = 0; j < model.k_max(); ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < 8; ++c)
          dot += model.components.at(i, c) * model.components.at(j, c);
        CHECK(std::fabs(dot - (i == j ? 1.0 : 0.0)) < 1e-8);
      }
    double total = 0.0;
    for (double f : model.explained_fraction) total += f;
    CHECK(std::fabs(total - 1.0) < 1e-10);
    for (std::size_t i = 1; i < model.k_max(); ++i)
      CHECK(model.eigenvalues[i] <= model.eigenvalues[i - 1]);
  }

  TEST_CASE("sign convention: largest-magnitude loading is positive") {
    const Matrix x = random_matrix(30, 5, 7);
    const PCAModel model = fit_pca(x);
    for (std::size_t i = 0; i < model.k_max(); ++i) {
      double best = 0.0;
      for (std::size_t c = 0; c < 5; ++c)
        if (std::fabs(model.components.at(i, c)) > std::fabs(best))
          best = model.components.at(i, c);
      CHECK(best > 0.0);
    }
  }

  TEST_CASE("projection round trip and centering") {
    const Matrix x = random_matrix(25, 6, 8);
    const PCAModel model = fit_pca(x);
    const Matrix scores = project(model, x, model.k_max());
    const Matrix back = reconstruct(model, scores);
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c)
        CHECK(std::fabs(back.at(r, c) - x.at(r, c)) < 1e-9);

    // projecting the mean row gives the zero vector
    Matrix mean_row(1, 6);
    for (std::size_t c = 0; c < 6; ++c) mean_row.at(0, c) = model.mean[c];
    const Matrix zero = project(model, mean_row, model.k_max());
    for (double v : zero.data) CHECK(std::fabs(v) < 1e-12);
  }

  TEST_CASE("score variances equal the eigenvalues") {
    const Matrix x = random_matrix(60, 7, 9);
    const PCAModel model = fit_pca(x);
    const Matrix scores = project(model, x, model.k_max());
    for (std::size_t c = 0; c < model.k_max(); ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < scores.rows; ++r) mean += scores.at(r, c);
      mean /= static_cast<double>(scores.rows);
      double var = 0.0;
      for (std::size_t r = 0; r < scores.rows; ++r)
        var += (scores.at(r, c) - mean) * (scores.at(r, c) - mean);
      var /= static_cast<double>(scores.rows - 1);
      CHECK(std::fabs(var - model.eigenvalues[c]) < 1e-9);
    }
  }

  TEST_CASE("row permutation leaves the model unchanged") {
    const Matrix x = random_matrix(30, 6, 10);
    Matrix shuffled = x;
    std::vector<std::size_t> order(30);
    for (std::size_t i = 0; i < 30; ++i) order[i] = i;
    CounterRng rng(11, "perm");
    rng.shuffle(order);
    for (std::size_t r = 0; r < 30; ++r)
      for (std::size_t c = 0; c < 6; ++c) shuffled.at(r, c) = x.at(order[r], c);
    const PCAModel a = fit_pca(x);
    const PCAModel b = fit_pca(shuffled);
    for (std::size_t i = 0; i < a.k_max(); ++i)
      CHECK(std::fabs(a.eigenvalues[i] - b.eigenvalues[i]) < 1e-9);
    for (std::size_t i = 0; i < a.components.data.size(); ++i)
      CHECK(std::fabs(a.components.data[i] - b.components.data[i]) < 1e-9);
  }

  TEST_CASE("reconstruction error is nonincreasing in k") {
    const Matrix x = random_matrix(30, 8, 12);
    const PCAModel model = fit_pca(x);
    double prev = 1e300;
    for (std::size_t k = 1; k <= model.k_max(); ++k) {
      const Matrix scores = project(model, x, k);
      const Matrix back = reconstruct(model, scores);
      double err = 0.0;
      for (std::size_t i = 0; i < x.data.size(); ++i)
        err += (back.data[i] - x.data[i]) * (back.data[i] - x.data[i]);
      CHECK(err <= prev + 1e-9);
      prev = err;
    }
  }

  TEST_CASE("eigenpairs match the characteristic-polynomial oracle on 4x4") {
    for (int trial = 0; trial < 20; ++trial) {
      // random covariance: G^T G
      Matrix g = random_matrix(8, 4, 100 + trial);
      oracles::Mat4 cov{};
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          double s = 0.0;
          for (std::size_t r = 0; r < 8; ++r) s += g.at(r, i) * g.at(r, j);
          cov[i][j] = s / 8.0;
        }
      Matrix a(4, 4);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) a.at(i, j) = cov[i][j];
      const EigenSystem es = jacobi_eigensystem(a);
      const oracles::Vec4 expected = oracles::eigenvalues_by_char_poly(cov);
      for (int i = 0; i < 4; ++i) {
        CHECK(std::fabs(es.eigenvalues[i] - expected[i]) < 1e-8);
        const oracles::Vec4 v = oracles::eigenvector_by_inverse_iteration(cov, expected[i]);
        double dot = 0.0;
        for (int c = 0; c < 4; ++c) dot += v[c] * es.eigenvectors.at(i, c);
        CHECK(std::fabs(std::fabs(dot) - 1.0) < 1e-7);
      }
    }
  }
}

TEST_SUITE("select_components") {
  TEST_CASE("cumulative scan and fixed mode") {
    PCAModel model;
    model.mean = {0, 0, 0};
    model.components = Matrix(3, 3);
    model.eigenvalues = {6.0, 3.0, 1.0};
    model.explained_fraction = {0.6, 0.3, 0.1};
    CHECK(select_components(model, KMode::variance_threshold(0.95)) == 3);
    CHECK(select_components(model, KMode::variance_threshold(0.9)) == 2);
    CHECK(select_components(model, KMode::variance_threshold(0.6)) == 1);
    model.explained_fraction = {0.96, 0.03, 0.01};
    CHECK(select_components(model, KMode::variance_threshold(0.95)) == 1);
    CHECK(select_components(model, KMode::fixed(2)) == 2);
    CHECK_THROWS(select_components(model, KMode::fixed(0)));
    CHECK_THROWS(select_components(model, KMode::fixed(4)));
    CHECK_THROWS(select_components(model, KMode::variance_threshold(0.0)));
  }
}
