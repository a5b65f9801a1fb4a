#include "kelp/errors.hpp"
#include "kelp/knockoffs.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace kelp;

namespace {

Matrix empirical_covariance(const Matrix& Z)
{
    return Z.transpose() * Z / static_cast<double>(Z.rows());
}

double max_abs_diff(const Matrix& a, const Matrix& b)
{
    return (a - b).cwiseAbs().maxCoeff();
}

Vector gaussian_vector(std::size_t n, std::mt19937_64& rng)
{
    return standard_normal(n, 1, rng).col(0);
}

} // namespace

TEST_CASE("design sampling matches its covariance")
{
    const std::size_t n = 40000;
    const double tol = 5.0 / std::sqrt(static_cast<double>(n));
    const Matrix X = sample_design(GaussianDesign::identity(6), n, 11);
    CHECK(max_abs_diff(empirical_covariance(X), Matrix::Identity(6, 6)) <= tol);

    const auto design = GaussianDesign::block_ar1(10, 5, 0.8);
    CHECK(design.sigma(0, 4) == doctest::Approx(std::pow(0.8, 4)));
    CHECK(design.sigma(4, 5) == 0.0);
    const Matrix Y = sample_design(design, n, 12);
    CHECK(max_abs_diff(empirical_covariance(Y), design.sigma) <= tol);
}

TEST_CASE("design sampling is deterministic and rejects indefinite covariances")
{
    const auto design = GaussianDesign::ar1(8, 0.5);
    CHECK(sample_design(design, 30, 5) == sample_design(design, 30, 5));
    CHECK(sample_design(design, 30, 5) != sample_design(design, 30, 6));
    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 1) = bad(1, 0) = 1.5;
    CHECK_THROWS_AS(sample_design(GaussianDesign{bad}, 10, 1), NotPositiveDefiniteError);
}

TEST_CASE("equicorrelated recipe")
{
    CHECK(equicorrelated_recipe(Matrix::Identity(4, 4)).scale == 1.0);
    Matrix two(2, 2);
    two << 1, 0.8, 0.8, 1;
    CHECK(equicorrelated_recipe(two).scale == doctest::Approx(0.4));
    Matrix mild(2, 2);
    mild << 1, 0.3, 0.3, 1;
    CHECK(equicorrelated_recipe(mild).scale == 1.0);
    CHECK_THROWS_AS(equicorrelated_recipe(2.0 * Matrix::Identity(2, 2)), PreconditionError);

    const auto sigma = GaussianDesign::ar1(10, 0.8).sigma;
    const auto recipe = equicorrelated_recipe(sigma);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(joint_covariance(sigma, recipe));
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("model-X knockoffs reproduce the joint covariance")
{
    const std::size_t n = 50000;
    const double tol = 5.0 / std::sqrt(static_cast<double>(n));
    for (const auto& sigma : {Matrix(Matrix::Identity(5, 5)), GaussianDesign::ar1(6, 0.8).sigma,
                              GaussianDesign::block_ar1(10, 5, 0.8).sigma}) {
        const auto recipe = equicorrelated_recipe(sigma);
        std::mt19937_64 rng(21);
        const Matrix X = sample_design(GaussianDesign{sigma}, n, rng);
        const Matrix Xt = GaussianKnockoffSampler(sigma, recipe).sample(X, rng);
        Matrix Z(X.rows(), 2 * X.cols());
        Z << X, Xt;
        CHECK(max_abs_diff(empirical_covariance(Z), joint_covariance(sigma, recipe)) <= tol);
    }
}

TEST_CASE("group-equicorrelated knockoffs")
{
    const auto sigma = GaussianDesign::block_ar1(10, 5, 0.8).sigma;
    const auto partition = block_partition("g", 10, 5);
    const auto recipe = group_equicorrelated_recipe(sigma, partition);
    CHECK(recipe.scale > 0.0);
    CHECK(recipe.scale <= 1.0);
    // Blocks of S are gamma * sigma_AA, zero across groups.
    CHECK(recipe.S(0, 3) == doctest::Approx(recipe.scale * sigma(0, 3)));
    CHECK(recipe.S(0, 5) == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(joint_covariance(sigma, recipe));
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8);

    // With independent blocks the group problem allows the full copy.
    CHECK(recipe.scale == doctest::Approx(1.0));

    const std::size_t n = 50000;
    const double tol = 5.0 / std::sqrt(static_cast<double>(n));
    const Matrix X = sample_design(GaussianDesign{sigma}, n, 3);
    const Matrix Xt = sample_knockoffs(X, sigma, recipe, 4);
    const Matrix cross = X.transpose() * Xt / static_cast<double>(n);
    CHECK(max_abs_diff(cross, sigma - recipe.S) <= tol);
    CHECK(max_abs_diff(empirical_covariance(Xt), sigma) <= tol);

    const auto ar = GaussianDesign::ar1(10, 0.6).sigma;
    const auto correlated = group_equicorrelated_recipe(ar, partition);
    CHECK(correlated.scale < 1.0);
    Eigen::SelfAdjointEigenSolver<Matrix> eig2(joint_covariance(ar, correlated));
    CHECK(eig2.eigenvalues().minCoeff() >= -1e-8);
}

TEST_CASE("invalid recipe is rejected")
{
    KnockoffRecipe recipe;
    recipe.S = 3.0 * Matrix::Identity(3, 3);
    CHECK_THROWS_AS(GaussianKnockoffSampler(Matrix::Identity(3, 3), recipe), RecipeInvalidError);
}

TEST_CASE("fixed-equi knockoffs satisfy the Gram identities")
{
    // Orthonormal columns: the knockoffs are orthogonal to X.
    Matrix E = Matrix::Zero(8, 3);
    for (int j = 0; j < 3; ++j) E(j, j) = 1.0;
    const auto ortho = fixed_equi_knockoffs(E);
    CHECK(max_abs_diff(ortho.X.transpose() * ortho.Xtilde, Matrix::Zero(3, 3)) <= 1e-8);
    CHECK(max_abs_diff(ortho.Xtilde.transpose() * ortho.Xtilde, Matrix::Identity(3, 3)) <= 1e-8);

    Matrix X = sample_design(GaussianDesign::block_ar1(200, 10, 0.3), 450, 8);
    const auto fk = fixed_equi_knockoffs(X);
    const Matrix gram = fk.X.transpose() * fk.X;
    CHECK(max_abs_diff(fk.Xtilde.transpose() * fk.Xtilde, gram) <= 1e-6);
    Matrix shifted = gram;
    shifted.diagonal() -= fk.s;
    CHECK(max_abs_diff(fk.X.transpose() * fk.Xtilde, shifted) <= 1e-6);
    CHECK(fixed_equi_knockoffs(X).Xtilde == fk.Xtilde);

    CHECK_THROWS_AS(fixed_equi_knockoffs(Matrix::Ones(5, 3)), PreconditionError);
}

TEST_CASE("huge penalty zeroes every statistic")
{
    std::mt19937_64 rng(2);
    const Matrix X = standard_normal(60, 5, rng);
    const Matrix Xt = standard_normal(60, 5, rng);
    const Vector y = X.col(0) + gaussian_vector(60, rng);
    LassoOptions options;
    options.fixed_lambda = 1e6;
    LassoFit fit;
    const auto w = lasso_cv_statistics(X, Xt, y, singleton_partition("1", 5), options, 1, &fit);
    for (double v : w) CHECK(v == 0.0);
    CHECK(fit.beta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one standardized column matches soft thresholding")
{
    std::mt19937_64 rng(9);
    const std::size_t n = 100;
    Vector x = gaussian_vector(n, rng);
    x.array() -= x.mean();
    x /= std::sqrt(x.squaredNorm() / static_cast<double>(n));
    const Vector y = 0.7 * x + gaussian_vector(n, rng);
    const Vector yc = y.array() - y.mean();
    const double score = x.dot(yc) / static_cast<double>(n);
    for (const double lambda : {0.05, 0.3, 2.0}) {
        LassoOptions options;
        options.fixed_lambda = lambda;
        const LassoFit fit = lasso_cv(x, Matrix::Zero(static_cast<Eigen::Index>(n), 1), y, options, 0);
        const double expected = std::max(std::abs(score) - lambda, 0.0) * (score > 0 ? 1.0 : -1.0);
        CHECK(fit.beta(0) == doctest::Approx(expected).epsilon(1e-6));
        CHECK(fit.beta(1) == 0.0);
    }
}

TEST_CASE("cross-validated lasso finds a planted signal")
{
    std::mt19937_64 rng(4);
    const Matrix X = standard_normal(200, 10, rng);
    const Matrix Xt = standard_normal(200, 10, rng);
    const Vector y = 2.0 * X.col(3) - 1.5 * X.col(7) + gaussian_vector(200, rng);
    LassoFit fit;
    const auto w = lasso_cv_statistics(X, Xt, y, singleton_partition("1", 10), LassoOptions{}, 17, &fit);
    CHECK(w[3] > 1.0);
    CHECK(w[7] > 1.0);
    CHECK(fit.lambdas.size() <= 100);
    CHECK(fit.cv_error.size() == fit.lambdas.size());
    CHECK(fit.folds.size() == 200);
    CHECK(fit.lambda > 0.0);
    const auto again = lasso_cv_statistics(X, Xt, y, singleton_partition("1", 10), LassoOptions{}, 17);
    CHECK(again == w);

    const auto grouped = lasso_cv_statistics(X, Xt, y, block_partition("g", 10, 5), LassoOptions{}, 17);
    CHECK(grouped[0] == doctest::Approx(w[0] + w[1] + w[2] + w[3] + w[4]));

    CHECK_THROWS_AS(lasso_cv(X, Xt, Vector::Ones(200), LassoOptions{}, 1), PreconditionError);
    LassoOptions one_fold;
    one_fold.folds = 1;
    CHECK_THROWS_AS(lasso_cv(X, Xt, y, one_fold, 1), PreconditionError);
}

TEST_CASE("lasso statistic flips sign when a feature is swapped with its knockoff")
{
    std::mt19937_64 rng(6);
    const Matrix X = standard_normal(150, 8, rng);
    const Matrix Xt = standard_normal(150, 8, rng);
    const Vector y = 1.5 * X.col(2) + X.col(5) + gaussian_vector(150, rng);
    const auto partition = singleton_partition("1", 8);
    const auto w = lasso_cv_statistics(X, Xt, y, partition, LassoOptions{}, 3);
    Matrix Xs = X;
    Matrix Xts = Xt;
    Xs.col(2) = Xt.col(2);
    Xts.col(2) = X.col(2);
    const auto ws = lasso_cv_statistics(Xs, Xts, y, partition, LassoOptions{}, 3);
    CHECK(w[2] > 0.0);
    // Coordinate order changes under the swap, so agreement is up to solver tolerance.
    CHECK(std::abs(ws[2] + w[2]) < 1e-4);
    for (std::size_t j = 0; j < 8; ++j)
        if (j != 2) CHECK(std::abs(ws[j] - w[j]) < 1e-4);
}

TEST_CASE("null lasso statistics have symmetric signs")
{
    std::mt19937_64 rng(31);
    LassoOptions options;
    options.fixed_lambda = 0.02;
    std::size_t positive = 0;
    std::size_t nonzero = 0;
    const auto partition = singleton_partition("1", 20);
    const auto sigma = GaussianDesign::ar1(20, 0.5).sigma;
    const auto recipe = equicorrelated_recipe(sigma);
    for (int rep = 0; rep < 20; ++rep) {
        const Matrix X = sample_design(GaussianDesign{sigma}, 100, rng);
        const Matrix Xt = GaussianKnockoffSampler(sigma, recipe).sample(X, rng);
        const Vector y = gaussian_vector(100, rng);
        for (double v : lasso_cv_statistics(X, Xt, y, partition, options, 0)) {
            if (v == 0.0) continue;
            ++nonzero;
            if (v > 0.0) ++positive;
        }
    }
    REQUIRE(nonzero > 200);
    const double frac = static_cast<double>(positive) / static_cast<double>(nonzero);
    CHECK(std::abs(frac - 0.5) <= 3.0 * std::sqrt(0.25 / static_cast<double>(nonzero)));
}

TEST_CASE("logistic lasso recovers a planted signal")
{
    std::mt19937_64 rng(12);
    const std::size_t n = 400;
    const Matrix X = standard_normal(n, 6, rng);
    const Matrix Xt = standard_normal(n, 6, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector y(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double eta = -1.0 + 1.5 * X(i, 1);
        y(i) = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
    }
    LassoOptions options;
    options.response = ResponseKind::binomial;
    const auto w = lasso_cv_statistics(X, Xt, y, singleton_partition("1", 6), options, 5);
    CHECK(w[1] > 0.5);
    for (std::size_t j = 0; j < 6; ++j)
        if (j != 1) CHECK(std::abs(w[j]) < w[1]);

    Vector bad = y;
    bad(0) = 0.5;
    CHECK_THROWS_AS(lasso_cv(X, Xt, bad, options, 1), PreconditionError);
}

TEST_CASE("entry penalties and signed-max statistics")
{
    std::mt19937_64 rng(8);
    const Matrix X = standard_normal(200, 6, rng);
    const Matrix Xt = standard_normal(200, 6, rng);
    const Vector y = 3.0 * X.col(0) + gaussian_vector(200, rng);
    const Vector entry = lasso_entry_lambdas(X, Xt, y, LassoOptions{});
    CHECK(entry.size() == 12);
    CHECK(entry(0) == entry.maxCoeff());
    const auto w = signed_max_scores(entry, singleton_partition("1", 6));
    CHECK(w[0] == entry(0));

    Vector manual(4);
    manual << 0.5, 0.1, 0.3, 0.7;
    CHECK(signed_max_scores(manual, singleton_partition("1", 2)) == std::vector<double>{0.5, -0.7});
    CHECK(signed_max_scores(manual, block_partition("g", 2, 2)) == std::vector<double>{-0.7});
}

TEST_CASE("matrix files and the design cache round-trip")
{
    const auto dir = std::filesystem::temp_directory_path() / "kelp_cache_test";
    std::filesystem::remove_all(dir);
    DesignCache cache(dir.string());
    int calls = 0;
    auto make = [&] {
        ++calls;
        return sample_design(GaussianDesign::identity(3), 4, 1);
    };
    const Matrix a = cache.load_or_generate("cfg", 7, "X", make);
    const Matrix b = cache.load_or_generate("cfg", 7, "X", make);
    CHECK(calls == 1);
    CHECK(a == b);
    CHECK_THROWS_AS(read_matrix((dir / "missing.f64").string()), ParseError);
    std::filesystem::remove_all(dir);
}
