#include "kelp/knockoffs.hpp"

#include "kelp/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace kelp {

namespace {

constexpr double kPsdTolerance = 1e-8;

double min_eigenvalue(const Matrix& A)
{
    Eigen::SelfAdjointEigenSolver<Matrix> solver(A, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

// R with R R^T = V for symmetric PSD V; small negative eigenvalues are
// clamped, larger ones mean the recipe is invalid.
Matrix psd_root(const Matrix& V)
{
    Eigen::SelfAdjointEigenSolver<Matrix> solver(V);
    const Vector& lambda = solver.eigenvalues();
    const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
    if (lambda.minCoeff() < -kPsdTolerance * scale) {
        throw RecipeInvalidError("knockoff conditional covariance is not positive semidefinite (min eigenvalue " +
                                 std::to_string(lambda.minCoeff()) + ")");
    }
    const Vector root = lambda.cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * root.asDiagonal();
}

Eigen::LLT<Matrix> factor_or_throw(const Matrix& sigma)
{
    const double scale = std::max(1.0, sigma.diagonal().cwiseAbs().maxCoeff());
    for (const double jitter : {0.0, 1e-12, 1e-10, 1e-8}) {
        Eigen::LLT<Matrix> llt(sigma + jitter * scale * Matrix::Identity(sigma.rows(), sigma.cols()));
        if (llt.info() == Eigen::Success) return llt;
    }
    throw NotPositiveDefiniteError("covariance is not positive definite");
}

void check_square(const Matrix& sigma)
{
    if (sigma.rows() == 0 || sigma.rows() != sigma.cols())
        throw PreconditionError("covariance must be a nonempty square matrix", "sigma");
    if (!sigma.isApprox(sigma.transpose(), 1e-12)) throw PreconditionError("covariance must be symmetric", "sigma");
}

} // namespace

GaussianDesign GaussianDesign::identity(std::size_t p)
{
    const auto n = static_cast<Eigen::Index>(p);
    return {Matrix::Identity(n, n)};
}

GaussianDesign GaussianDesign::ar1(std::size_t p, double rho)
{
    return block_ar1(p, p, rho);
}

GaussianDesign GaussianDesign::block_ar1(std::size_t p, std::size_t block, double rho)
{
    if (block == 0) throw PreconditionError("block size must be positive", "block");
    if (!(std::abs(rho) < 1.0)) throw PreconditionError("AR(1) correlation must lie in (-1,1)", "rho");
    const auto n = static_cast<Eigen::Index>(p);
    Matrix sigma = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            if (i / block != j / block) continue;
            const auto gap = static_cast<double>(i > j ? i - j : j - i);
            sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::pow(rho, gap);
        }
    }
    return {sigma};
}

Matrix cholesky_factor(const Matrix& sigma)
{
    check_square(sigma);
    return factor_or_throw(sigma).matrixL();
}

Matrix standard_normal(std::size_t n, std::size_t p, std::mt19937_64& rng)
{
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    // Row by row so that a prefix of rows does not depend on n.
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = z(rng);
    return out;
}

Matrix sample_design(const GaussianDesign& design, std::size_t n, std::mt19937_64& rng)
{
    const Matrix L = cholesky_factor(design.sigma);
    return standard_normal(n, static_cast<std::size_t>(design.sigma.rows()), rng) * L.transpose();
}

Matrix sample_design(const GaussianDesign& design, std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return sample_design(design, n, rng);
}

std::string to_string(RecipeKind kind)
{
    switch (kind) {
    case RecipeKind::equicorrelated: return "equicorrelated";
    case RecipeKind::group_equicorrelated: return "group-equicorrelated";
    case RecipeKind::fixed_equi: return "fixed-equi";
    }
    return "equicorrelated";
}

KnockoffRecipe equicorrelated_recipe(const Matrix& sigma)
{
    check_square(sigma);
    if ((sigma.diagonal().array() - 1.0).abs().maxCoeff() > 1e-10)
        throw PreconditionError("equicorrelated knockoffs need a unit diagonal; standardize the covariance first",
                                "sigma");
    KnockoffRecipe recipe;
    recipe.kind = RecipeKind::equicorrelated;
    recipe.scale = std::min(1.0, 2.0 * min_eigenvalue(sigma));
    if (!(recipe.scale > 0.0)) throw NotPositiveDefiniteError("covariance is not positive definite");
    recipe.S = recipe.scale * Matrix::Identity(sigma.rows(), sigma.cols());
    return recipe;
}

KnockoffRecipe group_equicorrelated_recipe(const Matrix& sigma, const Partition& partition)
{
    check_square(sigma);
    const Eigen::Index p = sigma.rows();
    Matrix D = Matrix::Zero(p, p);
    for (const auto& group : partition.groups) {
        for (const std::size_t a : group) {
            for (const std::size_t b : group) {
                if (a >= static_cast<std::size_t>(p) || b >= static_cast<std::size_t>(p))
                    throw PreconditionError("partition does not match the covariance dimension");
                D(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                    sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            }
        }
    }
    // D^-1/2 sigma D^-1/2 is similar to L^-1 sigma L^-T for D = L L^T.
    const Eigen::LLT<Matrix> dllt = factor_or_throw(D);
    const Matrix Linv = dllt.matrixL().solve(Matrix::Identity(p, p));
    const Matrix scaled = Linv * sigma * Linv.transpose();
    double gamma = std::min(1.0, 2.0 * min_eigenvalue(0.5 * (scaled + scaled.transpose())));
    if (!(gamma > 0.0)) throw NotPositiveDefiniteError("covariance is not positive definite");

    // Factorization probe on 2 sigma - gamma D; shrink by bisection if rounding
    // pushes it outside the PSD cone.
    auto admissible = [&](double g) {
        const Matrix probe = 2.0 * sigma - g * D + kPsdTolerance * Matrix::Identity(p, p);
        return Eigen::LLT<Matrix>(probe).info() == Eigen::Success;
    };
    if (!admissible(gamma)) {
        double lo = 0.0, hi = gamma;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (admissible(mid) ? lo : hi) = mid;
        }
        gamma = lo;
    }
    KnockoffRecipe recipe;
    recipe.kind = RecipeKind::group_equicorrelated;
    recipe.scale = gamma;
    recipe.S = gamma * D;
    return recipe;
}

Matrix joint_covariance(const Matrix& sigma, const KnockoffRecipe& recipe)
{
    const Eigen::Index p = sigma.rows();
    Matrix G(2 * p, 2 * p);
    G.topLeftCorner(p, p) = sigma;
    G.bottomRightCorner(p, p) = sigma;
    G.topRightCorner(p, p) = sigma - recipe.S;
    G.bottomLeftCorner(p, p) = sigma - recipe.S;
    return G;
}

GaussianKnockoffSampler::GaussianKnockoffSampler(const Matrix& sigma, const KnockoffRecipe& recipe)
    : recipe_(recipe)
{
    check_square(sigma);
    if (recipe.S.rows() != sigma.rows() || recipe.S.cols() != sigma.cols())
        throw RecipeInvalidError("recipe dimension does not match the covariance");
    const Eigen::LLT<Matrix> llt = factor_or_throw(sigma);
    const Matrix sinv_s = llt.solve(recipe.S);
    const Eigen::Index p = sigma.rows();
    mean_map_ = Matrix::Identity(p, p) - sinv_s;
    Matrix V = 2.0 * recipe.S - recipe.S * sinv_s;
    V = 0.5 * (V + V.transpose());
    root_ = psd_root(V);
}

Matrix GaussianKnockoffSampler::sample(const Matrix& X, std::mt19937_64& rng) const
{
    if (X.cols() != mean_map_.rows()) throw PreconditionError("design has the wrong number of columns");
    const Matrix Z = standard_normal(static_cast<std::size_t>(X.rows()), static_cast<std::size_t>(X.cols()), rng);
    return X * mean_map_ + Z * root_.transpose();
}

Matrix sample_knockoffs(const Matrix& X, const Matrix& sigma, const KnockoffRecipe& recipe, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return GaussianKnockoffSampler(sigma, recipe).sample(X, rng);
}

FixedKnockoffs fixed_equi_knockoffs(const Matrix& X_in)
{
    const Eigen::Index n = X_in.rows();
    const Eigen::Index p = X_in.cols();
    if (p == 0 || n < 2 * p) {
        throw PreconditionError("fixed-design knockoffs need n >= 2p (n=" + std::to_string(n) +
                                    ", p=" + std::to_string(p) + ")",
                                "n");
    }
    FixedKnockoffs out;
    out.X = X_in;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double norm = out.X.col(j).norm();
        if (!(norm > 0.0)) throw PreconditionError("design has a zero column", "X");
        out.X.col(j) /= norm;
    }
    const Matrix gram = out.X.transpose() * out.X;
    const double s = std::min(1.0, 2.0 * min_eigenvalue(gram));
    if (!(s > 0.0)) throw NotPositiveDefiniteError("Gram matrix is singular");
    out.s = Vector::Constant(p, s);

    const Eigen::LLT<Matrix> llt = factor_or_throw(gram);
    const Matrix S = s * Matrix::Identity(p, p);
    const Matrix ginv_s = llt.solve(S);
    Matrix V = 2.0 * S - S * ginv_s;
    V = 0.5 * (V + V.transpose());
    const Matrix C = psd_root(V).transpose(); // C^T C = V

    // Orthonormal columns orthogonal to span(X) from the full QR.
    const Eigen::HouseholderQR<Matrix> qr(out.X);
    const Matrix Q = qr.householderQ() * Matrix::Identity(n, 2 * p);
    const Matrix U = Q.rightCols(p);
    out.Xtilde = out.X * (Matrix::Identity(p, p) - ginv_s) + U * C;
    return out;
}

void write_matrix(const std::string& path, const Matrix& M)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write matrix file '" + path + "'");
    const std::uint64_t dims[2] = {static_cast<std::uint64_t>(M.rows()), static_cast<std::uint64_t>(M.cols())};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(M.data()), static_cast<std::streamsize>(sizeof(double) * M.size()));
}

Matrix read_matrix(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open matrix file '" + path + "'", path);
    std::uint64_t dims[2] = {0, 0};
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in) throw ParseError("truncated matrix header", path);
    Matrix M(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    in.read(reinterpret_cast<char*>(M.data()), static_cast<std::streamsize>(sizeof(double) * M.size()));
    if (!in) throw ParseError("truncated matrix data", path);
    return M;
}

DesignCache::DesignCache(std::string directory)
    : directory_(std::move(directory))
{
    std::filesystem::create_directories(directory_);
}

std::string DesignCache::path_for(const std::string& config_hash, std::uint64_t seed, const std::string& tag) const
{
    char name[64];
    std::snprintf(name, sizeof(name), "-%016llx-", static_cast<unsigned long long>(seed));
    return (std::filesystem::path(directory_) / (config_hash + name + tag + ".f64")).string();
}

bool DesignCache::exists(const std::string& path)
{
    return std::filesystem::exists(path);
}

} // namespace kelp
