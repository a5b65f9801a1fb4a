#pragma once

#include "kelp/family.hpp"
#include "kelp/kelp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace kelp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Zero-mean Gaussian law for the rows of a design matrix.
struct GaussianDesign
{
    Matrix sigma;

    static GaussianDesign identity(std::size_t p);
    // Sigma_jk = rho^|j-k| over all features.
    static GaussianDesign ar1(std::size_t p, double rho);
    // Independent AR(1) blocks of `block` consecutive features.
    static GaussianDesign block_ar1(std::size_t p, std::size_t block, double rho);
};

/// Lower-triangular L with L L^T = sigma, retrying with diagonal jitter up
/// to 1e-8 before throwing NotPositiveDefiniteError.
Matrix cholesky_factor(const Matrix& sigma);

/// n i.i.d. rows from N(0, sigma).
Matrix sample_design(const GaussianDesign& design, std::size_t n, std::mt19937_64& rng);
Matrix sample_design(const GaussianDesign& design, std::size_t n, std::uint64_t seed);

/// Standard normal n x p matrix.
Matrix standard_normal(std::size_t n, std::size_t p, std::mt19937_64& rng);

enum class RecipeKind { equicorrelated, group_equicorrelated, fixed_equi };

std::string to_string(RecipeKind kind);

struct KnockoffRecipe
{
    RecipeKind kind = RecipeKind::equicorrelated;
    Matrix S;          // p x p, diagonal or block diagonal
    double scale = 1; // s for equicorrelated, gamma for the group version
};

/// S = s I with s = min(1, 2 lambda_min(sigma)). Needs a unit diagonal.
KnockoffRecipe equicorrelated_recipe(const Matrix& sigma);

/// S = gamma * blockdiag(sigma_AA) over the groups of `partition`, with
/// gamma = min(1, 2 lambda_min(D^-1/2 sigma D^-1/2)), confirmed by a
/// factorization probe of 2 sigma - S.
KnockoffRecipe group_equicorrelated_recipe(const Matrix& sigma, const Partition& partition);

/// Joint covariance [[sigma, sigma - S], [sigma - S, sigma]].
Matrix joint_covariance(const Matrix& sigma, const KnockoffRecipe& recipe);

/// Draws model-X knockoffs from N(X - X sigma^-1 S, 2S - S sigma^-1 S).
/// Construction throws RecipeInvalidError when the conditional covariance is
/// not PSD within tolerance.
class GaussianKnockoffSampler
{
public:
    GaussianKnockoffSampler(const Matrix& sigma, const KnockoffRecipe& recipe);

    Matrix sample(const Matrix& X, std::mt19937_64& rng) const;

    const KnockoffRecipe& recipe() const noexcept { return recipe_; }

private:
    KnockoffRecipe recipe_;
    Matrix mean_map_; // I - sigma^-1 S
    Matrix root_;     // R with R R^T = 2S - S sigma^-1 S
};

Matrix sample_knockoffs(const Matrix& X, const Matrix& sigma, const KnockoffRecipe& recipe, std::uint64_t seed);

struct FixedKnockoffs
{
    Matrix X;       // column-normalized input
    Matrix Xtilde;  // knockoff columns
    Vector s;
};

/// Deterministic fixed-design equicorrelated knockoffs. Requires n >= 2p.
/// Gram identities: Xt^T Xt = X^T X and X^T Xt = X^T X - diag(s).
FixedKnockoffs fixed_equi_knockoffs(const Matrix& X);

enum class ResponseKind { gaussian, binomial };

struct LassoOptions
{
    std::size_t folds = 10;
    std::size_t n_lambda = 100;
    double lambda_min_ratio = 1e-3;
    double tolerance = 1e-7;
    std::size_t max_sweeps = 1000;
    ResponseKind response = ResponseKind::gaussian;
    // Off for fixed-design knockoffs, whose statistics must depend on the
    // data only through the raw Gram matrix and X^T y.
    bool standardize = true;
    // When set, skips cross-validation and fits at this penalty.
    double fixed_lambda = -1.0;
};

struct LassoFit
{
    Vector beta;            // 2p: original columns then knockoffs, standardized scale
    double lambda = 0.0;
    std::vector<double> lambdas;
    std::vector<double> cv_error;
    std::vector<std::size_t> folds; // fold of each row
    std::uint64_t seed = 0;
};

/// Cross-validated lasso of y on [X, Xtilde] with standardized columns.
LassoFit lasso_cv(const Matrix& X, const Matrix& Xtilde, const Vector& y, const LassoOptions& options,
                  std::uint64_t seed);

/// W_A = sum_{j in A} |beta_j| - sum_{j in A} |beta~_j|.
std::vector<double> group_lasso_scores(const Vector& beta, const Partition& partition);

/// lasso_cv followed by group_lasso_scores on `partition`.
std::vector<double> lasso_cv_statistics(const Matrix& X, const Matrix& Xtilde, const Vector& y,
                                        const Partition& partition, const LassoOptions& options,
                                        std::uint64_t seed, LassoFit* fit = nullptr);

/// Entry penalty of every column along the lasso path (0 if it never enters).
Vector lasso_entry_lambdas(const Matrix& X, const Matrix& Xtilde, const Vector& y, const LassoOptions& options);

/// Signed max: W_A = max(Z_A, Z~_A) * sign(Z_A - Z~_A), Z_A the largest
/// entry penalty over the members of A.
std::vector<double> signed_max_scores(const Vector& entry, const Partition& partition);

/// Column-major float64 matrix files: uint64 rows, uint64 cols, data.
void write_matrix(const std::string& path, const Matrix& M);
Matrix read_matrix(const std::string& path);

/// On-disk cache of sampled matrices keyed by (config hash, seed).
class DesignCache
{
public:
    explicit DesignCache(std::string directory);

    std::string path_for(const std::string& config_hash, std::uint64_t seed, const std::string& tag) const;

    template <typename Generate>
    Matrix load_or_generate(const std::string& config_hash, std::uint64_t seed, const std::string& tag,
                            Generate generate) const
    {
        const std::string path = path_for(config_hash, seed, tag);
        if (exists(path)) return read_matrix(path);
        Matrix M = generate();
        write_matrix(path, M);
        return M;
    }

private:
    static bool exists(const std::string& path);
    std::string directory_;
};

} // namespace kelp
