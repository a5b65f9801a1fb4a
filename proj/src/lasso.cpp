#include "kelp/errors.hpp"
#include "kelp/knockoffs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kelp {

namespace {

constexpr double kDevianceStop = 0.999;
constexpr double kDevianceStall = 1e-5;
constexpr double kMinWeight = 1e-5;
constexpr std::size_t kMaxIrls = 25;

double soft_threshold(double z, double lambda)
{
    if (z > lambda) return z - lambda;
    if (z < -lambda) return z + lambda;
    return 0.0;
}

std::vector<double> lambda_grid(double lambda_max, const LassoOptions& options)
{
    const std::size_t k = std::max<std::size_t>(options.n_lambda, 1);
    std::vector<double> grid(k, lambda_max);
    for (std::size_t i = 1; i < k; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(k - 1);
        grid[i] = lambda_max * std::pow(options.lambda_min_ratio, frac);
    }
    return grid;
}

// Column centering and scaling of a design, with zero scale marking a
// constant column that is kept out of the fit.
struct Scaling
{
    Vector mean;
    Vector inv_sd;
};

// Least-squares lasso in covariance form: minimizes
// 0.5 b'Gb - c'b + lambda |b|_1 with the gradient r = c - G b maintained.
class GaussianPath
{
public:
    GaussianPath(Matrix G, Vector c, double yy, const LassoOptions& options)
        : G_(std::move(G)), c_(std::move(c)), yy_(yy), options_(options), beta_(Vector::Zero(c_.size())), r_(c_),
          active_(static_cast<std::size_t>(c_.size()), false)
    {
    }

    double lambda_max() const { return c_.size() == 0 ? 0.0 : c_.cwiseAbs().maxCoeff(); }

    void fit(double lambda)
    {
        for (std::size_t sweep = 0; sweep < options_.max_sweeps; ++sweep) {
            if (this->sweep(lambda, false) < options_.tolerance) break;
            for (std::size_t inner = 0; inner < options_.max_sweeps; ++inner)
                if (this->sweep(lambda, true) < options_.tolerance) break;
        }
    }

    double deviance_ratio() const
    {
        if (!(yy_ > 0.0)) return 1.0;
        const double rss = yy_ - beta_.dot(c_) - beta_.dot(r_);
        return 1.0 - rss / yy_;
    }

    const Vector& beta() const { return beta_; }

private:
    double sweep(double lambda, bool active_only)
    {
        double change = 0.0;
        if (active_only) {
            for (const Eigen::Index j : active_list_) change = std::max(change, update(j, lambda));
            return change;
        }
        for (Eigen::Index j = 0; j < beta_.size(); ++j) change = std::max(change, update(j, lambda));
        return change;
    }

    double update(Eigen::Index j, double lambda)
    {
        const double gjj = G_(j, j);
        if (!(gjj > 0.0)) return 0.0;
        const double old = beta_(j);
        const double updated = soft_threshold(r_(j) + gjj * old, lambda) / gjj;
        const double delta = updated - old;
        if (delta == 0.0) return 0.0;
        beta_(j) = updated;
        r_.noalias() -= delta * G_.col(j);
        const auto uj = static_cast<std::size_t>(j);
        if (!active_[uj]) {
            active_[uj] = true;
            active_list_.push_back(j);
        }
        return gjj * delta * delta;
    }

    Matrix G_;
    Vector c_;
    double yy_;
    LassoOptions options_;
    Vector beta_;
    Vector r_;
    std::vector<bool> active_;
    std::vector<Eigen::Index> active_list_;
};

struct Moments
{
    double n = 0.0;
    Vector sum;
    Matrix gram;
    Vector zty;
    double sum_y = 0.0;
    double yy = 0.0;
};

Moments moments_of(const Matrix& Z, const Vector& y)
{
    Moments m;
    m.n = static_cast<double>(Z.rows());
    m.sum = Z.colwise().sum().transpose();
    m.gram = Matrix::Zero(Z.cols(), Z.cols());
    m.gram.selfadjointView<Eigen::Lower>().rankUpdate(Z.transpose());
    m.gram = m.gram.selfadjointView<Eigen::Lower>();
    m.zty = Z.transpose() * y;
    m.sum_y = y.sum();
    m.yy = y.squaredNorm();
    return m;
}

Moments subtract(const Moments& a, const Moments& b)
{
    Moments m;
    m.n = a.n - b.n;
    m.sum = a.sum - b.sum;
    m.gram = a.gram - b.gram;
    m.zty = a.zty - b.zty;
    m.sum_y = a.sum_y - b.sum_y;
    m.yy = a.yy - b.yy;
    return m;
}

struct GaussianProblem
{
    Scaling scaling;
    double y_mean = 0.0;
    GaussianPath path;
};

GaussianProblem gaussian_problem(const Moments& m, const LassoOptions& options)
{
    const Eigen::Index q = m.sum.size();
    Scaling scaling{Vector::Zero(q), Vector::Ones(q)};
    double y_mean = 0.0;
    Matrix C = m.gram / m.n;
    Vector c = m.zty / m.n;
    double yy = m.yy / m.n;
    if (options.standardize) {
        scaling.mean = m.sum / m.n;
        y_mean = m.sum_y / m.n;
        C.noalias() -= scaling.mean * scaling.mean.transpose();
        c -= scaling.mean * y_mean;
        yy -= y_mean * y_mean;
        for (Eigen::Index j = 0; j < q; ++j) {
            const double var = C(j, j);
            scaling.inv_sd(j) = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
        }
        C = scaling.inv_sd.asDiagonal() * C * scaling.inv_sd.asDiagonal();
        c = c.cwiseProduct(scaling.inv_sd);
    }
    return {std::move(scaling), y_mean, GaussianPath(std::move(C), std::move(c), yy, options)};
}

Matrix standardized(const Matrix& Z, const Scaling& scaling)
{
    return (Z.rowwise() - scaling.mean.transpose()) * scaling.inv_sd.asDiagonal();
}

Scaling scaling_of(const Matrix& Z, bool standardize)
{
    const Eigen::Index q = Z.cols();
    Scaling s{Vector::Zero(q), Vector::Ones(q)};
    if (!standardize) return s;
    const double n = static_cast<double>(Z.rows());
    s.mean = Z.colwise().sum().transpose() / n;
    for (Eigen::Index j = 0; j < q; ++j) {
        const double var = (Z.col(j).array() - s.mean(j)).square().sum() / n;
        s.inv_sd(j) = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
    }
    return s;
}

double binomial_deviance(const Vector& y, const Vector& eta)
{
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        // log(1 + e^eta) - y eta, evaluated stably.
        const double e = eta(i);
        const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
        dev += softplus - y(i) * e;
    }
    return 2.0 * dev;
}

// Penalized logistic regression with an unpenalized intercept, fitted by
// iteratively reweighted least squares with coordinate descent inner loops.
class LogisticPath
{
public:
    LogisticPath(Matrix Zs, Vector y, const LassoOptions& options)
        : Z_(std::move(Zs)), y_(std::move(y)), options_(options), beta_(Vector::Zero(Z_.cols())),
          active_(static_cast<std::size_t>(Z_.cols()), false)
    {
        const double n = static_cast<double>(y_.size());
        const double ybar = y_.mean();
        intercept_ = std::log(ybar / (1.0 - ybar));
        null_deviance_ = binomial_deviance(y_, Vector::Constant(y_.size(), intercept_));
        lambda_max_ = Z_.cols() == 0 ? 0.0 : (Z_.transpose() * (y_.array() - ybar).matrix()).cwiseAbs().maxCoeff() / n;
        deviance_ = null_deviance_;
    }

    double lambda_max() const { return lambda_max_; }

    void fit(double lambda)
    {
        const double n = static_cast<double>(y_.size());
        for (std::size_t irls = 0; irls < kMaxIrls; ++irls) {
            const Vector eta = linear_predictor();
            Vector w(eta.size());
            Vector r(eta.size());
            for (Eigen::Index i = 0; i < eta.size(); ++i) {
                const double prob = 1.0 / (1.0 + std::exp(-eta(i)));
                w(i) = std::max(prob * (1.0 - prob), kMinWeight);
                r(i) = (y_(i) - prob) / w(i);
            }
            const Vector xwx = (Z_.cwiseAbs2().transpose() * w) / n;
            const double wsum = w.sum();
            double outer_change = 0.0;
            for (std::size_t sweep = 0; sweep < options_.max_sweeps; ++sweep) {
                double change = this->sweep(lambda, w, xwx, r, wsum, false);
                outer_change = std::max(outer_change, change);
                if (change < options_.tolerance) break;
                for (std::size_t inner = 0; inner < options_.max_sweeps; ++inner) {
                    change = this->sweep(lambda, w, xwx, r, wsum, true);
                    outer_change = std::max(outer_change, change);
                    if (change < options_.tolerance) break;
                }
            }
            if (outer_change < options_.tolerance) break;
        }
        deviance_ = binomial_deviance(y_, linear_predictor());
    }

    double deviance_ratio() const { return null_deviance_ > 0.0 ? 1.0 - deviance_ / null_deviance_ : 1.0; }

    const Vector& beta() const { return beta_; }
    double intercept() const { return intercept_; }

private:
    Vector linear_predictor() const
    {
        return (Z_ * beta_).array() + intercept_;
    }

    double sweep(double lambda, const Vector& w, const Vector& xwx, Vector& r, double wsum, bool active_only)
    {
        const double n = static_cast<double>(y_.size());
        double change = 0.0;
        for (Eigen::Index j = 0; j < beta_.size(); ++j) {
            const auto uj = static_cast<std::size_t>(j);
            if (active_only && !active_[uj]) continue;
            const double h = xwx(j);
            if (!(h > 0.0)) continue;
            const double old = beta_(j);
            const double grad = Z_.col(j).dot(w.cwiseProduct(r)) / n;
            const double updated = soft_threshold(grad + h * old, lambda) / h;
            const double delta = updated - old;
            if (delta == 0.0) continue;
            beta_(j) = updated;
            r.noalias() -= delta * Z_.col(j);
            active_[uj] = true;
            change = std::max(change, h * delta * delta);
        }
        const double shift = w.dot(r) / wsum;
        if (shift != 0.0) {
            intercept_ += shift;
            r.array() -= shift;
            change = std::max(change, (wsum / n) * shift * shift);
        }
        return change;
    }

    Matrix Z_;
    Vector y_;
    LassoOptions options_;
    Vector beta_;
    double intercept_ = 0.0;
    double null_deviance_ = 0.0;
    double deviance_ = 0.0;
    double lambda_max_ = 0.0;
    std::vector<bool> active_;
};

void check_inputs(const Matrix& X, const Matrix& Xtilde, const Vector& y, const LassoOptions& options)
{
    if (X.rows() != Xtilde.rows() || X.rows() != y.size())
        throw PreconditionError("rows of X, knockoffs and y are not aligned");
    if (X.cols() != Xtilde.cols()) throw PreconditionError("knockoff matrix has the wrong number of columns");
    if (X.rows() < 2) throw PreconditionError("need at least two observations", "n");
    if (options.fixed_lambda < 0.0 && options.folds < 2) throw PreconditionError("folds must be at least 2", "folds");
    if (options.fixed_lambda < 0.0 && options.folds > static_cast<std::size_t>(X.rows()))
        throw PreconditionError("more folds than observations", "folds");
    const double lo = y.minCoeff();
    const double hi = y.maxCoeff();
    if (!(hi > lo)) throw PreconditionError("response is constant", "y");
    if (options.response == ResponseKind::binomial) {
        for (Eigen::Index i = 0; i < y.size(); ++i)
            if (y(i) != 0.0 && y(i) != 1.0) throw PreconditionError("binary response must be 0/1", "y");
    }
}

Matrix augmented(const Matrix& X, const Matrix& Xtilde)
{
    Matrix Z(X.rows(), X.cols() + Xtilde.cols());
    Z << X, Xtilde;
    return Z;
}

bool stop_path(double ratio, double previous, std::size_t index)
{
    if (ratio >= kDevianceStop) return true;
    return index > 0 && ratio - previous < kDevianceStall * ratio;
}

// Runs the path over `lambdas`, returning one beta per penalty. With
// `truncate`, the path ends early once the fit stops improving.
template <typename Path>
std::vector<Vector> run_path(Path& path, std::vector<double>& lambdas, bool truncate)
{
    std::vector<Vector> betas;
    double previous = 0.0;
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        path.fit(lambdas[k]);
        betas.push_back(path.beta());
        const double ratio = path.deviance_ratio();
        if (truncate && stop_path(ratio, previous, k)) {
            lambdas.resize(k + 1);
            break;
        }
        previous = ratio;
    }
    return betas;
}

std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> fold(n);
    for (std::size_t i = 0; i < n; ++i) fold[order[i]] = i % folds;
    return fold;
}

Matrix rows_of(const Matrix& Z, const std::vector<Eigen::Index>& rows)
{
    return Z(rows, Eigen::all);
}

Vector rows_of(const Vector& y, const std::vector<Eigen::Index>& rows)
{
    return y(rows);
}

struct PathResult
{
    std::vector<double> lambdas;
    std::vector<Vector> betas;
};

PathResult full_gaussian_path(const Matrix& Z, const Vector& y, const LassoOptions& options, bool truncate)
{
    GaussianProblem problem = gaussian_problem(moments_of(Z, y), options);
    PathResult out;
    if (options.fixed_lambda >= 0.0) {
        out.lambdas = {options.fixed_lambda};
        out.betas = run_path(problem.path, out.lambdas, false);
        return out;
    }
    out.lambdas = lambda_grid(problem.path.lambda_max(), options);
    out.betas = run_path(problem.path, out.lambdas, truncate);
    return out;
}

PathResult full_logistic_path(const Matrix& Z, const Vector& y, const LassoOptions& options, bool truncate)
{
    LogisticPath path(standardized(Z, scaling_of(Z, options.standardize)), y, options);
    PathResult out;
    if (options.fixed_lambda >= 0.0) {
        out.lambdas = {options.fixed_lambda};
        out.betas = run_path(path, out.lambdas, false);
        return out;
    }
    out.lambdas = lambda_grid(path.lambda_max(), options);
    out.betas = run_path(path, out.lambdas, truncate);
    return out;
}

std::vector<double> gaussian_cv(const Matrix& Z, const Vector& y, const std::vector<std::size_t>& fold,
                                std::vector<double> lambdas, const LassoOptions& options)
{
    const Moments full = moments_of(Z, y);
    std::vector<double> error(lambdas.size(), 0.0);
    for (std::size_t k = 0; k < options.folds; ++k) {
        std::vector<Eigen::Index> test;
        for (std::size_t i = 0; i < fold.size(); ++i)
            if (fold[i] == k) test.push_back(static_cast<Eigen::Index>(i));
        const Matrix Zt = rows_of(Z, test);
        const Vector yt = rows_of(y, test);
        GaussianProblem problem = gaussian_problem(subtract(full, moments_of(Zt, yt)), options);
        std::vector<double> grid = lambdas;
        const std::vector<Vector> betas = run_path(problem.path, grid, false);
        for (std::size_t l = 0; l < betas.size(); ++l) {
            const Vector coef = betas[l].cwiseProduct(problem.scaling.inv_sd);
            const double offset = problem.y_mean - problem.scaling.mean.dot(coef);
            const Vector residual = yt - ((Zt * coef).array() + offset).matrix();
            error[l] += residual.squaredNorm();
        }
    }
    for (double& e : error) e /= static_cast<double>(Z.rows());
    return error;
}

std::vector<double> logistic_cv(const Matrix& Z, const Vector& y, const std::vector<std::size_t>& fold,
                                std::vector<double> lambdas, const LassoOptions& options)
{
    std::vector<double> error(lambdas.size(), 0.0);
    for (std::size_t k = 0; k < options.folds; ++k) {
        std::vector<Eigen::Index> train;
        std::vector<Eigen::Index> test;
        for (std::size_t i = 0; i < fold.size(); ++i)
            (fold[i] == k ? test : train).push_back(static_cast<Eigen::Index>(i));
        const Matrix Ztr = rows_of(Z, train);
        const Vector ytr = rows_of(y, train);
        const Matrix Zt = rows_of(Z, test);
        const Vector yt = rows_of(y, test);
        const double ybar = ytr.mean();
        if (ybar <= 0.0 || ybar >= 1.0) {
            // A training fold without both classes predicts its constant rate.
            const double prob = std::clamp(ybar, 1e-5, 1.0 - 1e-5);
            const double dev = binomial_deviance(yt, Vector::Constant(yt.size(), std::log(prob / (1.0 - prob))));
            for (double& e : error) e += dev;
            continue;
        }
        const Scaling scaling = scaling_of(Ztr, options.standardize);
        LogisticPath path(standardized(Ztr, scaling), ytr, options);
        const Matrix Zts = standardized(Zt, scaling);
        for (std::size_t l = 0; l < lambdas.size(); ++l) {
            path.fit(lambdas[l]);
            const Vector eta = (Zts * path.beta()).array() + path.intercept();
            error[l] += binomial_deviance(yt, eta);
        }
    }
    for (double& e : error) e /= static_cast<double>(Z.rows());
    return error;
}

} // namespace

LassoFit lasso_cv(const Matrix& X, const Matrix& Xtilde, const Vector& y, const LassoOptions& options,
                  std::uint64_t seed)
{
    check_inputs(X, Xtilde, y, options);
    const Matrix Z = augmented(X, Xtilde);
    const bool binomial = options.response == ResponseKind::binomial;
    PathResult path = binomial ? full_logistic_path(Z, y, options, true) : full_gaussian_path(Z, y, options, true);

    LassoFit fit;
    fit.seed = seed;
    fit.lambdas = path.lambdas;
    if (options.fixed_lambda >= 0.0) {
        fit.lambda = options.fixed_lambda;
        fit.beta = path.betas.front();
        return fit;
    }
    fit.folds = assign_folds(static_cast<std::size_t>(Z.rows()), options.folds, seed);
    fit.cv_error = binomial ? logistic_cv(Z, y, fit.folds, path.lambdas, options)
                            : gaussian_cv(Z, y, fit.folds, path.lambdas, options);
    const auto best = static_cast<std::size_t>(
        std::min_element(fit.cv_error.begin(), fit.cv_error.end()) - fit.cv_error.begin());
    fit.lambda = path.lambdas[best];
    fit.beta = path.betas[best];
    return fit;
}

std::vector<double> group_lasso_scores(const Vector& beta, const Partition& partition)
{
    const std::size_t p = static_cast<std::size_t>(beta.size()) / 2;
    std::vector<double> w;
    w.reserve(partition.groups.size());
    for (const auto& group : partition.groups) {
        double original = 0.0;
        double knockoff = 0.0;
        for (const std::size_t j : group) {
            if (j >= p) throw PreconditionError("partition member outside the design");
            original += std::abs(beta(static_cast<Eigen::Index>(j)));
            knockoff += std::abs(beta(static_cast<Eigen::Index>(p + j)));
        }
        w.push_back(original - knockoff);
    }
    return w;
}

std::vector<double> lasso_cv_statistics(const Matrix& X, const Matrix& Xtilde, const Vector& y,
                                        const Partition& partition, const LassoOptions& options,
                                        std::uint64_t seed, LassoFit* fit)
{
    LassoFit result = lasso_cv(X, Xtilde, y, options, seed);
    std::vector<double> w = group_lasso_scores(result.beta, partition);
    if (fit != nullptr) *fit = std::move(result);
    return w;
}

Vector lasso_entry_lambdas(const Matrix& X, const Matrix& Xtilde, const Vector& y, const LassoOptions& options)
{
    LassoOptions path_options = options;
    path_options.fixed_lambda = -1.0;
    path_options.folds = 2;
    check_inputs(X, Xtilde, y, path_options);
    const Matrix Z = augmented(X, Xtilde);
    const PathResult path = options.response == ResponseKind::binomial
                                ? full_logistic_path(Z, y, path_options, true)
                                : full_gaussian_path(Z, y, path_options, true);
    Vector entry = Vector::Zero(Z.cols());
    for (std::size_t k = path.betas.size(); k-- > 0;) {
        const Vector& beta = path.betas[k];
        for (Eigen::Index j = 0; j < beta.size(); ++j)
            if (beta(j) != 0.0) entry(j) = path.lambdas[k];
    }
    return entry;
}

std::vector<double> signed_max_scores(const Vector& entry, const Partition& partition)
{
    const std::size_t p = static_cast<std::size_t>(entry.size()) / 2;
    std::vector<double> w;
    w.reserve(partition.groups.size());
    for (const auto& group : partition.groups) {
        double z = 0.0;
        double zt = 0.0;
        for (const std::size_t j : group) {
            if (j >= p) throw PreconditionError("partition member outside the design");
            z = std::max(z, entry(static_cast<Eigen::Index>(j)));
            zt = std::max(zt, entry(static_cast<Eigen::Index>(p + j)));
        }
        w.push_back(z > zt ? z : (z < zt ? -zt : 0.0));
    }
    return w;
}

} // namespace kelp
