#pragma once

#include <filesystem>
#include <optional>

#include "neurodec/lagging.hpp"
#include "neurodec/types.hpp"

namespace neurodec {

enum class KernelKind { linear, gaussian };

struct KernelSpec {
    KernelKind kind = KernelKind::linear;
    double gamma = 0.0;  // gaussian only

    static KernelSpec linear() { return {KernelKind::linear, 0.0}; }
    static KernelSpec gaussian(double gamma) { return {KernelKind::gaussian, gamma}; }
};

// Strictly increasing positive regularization weights.
struct LambdaGrid {
    std::vector<double> values;

    static LambdaGrid log_space(double min, double max, int count);
    // 10 points log-spaced from 1e-4 * n to 1e4 * n, n = training rows.
    static LambdaGrid default_for_rows(Eigen::Index n);
    void validate() const;
};

enum class FitMode { primal, dual };

// A fitted per-frequency ridge decoder. Coefficients live in standardized
// space; the standardizers fitted on the training data travel with the model
// so a serialized model is self-contained. Exactly one of primal_g /
// dual_alpha is non-empty, matching mode; training_rows (standardized) is
// kept in dual mode only.
struct DecoderModel {
    KernelSpec kernel;
    LagSpec lag_spec;
    FitMode mode = FitMode::primal;
    Matrix primal_g;       // (lag_bins * channels) x freq_channels
    Matrix dual_alpha;     // training_rows x freq_channels
    Matrix training_rows;  // standardized design rows, dual mode only
    Vector lambdas;        // per frequency; all zero for the unregularized fit
    StandardizationStats standardizer_design;
    StandardizationStats standardizer_target;
    std::vector<std::string> channel_names;

    Eigen::Index freq_channels() const { return standardizer_target.size(); }
    Eigen::Index design_cols() const { return standardizer_design.size(); }
};

// k(a_i, b_j) for every row pair: linear = dot product, gaussian =
// exp(-gamma * |a_i - b_j|^2).
Matrix gram_matrix(const Matrix& a, const Matrix& b, const KernelSpec& kernel);

// Unregularized least squares per frequency on standardized data, solved by a
// rank-revealing eigendecomposition of the normal matrix. Throws
// NumericalError (carrying the reciprocal condition estimate) when that
// estimate falls below 1e-12.
DecoderModel fit_ml(const LaggedDesign& design, const TargetMatrix& targets);

// Ridge solution per frequency, weights lambdas(f) >= 0; lambda = 0 falls
// back to the unregularized solve including its conditioning check.
DecoderModel fit_primal_ridge(const LaggedDesign& design, const TargetMatrix& targets,
                              const Vector& lambdas);

// Kernel-space ridge: alpha_f = (K + lambda_f I)^{-1} S_f from one
// eigendecomposition of K shared across frequencies. lambdas must be strictly
// positive so the shifted kernel is invertible at reduced rank.
DecoderModel fit_dual(const LaggedDesign& design, const TargetMatrix& targets,
                      const Vector& lambdas, const KernelSpec& kernel);

struct LooResult {
    Vector lambdas;     // selected weight per frequency
    Matrix loo_errors;  // grid size x freq_channels, mean squared LOO residual
    LambdaGrid grid;
};

// Leave-one-out selection without refitting: with K = U diag(d) U^T, the
// held-out residual for row i is e_i / (1 - h_i) where e_i is the full-fit
// residual and h_i = sum_k U_ik^2 d_k / (d_k + lambda). One
// eigendecomposition serves the whole grid. Ties prefer the larger lambda;
// 1 - h_i below 1e-12 is an error naming the row.
LooResult select_lambda_loo(const LaggedDesign& design, const TargetMatrix& targets,
                            const LambdaGrid& grid, const KernelSpec& kernel);

// LOO selection and final fit sharing one factorization. Linear kernels with
// design_cols <= rows fit in primal form through a thin SVD (identical
// predictions by the primal/dual identity); everything else fits dual.
// Without a grid, LambdaGrid::default_for_rows is used.
DecoderModel fit_ridge_loo(const LaggedDesign& design, const TargetMatrix& targets,
                           const KernelSpec& kernel,
                           const std::optional<LambdaGrid>& grid = std::nullopt);

// Builds the lagged representation of each listed stimulus with the model's
// lag window, standardizes it, applies the coefficients and de-standardizes
// back to spectrogram units. Requires the dataset's channels to match the
// model's (names and order) and its frame period to match the lag spec.
std::vector<Spectrogram> predict(const DecoderModel& model, const Dataset& ds,
                                 const std::vector<std::string>& stimulus_ids);

// The linear map from raw design columns to raw target units implied by the
// model (primal or dual-linear; errors on gaussian models). Column f equals
// G_std(., f) * std_target(f) / std_design, with zero-variance design columns
// mapped to zero coefficients.
Matrix linear_coefficients(const DecoderModel& model);

// model.json plus coefficient blobs; load validates shapes and a round trip
// reproduces predictions bit-exactly.
void save_model(const DecoderModel& model, const std::filesystem::path& dir);
DecoderModel load_model(const std::filesystem::path& dir);

namespace detail {

// Core solvers on already-standardized matrices; the public fit_* wrappers
// standardize and delegate here.
Matrix solve_ml(const Matrix& r, const Matrix& s);
Matrix solve_primal_ridge(const Matrix& r, const Matrix& s, const Vector& lambdas);
Matrix solve_dual_ridge(const Matrix& k, const Matrix& s, const Vector& lambdas);
Matrix loo_error_grid(const Matrix& k, const Matrix& s, const LambdaGrid& grid);

}  // namespace detail

}  // namespace neurodec
