#include "neurodec/decoder.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

#include "neurodec/tensorio.hpp"

namespace neurodec {

namespace {

// Reciprocal condition estimates below this make the unregularized normal
// equations untrustworthy.
constexpr double kRcondFloor = 1e-12;
// Relative tolerance for negative kernel eigenvalues before the matrix is
// declared non-PSD.
constexpr double kPsdTolerance = 1e-8;
// 1 - leverage below this makes the held-out residual numerically undefined.
constexpr double kLeverageFloor = 1e-12;

// Orthonormal columns q and eigenvalues ev describing a PSD smoother
// K = q diag(ev) q^T; columns may cover only the non-null range.
struct SmootherBasis {
    Matrix q;
    Vector ev;
};

SmootherBasis decompose_kernel(const Matrix& k) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(k);
    if (es.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition of the kernel matrix failed");
    }
    Vector ev = es.eigenvalues();
    double largest = ev.size() ? ev.maxCoeff() : 0.0;
    double floor = -kPsdTolerance * std::max(largest, 1.0);
    if (ev.size() && ev.minCoeff() < floor) {
        throw NumericalError("kernel matrix is not positive semidefinite (smallest eigenvalue " +
                                 std::to_string(ev.minCoeff()) + ")",
                             ev.minCoeff());
    }
    return {es.eigenvectors(), ev.cwiseMax(0.0)};
}

// Mean squared leave-one-out residual per (grid value, frequency) from one
// decomposition: resid_i / (1 - h_i) with h_i = sum_k q_ik^2 ev_k/(ev_k + l).
Matrix loo_grid_from_basis(const SmootherBasis& basis, const Matrix& s, const LambdaGrid& grid) {
    const Eigen::Index n = s.rows();
    Matrix q_sq = basis.q.array().square();
    Matrix w = basis.q.transpose() * s;  // basis coordinates of each target
    Matrix errors(static_cast<Eigen::Index>(grid.values.size()), s.cols());
    for (std::size_t g = 0; g < grid.values.size(); ++g) {
        double lambda = grid.values[g];
        Vector shrink = basis.ev.array() / (basis.ev.array() + lambda);
        Vector leverage = q_sq * shrink;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (1.0 - leverage(i) < kLeverageFloor) {
                throw NumericalError("leave-one-out leverage degenerate at row " +
                                         std::to_string(i) + " (lambda " +
                                         std::to_string(lambda) + ")",
                                     leverage(i));
            }
        }
        Matrix fitted = basis.q * (w.array().colwise() * shrink.array()).matrix();
        Matrix loo = ((s - fitted).array().colwise() / (1.0 - leverage.array())).square();
        errors.row(static_cast<Eigen::Index>(g)) = loo.colwise().mean();
    }
    return errors;
}

// Smallest mean LOO error per frequency; ties go to the larger lambda.
Vector pick_lambdas(const Matrix& errors, const LambdaGrid& grid) {
    Vector picked(errors.cols());
    for (Eigen::Index f = 0; f < errors.cols(); ++f) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_g = 0;
        for (std::size_t g = 0; g < grid.values.size(); ++g) {
            if (errors(static_cast<Eigen::Index>(g), f) <= best) {
                best = errors(static_cast<Eigen::Index>(g), f);
                best_g = g;
            }
        }
        picked(f) = grid.values[best_g];
    }
    return picked;
}

Matrix dual_from_basis(const SmootherBasis& basis, const Matrix& s, const Vector& lambdas) {
    Matrix w = basis.q.transpose() * s;
    for (Eigen::Index f = 0; f < s.cols(); ++f) {
        w.col(f).array() /= (basis.ev.array() + lambdas(f));
    }
    return basis.q * w;
}

void check_fit_inputs(const LaggedDesign& design, const TargetMatrix& targets) {
    if (design.rows.rows() < 1) throw ValidationError("cannot fit on an empty design");
    if (design.rows.rows() != targets.values.rows()) {
        throw ValidationError("design has " + std::to_string(design.rows.rows()) +
                              " rows, targets have " + std::to_string(targets.values.rows()));
    }
    if (design.row_index != targets.row_index) {
        throw ValidationError("design and target row indices disagree");
    }
}

void check_lambda_count(const Vector& lambdas, Eigen::Index freq_channels) {
    if (lambdas.size() != freq_channels) {
        throw ValidationError("got " + std::to_string(lambdas.size()) + " lambdas for " +
                              std::to_string(freq_channels) + " frequency channels");
    }
}

struct StandardizedFit {
    Matrix r;
    Matrix s;
    StandardizationStats design_stats;
    StandardizationStats target_stats;
};

StandardizedFit standardize_pair(const LaggedDesign& design, const TargetMatrix& targets) {
    StandardizedFit out;
    out.design_stats = fit_standardizer(design.rows);
    out.target_stats = fit_standardizer(targets.values);
    out.r = apply_standardizer(design.rows, out.design_stats);
    out.s = apply_standardizer(targets.values, out.target_stats);
    return out;
}

DecoderModel model_shell(const LaggedDesign& design, StandardizedFit&& std_fit,
                         const KernelSpec& kernel) {
    DecoderModel model;
    model.kernel = kernel;
    model.lag_spec = design.lag_spec;
    model.channel_names = design.channel_names;
    model.standardizer_design = std::move(std_fit.design_stats);
    model.standardizer_target = std::move(std_fit.target_stats);
    return model;
}

}  // namespace

LambdaGrid LambdaGrid::log_space(double min, double max, int count) {
    if (count < 1) throw ValidationError("lambda grid needs at least one value");
    LambdaGrid grid;
    if (count == 1) {
        if (min != max) {
            throw ValidationError("a single-point lambda grid requires min == max");
        }
        grid.values = {min};
    } else {
        grid.values.resize(static_cast<std::size_t>(count));
        double log_min = std::log(min);
        double log_max = std::log(max);
        for (int i = 0; i < count; ++i) {
            grid.values[static_cast<std::size_t>(i)] =
                std::exp(log_min + (log_max - log_min) * i / (count - 1));
        }
        grid.values.front() = min;
        grid.values.back() = max;
    }
    grid.validate();
    return grid;
}

LambdaGrid LambdaGrid::default_for_rows(Eigen::Index n) {
    if (n < 1) throw ValidationError("lambda grid needs a positive row count");
    auto nd = static_cast<double>(n);
    return log_space(1e-4 * nd, 1e4 * nd, 10);
}

void LambdaGrid::validate() const {
    if (values.empty()) throw ValidationError("lambda grid is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
            throw ValidationError("lambda grid values must be positive and finite");
        }
        if (i > 0 && !(values[i] > values[i - 1])) {
            throw ValidationError("lambda grid must be strictly increasing");
        }
    }
}

Matrix gram_matrix(const Matrix& a, const Matrix& b, const KernelSpec& kernel) {
    if (a.cols() != b.cols()) {
        throw ValidationError("gram matrix inputs have " + std::to_string(a.cols()) + " and " +
                              std::to_string(b.cols()) + " columns");
    }
    if (kernel.kind == KernelKind::linear) {
        return a * b.transpose();
    }
    Matrix k(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            k(i, j) = std::exp(-kernel.gamma * (a.row(i) - b.row(j)).squaredNorm());
        }
    }
    return k;
}

namespace detail {

Matrix solve_ml(const Matrix& r, const Matrix& s) {
    Matrix normal = r.transpose() * r;
    Eigen::SelfAdjointEigenSolver<Matrix> es(normal);
    if (es.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition of the normal matrix failed");
    }
    Vector ev = es.eigenvalues();
    double largest = ev.maxCoeff();
    double rcond = largest > 0.0 ? ev.minCoeff() / largest : 0.0;
    if (!(rcond >= kRcondFloor)) {
        throw NumericalError("normal matrix is ill-conditioned (reciprocal condition estimate " +
                                 std::to_string(rcond) + "); use a regularized fit",
                             rcond);
    }
    Matrix w = es.eigenvectors().transpose() * (r.transpose() * s);
    w.array().colwise() /= ev.array();
    return es.eigenvectors() * w;
}

Matrix solve_primal_ridge(const Matrix& r, const Matrix& s, const Vector& lambdas) {
    for (Eigen::Index f = 0; f < lambdas.size(); ++f) {
        if (lambdas(f) < 0.0 || !std::isfinite(lambdas(f))) {
            throw ValidationError("ridge weights must be non-negative and finite");
        }
    }
    Matrix normal = r.transpose() * r;
    Eigen::SelfAdjointEigenSolver<Matrix> es(normal);
    if (es.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition of the normal matrix failed");
    }
    Vector ev = es.eigenvalues().cwiseMax(0.0);
    if (lambdas.minCoeff() == 0.0) {
        double largest = ev.maxCoeff();
        double rcond = largest > 0.0 ? es.eigenvalues().minCoeff() / largest : 0.0;
        if (!(rcond >= kRcondFloor)) {
            throw NumericalError("unregularized frequency requested but the normal matrix is "
                                 "ill-conditioned (reciprocal condition estimate " +
                                     std::to_string(rcond) + ")",
                                 rcond);
        }
    }
    Matrix w = es.eigenvectors().transpose() * (r.transpose() * s);
    for (Eigen::Index f = 0; f < s.cols(); ++f) {
        w.col(f).array() /= (ev.array() + lambdas(f));
    }
    return es.eigenvectors() * w;
}

Matrix solve_dual_ridge(const Matrix& k, const Matrix& s, const Vector& lambdas) {
    if (k.rows() != k.cols() || k.rows() != s.rows()) {
        throw ValidationError("kernel matrix shape does not match the targets");
    }
    for (Eigen::Index f = 0; f < lambdas.size(); ++f) {
        if (!(lambdas(f) > 0.0) || !std::isfinite(lambdas(f))) {
            throw ValidationError("dual ridge needs strictly positive lambdas; the kernel matrix "
                                  "is singular without the shift");
        }
    }
    return dual_from_basis(decompose_kernel(k), s, lambdas);
}

Matrix loo_error_grid(const Matrix& k, const Matrix& s, const LambdaGrid& grid) {
    grid.validate();
    if (k.rows() != k.cols() || k.rows() != s.rows()) {
        throw ValidationError("kernel matrix shape does not match the targets");
    }
    if (k.rows() < 2) throw ValidationError("leave-one-out needs at least two rows");
    return loo_grid_from_basis(decompose_kernel(k), s, grid);
}

}  // namespace detail

DecoderModel fit_ml(const LaggedDesign& design, const TargetMatrix& targets) {
    check_fit_inputs(design, targets);
    auto std_fit = standardize_pair(design, targets);
    Matrix g = detail::solve_ml(std_fit.r, std_fit.s);
    DecoderModel model = model_shell(design, std::move(std_fit), KernelSpec::linear());
    model.mode = FitMode::primal;
    model.primal_g = std::move(g);
    model.lambdas = Vector::Zero(model.primal_g.cols());
    return model;
}

DecoderModel fit_primal_ridge(const LaggedDesign& design, const TargetMatrix& targets,
                              const Vector& lambdas) {
    check_fit_inputs(design, targets);
    check_lambda_count(lambdas, targets.values.cols());
    auto std_fit = standardize_pair(design, targets);
    Matrix g = detail::solve_primal_ridge(std_fit.r, std_fit.s, lambdas);
    DecoderModel model = model_shell(design, std::move(std_fit), KernelSpec::linear());
    model.mode = FitMode::primal;
    model.primal_g = std::move(g);
    model.lambdas = lambdas;
    return model;
}

DecoderModel fit_dual(const LaggedDesign& design, const TargetMatrix& targets,
                      const Vector& lambdas, const KernelSpec& kernel) {
    check_fit_inputs(design, targets);
    check_lambda_count(lambdas, targets.values.cols());
    auto std_fit = standardize_pair(design, targets);
    Matrix k = gram_matrix(std_fit.r, std_fit.r, kernel);
    Matrix alpha = detail::solve_dual_ridge(k, std_fit.s, lambdas);
    Matrix rows = std::move(std_fit.r);
    DecoderModel model = model_shell(design, std::move(std_fit), kernel);
    model.mode = FitMode::dual;
    model.dual_alpha = std::move(alpha);
    model.training_rows = std::move(rows);
    model.lambdas = lambdas;
    return model;
}

LooResult select_lambda_loo(const LaggedDesign& design, const TargetMatrix& targets,
                            const LambdaGrid& grid, const KernelSpec& kernel) {
    check_fit_inputs(design, targets);
    auto std_fit = standardize_pair(design, targets);
    LooResult result;
    result.grid = grid;
    result.loo_errors =
        detail::loo_error_grid(gram_matrix(std_fit.r, std_fit.r, kernel), std_fit.s, grid);
    result.lambdas = pick_lambdas(result.loo_errors, grid);
    return result;
}

DecoderModel fit_ridge_loo(const LaggedDesign& design, const TargetMatrix& targets,
                           const KernelSpec& kernel, const std::optional<LambdaGrid>& grid) {
    check_fit_inputs(design, targets);
    if (design.rows.rows() < 2) throw ValidationError("leave-one-out needs at least two rows");
    auto std_fit = standardize_pair(design, targets);
    const Eigen::Index n = std_fit.r.rows();
    const Eigen::Index d = std_fit.r.cols();
    LambdaGrid lambda_grid = grid ? *grid : LambdaGrid::default_for_rows(n);
    lambda_grid.validate();

    if (kernel.kind == KernelKind::linear && d <= n) {
        // Primal route: a thin SVD of the design gives the same smoother
        // spectrum as the linear kernel matrix, so LOO selection and the
        // final coefficients share one factorization and predictions match
        // the dual fit.
        Eigen::BDCSVD<Matrix> svd(std_fit.r, Eigen::ComputeThinU | Eigen::ComputeThinV);
        SmootherBasis basis{svd.matrixU(), svd.singularValues().array().square()};
        Matrix errors = loo_grid_from_basis(basis, std_fit.s, lambda_grid);
        Vector lambdas = pick_lambdas(errors, lambda_grid);
        Matrix w = basis.q.transpose() * std_fit.s;
        for (Eigen::Index f = 0; f < w.cols(); ++f) {
            w.col(f).array() *=
                svd.singularValues().array() / (basis.ev.array() + lambdas(f));
        }
        Matrix g = svd.matrixV() * w;
        DecoderModel model = model_shell(design, std::move(std_fit), kernel);
        model.mode = FitMode::primal;
        model.primal_g = std::move(g);
        model.lambdas = std::move(lambdas);
        return model;
    }

    SmootherBasis basis = decompose_kernel(gram_matrix(std_fit.r, std_fit.r, kernel));
    Matrix errors = loo_grid_from_basis(basis, std_fit.s, lambda_grid);
    Vector lambdas = pick_lambdas(errors, lambda_grid);
    Matrix alpha = dual_from_basis(basis, std_fit.s, lambdas);
    Matrix rows = std::move(std_fit.r);
    DecoderModel model = model_shell(design, std::move(std_fit), kernel);
    model.mode = FitMode::dual;
    model.dual_alpha = std::move(alpha);
    model.training_rows = std::move(rows);
    model.lambdas = std::move(lambdas);
    return model;
}

std::vector<Spectrogram> predict(const DecoderModel& model, const Dataset& ds,
                                 const std::vector<std::string>& stimulus_ids) {
    for (const auto& id : stimulus_ids) {
        if (ds.recording(id).channel_names != model.channel_names) {
            throw ValidationError("stimulus '" + id +
                                  "' does not match the model's channels (names and order)");
        }
    }
    auto [design, targets] = build_lagged_design(ds, model.lag_spec, stimulus_ids);
    Matrix x = apply_standardizer(design.rows, model.standardizer_design);

    Matrix std_pred;
    if (model.mode == FitMode::primal) {
        if (model.primal_g.rows() != x.cols()) {
            throw ValidationError("model expects " + std::to_string(model.primal_g.rows()) +
                                  " design columns, got " + std::to_string(x.cols()));
        }
        std_pred = x * model.primal_g;
    } else {
        std_pred = gram_matrix(x, model.training_rows, model.kernel) * model.dual_alpha;
    }

    const StandardizationStats& t = model.standardizer_target;
    if (std_pred.cols() != t.size()) {
        throw ValidationError("model predicts " + std::to_string(std_pred.cols()) +
                              " frequency channels, dataset has " + std::to_string(t.size()));
    }
    for (Eigen::Index f = 0; f < std_pred.cols(); ++f) {
        // Zero-variance target channels de-standardize to their training mean.
        std_pred.col(f) = std_pred.col(f).array() * t.stds(f) + t.means(f);
    }

    std::vector<Spectrogram> out;
    out.reserve(stimulus_ids.size());
    Eigen::Index row = 0;
    for (const auto& id : stimulus_ids) {
        const Spectrogram& reference = ds.spectrogram(id);
        Spectrogram pred;
        pred.stimulus_id = id;
        pred.frame_period_ms = model.lag_spec.frame_period_ms;
        pred.center_freqs_hz = reference.center_freqs_hz;
        pred.data = std_pred.middleRows(row, reference.frames()).transpose();
        row += reference.frames();
        out.push_back(std::move(pred));
    }
    return out;
}

Matrix linear_coefficients(const DecoderModel& model) {
    Matrix b;
    if (model.mode == FitMode::primal) {
        b = model.primal_g;
    } else if (model.kernel.kind == KernelKind::linear) {
        b = model.training_rows.transpose() * model.dual_alpha;
    } else {
        throw ValidationError("a gaussian-kernel model has no linear coefficient form");
    }
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
        double sd = model.standardizer_design.stds(j);
        if (sd == 0.0) {
            b.row(j).setZero();
            continue;
        }
        for (Eigen::Index f = 0; f < b.cols(); ++f) {
            b(j, f) *= model.standardizer_target.stds(f) / sd;
        }
    }
    return b;
}

namespace {

nlohmann::json vector_to_json(const Vector& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Vector vector_from_json(const nlohmann::json& arr) {
    Vector v(static_cast<Eigen::Index>(arr.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = arr.at(static_cast<std::size_t>(i)).get<double>();
    }
    return v;
}

nlohmann::json stats_to_json(const StandardizationStats& stats) {
    return {{"means", vector_to_json(stats.means)},
            {"stds", vector_to_json(stats.stds)},
            {"epsilon", stats.epsilon}};
}

StandardizationStats stats_from_json(const nlohmann::json& j) {
    StandardizationStats stats;
    stats.means = vector_from_json(j.at("means"));
    stats.stds = vector_from_json(j.at("stds"));
    stats.epsilon = j.at("epsilon").get<double>();
    if (stats.means.size() != stats.stds.size()) {
        throw ValidationError("standardizer means and stds differ in length");
    }
    return stats;
}

}  // namespace

void save_model(const DecoderModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j = {
        {"format_version", 1},
        {"mode", model.mode == FitMode::primal ? "primal" : "dual"},
        {"kernel",
         {{"kind", model.kernel.kind == KernelKind::linear ? "linear" : "gaussian"},
          {"gamma", model.kernel.gamma}}},
        {"lag",
         {{"lag_ms", model.lag_spec.lag_ms},
          {"frame_period_ms", model.lag_spec.frame_period_ms},
          {"lag_bins", model.lag_spec.lag_bins}}},
        {"lambdas", vector_to_json(model.lambdas)},
        {"channel_names", model.channel_names},
        {"standardizer_design", stats_to_json(model.standardizer_design)},
        {"standardizer_target", stats_to_json(model.standardizer_target)},
    };
    if (model.mode == FitMode::primal) {
        j["shapes"] = {{"rows", model.primal_g.rows()}, {"cols", model.primal_g.cols()}};
        write_blob(dir / "primal_g.f64", model.primal_g);
    } else {
        j["shapes"] = {{"rows", model.dual_alpha.rows()},
                       {"cols", model.dual_alpha.cols()},
                       {"design_cols", model.training_rows.cols()}};
        write_blob(dir / "dual_alpha.f64", model.dual_alpha);
        write_blob(dir / "training_rows.f64", model.training_rows);
    }
    std::filesystem::path path = dir / "model.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot create '" + path.string() + "'");
    out << j.dump(2) << "\n";
    if (!out) throw ValidationError("short write on '" + path.string() + "'");
}

DecoderModel load_model(const std::filesystem::path& dir) {
    std::filesystem::path path = dir / "model.json";
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);

        DecoderModel model;
        if (j.at("format_version").get<int>() != 1) {
            throw ValidationError("unsupported model format_version in '" + path.string() + "'");
        }
        std::string mode = j.at("mode").get<std::string>();
        if (mode != "primal" && mode != "dual") {
            throw ValidationError("unknown model mode '" + mode + "'");
        }
        model.mode = mode == "primal" ? FitMode::primal : FitMode::dual;
        std::string kind = j.at("kernel").at("kind").get<std::string>();
        if (kind != "linear" && kind != "gaussian") {
            throw ValidationError("unknown kernel kind '" + kind + "'");
        }
        model.kernel.kind = kind == "linear" ? KernelKind::linear : KernelKind::gaussian;
        model.kernel.gamma = j.at("kernel").at("gamma").get<double>();
        model.lag_spec.lag_ms = j.at("lag").at("lag_ms").get<double>();
        model.lag_spec.frame_period_ms = j.at("lag").at("frame_period_ms").get<double>();
        model.lag_spec.lag_bins = j.at("lag").at("lag_bins").get<int>();
        model.lambdas = vector_from_json(j.at("lambdas"));
        model.channel_names = j.at("channel_names").get<std::vector<std::string>>();
        model.standardizer_design = stats_from_json(j.at("standardizer_design"));
        model.standardizer_target = stats_from_json(j.at("standardizer_target"));

        auto rows = j.at("shapes").at("rows").get<Eigen::Index>();
        auto cols = j.at("shapes").at("cols").get<Eigen::Index>();
        if (cols != model.standardizer_target.size() || cols != model.lambdas.size()) {
            throw ValidationError("model '" + path.string() +
                                  "' has inconsistent frequency channel counts");
        }
        if (model.mode == FitMode::primal) {
            if (rows != model.standardizer_design.size()) {
                throw ValidationError("model '" + path.string() +
                                      "' has inconsistent design column counts");
            }
            model.primal_g = read_blob(dir / "primal_g.f64", rows, cols);
        } else {
            auto design_cols = j.at("shapes").at("design_cols").get<Eigen::Index>();
            if (design_cols != model.standardizer_design.size()) {
                throw ValidationError("model '" + path.string() +
                                      "' has inconsistent design column counts");
            }
            model.dual_alpha = read_blob(dir / "dual_alpha.f64", rows, cols);
            model.training_rows = read_blob(dir / "training_rows.f64", rows, design_cols);
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("invalid model file '" + path.string() + "': " + e.what());
    }
}

}  // namespace neurodec
