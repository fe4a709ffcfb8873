/// @file train.hpp
/// Dataset splitting and maximum-likelihood training of the global model parameters.

#ifndef IPDM_TRAIN_HPP
#define IPDM_TRAIN_HPP

#include "ipdm/context.hpp"
#include "ipdm/inspectors.hpp"
#include "ipdm/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace ipdm
{

struct SplitConfig
{
    double train = 0.7;
    double validation = 0.15;
    double test = 0.15;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SplitResult
{
    Dataset train;
    Dataset validation;
    Dataset test;
    std::vector<std::string> warnings;
};

/// Seeded element-level partition. Sizes follow floor + largest remainder; elements keep their
/// original relative order inside each part.
SplitResult split(const Dataset& data, const SplitConfig& cfg);

// ---------------------------------------------------------------------------------------------
// Generic bounded Newton-Raphson

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Derivatives
{
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

/// Central finite differences with h_i = 1e-4 * max(|x_i|, 1).
Derivatives finite_differences(const Objective& f, const Eigen::VectorXd& x, double fx);

/// Five-point stencil gradient with the same step sizes.
Eigen::VectorXd gradient_5point(const Objective& f, const Eigen::VectorXd& x);

struct NewtonStepResult
{
    Eigen::VectorXd x;
    double value = 0.0;
    bool accepted = false;
    bool gradient_fallback = false;
    int halvings = 0;
};

/// One projected Newton step with step halving (at most `max_halvings`). The step is accepted
/// only if the objective does not decrease; coordinates pinned at a bound with the gradient
/// pointing outward are held fixed. A non-negative-definite Hessian falls back to a gradient
/// ascent step.
NewtonStepResult newton_step(const Objective& f, const Eigen::VectorXd& x, double fx, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi, int max_halvings = 10, double max_step = 2.0);
/// Same step with derivatives taken from `model` (value `model_fx` at x) and the line search
/// judged by `accept` (value `fx` at x).
NewtonStepResult newton_step(const Objective& model, double model_fx, const Objective& accept, const Eigen::VectorXd& x,
                             double fx, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int max_halvings = 10,
                             double max_step = 2.0);

struct NewtonOptions
{
    int max_iter = 50;
    double tol = 1e-10;  ///< relative objective improvement
    int max_halvings = 10;
    double max_step = 2.0;
};

struct NewtonResult
{
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;  ///< accepted steps
    std::vector<double> history;  ///< objective before the first and after each accepted step
    std::vector<bool> gradient_fallback;
    std::string reason;
};

NewtonResult newton_maximize(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi, const NewtonOptions& options = {});

// ---------------------------------------------------------------------------------------------
// Model training

/// Internal coordinates of the global parameters:
/// [log sigma_w, speed_mean, log speed_var, log accel_var, log condition_var].
Eigen::VectorXd params_to_theta(const ModelParams& p);
void theta_to_params(const Eigen::VectorXd& theta, ModelParams& p);
void theta_bounds(const ModelParams& p, Eigen::VectorXd& lo, Eigen::VectorXd& hi);

struct FitOptions
{
    int max_iter = 30;
    double tol = 1e-6;
    bool fit_globals = true;
    bool estimate_inspectors = true;
    InspectorEstimateOptions inspector_options = [] {
        InspectorEstimateOptions o;
        o.max_sweeps = 1;
        return o;
    }();
    /// Refit kernel bandwidths each iteration when params.use_kernel is set and attributes exist.
    bool fit_kernel = true;
};

struct FitIteration
{
    double train_loglik = 0.0;
    double validation_loglik = 0.0;
    bool gradient_fallback = false;
    bool newton_accepted = false;
    bool kernel_accepted = false;
};

struct FitReport
{
    int iterations = 0;
    double initial_train_loglik = 0.0;
    std::vector<FitIteration> history;
    double best_validation_loglik = 0.0;
    int best_iteration = 0;  ///< 0 = initial parameters
    std::string reason;
    ModelParams params;  ///< best on validation
    ModelParams final_params;

    std::vector<double> train_logliks() const;
};

/// Fits on pre-split data. An empty validation set makes early stopping use the train set.
FitReport fit_split(const ModelParams& params0, const Dataset& train, const Dataset& validation,
                    const FitOptions& options = {}, const RunContext& ctx = {});

FitReport fit(const ModelParams& params0, const Dataset& data, const SplitConfig& cfg, const FitOptions& options = {},
              const RunContext& ctx = {});

struct CategoryFits
{
    std::map<std::string, FitReport> reports;
    std::map<std::string, std::string> errors;
    InspectorRegistry shared_inspectors;
};

/// Independent fit per category on a shared inspector map estimated on the union first.
CategoryFits fit_categories(const std::map<std::string, Dataset>& categories, const ModelParams& params0,
                            const SplitConfig& cfg, const FitOptions& options = {}, const RunContext& ctx = {});

/// Groups elements by ElementSeries::category.
std::map<std::string, Dataset> by_category(const Dataset& data);

/// Reference inputs for the kernel: smoothed initial state + attributes of every element with
/// attributes and at least one rating.
std::vector<ReferenceInput> kernel_reference_inputs(const Dataset& data, const ModelParams& params);

/// FitReport as CSV:
/// `iteration,train_loglik,validation_loglik,newton_accepted,gradient_fallback,kernel_accepted`.
std::string fit_history_csv(const FitReport& report);

} // namespace ipdm

#endif // IPDM_TRAIN_HPP
