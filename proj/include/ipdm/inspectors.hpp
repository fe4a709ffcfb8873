/// @file inspectors.hpp
/// Maximum-likelihood estimation of per-inspector error models and recovery diagnostics.

#ifndef IPDM_INSPECTORS_HPP
#define IPDM_INSPECTORS_HPP

#include "ipdm/model.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ipdm
{

struct InspectorEstimateOptions
{
    int max_sweeps = 10;
    /// Stop when the relative change of the total log-likelihood over a sweep falls below this.
    double rel_tol = 1e-4;
    int newton_iterations = 20;
    double step_tol = 1e-6;
    bool estimate_bias = false;
    Range bias_bounds{-10.0, 10.0};
    /// Processing order of inspectors; empty means sorted by id.
    std::vector<std::string> order;
};

struct InspectorEstimate
{
    InspectorRegistry registry;
    int sweeps = 0;
    std::vector<double> loglik_history;  ///< total log-likelihood before the first and after each sweep
    bool converged = false;
};

/// Coordinate ascent over inspectors. Each inspector's sigma_v is moved by a bounded 1-D
/// Newton-Raphson with step halving on the log-likelihood of the series it rated; other
/// inspectors and the global parameters stay fixed.
InspectorEstimate estimate_inspectors(const Dataset& data, const ModelParams& global, const InspectorBounds& bounds,
                                      const InspectorEstimateOptions& options = {});

struct InspectorRecoveryRow
{
    std::string id;
    int n_obs = 0;
    double sigma_true = 0.0;
    double sigma_estimated = 0.0;
};

struct InspectorRecovery
{
    double rmse = 0.0;
    double rank_correlation = 0.0;
    int compared = 0;
    std::vector<InspectorRecoveryRow> table;  ///< sorted by n_obs, descending
};

/// Compares estimated sigma_v against ground truth over inspectors with at least `min_obs`
/// observations.
InspectorRecovery inspector_report(const std::map<std::string, InspectorModel>& estimated,
                                   const std::map<std::string, InspectorModel>& truth, int min_obs = 0);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// `inspector_id,mu_v,sigma_v,n_obs`
std::string inspectors_to_csv(const InspectorRegistry& registry);
InspectorRegistry inspectors_from_csv(const std::filesystem::path& path, double fallback_sigma);

} // namespace ipdm

#endif // IPDM_INSPECTORS_HPP
