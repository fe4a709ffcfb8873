/// @file verify.hpp
/// Verification on synthetic data (forecast errors, parameter recovery) and validation against
/// a database with additional inspections.

#ifndef IPDM_VERIFY_HPP
#define IPDM_VERIFY_HPP

#include "ipdm/context.hpp"
#include "ipdm/inspectors.hpp"
#include "ipdm/model.hpp"
#include "ipdm/synth.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ipdm
{

const char* component_name(StateComponent c);

struct ErrorCell
{
    StateComponent component = kCondition;
    int horizon_year = 0;
    double mean_error = 0.0;
    double mae = 0.0;
    double band_low = 0.0;
    double band_high = 0.0;
    int n = 0;
};

/// Rows ordered by component, then horizon year.
struct ErrorReport
{
    std::string kind;  ///< "signed", "absolute" or "condition_units"
    int horizon = 0;
    std::vector<ErrorCell> cells;

    const ErrorCell& at(StateComponent c, int horizon_year) const;
};

struct ForecastErrors
{
    /// Band = mean error +- 2 population sd of the errors.
    ErrorReport signed_report;
    /// Errors replaced by their magnitude: mean_error = mae, band = mae +- 2 sd(|e|).
    ErrorReport absolute_report;
    /// Signed condition errors after back-transformation (condition units), component "condition".
    ErrorReport condition_units;
    std::vector<std::string> elements;
    /// raw[e][h - 1][component]: estimate minus truth, transformed units.
    std::vector<std::vector<Vec3>> raw;
    std::vector<std::string> warnings;
};

/// Filters every sampled element up to (last observation year - H), forecasts H years and
/// compares expected states with the true states.
ForecastErrors forecast_error_report(const SyntheticDataset& ds, const ModelParams& params, int horizon,
                                     int sample_elements, std::uint64_t seed, const RunContext& ctx = {});

struct RecoveryRow
{
    std::string parameter;
    std::optional<double> truth;
    double estimated = 0.0;
    std::optional<double> relative_error;
};

struct RecoveryReport
{
    std::vector<RecoveryRow> rows;
    std::optional<InspectorRecovery> inspectors;
};

/// Known generating values of a synthetic configuration (sigma_w, transform_n).
std::map<std::string, double> generating_truth(const SynthConfig& cfg);

RecoveryReport recovery_report(const ModelParams& fitted, const std::map<std::string, double>& truth,
                               const std::map<std::string, InspectorModel>& inspector_truth, int min_obs = 50);

struct HoldoutObservation
{
    std::string element_id;
    double year = 0.0;
    double condition = 0.0;
    double predicted_mean = 0.0;      ///< transformed units
    double predicted_variance = 0.0;  ///< state + observation variance
    double standardized = 0.0;
    double loglik = 0.0;
};

struct HoldoutReport
{
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;
    /// mean / (std / sqrt(n))
    double z_score = 0.0;
    double predictive_loglik = 0.0;
    std::size_t skipped = 0;  ///< additional ratings without an earlier state to forecast from
    std::vector<HoldoutObservation> observations;
};

/// For every element, filters the ratings of `db_old` and forecasts each additional rating
/// present in `db_new` from the last filtered state at or before its year.
HoldoutReport validate_holdout(const Dataset& db_old, const Dataset& db_new, const ModelParams& params,
                               const RunContext& ctx = {});

/// `component,horizon_year,mean_error,mae,band_low,band_high,n`
std::string error_report_csv(const ErrorReport& report);
ErrorReport read_error_report(const std::filesystem::path& path);
std::string recovery_csv(const RecoveryReport& report);
std::string holdout_summary_csv(const HoldoutReport& report);
std::string holdout_observations_csv(const HoldoutReport& report);

/// Writes verify_signed.csv, verify_absolute.csv, verify_condition_units.csv and one plot
/// verify_<component>.png per state component into `dir`. Returns the written paths.
std::vector<std::filesystem::path> render_report(const ForecastErrors& errors, const std::filesystem::path& dir);

} // namespace ipdm

#endif // IPDM_VERIFY_HPP
