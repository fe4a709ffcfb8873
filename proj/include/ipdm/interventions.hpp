/// @file interventions.hpp
/// Interventions as additive state jumps: effect estimation per type and service life.

#ifndef IPDM_INTERVENTIONS_HPP
#define IPDM_INTERVENTIONS_HPP

#include "ipdm/context.hpp"
#include "ipdm/model.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ipdm
{

/// mean + delta_mean, cov + delta_cov, then the speed constraint.
GaussianState apply_intervention(const GaussianState& state, const InterventionEffect& eff);

struct EffectEstimateOptions
{
    /// Prior variance of every jump component during estimation.
    double diffuse_var = 1e4;
};

struct ElementJump
{
    std::string element_id;
    Vec3 mean = Vec3::Zero();  ///< smoothed(tau+) - smoothed(tau-)
    Mat3 cov = Mat3::Zero();
};

struct EffectEstimate
{
    /// Stored effect: condition gain clamped at 0, covariance = dispersion + pooled uncertainty.
    InterventionEffect effect;
    /// Unclamped precision-weighted mean.
    Vec3 pooled_mean = Vec3::Zero();
    /// Covariance of the pooled mean.
    Mat3 pooled_cov = Mat3::Zero();
    /// Between-element dispersion beyond the per-element posterior uncertainty.
    Mat3 dispersion = Mat3::Zero();
    std::vector<ElementJump> elements;
    std::vector<std::string> skipped;  ///< records without data on both sides of the jump
};

/// Estimates the effect of `type_id` from elements with a record of that type. Each element
/// is filtered with a diffuse jump at the intervention time and smoothed; the jump posteriors
/// are pooled by precision weighting.
EffectEstimate estimate_effect(const Dataset& data, const std::vector<InterventionRecord>& records,
                               const ModelParams& params, const std::string& type_id,
                               const EffectEstimateOptions& options = {}, const RunContext& ctx = {});

/// One estimate per type id present in `records`.
std::map<std::string, EffectEstimate> estimate_effects(const Dataset& data,
                                                       const std::vector<InterventionRecord>& records,
                                                       const ModelParams& params,
                                                       const EffectEstimateOptions& options = {},
                                                       const RunContext& ctx = {});

struct ServiceLifeOptions
{
    double horizon_cap = 100.0;
    /// Fixed condition threshold (condition units) instead of the pre-intervention condition.
    std::optional<double> threshold;
};

struct ServiceLife
{
    double years = 0.0;
    double band_low = 0.0;   ///< from the mean - 2 sd condition trajectory
    double band_high = 0.0;  ///< from the mean + 2 sd condition trajectory
    bool censored = false;
    double baseline = 0.0;   ///< condition units
};

/// Years until the expected post-intervention condition returns to the baseline.
ServiceLife service_life(const GaussianState& pre_state, const InterventionEffect& eff, const ProcessModel& pm,
                         const ConditionScale& scale = {}, TransformParam n = {},
                         const ServiceLifeOptions& options = {});

/// `element_id,year,type_id`
std::vector<InterventionRecord> read_intervention_records(const std::filesystem::path& path);
std::string intervention_records_to_csv(const std::vector<InterventionRecord>& records);

/// `type_id,d_cond,d_speed,d_accel,var_cond,var_speed,var_accel`
std::string effects_to_csv(const std::map<std::string, InterventionEffect>& effects);
std::map<std::string, InterventionEffect> read_effects(const std::filesystem::path& path);

} // namespace ipdm

#endif // IPDM_INTERVENTIONS_HPP
