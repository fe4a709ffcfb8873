/// @file model.hpp
/// Model parameters and the glue that turns an element's inspections into filter inputs.

#ifndef IPDM_MODEL_HPP
#define IPDM_MODEL_HPP

#include "ipdm/dataset.hpp"
#include "ipdm/domain.hpp"
#include "ipdm/kernel.hpp"
#include "ipdm/ssm.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ipdm
{

struct InspectorBounds
{
    double sigma_min = 0.5;
    double sigma_max = 10.0;

    double midpoint() const { return 0.5 * (sigma_min + sigma_max); }
    void validate() const;
};

/// Inspector error models keyed by inspector id. Lookups of unknown or empty ids fall back to a
/// wide default inspector.
class InspectorRegistry
{
public:
    InspectorRegistry() : InspectorRegistry(10.0) {}
    explicit InspectorRegistry(double fallback_sigma) { set_fallback_sigma(fallback_sigma); }

    const InspectorModel& get(const std::string& id) const;
    bool contains(const std::string& id) const { return models_.contains(id); }
    void set(InspectorModel model) { models_[model.id] = std::move(model); }

    const std::map<std::string, InspectorModel>& models() const { return models_; }
    std::map<std::string, InspectorModel>& models() { return models_; }

    double fallback_sigma() const { return fallback_sigma_; }
    void set_fallback_sigma(double s);

private:
    std::map<std::string, InspectorModel> models_;
    double fallback_sigma_ = 10.0;
    InspectorModel fallback_{};
};

struct Range
{
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double v) const { return v >= lo && v <= hi; }
    double clamp(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
};

struct ParamBounds
{
    Range sigma_w{1e-4, 1.0};
    Range prior_var{1e-4, 1e4};
    Range speed_mean{-10.0, 0.0};
};

/// Hyper-parameters of the initial state prior of every element.
struct PriorHyper
{
    /// Added to the first observation's variance to form the initial condition variance.
    double condition_var = 1.0;
    double speed_mean = -0.5;
    double speed_var = 0.25;
    double accel_var = 1e-3;
};

struct ModelParams
{
    std::string category = "default";
    ConditionScale scale;
    TransformParam n;
    double sigma_w = 0.01;
    PriorHyper prior;
    InspectorRegistry inspectors{10.0};
    InspectorBounds inspector_bounds;
    std::optional<KernelModel> kernel;
    bool use_kernel = false;
    std::map<std::string, InterventionEffect> interventions;
    ParamBounds bounds;
    double outlier_gate = kDefaultOutlierGate;

    ProcessModel process() const { return {sigma_w, 1.0}; }
    bool within_bounds() const;
    void validate() const;
};

/// Filter inputs for one element. The first available rating initializes the condition prior
/// and is not re-used as an update.
struct PreparedSeries
{
    bool usable = false;
    InitialPrior prior;
    std::vector<TimedObservation> observations;
    /// Index into ElementSeries::inspections for every entry of `observations`.
    std::vector<std::size_t> source;
    std::size_t first_source = 0;
    bool kernel_fallback = false;
};

PreparedSeries prepare_series(const ElementSeries& series, const ModelParams& params);

/// Filter log-likelihood of one element (0 for elements with fewer than two ratings).
double series_loglik(const ElementSeries& series, const ModelParams& params,
                     std::span<const std::uint8_t> gate_mask = {});

/// Gating decisions of every element under `params`, one entry per filter update.
using GateMasks = std::vector<std::vector<std::uint8_t>>;
GateMasks gate_masks(const ModelParams& params, const Dataset& data);

/// Full filter + smoother run for one element.
SeriesResult analyze_series(const ElementSeries& series, const ModelParams& params, int forecast_horizon = 0,
                            std::span<const JumpStep> jumps = {});

/// Per-element log-likelihoods, evaluated in parallel.
std::vector<double> element_logliks(const ModelParams& params, const Dataset& data,
                                    const GateMasks* masks = nullptr);

/// Sum of per-element filter log-likelihoods with a thread-count independent reduction.
double total_loglik(const ModelParams& params, const Dataset& data, const GateMasks* masks = nullptr);

/// Reads/writes the self-describing parameter artifact (JSON text, versioned).
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);
std::string params_to_string(const ModelParams& params);
ModelParams params_from_string(const std::string& text);

inline constexpr int kParamsFormatVersion = 1;

} // namespace ipdm

#endif // IPDM_MODEL_HPP
