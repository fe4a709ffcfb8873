/// @file ssm.hpp
/// Kinematic state-space deterioration model.
///
/// The latent state is x = [condition, speed, acceleration] in transformed space and evolves
/// under a white-noise-jerk model:
///
///     A(dt) = [[1, dt, dt^2/2], [0, 1, dt], [0, 0, 1]]
///     Q(dt) = sigma_w^2 [[dt^5/20, dt^4/8, dt^3/6], [dt^4/8, dt^3/3, dt^2/2], [dt^3/6, dt^2/2, dt]]
///
/// Only the condition is observed (C = [1, 0, 0]). Deterioration is monotone, so after every
/// update the speed marginal is truncated to (-inf, 0] and the moment change is propagated to the
/// other components by linear-Gaussian conditioning.

#ifndef IPDM_SSM_HPP
#define IPDM_SSM_HPP

#include "ipdm/domain.hpp"

#include <span>
#include <cstdint>
#include <vector>

namespace ipdm
{

struct ProcessModel
{
    double sigma_w = 0.0;
    double dt_unit = 1.0;
};

/// Prior on the state at `time`.
struct InitialPrior
{
    double time = 0.0;
    Gaussian1D condition{0.0, 1.0};
    Gaussian1D speed{0.0, 1.0};
    Gaussian1D acceleration{0.0, 1.0};

    GaussianState to_state() const;
};

struct TimedObservation
{
    double time = 0.0;
    Gaussian1D value;
};

/// An additive state jump inserted at `time` before any observation at that time. Used for
/// interventions, both known (mean + covariance) and unknown (diffuse covariance only).
struct JumpStep
{
    double time = 0.0;
    Vec3 mean = Vec3::Zero();
    Mat3 cov = Mat3::Zero();
};

/// Chi-square(1) quantile at 0.999.
inline constexpr double kDefaultOutlierGate = 10.83;

struct FilterOptions
{
    double gate = kDefaultOutlierGate;
    bool constrain = true;
    /// Gated observations add the log density at the gate boundary, -0.5 (log 2 pi S + gate),
    /// so that the likelihood stays continuous and gating cannot raise it. Off: no term.
    bool gate_boundary_term = true;
    /// Keep per-step states; likelihood-only callers switch this off.
    bool store_states = true;
    /// Frozen gating decisions, one per observation (non-zero = gated). Empty: gate by `gate`.
    /// Freezing keeps the likelihood smooth in the parameters while derivatives are taken.
    std::span<const std::uint8_t> gate_mask;
};

/// Where a filter step came from.
enum class StepKind
{
    initial,
    predict,
    jump,
};

struct SeriesResult
{
    /// Per-step filtered (posterior, constrained) states, time ordered.
    std::vector<GaussianState> filtered;
    /// Per-step one-step-ahead predictions; predicted[0] is the prior.
    std::vector<GaussianState> predicted;
    /// Transition matrix used to reach each step; identity for the first and for jumps.
    std::vector<Mat3> transitions;
    std::vector<StepKind> kinds;
    std::vector<GaussianState> smoothed;
    /// Cov(x_k, x_{k+1} | all data) for consecutive smoothed states.
    std::vector<Mat3> smoothed_cross;
    std::vector<GaussianState> forecast;
    double log_likelihood = 0.0;
    std::vector<bool> outlier_flags;
    /// Normalized innovation of every observation; zero for gated ones.
    std::vector<double> standardized_innovations;
};

Mat3 transition_matrix(double dt);
Mat3 process_noise(double dt, double sigma_w);

GaussianState predict(const GaussianState& state, double dt, const ProcessModel& pm);

struct UpdateResult
{
    GaussianState posterior;
    double loglik_increment = 0.0;
    double innovation = 0.0;
    double innovation_variance = 0.0;
};

/// Conditions `prior` on a scalar observation of the condition component.
UpdateResult update(const GaussianState& prior, const Gaussian1D& obs);

/// Moments of N(mean, variance) truncated to (-inf, upper].
Gaussian1D truncated_moments(const Gaussian1D& g, double upper = 0.0);

/// Enforces speed <= 0 by PDF truncation of the speed marginal.
GaussianState constrain_speed(const GaussianState& state);

SeriesResult filter_series(std::span<const TimedObservation> observations, const InitialPrior& prior,
                           const ProcessModel& pm, const FilterOptions& options = {},
                           std::span<const JumpStep> jumps = {});

/// Fixed-interval RTS smoother over the steps of a filtered result; fills `smoothed` and
/// `smoothed_cross` in place and returns the result for chaining.
SeriesResult& smooth_series(SeriesResult& result);

struct ForecastPoint
{
    GaussianState state;
    double condition_mean = 0.0;  ///< back-transformed, condition units
    double band_low = 0.0;        ///< to_bounded(mean - 2 sd)
    double band_high = 0.0;       ///< to_bounded(mean + 2 sd)
};

/// Repeated predict + constrain_speed over `horizon` whole years.
std::vector<ForecastPoint> forecast(const GaussianState& last, int horizon, const ProcessModel& pm,
                                    const ConditionScale& scale = {}, TransformParam n = {});

/// Predicts from `state` to `time` in steps of at most one year, constraining after each step.
GaussianState forecast_to(const GaussianState& state, double time, const ProcessModel& pm);

} // namespace ipdm

#endif // IPDM_SSM_HPP
