#include "ipdm/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ipdm
{

GaussianState InitialPrior::to_state() const
{
    GaussianState s;
    s.time = time;
    s.mean << condition.mean, speed.mean, acceleration.mean;
    s.cov.setZero();
    s.cov(kCondition, kCondition) = condition.variance;
    s.cov(kSpeed, kSpeed) = speed.variance;
    s.cov(kAcceleration, kAcceleration) = acceleration.variance;
    return s;
}

Mat3 transition_matrix(double dt)
{
    Mat3 a;
    a << 1.0, dt, 0.5 * dt * dt,
         0.0, 1.0, dt,
         0.0, 0.0, 1.0;
    return a;
}

Mat3 process_noise(double dt, double sigma_w)
{
    const double dt2 = dt * dt;
    const double dt3 = dt2 * dt;
    const double dt4 = dt3 * dt;
    const double dt5 = dt4 * dt;
    Mat3 q;
    q << dt5 / 20.0, dt4 / 8.0, dt3 / 6.0,
         dt4 / 8.0, dt3 / 3.0, dt2 / 2.0,
         dt3 / 6.0, dt2 / 2.0, dt;
    return sigma_w * sigma_w * q;
}

GaussianState predict(const GaussianState& state, double dt, const ProcessModel& pm)
{
    const Mat3 a = transition_matrix(dt);
    GaussianState out;
    out.time = state.time + dt;
    out.mean = a * state.mean;
    out.cov = a * state.cov * a.transpose() + process_noise(dt, pm.sigma_w);
    symmetrize(out.cov);
    return out;
}

UpdateResult update(const GaussianState& prior, const Gaussian1D& obs)
{
    if (!(obs.variance >= 0.0))
        throw Error(ErrorKind::invalid_input, "observation variance must be non-negative");
    const Vec3 pc = prior.cov.col(kCondition);
    const double s = pc(kCondition) + obs.variance;
    if (!(s > 0.0) || !std::isfinite(s))
        throw Error(ErrorKind::numerical_degeneracy, "innovation variance is not positive");

    UpdateResult r;
    r.innovation = obs.mean - prior.mean(kCondition);
    r.innovation_variance = s;
    r.loglik_increment = log_normal_pdf(obs.mean, prior.mean(kCondition), s);

    const Vec3 gain = pc / s;
    // Joseph form: (I - K C) P (I - K C)^T + K r K^T
    Mat3 ikc = Mat3::Identity();
    ikc.col(kCondition) -= gain;
    r.posterior.time = prior.time;
    r.posterior.mean = prior.mean + gain * r.innovation;
    r.posterior.cov = ikc * prior.cov * ikc.transpose() + obs.variance * gain * gain.transpose();
    symmetrize(r.posterior.cov);
    return r;
}

namespace
{

/// phi(b) / Phi(b), accurate in the far left tail where Phi underflows.
double inverse_mills(double b)
{
    if (b > -20.0)
        return std_normal_pdf(b) / std_normal_cdf(b);
    const double x = -b;
    const double x2 = x * x;
    // Phi(-x)/phi(x) = 1/x - 1/x^3 + 3/x^5 - 15/x^7 + 105/x^9 - ...
    const double r = (1.0 / x) * (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) +
                                  105.0 / (x2 * x2 * x2 * x2));
    return 1.0 / r;
}

} // namespace

Gaussian1D truncated_moments(const Gaussian1D& g, double upper)
{
    if (g.variance <= 0.0)
    {
        if (g.mean > upper)
            throw Error(ErrorKind::constraint_infeasible,
                        "degenerate speed marginal lies entirely above the constraint");
        return g;
    }
    const double sd = std::sqrt(g.variance);
    const double b = (upper - g.mean) / sd;
    const double lambda = inverse_mills(b);
    Gaussian1D out;
    out.mean = g.mean - sd * lambda;
    double factor = 0.0;
    if (b > -20.0)
        factor = 1.0 - b * lambda - lambda * lambda;
    else
    {
        const double x2 = b * b;
        factor = 1.0 / x2 - 6.0 / (x2 * x2);
    }
    out.variance = g.variance * std::clamp(factor, 0.0, 1.0);
    // the truncated mean can never sit above the bound
    out.mean = std::min(out.mean, upper);
    return out;
}

GaussianState constrain_speed(const GaussianState& state)
{
    const Gaussian1D speed = state.marginal(kSpeed);
    const Gaussian1D truncated = truncated_moments(speed, 0.0);
    if (speed.variance <= 0.0)
        return state;

    GaussianState out = state;
    const Vec3 col = state.cov.col(kSpeed);
    out.mean += col / speed.variance * (truncated.mean - speed.mean);
    out.cov += (col * col.transpose()) / (speed.variance * speed.variance) *
               (truncated.variance - speed.variance);
    out.mean(kSpeed) = truncated.mean;
    out.cov(kSpeed, kSpeed) = truncated.variance;
    symmetrize(out.cov);
    return out;
}

SeriesResult filter_series(std::span<const TimedObservation> observations, const InitialPrior& prior,
                           const ProcessModel& pm, const FilterOptions& options,
                           std::span<const JumpStep> jumps)
{
    if (!options.gate_mask.empty() && options.gate_mask.size() != observations.size())
        throw Error(ErrorKind::invalid_input, "gate mask size does not match the observations");
    SeriesResult result;
    result.outlier_flags.assign(observations.size(), false);
    result.standardized_innovations.assign(observations.size(), 0.0);

    GaussianState cur = prior.to_state();
    const bool store = options.store_states;
    auto push = [&](const GaussianState& predicted, const Mat3& transition, StepKind kind) {
        if (!store)
            return;
        result.predicted.push_back(predicted);
        result.filtered.push_back(predicted);
        result.transitions.push_back(transition);
        result.kinds.push_back(kind);
    };
    push(cur, Mat3::Identity(), StepKind::initial);

    const double unit = pm.dt_unit > 0.0 ? pm.dt_unit : 1.0;
    auto advance_to = [&](double t) {
        // without stored states the yearly grid is unnecessary: A and Q compose exactly
        if (!store && cur.time < t - 1e-12)
            cur = predict(cur, t - cur.time, pm);
        while (cur.time < t - 1e-12)
        {
            double dt = std::min(unit, t - cur.time);
            if (t - cur.time - dt < 1e-9)
                dt = t - cur.time;
            cur = predict(cur, dt, pm);
            push(cur, transition_matrix(dt), StepKind::predict);
        }
        cur.time = std::max(cur.time, t);
    };

    std::size_t next_jump = 0;
    auto apply_jumps_until = [&](double t) {
        while (next_jump < jumps.size() && jumps[next_jump].time <= t)
        {
            const JumpStep& j = jumps[next_jump++];
            if (j.time < prior.time)
                continue;
            advance_to(j.time);
            cur.mean += j.mean;
            cur.cov += j.cov;
            symmetrize(cur.cov);
            push(cur, Mat3::Identity(), StepKind::jump);
        }
    };

    double last_time = prior.time;
    for (std::size_t k = 0; k < observations.size(); ++k)
    {
        const TimedObservation& obs = observations[k];
        if (!std::isfinite(obs.time) || obs.time < last_time - 1e-12)
            throw Error(ErrorKind::invalid_input, "observation times must be non-decreasing and not precede the prior");
        last_time = obs.time;

        apply_jumps_until(obs.time);
        advance_to(obs.time);

        const double s = cur.cov(kCondition, kCondition) + obs.value.variance;
        const double innovation = obs.value.mean - cur.mean(kCondition);
        // An exact rating of an exactly known condition adds nothing; skip it rather than divide by ~0.
        if (s <= 1e-12 && std::abs(innovation) <= 1e-8)
        {
            if (store)
                result.filtered.back() = cur;
            continue;
        }
        if (!(s > 0.0))
            throw Error(ErrorKind::numerical_degeneracy, "innovation variance is not positive");
        const double nis = innovation * innovation / s;
        const bool gated = options.gate_mask.empty() ? nis > options.gate : options.gate_mask[k] != 0;
        if (gated)
        {
            result.outlier_flags[k] = true;
            if (options.gate_boundary_term)
                result.log_likelihood += -0.5 * (std::log(2.0 * std::numbers::pi * s) + options.gate);
        }
        else
        {
            UpdateResult u = update(cur, obs.value);
            result.log_likelihood += u.loglik_increment;
            result.standardized_innovations[k] = innovation / std::sqrt(s);
            cur = u.posterior;
        }
        if (options.constrain)
            cur = constrain_speed(cur);
        if (store)
            result.filtered.back() = cur;
    }
    if (!store)
    {
        result.filtered.push_back(cur);
    }
    return result;
}

SeriesResult& smooth_series(SeriesResult& result)
{
    const std::size_t n = result.filtered.size();
    result.smoothed.assign(result.filtered.begin(), result.filtered.end());
    result.smoothed_cross.assign(n > 0 ? n - 1 : 0, Mat3::Zero());
    if (n < 2 || result.predicted.size() != n || result.transitions.size() != n)
        return result;

    for (std::size_t k = n - 1; k-- > 0;)
    {
        const GaussianState& f = result.filtered[k];
        const GaussianState& p = result.predicted[k + 1];
        const Mat3& a = result.transitions[k + 1];
        // J = Pf A^T Pp^+, computed via the transpose Pp^+ A Pf
        Eigen::CompleteOrthogonalDecomposition<Mat3> cod(p.cov);
        const Mat3 gain = cod.solve(a * f.cov).transpose();
        const GaussianState& next = result.smoothed[k + 1];
        GaussianState& s = result.smoothed[k];
        s.time = f.time;
        s.mean = f.mean + gain * (next.mean - p.mean);
        s.cov = f.cov + gain * (next.cov - p.cov) * gain.transpose();
        symmetrize(s.cov);
        result.smoothed_cross[k] = gain * next.cov;
    }
    return result;
}

std::vector<ForecastPoint> forecast(const GaussianState& last, int horizon, const ProcessModel& pm,
                                    const ConditionScale& scale, TransformParam n)
{
    std::vector<ForecastPoint> out;
    if (horizon <= 0)
        return out;
    out.reserve(static_cast<std::size_t>(horizon));
    const double unit = pm.dt_unit > 0.0 ? pm.dt_unit : 1.0;
    GaussianState cur = last;
    for (int h = 1; h <= horizon; ++h)
    {
        cur = constrain_speed(predict(cur, unit, pm));
        ForecastPoint fp;
        fp.state = cur;
        const double sd = std::sqrt(std::max(cur.cov(kCondition, kCondition), 0.0));
        fp.condition_mean = to_bounded(cur.mean(kCondition), scale, n);
        fp.band_low = to_bounded(cur.mean(kCondition) - 2.0 * sd, scale, n);
        fp.band_high = to_bounded(cur.mean(kCondition) + 2.0 * sd, scale, n);
        out.push_back(fp);
    }
    return out;
}

GaussianState forecast_to(const GaussianState& state, double time, const ProcessModel& pm)
{
    const double unit = pm.dt_unit > 0.0 ? pm.dt_unit : 1.0;
    GaussianState cur = state;
    while (cur.time < time - 1e-12)
    {
        double dt = std::min(unit, time - cur.time);
        if (time - cur.time - dt < 1e-9)
            dt = time - cur.time;
        cur = constrain_speed(predict(cur, dt, pm));
    }
    return cur;
}

} // namespace ipdm
