#include "ipdm/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ipdm
{

void ConditionScale::validate() const
{
    if (!std::isfinite(lower) || !std::isfinite(upper) || !(lower < upper))
        throw Error(ErrorKind::invalid_input, "condition scale requires finite lower < upper");
}

void TransformParam::validate() const
{
    if (!std::isfinite(n) || !(n > 0.0))
        throw Error(ErrorKind::invalid_input, "transform parameter n must be positive");
}

bool is_valid_covariance(const Mat3& cov, double symmetry_tol)
{
    if (!cov.allFinite())
        return false;
    const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > symmetry_tol * scale)
        return false;
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov, Eigen::EigenvaluesOnly);
    const double floor = -1e-9 * std::max(std::abs(cov.trace()), 1e-300);
    return eig.eigenvalues().minCoeff() >= floor;
}

namespace
{

double position(double y, const ConditionScale& scale, bool& clamped)
{
    if (!std::isfinite(y))
        throw Error(ErrorKind::invalid_input, "non-finite condition value");
    const double p = (y - scale.lower) / scale.width();
    const double pc = std::clamp(p, kClampEps, 1.0 - kClampEps);
    clamped = pc != p;
    return pc;
}

} // namespace

double to_unbounded(double y, const ConditionScale& scale, TransformParam n, bool& clamped)
{
    const double p = position(y, scale, clamped);
    const double s = scale.width() / n.n;
    return s * (std::log(p) - std::log1p(-p));
}

double to_unbounded(double y, const ConditionScale& scale, TransformParam n)
{
    bool clamped = false;
    return to_unbounded(y, scale, n, clamped);
}

double to_bounded(double x, const ConditionScale& scale, TransformParam n)
{
    if (!std::isfinite(x))
        throw Error(ErrorKind::invalid_input, "non-finite transformed value");
    const double s = scale.width() / n.n;
    const double z = x / s;
    // logistic, written to stay accurate for both signs
    const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return scale.lower + p * scale.width();
}

double transform_derivative(double y, const ConditionScale& scale, TransformParam n)
{
    bool clamped = false;
    const double p = position(y, scale, clamped);
    const double s = scale.width() / n.n;
    return s / (p * (1.0 - p) * scale.width());
}

double transformed_limit(const ConditionScale& scale, TransformParam n)
{
    return to_unbounded(scale.upper, scale, n);
}

TransformedObservation observation_to_transformed(double y, const InspectorModel& inspector,
                                                  const ConditionScale& scale, TransformParam n)
{
    if (!(inspector.sigma_v >= 0.0))
        throw Error(ErrorKind::invalid_input, "inspector sigma_v must be non-negative");
    TransformedObservation out;
    const double corrected = y - inspector.mu_v;
    out.value.mean = to_unbounded(corrected, scale, n, out.clamped);
    const double slope = transform_derivative(corrected, scale, n);
    out.value.variance = (inspector.sigma_v * slope) * (inspector.sigma_v * slope);
    return out;
}

double log_normal_pdf(double x, double mean, double variance)
{
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + d * d / variance);
}

double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

} // namespace ipdm
