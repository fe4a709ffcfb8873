/// @file domain.hpp
/// Core value types shared by every module: the condition scale, the bounded <-> unbounded
/// condition-space transformation, and small Gaussian helpers.

#ifndef IPDM_DOMAIN_HPP
#define IPDM_DOMAIN_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace ipdm
{

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Index of each component in a deterioration state vector.
enum StateComponent : int
{
    kCondition = 0,
    kSpeed = 1,
    kAcceleration = 2,
};

enum class ErrorKind
{
    invalid_input,
    numerical_degeneracy,
    constraint_infeasible,
    not_found,
    io,
    schema,
    unidentifiable,
    cancelled,
};

/// Exception type used throughout the library. The kind lets the CLI and HTTP layers map
/// failures onto exit codes and status codes.
class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Bounded inspection rating scale; 100 is a perfect condition and 25 a poor one by default.
struct ConditionScale
{
    double lower = 25.0;
    double upper = 100.0;

    double width() const { return upper - lower; }
    double midpoint() const { return 0.5 * (lower + upper); }
    void validate() const;
};

/// Steepness of the space transformation.
struct TransformParam
{
    double n = 4.0;
    void validate() const;
};

struct Gaussian1D
{
    double mean = 0.0;
    double variance = 0.0;
};

/// Mean and covariance of (condition, speed, acceleration) in transformed space at one time.
struct GaussianState
{
    double time = 0.0;
    Vec3 mean = Vec3::Zero();
    Mat3 cov = Mat3::Zero();

    Gaussian1D marginal(int component) const { return {mean(component), cov(component, component)}; }
};

/// True if `cov` is symmetric and its smallest eigenvalue is above -1e-9 * trace.
bool is_valid_covariance(const Mat3& cov, double symmetry_tol = 1e-9);

/// Symmetrizes in place; used after every covariance update to suppress round-off drift.
inline void symmetrize(Mat3& cov) { cov = 0.5 * (cov + cov.transpose()).eval(); }

/// Probabilities are clamped to [kClampEps, 1 - kClampEps] before the logit.
inline constexpr double kClampEps = 1e-4;

/// Transformed value of condition `y`: s * logit(p) with p = (y - lower) / width and
/// s = width / n. The midpoint maps to 0 with slope 4 / n.
double to_unbounded(double y, const ConditionScale& scale = {}, TransformParam n = {});

/// Same as to_unbounded and reports whether the input had to be clamped.
double to_unbounded(double y, const ConditionScale& scale, TransformParam n, bool& clamped);

/// Inverse of to_unbounded.
double to_bounded(double x, const ConditionScale& scale = {}, TransformParam n = {});

/// d to_unbounded / dy evaluated at `y` (after clamping).
double transform_derivative(double y, const ConditionScale& scale = {}, TransformParam n = {});

/// Largest transformed magnitude reachable after clamping.
double transformed_limit(const ConditionScale& scale = {}, TransformParam n = {});

/// Observation error model of one inspector, in condition units.
struct InspectorModel
{
    std::string id;
    double mu_v = 0.0;
    double sigma_v = 1.0;
    int n_obs = 0;
    bool insufficient_data = false;
};

/// State improvement produced by one intervention type, in transformed units.
struct InterventionEffect
{
    std::string type_id;
    Vec3 delta_mean = Vec3::Zero();
    Mat3 delta_cov = Mat3::Zero();
};

struct InterventionRecord
{
    std::string element_id;
    double time = 0.0;
    std::string type_id;
};

/// An observation mapped to transformed space through a first-order propagation of the
/// inspector's error model.
struct TransformedObservation
{
    Gaussian1D value;
    bool clamped = false;
};

TransformedObservation observation_to_transformed(double y, const InspectorModel& inspector,
                                                  const ConditionScale& scale = {}, TransformParam n = {});

/// Gaussian log density.
double log_normal_pdf(double x, double mean, double variance);

/// Standard normal pdf / cdf.
double std_normal_pdf(double z);
double std_normal_cdf(double z);

} // namespace ipdm

#endif // IPDM_DOMAIN_HPP
