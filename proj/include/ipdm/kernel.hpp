/// @file kernel.hpp
/// Nadaraya-Watson kernel regression over structural attributes. It supplies the initial-speed
/// prior of an element from the smoothed initial speeds of similar training elements.

#ifndef IPDM_KERNEL_HPP
#define IPDM_KERNEL_HPP

#include "ipdm/domain.hpp"

#include <functional>
#include <vector>

namespace ipdm
{

struct AttributeVector
{
    std::vector<double> values;
};

struct KernelReference
{
    AttributeVector z;  ///< standardized
    double speed = 0.0;
};

struct KernelModel
{
    /// One bandwidth per group; one-hot columns of a categorical attribute share a group.
    std::vector<double> bandwidths;
    /// Group index of every attribute dimension.
    std::vector<int> dim_group;
    /// Per-dimension standardization; a zero scale marks a constant column.
    std::vector<double> center;
    std::vector<double> scale;
    std::vector<KernelReference> reference;
    double noise_var = 1e-4;
    /// Groups whose columns are all constant; their bandwidth stays at 1.
    std::vector<bool> fixed_group;

    std::size_t dims() const { return dim_group.size(); }
    AttributeVector standardize(const std::vector<double>& raw) const;
    void validate() const;
};

struct KernelPrior
{
    Gaussian1D speed;
    bool fallback = false;
};

/// Initial-speed prior for an element with raw attributes `raw`.
KernelPrior kr_prior(const std::vector<double>& raw, const KernelModel& km);

/// Same, for an already standardized attribute vector.
KernelPrior kr_prior_standardized(const AttributeVector& z, const KernelModel& km);

struct ReferenceInput
{
    std::vector<double> attributes;  ///< raw
    GaussianState initial_smoothed;
};

/// Builds reference points from training elements. `dim_group` may be empty, in which case every
/// dimension gets its own bandwidth.
KernelModel build_reference(const std::vector<ReferenceInput>& training, std::vector<int> dim_group = {},
                            double noise_var = 1e-4);

/// Candidate bandwidths (post-standardization).
inline const std::vector<double>& bandwidth_grid()
{
    static const std::vector<double> grid{0.25, 0.5, 1.0, 2.0, 4.0};
    return grid;
}

struct ValidationTarget
{
    std::vector<double> attributes;  ///< raw
    double speed = 0.0;              ///< reference speed of the validation element
};

/// Coordinate-wise grid search over group bandwidths. `score` returns the validation predictive
/// log-likelihood of a candidate model; the noise floor of each candidate is set to the residual
/// variance of `targets` before scoring.
KernelModel fit_bandwidths(KernelModel km, const std::vector<ValidationTarget>& targets,
                           const std::function<double(const KernelModel&)>& score);

} // namespace ipdm

#endif // IPDM_KERNEL_HPP
