#include "ipdm/kernel.hpp"

#include "ipdm/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ipdm
{

AttributeVector KernelModel::standardize(const std::vector<double>& raw) const
{
    if (raw.size() != dims())
        throw Error(ErrorKind::invalid_input, "attribute dimension mismatch: expected " + std::to_string(dims()) +
                                                  ", got " + std::to_string(raw.size()));
    AttributeVector z;
    z.values.resize(raw.size());
    for (std::size_t d = 0; d < raw.size(); ++d)
    {
        if (!std::isfinite(raw[d]))
            throw Error(ErrorKind::invalid_input, "non-finite attribute value");
        z.values[d] = scale[d] > 0.0 ? (raw[d] - center[d]) / scale[d] : 0.0;
    }
    return z;
}

void KernelModel::validate() const
{
    if (reference.empty())
        throw Error(ErrorKind::invalid_input, "kernel model needs at least one reference point");
    if (center.size() != dims() || scale.size() != dims())
        throw Error(ErrorKind::invalid_input, "kernel standardization size mismatch");
    for (int g : dim_group)
        if (g < 0 || static_cast<std::size_t>(g) >= bandwidths.size())
            throw Error(ErrorKind::invalid_input, "kernel dimension group out of range");
    for (double l : bandwidths)
        if (!(l > 0.0))
            throw Error(ErrorKind::invalid_input, "kernel bandwidths must be positive");
    if (!(noise_var > 0.0))
        throw Error(ErrorKind::invalid_input, "kernel noise floor must be positive");
}

KernelPrior kr_prior_standardized(const AttributeVector& z, const KernelModel& km)
{
    if (z.values.size() != km.dims())
        throw Error(ErrorKind::invalid_input, "attribute dimension mismatch");
    double wsum = 0.0;
    double wv = 0.0;
    std::vector<double> w(km.reference.size());
    for (std::size_t i = 0; i < km.reference.size(); ++i)
    {
        double e = 0.0;
        const auto& ref = km.reference[i].z.values;
        for (std::size_t d = 0; d < z.values.size(); ++d)
        {
            const double l = km.bandwidths[static_cast<std::size_t>(km.dim_group[d])];
            const double diff = z.values[d] - ref[d];
            e += diff * diff / (2.0 * l * l);
        }
        w[i] = std::exp(-e);
        wsum += w[i];
        wv += w[i] * km.reference[i].speed;
    }

    KernelPrior out;
    if (!(wsum > 0.0) || !std::isfinite(wsum))
    {
        out.fallback = true;
        double m = 0.0;
        for (const auto& r : km.reference)
            m += r.speed;
        m /= static_cast<double>(km.reference.size());
        double v = 0.0;
        for (const auto& r : km.reference)
            v += (r.speed - m) * (r.speed - m);
        v /= static_cast<double>(km.reference.size());
        out.speed = {std::min(m, 0.0), v + km.noise_var};
        return out;
    }
    const double mean = wv / wsum;
    double var = 0.0;
    for (std::size_t i = 0; i < km.reference.size(); ++i)
    {
        const double d = km.reference[i].speed - mean;
        var += w[i] * d * d;
    }
    var /= wsum;
    out.speed = {std::min(mean, 0.0), var + km.noise_var};
    return out;
}

KernelPrior kr_prior(const std::vector<double>& raw, const KernelModel& km)
{
    return kr_prior_standardized(km.standardize(raw), km);
}

KernelModel build_reference(const std::vector<ReferenceInput>& training, std::vector<int> dim_group,
                            double noise_var)
{
    if (training.empty())
        throw Error(ErrorKind::invalid_input, "kernel reference needs a non-empty training set");
    const std::size_t dims = training.front().attributes.size();
    for (const auto& t : training)
        if (t.attributes.size() != dims)
            throw Error(ErrorKind::invalid_input, "inconsistent attribute dimensions in training set");
    if (dim_group.empty())
        for (std::size_t d = 0; d < dims; ++d)
            dim_group.push_back(static_cast<int>(d));
    if (dim_group.size() != dims)
        throw Error(ErrorKind::invalid_input, "dimension group map does not match attribute count");

    KernelModel km;
    km.dim_group = std::move(dim_group);
    const int groups = dims == 0 ? 0 : *std::max_element(km.dim_group.begin(), km.dim_group.end()) + 1;
    km.bandwidths.assign(static_cast<std::size_t>(groups), 1.0);
    km.noise_var = noise_var;
    km.center.assign(dims, 0.0);
    km.scale.assign(dims, 0.0);

    const double n = static_cast<double>(training.size());
    for (std::size_t d = 0; d < dims; ++d)
    {
        double m = 0.0;
        for (const auto& t : training)
            m += t.attributes[d];
        m /= n;
        double v = 0.0;
        for (const auto& t : training)
            v += (t.attributes[d] - m) * (t.attributes[d] - m);
        v /= n;
        km.center[d] = m;
        km.scale[d] = v > 1e-24 ? std::sqrt(v) : 0.0;
    }
    km.fixed_group.assign(static_cast<std::size_t>(groups), true);
    for (std::size_t d = 0; d < dims; ++d)
        if (km.scale[d] > 0.0)
            km.fixed_group[static_cast<std::size_t>(km.dim_group[d])] = false;

    km.reference.reserve(training.size());
    for (const auto& t : training)
    {
        // the smoothed state may sit marginally above zero speed; the reference uses the
        // constrained moments
        const GaussianState constrained = constrain_speed(t.initial_smoothed);
        km.reference.push_back({km.standardize(t.attributes), constrained.mean(kSpeed)});
    }
    return km;
}

KernelModel fit_bandwidths(KernelModel km, const std::vector<ValidationTarget>& targets,
                           const std::function<double(const KernelModel&)>& score)
{
    if (targets.empty() || km.bandwidths.empty())
        return km;

    auto set_noise = [&](KernelModel& cand) {
        double r = 0.0;
        for (const auto& t : targets)
        {
            const double m = kr_prior(t.attributes, cand).speed.mean;
            r += (t.speed - m) * (t.speed - m);
        }
        cand.noise_var = std::max(r / static_cast<double>(targets.size()), 1e-6);
    };

    set_noise(km);
    double best = score(km);
    for (int sweep = 0; sweep < 2; ++sweep)
    {
        bool changed = false;
        for (std::size_t g = 0; g < km.bandwidths.size(); ++g)
        {
            if (km.fixed_group[g])
                continue;
            for (double l : bandwidth_grid())
            {
                if (l == km.bandwidths[g])
                    continue;
                KernelModel cand = km;
                cand.bandwidths[g] = l;
                set_noise(cand);
                const double s = score(cand);
                if (s > best)
                {
                    best = s;
                    km = std::move(cand);
                    changed = true;
                }
            }
        }
        if (!changed)
            break;
    }
    return km;
}

} // namespace ipdm
