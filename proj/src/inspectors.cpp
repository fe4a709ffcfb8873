#include "ipdm/inspectors.hpp"

#include "ipdm/io.hpp"
#include "ipdm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ipdm
{

namespace
{

double subset_loglik(const Dataset& data, const std::vector<std::size_t>& subset, const ModelParams& params)
{
    std::vector<double> ll(subset.size(), 0.0);
    parallel_for(subset.size(), [&](std::size_t k) { ll[k] = series_loglik(data.elements[subset[k]], params); });
    for (std::size_t k = 0; k < ll.size(); ++k)
        if (!std::isfinite(ll[k]))
            throw Error(ErrorKind::numerical_degeneracy,
                        "non-finite log-likelihood for element '" + data.elements[subset[k]].id + "'");
    return tree_sum(ll);
}

/// Bounded 1-D Newton-Raphson with central finite differences and step halving. `f` is the
/// objective; returns the accepted argument.
template <class F>
double maximize_1d(F&& f, double x, Range bounds, int iterations, double step_tol, double& fx)
{
    fx = f(x);
    for (int it = 0; it < iterations; ++it)
    {
        const double h = 1e-4 * std::max(std::abs(x), 1.0);
        // keep the stencil inside the box
        const double xc = std::clamp(x, bounds.lo + h, bounds.hi - h);
        const double f0 = xc == x ? fx : f(xc);
        const double fp = f(xc + h);
        const double fm = f(xc - h);
        const double g = (fp - fm) / (2.0 * h);
        const double hess = (fp - 2.0 * f0 + fm) / (h * h);
        double step = 0.0;
        if (hess < 0.0)
            step = -g / hess;
        else
            step = (g > 0.0 ? 1.0 : -1.0) * 0.25 * std::max(std::abs(x), 1.0);
        const double max_step = std::max(std::abs(x), 1.0);
        step = std::clamp(step, -max_step, max_step);

        bool accepted = false;
        double x_new = x;
        double f_new = fx;
        for (int halving = 0; halving <= 10; ++halving)
        {
            x_new = bounds.clamp(x + step);
            if (x_new == x)
                break;
            f_new = f(x_new);
            if (f_new >= fx)
            {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            break;
        const double moved = std::abs(x_new - x);
        x = x_new;
        fx = f_new;
        if (moved < step_tol)
            break;
    }
    return x;
}

} // namespace

InspectorEstimate estimate_inspectors(const Dataset& data, const ModelParams& global, const InspectorBounds& bounds,
                                      const InspectorEstimateOptions& options)
{
    bounds.validate();
    ModelParams work = global;
    work.inspector_bounds = bounds;

    std::map<std::string, int> counts;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t e = 0; e < data.size(); ++e)
    {
        for (const auto& ins : data.elements[e].inspections)
        {
            if (!ins.condition || ins.inspector.empty())
                continue;
            ++counts[ins.inspector];
            auto& m = members[ins.inspector];
            if (m.empty() || m.back() != e)
                m.push_back(e);
        }
    }

    InspectorRegistry registry(bounds.sigma_max);
    for (const auto& [id, model] : global.inspectors.models())
    {
        InspectorModel m = model;
        m.sigma_v = std::clamp(m.sigma_v, bounds.sigma_min, bounds.sigma_max);
        m.n_obs = 0;
        registry.set(m);
    }
    for (const auto& [id, n] : counts)
    {
        InspectorModel m = registry.contains(id) ? registry.get(id) : InspectorModel{id, 0.0, bounds.midpoint(), 0, false};
        m.id = id;
        m.n_obs = n;
        m.insufficient_data = n < 2;
        if (m.insufficient_data)
            m.sigma_v = bounds.midpoint();
        registry.set(m);
    }
    for (auto& [id, m] : registry.models())
        if (!counts.contains(id))
        {
            m.insufficient_data = true;
            m.sigma_v = bounds.midpoint();
        }
    work.inspectors = registry;

    std::vector<std::string> order = options.order;
    if (order.empty())
        for (const auto& [id, n] : counts)
            order.push_back(id);

    InspectorEstimate out;
    double total = total_loglik(work, data);
    out.loglik_history.push_back(total);

    const Range sigma_range{bounds.sigma_min, bounds.sigma_max};
    for (int sweep = 0; sweep < options.max_sweeps; ++sweep)
    {
        for (const std::string& id : order)
        {
            if (!counts.contains(id) || counts[id] < 2)
                continue;
            const auto& subset = members[id];
            InspectorModel& target = work.inspectors.models().at(id);
            auto objective_sigma = [&](double s) {
                target.sigma_v = s;
                return subset_loglik(data, subset, work);
            };
            double fbest = 0.0;
            const double start = target.sigma_v;
            double best = maximize_1d(objective_sigma, start, sigma_range, options.newton_iterations, options.step_tol,
                                      fbest);
            target.sigma_v = best;
            if (options.estimate_bias)
            {
                auto objective_mu = [&](double mu) {
                    target.mu_v = mu;
                    return subset_loglik(data, subset, work);
                };
                const double mu = maximize_1d(objective_mu, target.mu_v, options.bias_bounds,
                                              options.newton_iterations, options.step_tol, fbest);
                target.mu_v = mu;
            }
        }
        const double next = total_loglik(work, data);
        out.loglik_history.push_back(next);
        out.sweeps = sweep + 1;
        const double rel = std::abs(next - total) / std::max(std::abs(total), 1.0);
        total = next;
        if (rel < options.rel_tol)
        {
            out.converged = true;
            break;
        }
    }
    out.registry = work.inspectors;
    return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size() || a.size() < 2)
        return 0.0;
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();)
        {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]])
                ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k)
                r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i)
    {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 && sbb == 0.0)
        return 1.0;
    if (saa == 0.0 || sbb == 0.0)
        return 0.0;
    return sab / std::sqrt(saa * sbb);
}

InspectorRecovery inspector_report(const std::map<std::string, InspectorModel>& estimated,
                                   const std::map<std::string, InspectorModel>& truth, int min_obs)
{
    InspectorRecovery out;
    for (const auto& [id, est] : estimated)
    {
        auto it = truth.find(id);
        if (it == truth.end())
            continue;
        out.table.push_back({id, est.n_obs, it->second.sigma_v, est.sigma_v});
    }
    if (out.table.empty())
        throw Error(ErrorKind::invalid_input, "no inspector is present in both the estimate and the truth");
    std::stable_sort(out.table.begin(), out.table.end(),
                     [](const auto& a, const auto& b) { return a.n_obs > b.n_obs; });

    std::vector<double> t, e;
    double se = 0.0;
    for (const auto& row : out.table)
    {
        if (row.n_obs < min_obs)
            continue;
        t.push_back(row.sigma_true);
        e.push_back(row.sigma_estimated);
        se += (row.sigma_true - row.sigma_estimated) * (row.sigma_true - row.sigma_estimated);
    }
    out.compared = static_cast<int>(t.size());
    out.rmse = t.empty() ? 0.0 : std::sqrt(se / static_cast<double>(t.size()));
    out.rank_correlation = t.size() < 2 ? (t.empty() ? 0.0 : 1.0) : spearman(t, e);
    return out;
}

std::string inspectors_to_csv(const InspectorRegistry& registry)
{
    CsvWriter w({"inspector_id", "mu_v", "sigma_v", "n_obs"});
    for (const auto& [id, m] : registry.models())
        w.row(id, m.mu_v, m.sigma_v, m.n_obs);
    return w.str();
}

InspectorRegistry inspectors_from_csv(const std::filesystem::path& path, double fallback_sigma)
{
    const CsvTable t = read_csv_table(path, {"inspector_id", "mu_v", "sigma_v", "n_obs"});
    const auto ci = t.column("inspector_id"), cm = t.column("mu_v"), cs = t.column("sigma_v"), cn = t.column("n_obs");
    InspectorRegistry reg(fallback_sigma);
    for (std::size_t r = 0; r < t.rows.size(); ++r)
    {
        const auto& row = t.rows[r];
        const auto mu = parse_double(row[cm]);
        const auto sigma = parse_double(row[cs]);
        const auto n = parse_int(row[cn]);
        if (!mu || !sigma || !n || *sigma < 0.0)
            throw Error(ErrorKind::schema, path.string() + ":" + std::to_string(t.line_numbers[r]) + ": invalid inspector row");
        reg.set({row[ci], *mu, *sigma, static_cast<int>(*n), false});
    }
    return reg;
}

} // namespace ipdm
