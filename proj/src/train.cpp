#include "ipdm/train.hpp"

#include "ipdm/io.hpp"
#include "ipdm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace ipdm
{

void SplitConfig::validate() const
{
    if (train < 0.0 || validation < 0.0 || test < 0.0)
        throw Error(ErrorKind::invalid_input, "split fractions must be non-negative");
    if (std::abs(train + validation + test - 1.0) > 1e-9)
        throw Error(ErrorKind::invalid_input, "split fractions must sum to 1");
}

SplitResult split(const Dataset& data, const SplitConfig& cfg)
{
    cfg.validate();
    if (data.empty())
        throw Error(ErrorKind::invalid_input, "cannot split an empty dataset");

    const std::size_t n = data.size();
    const double fractions[3] = {cfg.train, cfg.validation, cfg.test};
    std::size_t sizes[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k)
    {
        const double exact = fractions[k] * static_cast<double>(n);
        sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        remainders[k] = exact - static_cast<double>(sizes[k]);
        assigned += sizes[k];
    }
    while (assigned < n)
    {
        int best = 0;
        for (int k = 1; k < 3; ++k)
            if (remainders[k] > remainders[best])
                best = k;
        ++sizes[best];
        remainders[best] = -1.0;
        ++assigned;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[rng() % i]);

    SplitResult out;
    Dataset* parts[3] = {&out.train, &out.validation, &out.test};
    const char* names[3] = {"train", "validation", "test"};
    std::size_t offset = 0;
    for (int k = 0; k < 3; ++k)
    {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(offset),
                                     order.begin() + static_cast<std::ptrdiff_t>(offset + sizes[k]));
        offset += sizes[k];
        std::sort(idx.begin(), idx.end());
        parts[k]->attribute_names = data.attribute_names;
        parts[k]->attribute_groups = data.attribute_groups;
        for (std::size_t i : idx)
            parts[k]->elements.push_back(data.elements[i]);
        if (fractions[k] > 0.0 && sizes[k] == 0)
            out.warnings.push_back(std::string(names[k]) + " fraction rounds to zero elements");
    }
    return out;
}

// ---------------------------------------------------------------------------------------------

namespace
{

Eigen::VectorXd fd_steps(const Eigen::VectorXd& x)
{
    Eigen::VectorXd h(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        h(i) = 1e-4 * std::max(std::abs(x(i)), 1.0);
    return h;
}

} // namespace

Derivatives finite_differences(const Objective& f, const Eigen::VectorXd& x, double fx)
{
    const Eigen::Index n = x.size();
    const Eigen::VectorXd h = fd_steps(x);
    Derivatives d;
    d.gradient.resize(n);
    d.hessian.resize(n, n);
    Eigen::VectorXd fp(n), fm(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += h(i);
        xm(i) -= h(i);
        fp(i) = f(xp);
        fm(i) = f(xm);
        d.gradient(i) = (fp(i) - fm(i)) / (2.0 * h(i));
        d.hessian(i, i) = (fp(i) - 2.0 * fx + fm(i)) / (h(i) * h(i));
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
        {
            Eigen::VectorXd xpp = x, xmm = x;
            xpp(i) += h(i);
            xpp(j) += h(j);
            xmm(i) -= h(i);
            xmm(j) -= h(j);
            const double num = f(xpp) - fp(i) - fp(j) + 2.0 * fx - fm(i) - fm(j) + f(xmm);
            d.hessian(i, j) = d.hessian(j, i) = num / (2.0 * h(i) * h(j));
        }
    return d;
}

Eigen::VectorXd gradient_5point(const Objective& f, const Eigen::VectorXd& x)
{
    const Eigen::VectorXd h = fd_steps(x);
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
    {
        auto at = [&](double k) {
            Eigen::VectorXd y = x;
            y(i) += k * h(i);
            return f(y);
        };
        g(i) = (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h(i));
    }
    return g;
}

namespace
{

bool line_search(const Objective& f, const Eigen::VectorXd& x, double fx, Eigen::VectorXd step,
                 const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int max_halvings, NewtonStepResult& out)
{
    for (int k = 0; k <= max_halvings; ++k)
    {
        const Eigen::VectorXd cand = (x + step).cwiseMax(lo).cwiseMin(hi);
        if (cand == x)
            return false;
        const double fc = f(cand);
        if (std::isfinite(fc) && fc >= fx)
        {
            out.x = cand;
            out.value = fc;
            out.accepted = true;
            out.halvings = k;
            return true;
        }
        step *= 0.5;
    }
    return false;
}

} // namespace

NewtonStepResult newton_step(const Objective& f, const Eigen::VectorXd& x, double fx, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi, int max_halvings, double max_step)
{
    return newton_step(f, f(x), f, x, fx, lo, hi, max_halvings, max_step);
}

NewtonStepResult newton_step(const Objective& model, double model_fx, const Objective& accept, const Eigen::VectorXd& x,
                             double fx, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int max_halvings,
                             double max_step)
{
    const Objective& f = accept;
    NewtonStepResult out;
    out.x = x;
    out.value = fx;
    const Derivatives d = finite_differences(model, x, model_fx);
    const Eigen::Index n = x.size();

    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i)
    {
        const bool pinned_lo = x(i) <= lo(i) && d.gradient(i) < 0.0;
        const bool pinned_hi = x(i) >= hi(i) && d.gradient(i) > 0.0;
        if (!pinned_lo && !pinned_hi)
            free.push_back(i);
    }
    if (free.empty())
        return out;

    const auto m = static_cast<Eigen::Index>(free.size());
    Eigen::VectorXd g(m);
    Eigen::MatrixXd h(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
    {
        g(a) = d.gradient(free[static_cast<std::size_t>(a)]);
        for (Eigen::Index b = 0; b < m; ++b)
            h(a, b) = d.hessian(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
    }
    if (!g.allFinite() || !h.allFinite())
        return out;

    auto expand = [&](const Eigen::VectorXd& s) {
        Eigen::VectorXd full = Eigen::VectorXd::Zero(n);
        for (Eigen::Index a = 0; a < m; ++a)
            full(free[static_cast<std::size_t>(a)]) = s(a);
        const double norm = full.cwiseAbs().maxCoeff();
        if (norm > max_step)
            full *= max_step / norm;
        return full;
    };

    Eigen::LLT<Eigen::MatrixXd> llt(-h);
    if (llt.info() == Eigen::Success)
    {
        if (line_search(f, x, fx, expand(llt.solve(g)), lo, hi, max_halvings, out))
            return out;
    }
    const double gnorm = g.cwiseAbs().maxCoeff();
    if (gnorm > 0.0)
    {
        out.gradient_fallback = true;
        line_search(f, x, fx, expand(g / gnorm), lo, hi, max_halvings, out);
    }
    return out;
}

NewtonResult newton_maximize(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi, const NewtonOptions& options)
{
    NewtonResult r;
    r.x = x0.cwiseMax(lo).cwiseMin(hi);
    r.value = f(r.x);
    r.history.push_back(r.value);
    r.reason = "iteration cap";
    for (int it = 0; it < options.max_iter; ++it)
    {
        const NewtonStepResult s = newton_step(f, r.x, r.value, lo, hi, options.max_halvings, options.max_step);
        if (!s.accepted)
        {
            r.reason = "no improving step";
            return r;
        }
        const double gain = (s.value - r.value) / std::max(std::abs(r.value), 1.0);
        r.x = s.x;
        if (gain < options.tol)
        {
            r.value = s.value;
            r.reason = "converged";
            return r;
        }
        r.value = s.value;
        r.history.push_back(s.value);
        r.gradient_fallback.push_back(s.gradient_fallback);
        ++r.iterations;
    }
    return r;
}

// ---------------------------------------------------------------------------------------------

Eigen::VectorXd params_to_theta(const ModelParams& p)
{
    Eigen::VectorXd t(5);
    t << std::log(p.sigma_w), p.prior.speed_mean, std::log(p.prior.speed_var), std::log(p.prior.accel_var),
        std::log(p.prior.condition_var);
    return t;
}

void theta_to_params(const Eigen::VectorXd& t, ModelParams& p)
{
    p.sigma_w = std::exp(t(0));
    p.prior.speed_mean = t(1);
    p.prior.speed_var = std::exp(t(2));
    p.prior.accel_var = std::exp(t(3));
    p.prior.condition_var = std::exp(t(4));
}

void theta_bounds(const ModelParams& p, Eigen::VectorXd& lo, Eigen::VectorXd& hi)
{
    lo.resize(5);
    hi.resize(5);
    const Range& v = p.bounds.prior_var;
    lo << std::log(p.bounds.sigma_w.lo), p.bounds.speed_mean.lo, std::log(v.lo), std::log(v.lo), std::log(v.lo);
    hi << std::log(p.bounds.sigma_w.hi), p.bounds.speed_mean.hi, std::log(v.hi), std::log(v.hi), std::log(v.hi);
}

std::vector<double> FitReport::train_logliks() const
{
    std::vector<double> out{initial_train_loglik};
    for (const auto& h : history)
        out.push_back(h.train_loglik);
    return out;
}

std::map<std::string, Dataset> by_category(const Dataset& data)
{
    std::map<std::string, Dataset> out;
    for (const auto& e : data.elements)
    {
        Dataset& d = out[e.category];
        d.attribute_names = data.attribute_names;
        d.attribute_groups = data.attribute_groups;
        d.elements.push_back(e);
    }
    return out;
}

std::vector<ReferenceInput> kernel_reference_inputs(const Dataset& data, const ModelParams& params)
{
    std::vector<std::optional<ReferenceInput>> slots(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const ElementSeries& e = data.elements[i];
        if (e.attributes.empty())
            return;
        const bool rated = std::any_of(e.inspections.begin(), e.inspections.end(),
                                       [](const Inspection& ins) { return ins.condition.has_value(); });
        if (!rated)
            return;
        SeriesResult r = analyze_series(e, params);
        slots[i] = ReferenceInput{e.attributes, r.smoothed.front()};
    });
    std::vector<ReferenceInput> out;
    for (auto& s : slots)
        if (s)
            out.push_back(std::move(*s));
    return out;
}

namespace
{

void seed_inspectors(ModelParams& p, const Dataset& data)
{
    std::map<std::string, int> counts;
    for (const auto& e : data.elements)
        for (const auto& ins : e.inspections)
            if (ins.condition && !ins.inspector.empty())
                ++counts[ins.inspector];
    for (const auto& [id, n] : counts)
        if (!p.inspectors.contains(id))
            p.inspectors.set({id, 0.0, p.inspector_bounds.midpoint(), n, n < 2});
}

bool has_attributes(const Dataset& d)
{
    return std::any_of(d.elements.begin(), d.elements.end(), [](const auto& e) { return !e.attributes.empty(); });
}

/// Rebuilds the kernel reference from the train set and grid-searches bandwidths on the
/// validation set. Returns the candidate kernel.
std::optional<KernelModel> refit_kernel(const ModelParams& cur, const Dataset& train, const Dataset& validation)
{
    const auto refs = kernel_reference_inputs(train, cur);
    if (refs.empty())
        return std::nullopt;
    KernelModel km = build_reference(refs, train.attribute_groups);
    if (cur.kernel && cur.kernel->bandwidths.size() == km.bandwidths.size())
        for (std::size_t g = 0; g < km.bandwidths.size(); ++g)
            if (!km.fixed_group[g])
                km.bandwidths[g] = cur.kernel->bandwidths[g];

    std::vector<ValidationTarget> targets;
    for (const auto& r : kernel_reference_inputs(validation, cur))
        targets.push_back({r.attributes, constrain_speed(r.initial_smoothed).mean(kSpeed)});
    if (targets.empty())
        return km;
    auto score = [&](const KernelModel& cand) {
        ModelParams p = cur;
        p.kernel = cand;
        return total_loglik(p, validation);
    };
    return fit_bandwidths(std::move(km), targets, score);
}

} // namespace

FitReport fit_split(const ModelParams& params0, const Dataset& train, const Dataset& validation,
                    const FitOptions& options, const RunContext& ctx)
{
    params0.validate();
    FitReport report;
    ModelParams cur = params0;
    if (options.estimate_inspectors && options.max_iter > 0)
        seed_inspectors(cur, train);

    const Dataset& val = validation.empty() ? train : validation;
    double train_ll = total_loglik(cur, train);
    double val_ll = total_loglik(cur, val);
    report.initial_train_loglik = train_ll;
    report.best_validation_loglik = val_ll;
    report.params = cur;
    report.reason = "iteration cap";
    ctx.log("initial train loglik " + format_double(train_ll) + ", validation " + format_double(val_ll));

    Eigen::VectorXd lo, hi;
    theta_bounds(cur, lo, hi);
    const bool kernel_enabled = options.fit_kernel && cur.use_kernel && has_attributes(train);

    for (int it = 1; it <= options.max_iter; ++it)
    {
        ctx.check_cancelled();
        const double before = train_ll;
        FitIteration rec;

        if (options.fit_globals)
        {
            // gating decisions stay fixed inside the step so the objective is smooth
            const GateMasks masks = gate_masks(cur, train);
            const Objective f = [&](const Eigen::VectorXd& theta) {
                ModelParams p = cur;
                theta_to_params(theta, p);
                return total_loglik(p, train, &masks);
            };
            const Objective accept = [&](const Eigen::VectorXd& theta) {
                ModelParams p = cur;
                theta_to_params(theta, p);
                return total_loglik(p, train);
            };
            const Eigen::VectorXd theta = params_to_theta(cur).cwiseMax(lo).cwiseMin(hi);
            const NewtonStepResult step =
                newton_step(f, total_loglik(cur, train, &masks), accept, theta, train_ll, lo, hi);
            rec.gradient_fallback = step.gradient_fallback;
            rec.newton_accepted = step.accepted;
            if (step.accepted)
            {
                theta_to_params(step.x, cur);
                train_ll = step.value;
            }
        }
        ctx.check_cancelled();

        if (options.estimate_inspectors)
        {
            const InspectorEstimate est =
                estimate_inspectors(train, cur, cur.inspector_bounds, options.inspector_options);
            if (est.loglik_history.back() >= train_ll)
            {
                cur.inspectors = est.registry;
                train_ll = est.loglik_history.back();
            }
        }
        ctx.check_cancelled();

        if (kernel_enabled)
        {
            if (auto km = refit_kernel(cur, train, validation.empty() ? train : validation))
            {
                ModelParams cand = cur;
                cand.kernel = std::move(*km);
                const double ll = total_loglik(cand, train);
                if (ll >= train_ll)
                {
                    cur = std::move(cand);
                    train_ll = ll;
                    rec.kernel_accepted = true;
                }
            }
        }

        val_ll = total_loglik(cur, val);
        rec.train_loglik = train_ll;
        rec.validation_loglik = val_ll;
        report.history.push_back(rec);
        report.iterations = it;
        if (val_ll > report.best_validation_loglik)
        {
            report.best_validation_loglik = val_ll;
            report.best_iteration = it;
            report.params = cur;
        }
        ctx.log("iteration " + std::to_string(it) + ": train " + format_double(train_ll) + ", validation " +
                format_double(val_ll) + ", sigma_w " + format_double(cur.sigma_w));
        ctx.progress(static_cast<double>(it) / static_cast<double>(options.max_iter));

        const double rel = (train_ll - before) / std::max(std::abs(before), 1.0);
        if (rel < options.tol)
        {
            report.reason = "converged";
            break;
        }
    }
    report.final_params = cur;
    return report;
}

FitReport fit(const ModelParams& params0, const Dataset& data, const SplitConfig& cfg, const FitOptions& options,
              const RunContext& ctx)
{
    const SplitResult parts = split(data, cfg);
    for (const auto& w : parts.warnings)
        ctx.log("warning: " + w);
    return fit_split(params0, parts.train, parts.validation, options, ctx);
}

CategoryFits fit_categories(const std::map<std::string, Dataset>& categories, const ModelParams& params0,
                            const SplitConfig& cfg, const FitOptions& options, const RunContext& ctx)
{
    CategoryFits out;
    if (categories.size() == 1)
    {
        const auto& [name, d] = *categories.begin();
        try
        {
            ModelParams p = params0;
            p.category = name;
            FitReport r = fit(p, d, cfg, options, ctx);
            out.shared_inspectors = r.params.inspectors;
            out.reports.emplace(name, std::move(r));
        }
        catch (const std::exception& e)
        {
            out.errors.emplace(name, e.what());
        }
        return out;
    }

    ModelParams base = params0;
    if (options.estimate_inspectors)
    {
        Dataset all;
        for (const auto& [name, d] : categories)
            all.elements.insert(all.elements.end(), d.elements.begin(), d.elements.end());
        if (!all.empty())
            base.inspectors = estimate_inspectors(all, base, base.inspector_bounds, {}).registry;
    }
    out.shared_inspectors = base.inspectors;

    std::vector<std::string> names;
    for (const auto& [name, d] : categories)
        names.push_back(name);
    std::vector<std::optional<FitReport>> reports(names.size());
    std::vector<std::string> errors(names.size());
    FitOptions per = options;
    per.estimate_inspectors = false;

    parallel_for(names.size(), [&](std::size_t i) {
        try
        {
            ModelParams p = base;
            p.category = names[i];
            reports[i] = fit(p, categories.at(names[i]), cfg, per, ctx);
            reports[i]->params.category = names[i];
            reports[i]->final_params.category = names[i];
        }
        catch (const std::exception& e)
        {
            errors[i] = e.what();
        }
    });
    ctx.check_cancelled();
    for (std::size_t i = 0; i < names.size(); ++i)
    {
        if (reports[i])
            out.reports.emplace(names[i], std::move(*reports[i]));
        else
            out.errors.emplace(names[i], errors[i]);
    }
    return out;
}

std::string fit_history_csv(const FitReport& report)
{
    CsvWriter w({"iteration", "train_loglik", "validation_loglik", "newton_accepted", "gradient_fallback",
                 "kernel_accepted"});
    for (std::size_t i = 0; i < report.history.size(); ++i)
    {
        const auto& h = report.history[i];
        w.row(static_cast<int>(i + 1), h.train_loglik, h.validation_loglik, static_cast<int>(h.newton_accepted),
              static_cast<int>(h.gradient_fallback),
              static_cast<int>(h.kernel_accepted));
    }
    return w.str();
}

} // namespace ipdm
