#include "ipdm/verify.hpp"

#include "ipdm/io.hpp"
#include "ipdm/parallel.hpp"
#include "ipdm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

namespace ipdm
{

const char* component_name(StateComponent c)
{
    switch (c)
    {
    case kCondition:
        return "condition";
    case kSpeed:
        return "speed";
    case kAcceleration:
        return "acceleration";
    }
    return "unknown";
}

namespace
{

std::optional<StateComponent> component_from_name(const std::string& s)
{
    if (s == "condition")
        return kCondition;
    if (s == "speed")
        return kSpeed;
    if (s == "acceleration")
        return kAcceleration;
    return std::nullopt;
}

constexpr StateComponent kComponents[] = {kCondition, kSpeed, kAcceleration};

struct Moments
{
    double mean = 0.0;
    double sd = 0.0;
};

Moments moments(const std::vector<double>& v)
{
    Moments m;
    if (v.empty())
        return m;
    for (double x : v)
        m.mean += x;
    m.mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v)
        ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(v.size()));
    return m;
}

ErrorCell summarize(StateComponent c, int h, const std::vector<double>& errors, bool absolute)
{
    std::vector<double> abs_errors(errors.size());
    std::transform(errors.begin(), errors.end(), abs_errors.begin(), [](double e) { return std::abs(e); });
    const Moments ms = moments(errors);
    const Moments ma = moments(abs_errors);
    ErrorCell cell;
    cell.component = c;
    cell.horizon_year = h;
    cell.n = static_cast<int>(errors.size());
    cell.mae = ma.mean;
    if (absolute)
    {
        cell.mean_error = ma.mean;
        cell.band_low = ma.mean - 2.0 * ma.sd;
        cell.band_high = ma.mean + 2.0 * ma.sd;
    }
    else
    {
        cell.mean_error = ms.mean;
        cell.band_low = ms.mean - 2.0 * ms.sd;
        cell.band_high = ms.mean + 2.0 * ms.sd;
    }
    return cell;
}

ElementSeries element_view(const SyntheticSeries& s)
{
    ElementSeries e;
    e.id = s.id;
    for (const auto& o : s.observations)
        e.inspections.push_back({static_cast<double>(o.year), o.condition, o.inspector, false});
    return e;
}

} // namespace

const ErrorCell& ErrorReport::at(StateComponent c, int horizon_year) const
{
    for (const auto& cell : cells)
        if (cell.component == c && cell.horizon_year == horizon_year)
            return cell;
    throw Error(ErrorKind::not_found, std::string("no error cell for ") + component_name(c) + " at horizon " +
                                          std::to_string(horizon_year));
}

ForecastErrors forecast_error_report(const SyntheticDataset& ds, const ModelParams& params, int horizon,
                                     int sample_elements, std::uint64_t seed, const RunContext& ctx)
{
    if (horizon < 1)
        throw Error(ErrorKind::invalid_input, "forecast horizon must be >= 1");
    if (sample_elements < 1)
        throw Error(ErrorKind::invalid_input, "sample size must be >= 1");
    if (!ds.has_true_states)
        throw Error(ErrorKind::invalid_input, "forecast verification needs true states");

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < ds.series.size(); ++i)
    {
        const auto& s = ds.series[i];
        if (s.observations.empty())
            continue;
        const int last = s.observations.back().year;
        const int cut = last - horizon;
        if (s.observations.front().year > cut || cut < 0)
            continue;
        if (static_cast<int>(s.true_states.size()) <= last)
            continue;
        eligible.push_back(i);
    }

    ForecastErrors out;
    std::mt19937_64 rng(seed);
    for (std::size_t i = eligible.size(); i > 1; --i)
        std::swap(eligible[i - 1], eligible[rng() % i]);
    if (static_cast<std::size_t>(sample_elements) > eligible.size())
        out.warnings.push_back("requested " + std::to_string(sample_elements) + " elements but only " +
                               std::to_string(eligible.size()) + " are eligible; using all");
    else
        eligible.resize(static_cast<std::size_t>(sample_elements));
    std::sort(eligible.begin(), eligible.end());

    const ProcessModel pm = params.process();
    out.raw.assign(eligible.size(), {});
    std::vector<std::vector<double>> cond_units(eligible.size());
    parallel_for(eligible.size(), [&](std::size_t k) {
        if (ctx.cancelled())
            return;
        const SyntheticSeries& s = ds.series[eligible[k]];
        const int cut = s.observations.back().year - horizon;
        ElementSeries e = element_view(s);
        std::erase_if(e.inspections, [&](const Inspection& ins) { return ins.year > cut; });
        const PreparedSeries prep = prepare_series(e, params);
        FilterOptions opt;
        opt.gate = params.outlier_gate;
        opt.store_states = false;
        const SeriesResult r = filter_series(prep.observations, prep.prior, pm, opt);
        const GaussianState at_cut = forecast_to(r.filtered.back(), cut, pm);
        const auto fc = forecast(at_cut, horizon, pm, params.scale, params.n);
        auto& errs = out.raw[k];
        for (int h = 1; h <= horizon; ++h)
        {
            const Vec3& truth = s.true_states[static_cast<std::size_t>(cut + h)];
            const Vec3& est = fc[static_cast<std::size_t>(h - 1)].state.mean;
            errs.push_back(est - truth);
            cond_units[k].push_back(to_bounded(est(kCondition), params.scale, params.n) -
                                    to_bounded(truth(kCondition), params.scale, params.n));
        }
    });
    ctx.check_cancelled();

    for (std::size_t k : eligible)
        out.elements.push_back(ds.series[k].id);
    out.signed_report = {"signed", horizon, {}};
    out.absolute_report = {"absolute", horizon, {}};
    out.condition_units = {"condition_units", horizon, {}};
    for (StateComponent c : kComponents)
        for (int h = 1; h <= horizon; ++h)
        {
            std::vector<double> errors;
            errors.reserve(out.raw.size());
            for (const auto& e : out.raw)
                errors.push_back(e[static_cast<std::size_t>(h - 1)](c));
            out.signed_report.cells.push_back(summarize(c, h, errors, false));
            out.absolute_report.cells.push_back(summarize(c, h, errors, true));
        }
    for (int h = 1; h <= horizon; ++h)
    {
        std::vector<double> errors;
        for (const auto& e : cond_units)
            errors.push_back(e[static_cast<std::size_t>(h - 1)]);
        out.condition_units.cells.push_back(summarize(kCondition, h, errors, false));
    }
    return out;
}

std::map<std::string, double> generating_truth(const SynthConfig& cfg)
{
    return {{"sigma_w", cfg.sigma_w}, {"transform_n", cfg.transform_n}};
}

RecoveryReport recovery_report(const ModelParams& fitted, const std::map<std::string, double>& truth,
                               const std::map<std::string, InspectorModel>& inspector_truth, int min_obs)
{
    RecoveryReport out;
    auto add = [&](const std::string& name, double estimated, std::optional<double> t) {
        RecoveryRow row{name, t, estimated, std::nullopt};
        if (t)
            row.relative_error = *t != 0.0 ? (estimated - *t) / std::abs(*t) : (estimated == 0.0 ? 0.0 : INFINITY);
        out.rows.push_back(row);
    };
    auto lookup = [&](const std::string& k) -> std::optional<double> {
        auto it = truth.find(k);
        return it == truth.end() ? std::nullopt : std::optional<double>(it->second);
    };
    add("sigma_w", fitted.sigma_w, lookup("sigma_w"));
    add("transform_n", fitted.n.n, lookup("transform_n"));
    for (const auto& [id, m] : fitted.inspectors.models())
    {
        auto it = inspector_truth.find(id);
        add("sigma_v:" + id, m.sigma_v,
            it == inspector_truth.end() ? std::nullopt : std::optional<double>(it->second.sigma_v));
    }
    if (!inspector_truth.empty())
    {
        try
        {
            out.inspectors = inspector_report(fitted.inspectors.models(), inspector_truth, min_obs);
        }
        catch (const Error&)
        {
            out.inspectors.reset();
        }
    }
    return out;
}

HoldoutReport validate_holdout(const Dataset& db_old, const Dataset& db_new, const ModelParams& params,
                               const RunContext& ctx)
{
    std::map<std::string, const ElementSeries*> old_index;
    for (const auto& e : db_old.elements)
        old_index.emplace(e.id, &e);

    using Key = std::tuple<double, std::optional<double>, std::string>;
    std::vector<std::vector<HoldoutObservation>> per(db_new.size());
    std::vector<std::size_t> skipped(db_new.size(), 0);
    const ProcessModel pm = params.process();

    parallel_for(db_new.size(), [&](std::size_t i) {
        if (ctx.cancelled())
            return;
        const ElementSeries& fresh = db_new.elements[i];
        auto it = old_index.find(fresh.id);
        std::multiset<Key> old_keys;
        if (it != old_index.end())
            for (const auto& ins : it->second->inspections)
                old_keys.insert({ins.year, ins.condition, ins.inspector});
        std::vector<const Inspection*> extra;
        for (const auto& ins : fresh.inspections)
        {
            auto k = old_keys.find({ins.year, ins.condition, ins.inspector});
            if (k != old_keys.end())
                old_keys.erase(k);
            else if (ins.condition)
                extra.push_back(&ins);
        }
        if (extra.empty())
            return;
        if (it == old_index.end())
        {
            skipped[i] = extra.size();
            return;
        }
        const PreparedSeries prep = prepare_series(*it->second, params);
        if (!prep.usable)
        {
            skipped[i] = extra.size();
            return;
        }
        FilterOptions opt;
        opt.gate = params.outlier_gate;
        const SeriesResult r = filter_series(prep.observations, prep.prior, pm, opt);
        for (const Inspection* ins : extra)
        {
            const GaussianState* base = nullptr;
            for (const auto& f : r.filtered)
                if (f.time <= ins->year + 1e-12)
                    base = &f;
            if (!base)
            {
                ++skipped[i];
                continue;
            }
            const GaussianState pred = forecast_to(*base, ins->year, pm);
            const TransformedObservation obs =
                observation_to_transformed(*ins->condition, params.inspectors.get(ins->inspector), params.scale,
                                           params.n);
            HoldoutObservation h;
            h.element_id = fresh.id;
            h.year = ins->year;
            h.condition = *ins->condition;
            h.predicted_mean = pred.mean(kCondition);
            h.predicted_variance = pred.cov(kCondition, kCondition) + obs.value.variance;
            h.standardized = (obs.value.mean - h.predicted_mean) / std::sqrt(h.predicted_variance);
            h.loglik = log_normal_pdf(obs.value.mean, h.predicted_mean, h.predicted_variance);
            per[i].push_back(h);
        }
    });
    ctx.check_cancelled();

    HoldoutReport out;
    for (std::size_t i = 0; i < per.size(); ++i)
    {
        out.skipped += skipped[i];
        out.observations.insert(out.observations.end(), per[i].begin(), per[i].end());
    }
    out.n = out.observations.size();
    if (out.n == 0)
        throw Error(ErrorKind::invalid_input, "no additional data: the new database adds no rated inspections "
                                              "that can be forecast from the old one");
    std::vector<double> z, ll;
    for (const auto& o : out.observations)
    {
        z.push_back(o.standardized);
        ll.push_back(o.loglik);
    }
    const Moments m = moments(z);
    out.mean = m.mean;
    out.std = m.sd;
    out.z_score = m.sd > 0.0 ? m.mean / (m.sd / std::sqrt(static_cast<double>(out.n))) : 0.0;
    out.predictive_loglik = tree_sum(ll);
    return out;
}

std::string error_report_csv(const ErrorReport& report)
{
    CsvWriter w({"component", "horizon_year", "mean_error", "mae", "band_low", "band_high", "n"});
    const bool units = report.kind == "condition_units";
    for (const auto& c : report.cells)
        w.row(std::string(units ? "condition_units" : component_name(c.component)), c.horizon_year, c.mean_error,
              c.mae, c.band_low, c.band_high, c.n);
    return w.str();
}

ErrorReport read_error_report(const std::filesystem::path& path)
{
    const std::vector<std::string> cols{"component", "horizon_year", "mean_error", "mae", "band_low", "band_high", "n"};
    const CsvTable t = read_csv_table(path, cols);
    if (t.header != cols)
        throw Error(ErrorKind::schema, path.string() + ": unexpected header");
    ErrorReport r;
    for (std::size_t i = 0; i < t.rows.size(); ++i)
    {
        const auto& row = t.rows[i];
        auto fail = [&] {
            return Error(ErrorKind::schema, path.string() + ":" + std::to_string(t.line_numbers[i]) + ": invalid row");
        };
        ErrorCell c;
        if (row[0] == "condition_units")
        {
            r.kind = "condition_units";
            c.component = kCondition;
        }
        else if (auto comp = component_from_name(row[0]))
            c.component = *comp;
        else
            throw fail();
        const auto h = parse_int(row[1]);
        const auto n = parse_int(row[6]);
        const auto me = parse_double(row[2]), mae = parse_double(row[3]), lo = parse_double(row[4]),
                   hi = parse_double(row[5]);
        if (!h || !n || !me || !mae || !lo || !hi)
            throw fail();
        c.horizon_year = static_cast<int>(*h);
        c.n = static_cast<int>(*n);
        c.mean_error = *me;
        c.mae = *mae;
        c.band_low = *lo;
        c.band_high = *hi;
        r.horizon = std::max(r.horizon, c.horizon_year);
        r.cells.push_back(c);
    }
    return r;
}

std::string recovery_csv(const RecoveryReport& report)
{
    CsvWriter w({"parameter", "true", "estimated", "relative_error"});
    for (const auto& r : report.rows)
        w.row(r.parameter, r.truth ? format_double(*r.truth) : std::string("n/a"), r.estimated,
              r.relative_error ? format_double(*r.relative_error) : std::string("n/a"));
    if (report.inspectors)
    {
        w.row(std::string("inspector_sigma_rmse"), std::string("n/a"), report.inspectors->rmse, std::string("n/a"));
        w.row(std::string("inspector_sigma_rank_correlation"), std::string("n/a"), report.inspectors->rank_correlation,
              std::string("n/a"));
        w.row(std::string("inspectors_compared"), std::string("n/a"), report.inspectors->compared, std::string("n/a"));
    }
    return w.str();
}

std::string holdout_summary_csv(const HoldoutReport& r)
{
    CsvWriter w({"key", "value"});
    w.row(std::string("n"), static_cast<long long>(r.n));
    w.row(std::string("standardized_mean"), r.mean);
    w.row(std::string("standardized_std"), r.std);
    w.row(std::string("z_score"), r.z_score);
    w.row(std::string("predictive_loglik"), r.predictive_loglik);
    w.row(std::string("skipped"), static_cast<long long>(r.skipped));
    return w.str();
}

std::string holdout_observations_csv(const HoldoutReport& r)
{
    CsvWriter w({"element_id", "year", "condition", "predicted_mean", "predicted_variance", "standardized", "loglik"});
    for (const auto& o : r.observations)
        w.row(o.element_id, o.year, o.condition, o.predicted_mean, o.predicted_variance, o.standardized, o.loglik);
    return w.str();
}

std::vector<std::filesystem::path> render_report(const ForecastErrors& errors, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    const std::pair<const ErrorReport*, const char*> csvs[] = {{&errors.signed_report, "verify_signed.csv"},
                                                              {&errors.absolute_report, "verify_absolute.csv"},
                                                              {&errors.condition_units, "verify_condition_units.csv"}};
    for (const auto& [report, name] : csvs)
    {
        write_file_atomic(dir / name, error_report_csv(*report));
        written.push_back(dir / name);
    }

    for (StateComponent c : kComponents)
    {
        Chart chart;
        chart.title = std::string(component_name(c)) + " forecast error";
        chart.x_label = "forecast year";
        chart.y_label = "error (transformed units)";
        chart.zero_line = true;
        ChartBand band;
        band.color = {70, 110, 200};
        ChartSeries mean{"mean error", {}, {}, {30, 70, 170}, true, true};
        ChartSeries mae{"mae", {}, {}, {200, 60, 40}, true, true};
        for (int h = 1; h <= errors.signed_report.horizon; ++h)
        {
            const ErrorCell& s = errors.signed_report.at(c, h);
            band.x.push_back(h);
            band.low.push_back(s.band_low);
            band.high.push_back(s.band_high);
            mean.x.push_back(h);
            mean.y.push_back(s.mean_error);
            mae.x.push_back(h);
            mae.y.push_back(s.mae);
        }
        chart.bands.push_back(band);
        chart.series = {mean, mae};
        const auto path = dir / (std::string("verify_") + component_name(c) + ".png");
        render_chart(chart).save_png(path);
        written.push_back(path);
    }
    return written;
}

} // namespace ipdm
