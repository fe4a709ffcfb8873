#include "ipdm/interventions.hpp"

#include "ipdm/io.hpp"
#include "ipdm/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <set>

namespace ipdm
{

GaussianState apply_intervention(const GaussianState& state, const InterventionEffect& eff)
{
    GaussianState out = state;
    out.mean += eff.delta_mean;
    out.cov += eff.delta_cov;
    symmetrize(out.cov);
    return constrain_speed(out);
}

namespace
{

Mat3 clip_psd(const Mat3& m)
{
    Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (m + m.transpose()));
    const Vec3 ev = es.eigenvalues().cwiseMax(0.0);
    Mat3 out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    symmetrize(out);
    return out;
}

Mat3 stable_inverse(const Mat3& m)
{
    Eigen::LDLT<Mat3> ldlt(m);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0)
        return ldlt.solve(Mat3::Identity());
    return Eigen::CompleteOrthogonalDecomposition<Mat3>(m).pseudoInverse();
}

std::optional<ElementJump> element_jump(const ElementSeries& series, double tau, const ModelParams& params,
                                        double diffuse_var)
{
    const PreparedSeries prep = prepare_series(series, params);
    if (!prep.usable || prep.prior.time >= tau)
        return std::nullopt;
    const bool has_after = std::any_of(prep.observations.begin(), prep.observations.end(),
                                       [&](const TimedObservation& o) { return o.time >= tau; });
    if (!has_after)
        return std::nullopt;

    const JumpStep jump{tau, Vec3::Zero(), diffuse_var * Mat3::Identity()};
    FilterOptions opt;
    opt.gate = params.outlier_gate;
    opt.constrain = false;
    SeriesResult r = filter_series(prep.observations, prep.prior, params.process(), opt, std::span(&jump, 1));
    smooth_series(r);

    const auto it = std::find(r.kinds.begin(), r.kinds.end(), StepKind::jump);
    if (it == r.kinds.end() || it == r.kinds.begin())
        return std::nullopt;
    const auto j = static_cast<std::size_t>(it - r.kinds.begin());
    const GaussianState& before = r.smoothed[j - 1];
    const GaussianState& after = r.smoothed[j];
    const Mat3& cross = r.smoothed_cross[j - 1];
    ElementJump out;
    out.element_id = series.id;
    out.mean = after.mean - before.mean;
    out.cov = after.cov + before.cov - cross - cross.transpose();
    symmetrize(out.cov);
    return out;
}

} // namespace

EffectEstimate estimate_effect(const Dataset& data, const std::vector<InterventionRecord>& records,
                               const ModelParams& params, const std::string& type_id,
                               const EffectEstimateOptions& options, const RunContext& ctx)
{
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < data.size(); ++i)
        index.emplace(data.elements[i].id, i);

    std::vector<const InterventionRecord*> selected;
    for (const auto& r : records)
        if (r.type_id == type_id)
            selected.push_back(&r);

    std::vector<std::optional<ElementJump>> jumps(selected.size());
    parallel_for(selected.size(), [&](std::size_t k) {
        if (ctx.cancelled())
            return;
        auto it = index.find(selected[k]->element_id);
        if (it == index.end())
            return;
        jumps[k] = element_jump(data.elements[it->second], selected[k]->time, params, options.diffuse_var);
    });
    ctx.check_cancelled();

    EffectEstimate est;
    for (std::size_t k = 0; k < selected.size(); ++k)
    {
        if (jumps[k])
            est.elements.push_back(*jumps[k]);
        else
            est.skipped.push_back(selected[k]->element_id);
    }
    if (est.elements.empty())
        throw Error(ErrorKind::unidentifiable, "effect unidentifiable: no element of type '" + type_id +
                                                   "' has observations before and after the intervention");

    Mat3 w = Mat3::Zero();
    Vec3 wd = Vec3::Zero();
    std::vector<Mat3> precisions;
    precisions.reserve(est.elements.size());
    for (const auto& e : est.elements)
    {
        precisions.push_back(stable_inverse(e.cov));
        w += precisions.back();
        wd += precisions.back() * e.mean;
    }
    const Mat3 w_inv = stable_inverse(w);
    est.pooled_mean = w_inv * wd;

    const double n = static_cast<double>(est.elements.size());
    Mat3 spread = Mat3::Zero();
    Mat3 mean_cov = Mat3::Zero();
    for (const auto& e : est.elements)
    {
        const Vec3 r = e.mean - est.pooled_mean;
        spread += r * r.transpose();
        mean_cov += e.cov;
    }
    est.dispersion = clip_psd((spread - mean_cov) / n);

    // Var(sum W^-1 P_i^-1 d_i) with Var(d_i) = P_i + D
    Mat3 extra = Mat3::Zero();
    for (const Mat3& p : precisions)
        extra += p * est.dispersion * p;
    est.pooled_cov = w_inv + w_inv * extra * w_inv;
    symmetrize(est.pooled_cov);

    est.effect.type_id = type_id;
    est.effect.delta_mean = est.pooled_mean;
    est.effect.delta_mean(kCondition) = std::max(est.effect.delta_mean(kCondition), 0.0);
    est.effect.delta_cov = est.dispersion + est.pooled_cov;
    symmetrize(est.effect.delta_cov);
    return est;
}

std::map<std::string, EffectEstimate> estimate_effects(const Dataset& data,
                                                       const std::vector<InterventionRecord>& records,
                                                       const ModelParams& params, const EffectEstimateOptions& options,
                                                       const RunContext& ctx)
{
    std::set<std::string> types;
    for (const auto& r : records)
        types.insert(r.type_id);
    std::map<std::string, EffectEstimate> out;
    std::size_t done = 0;
    for (const auto& t : types)
    {
        out.emplace(t, estimate_effect(data, records, params, t, options, ctx));
        ctx.progress(static_cast<double>(++done) / static_cast<double>(types.size()));
    }
    return out;
}

namespace
{

/// First t in (0, 1] with c + s t + a t^2 / 2 = b, given the value at 0 is above b and at 1 is not.
double crossing_in_year(double c, double s, double a, double b)
{
    auto f = [&](double t) { return c + s * t + 0.5 * a * t * t - b; };
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i)
    {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return hi;
}

} // namespace

ServiceLife service_life(const GaussianState& pre_state, const InterventionEffect& eff, const ProcessModel& pm,
                         const ConditionScale& scale, TransformParam n, const ServiceLifeOptions& options)
{
    if (!(options.horizon_cap >= 1.0))
        throw Error(ErrorKind::invalid_input, "service life horizon cap must be >= 1 year");
    ServiceLife out;
    double base = pre_state.mean(kCondition);
    if (options.threshold)
        base = to_unbounded(*options.threshold, scale, n);
    out.baseline = to_bounded(base, scale, n);

    const GaussianState post = apply_intervention(pre_state, eff);
    if (!options.threshold && eff.delta_mean(kCondition) <= 0.0)
        return out;
    if (post.mean(kCondition) <= base)
        return out;

    const int years = static_cast<int>(std::ceil(options.horizon_cap));
    std::optional<double> mean_cross, low_cross, high_cross;
    auto sd_of = [](const GaussianState& g) { return std::sqrt(std::max(g.cov(kCondition, kCondition), 0.0)); };
    auto band_cross = [&](std::optional<double>& slot, double prev, double next, int year) {
        if (slot || next > base)
            return;
        slot = prev <= base ? static_cast<double>(year) : year + (prev - base) / (prev - next);
    };

    GaussianState cur = post;
    cur.time = 0.0;
    double prev_low = cur.mean(kCondition) - 2.0 * sd_of(cur);
    double prev_high = cur.mean(kCondition) + 2.0 * sd_of(cur);
    if (prev_low <= base)
        low_cross = 0.0;
    for (int y = 0; y < years && !(mean_cross && low_cross && high_cross); ++y)
    {
        const GaussianState pred = predict(cur, 1.0, pm);
        if (!mean_cross && pred.mean(kCondition) <= base)
            mean_cross = y + crossing_in_year(cur.mean(kCondition), cur.mean(kSpeed), cur.mean(kAcceleration), base);
        const GaussianState next = constrain_speed(pred);
        const double low = next.mean(kCondition) - 2.0 * sd_of(next);
        const double high = next.mean(kCondition) + 2.0 * sd_of(next);
        band_cross(low_cross, prev_low, low, y);
        band_cross(high_cross, prev_high, high, y);
        prev_low = low;
        prev_high = high;
        cur = next;
    }

    const double cap = options.horizon_cap;
    out.censored = !mean_cross || *mean_cross > cap;
    out.years = out.censored ? cap : *mean_cross;
    out.band_low = low_cross ? std::min(*low_cross, cap) : cap;
    out.band_high = high_cross ? std::min(*high_cross, cap) : cap;
    return out;
}

std::vector<InterventionRecord> read_intervention_records(const std::filesystem::path& path)
{
    const CsvTable t = read_csv_table(path, {"element_id", "year", "type_id"});
    const auto ce = t.column("element_id"), cy = t.column("year"), ct = t.column("type_id");
    std::vector<InterventionRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
    {
        const auto year = parse_double(t.rows[r][cy]);
        if (!year || t.rows[r][ce].empty() || t.rows[r][ct].empty())
            throw Error(ErrorKind::schema,
                        path.string() + ":" + std::to_string(t.line_numbers[r]) + ": invalid intervention record");
        out.push_back({t.rows[r][ce], *year, t.rows[r][ct]});
    }
    return out;
}

std::string intervention_records_to_csv(const std::vector<InterventionRecord>& records)
{
    CsvWriter w({"element_id", "year", "type_id"});
    for (const auto& r : records)
        w.row(r.element_id, r.time, r.type_id);
    return w.str();
}

std::string effects_to_csv(const std::map<std::string, InterventionEffect>& effects)
{
    CsvWriter w({"type_id", "d_cond", "d_speed", "d_accel", "var_cond", "var_speed", "var_accel"});
    for (const auto& [id, e] : effects)
        w.row(id, e.delta_mean(0), e.delta_mean(1), e.delta_mean(2), e.delta_cov(0, 0), e.delta_cov(1, 1),
              e.delta_cov(2, 2));
    return w.str();
}

std::map<std::string, InterventionEffect> read_effects(const std::filesystem::path& path)
{
    const std::vector<std::string> cols{"type_id", "d_cond", "d_speed", "d_accel", "var_cond", "var_speed", "var_accel"};
    const CsvTable t = read_csv_table(path, cols);
    std::map<std::string, InterventionEffect> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
    {
        InterventionEffect e;
        e.type_id = t.rows[r][t.column("type_id")];
        double v[6];
        for (int k = 0; k < 6; ++k)
        {
            const auto x = parse_double(t.rows[r][t.column(cols[static_cast<std::size_t>(k + 1)])]);
            if (!x)
                throw Error(ErrorKind::schema,
                            path.string() + ":" + std::to_string(t.line_numbers[r]) + ": invalid effect row");
            v[k] = *x;
        }
        e.delta_mean << v[0], v[1], v[2];
        e.delta_cov = Vec3(v[3], v[4], v[5]).asDiagonal();
        if (e.delta_cov.diagonal().minCoeff() < 0.0)
            throw Error(ErrorKind::schema, path.string() + ":" + std::to_string(t.line_numbers[r]) +
                                               ": effect variances must be non-negative");
        out[e.type_id] = e;
    }
    return out;
}

} // namespace ipdm
