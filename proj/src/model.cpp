#include "ipdm/model.hpp"

#include "ipdm/io.hpp"
#include "ipdm/parallel.hpp"

#include <json.hpp>

#include <cmath>

namespace ipdm
{

using nlohmann::json;

std::size_t Dataset::inspection_count() const
{
    std::size_t n = 0;
    for (const auto& e : elements)
        n += e.inspections.size();
    return n;
}

void InspectorBounds::validate() const
{
    if (!(sigma_min > 0.0) || !(sigma_min <= sigma_max) || !std::isfinite(sigma_max))
        throw Error(ErrorKind::invalid_input, "inspector bounds require 0 < sigma_min <= sigma_max");
}

const InspectorModel& InspectorRegistry::get(const std::string& id) const
{
    if (auto it = models_.find(id); it != models_.end())
        return it->second;
    return fallback_;
}

void InspectorRegistry::set_fallback_sigma(double s)
{
    fallback_sigma_ = s;
    fallback_ = {"unknown", 0.0, s, 0, false};
}

bool ModelParams::within_bounds() const
{
    return bounds.sigma_w.contains(sigma_w) && bounds.prior_var.contains(prior.condition_var) &&
           bounds.prior_var.contains(prior.speed_var) && bounds.prior_var.contains(prior.accel_var) &&
           bounds.speed_mean.contains(prior.speed_mean);
}

void ModelParams::validate() const
{
    scale.validate();
    n.validate();
    inspector_bounds.validate();
    if (!within_bounds())
        throw Error(ErrorKind::invalid_input, "model parameters outside their declared bounds");
    if (kernel)
        kernel->validate();
}

PreparedSeries prepare_series(const ElementSeries& series, const ModelParams& params)
{
    PreparedSeries out;
    bool first = true;
    for (std::size_t i = 0; i < series.inspections.size(); ++i)
    {
        const Inspection& ins = series.inspections[i];
        if (!ins.condition)
            continue;
        const InspectorModel& inspector = params.inspectors.get(ins.inspector);
        const TransformedObservation t = observation_to_transformed(*ins.condition, inspector, params.scale, params.n);
        if (first)
        {
            first = false;
            out.usable = true;
            out.first_source = i;
            out.prior.time = ins.year;
            out.prior.condition = {t.value.mean, t.value.variance + params.prior.condition_var};
            out.prior.acceleration = {0.0, params.prior.accel_var};
            out.prior.speed = {params.prior.speed_mean, params.prior.speed_var};
            if (params.use_kernel && params.kernel && series.attributes.size() == params.kernel->dims() &&
                !series.attributes.empty())
            {
                const KernelPrior kp = kr_prior(series.attributes, *params.kernel);
                out.prior.speed = kp.speed;
                out.kernel_fallback = kp.fallback;
            }
            continue;
        }
        out.observations.push_back({ins.year, t.value});
        out.source.push_back(i);
    }
    if (!out.usable)
    {
        out.prior.time = series.inspections.empty() ? 0.0 : series.inspections.front().year;
        out.prior.condition = {0.0, 1e4};
        out.prior.speed = {params.prior.speed_mean, params.prior.speed_var};
        out.prior.acceleration = {0.0, params.prior.accel_var};
    }
    return out;
}

double series_loglik(const ElementSeries& series, const ModelParams& params, std::span<const std::uint8_t> gate_mask)
{
    const PreparedSeries prep = prepare_series(series, params);
    if (!prep.usable || prep.observations.empty())
        return 0.0;
    FilterOptions opt;
    opt.gate = params.outlier_gate;
    opt.store_states = false;
    opt.gate_mask = gate_mask;
    return filter_series(prep.observations, prep.prior, params.process(), opt).log_likelihood;
}

GateMasks gate_masks(const ModelParams& params, const Dataset& data)
{
    GateMasks masks(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const PreparedSeries prep = prepare_series(data.elements[i], params);
        if (!prep.usable || prep.observations.empty())
            return;
        FilterOptions opt;
        opt.gate = params.outlier_gate;
        opt.store_states = false;
        const SeriesResult r = filter_series(prep.observations, prep.prior, params.process(), opt);
        masks[i].assign(r.outlier_flags.begin(), r.outlier_flags.end());
    });
    return masks;
}

SeriesResult analyze_series(const ElementSeries& series, const ModelParams& params, int forecast_horizon,
                            std::span<const JumpStep> jumps)
{
    const PreparedSeries prep = prepare_series(series, params);
    FilterOptions opt;
    opt.gate = params.outlier_gate;
    SeriesResult r = filter_series(prep.observations, prep.prior, params.process(), opt, jumps);
    smooth_series(r);
    if (forecast_horizon > 0)
        for (const auto& fp : forecast(r.filtered.back(), forecast_horizon, params.process(), params.scale, params.n))
            r.forecast.push_back(fp.state);
    return r;
}

std::vector<double> element_logliks(const ModelParams& params, const Dataset& data, const GateMasks* masks)
{
    if (masks && masks->size() != data.size())
        throw Error(ErrorKind::invalid_input, "gate masks do not match the dataset");
    std::vector<double> ll(data.size(), 0.0);
    parallel_for(data.size(), [&](std::size_t i) {
        try
        {
            ll[i] = series_loglik(data.elements[i], params,
                                  masks ? std::span<const std::uint8_t>((*masks)[i]) : std::span<const std::uint8_t>());
        }
        catch (const Error& e)
        {
            throw Error(e.kind(), "element '" + data.elements[i].id + "': " + e.what());
        }
    });
    for (std::size_t i = 0; i < ll.size(); ++i)
        if (!std::isfinite(ll[i]))
            throw Error(ErrorKind::numerical_degeneracy,
                        "non-finite log-likelihood for element '" + data.elements[i].id + "'");
    return ll;
}

double total_loglik(const ModelParams& params, const Dataset& data, const GateMasks* masks)
{
    const std::vector<double> ll = element_logliks(params, data, masks);
    return tree_sum(ll);
}

// ---------------------------------------------------------------------------------------------
// Parameter artifact

namespace
{

json vec_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

json mat_json(const Mat3& m)
{
    json a = json::array();
    for (int r = 0; r < 3; ++r)
        a.push_back(json::array({m(r, 0), m(r, 1), m(r, 2)}));
    return a;
}

Vec3 json_vec(const json& j)
{
    Vec3 v;
    for (int i = 0; i < 3; ++i)
        v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
    return v;
}

Mat3 json_mat(const json& j)
{
    Mat3 m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            m(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    return m;
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }
Range json_range(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

} // namespace

std::string params_to_string(const ModelParams& p)
{
    json j;
    j["format"] = "ipdm-params";
    j["version"] = kParamsFormatVersion;
    j["category"] = p.category;
    j["scale"] = {{"lower", p.scale.lower}, {"upper", p.scale.upper}};
    j["transform_n"] = p.n.n;
    j["sigma_w"] = p.sigma_w;
    j["prior"] = {{"condition_var", p.prior.condition_var},
                  {"speed_mean", p.prior.speed_mean},
                  {"speed_var", p.prior.speed_var},
                  {"accel_var", p.prior.accel_var}};
    j["bounds"] = {{"sigma_w", range_json(p.bounds.sigma_w)},
                   {"prior_var", range_json(p.bounds.prior_var)},
                   {"speed_mean", range_json(p.bounds.speed_mean)},
                   {"inspector_sigma", json::array({p.inspector_bounds.sigma_min, p.inspector_bounds.sigma_max})}};
    j["outlier_gate"] = p.outlier_gate;

    json ins = json::array();
    for (const auto& [id, m] : p.inspectors.models())
        ins.push_back({{"id", id},
                       {"mu_v", m.mu_v},
                       {"sigma_v", m.sigma_v},
                       {"n_obs", m.n_obs},
                       {"insufficient_data", m.insufficient_data}});
    j["inspectors"] = {{"fallback_sigma", p.inspectors.fallback_sigma()}, {"table", ins}};

    j["use_kernel"] = p.use_kernel;
    if (p.kernel)
    {
        const KernelModel& k = *p.kernel;
        json refs = json::array();
        for (const auto& r : k.reference)
            refs.push_back({{"z", r.z.values}, {"speed", r.speed}});
        json fixed = json::array();
        for (bool b : k.fixed_group)
            fixed.push_back(b);
        j["kernel"] = {{"bandwidths", k.bandwidths}, {"dim_group", k.dim_group}, {"center", k.center},
                       {"scale", k.scale},           {"noise_var", k.noise_var}, {"fixed_group", fixed},
                       {"reference", refs}};
    }
    else
        j["kernel"] = nullptr;

    json eff = json::array();
    for (const auto& [id, e] : p.interventions)
        eff.push_back({{"type_id", id}, {"delta_mean", vec_json(e.delta_mean)}, {"delta_cov", mat_json(e.delta_cov)}});
    j["interventions"] = eff;
    return j.dump(2) + "\n";
}

ModelParams params_from_string(const std::string& text)
{
    json j;
    try
    {
        j = json::parse(text);
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorKind::schema, std::string("parameter artifact is not valid JSON: ") + e.what());
    }
    try
    {
        if (j.at("format").get<std::string>() != "ipdm-params")
            throw Error(ErrorKind::schema, "not an ipdm parameter artifact");
        if (j.at("version").get<int>() != kParamsFormatVersion)
            throw Error(ErrorKind::schema, "unsupported parameter artifact version");
        ModelParams p;
        p.category = j.at("category").get<std::string>();
        p.scale.lower = j.at("scale").at("lower").get<double>();
        p.scale.upper = j.at("scale").at("upper").get<double>();
        p.n.n = j.at("transform_n").get<double>();
        p.sigma_w = j.at("sigma_w").get<double>();
        const json& pr = j.at("prior");
        p.prior.condition_var = pr.at("condition_var").get<double>();
        p.prior.speed_mean = pr.at("speed_mean").get<double>();
        p.prior.speed_var = pr.at("speed_var").get<double>();
        p.prior.accel_var = pr.at("accel_var").get<double>();
        const json& b = j.at("bounds");
        p.bounds.sigma_w = json_range(b.at("sigma_w"));
        p.bounds.prior_var = json_range(b.at("prior_var"));
        p.bounds.speed_mean = json_range(b.at("speed_mean"));
        p.inspector_bounds.sigma_min = b.at("inspector_sigma").at(0).get<double>();
        p.inspector_bounds.sigma_max = b.at("inspector_sigma").at(1).get<double>();
        p.outlier_gate = j.at("outlier_gate").get<double>();

        p.inspectors = InspectorRegistry(j.at("inspectors").at("fallback_sigma").get<double>());
        for (const auto& row : j.at("inspectors").at("table"))
        {
            InspectorModel m;
            m.id = row.at("id").get<std::string>();
            m.mu_v = row.at("mu_v").get<double>();
            m.sigma_v = row.at("sigma_v").get<double>();
            m.n_obs = row.at("n_obs").get<int>();
            m.insufficient_data = row.at("insufficient_data").get<bool>();
            p.inspectors.set(m);
        }
        p.use_kernel = j.at("use_kernel").get<bool>();
        if (!j.at("kernel").is_null())
        {
            const json& k = j.at("kernel");
            KernelModel km;
            km.bandwidths = k.at("bandwidths").get<std::vector<double>>();
            km.dim_group = k.at("dim_group").get<std::vector<int>>();
            km.center = k.at("center").get<std::vector<double>>();
            km.scale = k.at("scale").get<std::vector<double>>();
            km.noise_var = k.at("noise_var").get<double>();
            for (const auto& f : k.at("fixed_group"))
                km.fixed_group.push_back(f.get<bool>());
            for (const auto& r : k.at("reference"))
                km.reference.push_back({{r.at("z").get<std::vector<double>>()}, r.at("speed").get<double>()});
            p.kernel = std::move(km);
        }
        for (const auto& e : j.at("interventions"))
        {
            InterventionEffect eff;
            eff.type_id = e.at("type_id").get<std::string>();
            eff.delta_mean = json_vec(e.at("delta_mean"));
            eff.delta_cov = json_mat(e.at("delta_cov"));
            p.interventions[eff.type_id] = eff;
        }
        return p;
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorKind::schema, std::string("parameter artifact schema violation: ") + e.what());
    }
}

void save_params(const ModelParams& params, const std::filesystem::path& path)
{
    write_file_atomic(path, params_to_string(params));
}

ModelParams load_params(const std::filesystem::path& path)
{
    try
    {
        return params_from_string(read_file(path));
    }
    catch (const Error& e)
    {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

} // namespace ipdm
