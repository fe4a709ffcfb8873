#include "ipdm/commands.hpp"

#include "ipdm/inspectors.hpp"
#include "ipdm/interventions.hpp"
#include "ipdm/io.hpp"
#include "ipdm/plot.hpp"
#include "ipdm/train.hpp"
#include "ipdm/verify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace ipdm
{

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string>& command_kinds()
{
    static const std::vector<std::string> kinds{"ingest", "preprocess", "analyze-element", "generate",
                                                "train",  "train-interventions", "verify", "validate"};
    return kinds;
}

namespace
{

enum class KeyType
{
    string,
    integer,
    number,
    boolean,
    fractions,
    config,
};

struct KeySpec
{
    KeyType type;
    bool required = false;
};

using Schema = std::map<std::string, KeySpec>;

const Schema& schema_of(const std::string& kind)
{
    static const std::map<std::string, Schema> schemas{
        {"ingest",
         {{"csv", {KeyType::string, true}},
          {"mapping", {KeyType::string, true}},
          {"scale_lower", {KeyType::number}},
          {"scale_upper", {KeyType::number}}}},
        {"preprocess",
         {{"csv", {KeyType::string, true}},
          {"mapping", {KeyType::string, true}},
          {"scale_lower", {KeyType::number}},
          {"scale_upper", {KeyType::number}}}},
        {"analyze-element",
         {{"store", {KeyType::string, true}},
          {"bridge", {KeyType::string, true}},
          {"element", {KeyType::string, true}},
          {"category", {KeyType::string}},
          {"forecast", {KeyType::integer}},
          {"params", {KeyType::string}}}},
        {"generate", {{"config", {KeyType::config, true}}, {"seed", {KeyType::integer}}}},
        {"train",
         {{"data", {KeyType::string, true}},
          {"params", {KeyType::string}},
          {"split", {KeyType::fractions}},
          {"seed", {KeyType::integer}},
          {"max_iter", {KeyType::integer}},
          {"tol", {KeyType::number}},
          {"kernel", {KeyType::boolean}},
          {"category", {KeyType::string}}}},
        {"train-interventions",
         {{"data", {KeyType::string, true}}, {"records", {KeyType::string, true}}, {"params", {KeyType::string, true}}}},
        {"verify",
         {{"data", {KeyType::string, true}},
          {"params", {KeyType::string, true}},
          {"horizon", {KeyType::integer}},
          {"elements", {KeyType::integer}},
          {"seed", {KeyType::integer}}}},
        {"validate",
         {{"old", {KeyType::string, true}}, {"new", {KeyType::string, true}}, {"params", {KeyType::string, true}}}},
    };
    static const std::map<std::string, Schema> with_seed = [] {
        auto all = schemas;
        for (auto& [k, schema] : all)
            schema.emplace("seed", KeySpec{KeyType::integer});
        return all;
    }();
    const auto it = with_seed.find(kind);
    if (it == with_seed.end())
        throw Error(ErrorKind::invalid_input, "unknown command kind '" + kind + "'");
    return it->second;
}

bool type_matches(const json& v, KeyType t)
{
    switch (t)
    {
    case KeyType::string:
        return v.is_string();
    case KeyType::integer:
        return v.is_number_integer();
    case KeyType::number:
        return v.is_number();
    case KeyType::boolean:
        return v.is_boolean();
    case KeyType::fractions:
        return v.is_array() && v.size() == 3 &&
               std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); });
    case KeyType::config:
        if (v.is_string())
            return true;
        if (!v.is_object())
            return false;
        return std::all_of(v.begin(), v.end(),
                           [](const json& x) { return x.is_string() || x.is_number() || x.is_boolean(); });
    }
    return false;
}

const char* type_name(KeyType t)
{
    switch (t)
    {
    case KeyType::string:
        return "a string";
    case KeyType::integer:
        return "an integer";
    case KeyType::number:
        return "a number";
    case KeyType::boolean:
        return "a boolean";
    case KeyType::fractions:
        return "an array of three numbers";
    case KeyType::config:
        return "a path or an object of key/value pairs";
    }
    return "?";
}

std::string str(const json& c, const char* key, const std::string& def = {})
{
    return c.contains(key) ? c.at(key).get<std::string>() : def;
}

template <class T>
T num(const json& c, const char* key, T def)
{
    return c.contains(key) ? c.at(key).get<T>() : def;
}

std::string safe_name(const std::string& s)
{
    std::string out = s;
    for (char& ch : out)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.'))
            ch = '_';
    return out.empty() ? std::string("default") : out;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

class Writer
{
public:
    Writer(const fs::path& dir, CommandOutput& out) : dir_(dir), out_(out) { ensure_dir(dir); }

    void text(const std::string& name, const std::string& content)
    {
        write_file_atomic(dir_ / name, content);
        add(name);
    }
    void add(const std::string& name) { out_.artifacts.push_back(name); }
    fs::path path(const std::string& name) const { return dir_ / name; }

private:
    fs::path dir_;
    CommandOutput& out_;
};

ConditionScale scale_of(const json& c)
{
    ConditionScale s;
    s.lower = num<double>(c, "scale_lower", s.lower);
    s.upper = num<double>(c, "scale_upper", s.upper);
    s.validate();
    return s;
}

json summary_json(const IngestSummary& s)
{
    return {{"rows", s.rows},       {"stored", s.stored},   {"missing", s.missing},
            {"flagged", s.flagged}, {"skipped", s.skipped}, {"messages", s.messages}};
}

// ---------------------------------------------------------------------------------------------

void cmd_ingest(const json& c, Writer& w, CommandOutput& out, bool persist)
{
    const ColumnMapping mapping = ColumnMapping::load(str(c, "mapping"));
    const IngestResult r = read_csv(str(c, "csv"), mapping, scale_of(c));
    w.text("ingest_summary.txt", summary_to_text(r.summary));
    if (persist)
    {
        preprocess(r.store, w.path(""));
        w.add("index.json");
        const StoreIndex idx = load_index(w.path(""));
        for (const auto& b : idx.bridges)
            w.add(b.file);
    }
    out.summary = summary_json(r.summary);
    out.summary["bridges"] = r.store.bridges.size();
    out.summary["elements"] = r.store.element_count();
    out.summary["inspections"] = r.store.inspection_count();
}

void cmd_analyze(const json& c, Writer& w, CommandOutput& out)
{
    const NetworkStore store = load_store(str(c, "store"));
    const std::string bridge = str(c, "bridge");
    const std::string element = str(c, "element");
    const ElementSeries series = c.contains("category")
                                     ? element_series(store, bridge, str(c, "category"), element)
                                     : find_element(store, bridge, element);
    ModelParams params;
    if (c.contains("params"))
        params = load_params(str(c, "params"));
    params.category = series.category;
    const int horizon = num<int>(c, "forecast", 10);
    const ElementAnalysis a = analyze_element(series, params, horizon);
    const std::string stem = "element_" + safe_name(series.id);
    w.text(stem + ".csv", analysis_csv(a));

    Chart chart;
    chart.title = "element " + series.id;
    chart.x_label = "year";
    chart.y_label = "condition";
    chart.fixed_y = true;
    chart.y_min = params.scale.lower;
    chart.y_max = params.scale.upper;
    std::map<std::string, ChartSeries> lines{
        {"filtered", {"filtered", {}, {}, {30, 90, 180}, false, true}},
        {"smoothed", {"smoothed", {}, {}, {20, 140, 60}, false, true}},
        {"forecast", {"forecast", {}, {}, {200, 60, 40}, false, true}}};
    ChartBand band{{}, {}, {}, {120, 160, 220}};
    ChartBand fband{{}, {}, {}, {230, 150, 130}};
    ChartErrorBars bars{{}, {}, {}, {90, 90, 90}};
    ChartSeries obs{"observations", {}, {}, {40, 40, 40}, true, false};
    for (const auto& p : a.points)
    {
        if (p.kind == "observation")
        {
            bars.x.push_back(p.year);
            obs.x.push_back(p.year);
            obs.y.push_back(p.condition);
            bars.low.push_back(p.band_low);
            bars.high.push_back(p.band_high);
            continue;
        }
        lines[p.kind].x.push_back(p.year);
        lines[p.kind].y.push_back(p.condition);
        ChartBand& b = p.kind == "forecast" ? fband : band;
        if (p.kind != "filtered")
        {
            b.x.push_back(p.year);
            b.low.push_back(p.band_low);
            b.high.push_back(p.band_high);
        }
    }
    chart.bands = {band, fband};
    for (const char* k : {"filtered", "smoothed", "forecast"})
        if (!lines[k].x.empty())
            chart.series.push_back(lines[k]);
    chart.series.push_back(obs);
    chart.error_bars.push_back(bars);
    if (!lines["forecast"].x.empty())
        chart.shade_from.push_back(lines["forecast"].x.front());
    render_chart(chart).save_png(w.path(stem + ".png"));
    w.add(stem + ".png");
    out.summary = {{"element", series.id}, {"horizon", horizon}, {"points", a.points.size()}};
}

SynthConfig generate_config(const json& c)
{
    const json& v = c.at("config");
    SynthConfig cfg;
    if (v.is_string())
        cfg = load_synth_config(v.get<std::string>());
    else
    {
        std::ostringstream text;
        for (const auto& [k, x] : v.items())
        {
            if (x.is_string())
                text << k << "=" << x.get<std::string>() << "\n";
            else if (x.is_boolean())
                text << k << "=" << (x.get<bool>() ? "true" : "false") << "\n";
            else if (x.is_number_integer())
                text << k << "=" << x.get<long long>() << "\n";
            else
                text << k << "=" << format_double(x.get<double>()) << "\n";
        }
        cfg = synth_config_from_text(text.str(), "config");
    }
    if (c.contains("seed"))
        cfg.seed = c.at("seed").get<std::uint64_t>();
    return cfg;
}

void cmd_generate(const json& c, Writer& w, CommandOutput& out, const RunContext& ctx)
{
    const SynthConfig cfg = generate_config(c);
    const SyntheticDataset ds = generate(cfg, ctx);
    ctx.check_cancelled();
    export_dataset(ds, w.path(""));
    for (const auto& n : synth_artifact_names())
        w.add(n);
    out.summary = {{"series", ds.series.size()},
                   {"observations", ds.observation_count()},
                   {"attempts", ds.attempts},
                   {"rejected", ds.rejected}};
}

void cmd_train(const json& c, Writer& w, CommandOutput& out, const RunContext& ctx)
{
    const LoadedData loaded = load_data_dir(str(c, "data"));
    std::map<std::string, Dataset> cats = by_category(loaded.data);
    if (c.contains("category"))
    {
        const std::string only = str(c, "category");
        if (!cats.contains(only))
            throw Error(ErrorKind::not_found, "category '" + only + "' not found");
        cats = {{only, cats.at(only)}};
    }
    if (cats.empty())
        throw Error(ErrorKind::invalid_input, "dataset has no elements");

    SplitConfig split;
    if (c.contains("split"))
    {
        split.train = c.at("split").at(0).get<double>();
        split.validation = c.at("split").at(1).get<double>();
        split.test = c.at("split").at(2).get<double>();
    }
    split.seed = num<std::uint64_t>(c, "seed", 0);
    split.validate();
    FitOptions options;
    options.max_iter = num<int>(c, "max_iter", options.max_iter);
    options.tol = num<double>(c, "tol", options.tol);
    if (options.max_iter < 0 || !(options.tol >= 0.0))
        throw Error(ErrorKind::invalid_input, "max_iter and tol must be non-negative");

    ModelParams p0 = c.contains("params") ? load_params(str(c, "params")) : initial_params(loaded, cats.begin()->first);
    if (c.contains("kernel"))
        p0.use_kernel = c.at("kernel").get<bool>();

    const CategoryFits fits = fit_categories(cats, p0, split, options, ctx);
    ctx.check_cancelled();
    if (fits.reports.empty())
    {
        std::string msg = "training failed for every category";
        for (const auto& [name, e] : fits.errors)
            msg += "; " + name + ": " + e;
        throw Error(ErrorKind::numerical_degeneracy, msg);
    }
    json cats_json = json::object();
    for (const auto& [name, r] : fits.reports)
    {
        const std::string stem = safe_name(name);
        save_params(r.params, w.path("params_" + stem + ".ipdm"));
        w.add("params_" + stem + ".ipdm");
        w.text("fit_history_" + stem + ".csv", fit_history_csv(r));
        cats_json[name] = {{"iterations", r.iterations},
                           {"reason", r.reason},
                           {"best_iteration", r.best_iteration},
                           {"best_validation_loglik", r.best_validation_loglik},
                           {"sigma_w", r.params.sigma_w}};
    }
    w.text("inspectors.csv", inspectors_to_csv(fits.shared_inspectors));
    for (const auto& [name, e] : fits.errors)
        out.warnings.push_back("category '" + name + "' failed: " + e);
    if (!fits.errors.empty())
    {
        CsvWriter errs({"category", "error"});
        for (const auto& [name, e] : fits.errors)
            errs.row(name, e);
        w.text("train_errors.csv", errs.str());
    }
    if (loaded.synthetic && fits.reports.size() == 1)
    {
        const RecoveryReport rec = recovery_report(fits.reports.begin()->second.params,
                                                   generating_truth(loaded.synthetic->config),
                                                   loaded.synthetic->inspector_truth());
        w.text("recovery.csv", recovery_csv(rec));
    }
    out.summary = {{"categories", cats_json}};
}

void cmd_train_interventions(const json& c, Writer& w, CommandOutput& out, const RunContext& ctx)
{
    const LoadedData loaded = load_data_dir(str(c, "data"));
    ModelParams params = load_params(str(c, "params"));
    const std::vector<InterventionRecord> records = read_intervention_records(str(c, "records"));
    const auto estimates = estimate_effects(loaded.data, records, params, {}, ctx);
    ctx.check_cancelled();

    std::map<std::string, InterventionEffect> effects;
    CsvWriter detail({"type_id", "element_id", "d_cond", "d_speed", "d_accel", "var_cond", "var_speed", "var_accel"});
    CsvWriter pooled({"type_id", "pooled_cond", "pooled_speed", "pooled_accel", "sd_cond", "sd_speed", "sd_accel",
                      "elements", "skipped"});
    json types = json::object();
    for (const auto& [type, est] : estimates)
    {
        effects[type] = est.effect;
        params.interventions[type] = est.effect;
        for (const auto& e : est.elements)
            detail.row(type, e.element_id, e.mean(0), e.mean(1), e.mean(2), e.cov(0, 0), e.cov(1, 1), e.cov(2, 2));
        pooled.row(type, est.pooled_mean(0), est.pooled_mean(1), est.pooled_mean(2), std::sqrt(est.pooled_cov(0, 0)),
                   std::sqrt(est.pooled_cov(1, 1)), std::sqrt(est.pooled_cov(2, 2)),
                   static_cast<long long>(est.elements.size()), static_cast<long long>(est.skipped.size()));
        for (const auto& s : est.skipped)
            out.warnings.push_back("type '" + type + "': record of element '" + s + "' skipped");
        types[type] = {{"elements", est.elements.size()}, {"d_cond", est.effect.delta_mean(0)}};
    }
    w.text("effects.csv", effects_to_csv(effects));
    w.text("effects_pooled.csv", pooled.str());
    w.text("effects_elements.csv", detail.str());
    const std::string name = "params_" + safe_name(params.category) + ".ipdm";
    save_params(params, w.path(name));
    w.add(name);
    out.summary = {{"types", types}};
}

void cmd_verify(const json& c, Writer& w, CommandOutput& out, const RunContext& ctx)
{
    const SyntheticDataset ds = import_dataset(str(c, "data"));
    const ModelParams params = load_params(str(c, "params"));
    const int horizon = num<int>(c, "horizon", 10);
    const int elements = num<int>(c, "elements", 200);
    const ForecastErrors fe =
        forecast_error_report(ds, params, horizon, elements, num<std::uint64_t>(c, "seed", 0), ctx);
    for (const auto& p : render_report(fe, w.path("")))
        w.add(p.filename().string());
    out.warnings = fe.warnings;
    const RecoveryReport rec = recovery_report(params, generating_truth(ds.config), ds.inspector_truth());
    w.text("recovery.csv", recovery_csv(rec));
    int contains_zero = 0;
    for (const auto& cell : fe.signed_report.cells)
        contains_zero += cell.band_low <= 0.0 && cell.band_high >= 0.0;
    out.summary = {{"elements", fe.elements.size()},
                   {"horizon", horizon},
                   {"bands_containing_zero", contains_zero},
                   {"cells", fe.signed_report.cells.size()}};
}

void cmd_validate(const json& c, Writer& w, CommandOutput& out, const RunContext& ctx)
{
    const LoadedData db_old = load_data_dir(str(c, "old"));
    const LoadedData db_new = load_data_dir(str(c, "new"));
    const ModelParams params = load_params(str(c, "params"));
    const HoldoutReport r = validate_holdout(db_old.data, db_new.data, params, ctx);
    w.text("holdout_summary.csv", holdout_summary_csv(r));
    w.text("holdout_observations.csv", holdout_observations_csv(r));
    out.summary = {{"n", r.n},
                   {"standardized_mean", r.mean},
                   {"standardized_std", r.std},
                   {"z_score", r.z_score},
                   {"predictive_loglik", r.predictive_loglik}};
}

} // namespace

void validate_command(const std::string& kind, const json& config)
{
    const Schema& schema = schema_of(kind);
    if (!config.is_object())
        throw Error(ErrorKind::invalid_input, "config of '" + kind + "' must be an object");
    for (const auto& [key, value] : config.items())
    {
        const auto it = schema.find(key);
        if (it == schema.end())
            throw Error(ErrorKind::invalid_input, "unknown key '" + key + "' for '" + kind + "'");
        if (!type_matches(value, it->second.type))
            throw Error(ErrorKind::invalid_input,
                        "key '" + key + "' of '" + kind + "' must be " + type_name(it->second.type));
    }
    for (const auto& [key, spec] : schema)
        if (spec.required && !config.contains(key))
            throw Error(ErrorKind::invalid_input, "missing key '" + key + "' for '" + kind + "'");
}

CommandOutput run_command(const std::string& kind, const json& config, const fs::path& out_dir,
                          const RunContext& ctx)
{
    validate_command(kind, config);
    CommandOutput out;
    Writer w(out_dir, out);
    if (kind == "ingest" || kind == "preprocess")
        cmd_ingest(config, w, out, kind == "preprocess");
    else if (kind == "analyze-element")
        cmd_analyze(config, w, out);
    else if (kind == "generate")
        cmd_generate(config, w, out, ctx);
    else if (kind == "train")
        cmd_train(config, w, out, ctx);
    else if (kind == "train-interventions")
        cmd_train_interventions(config, w, out, ctx);
    else if (kind == "verify")
        cmd_verify(config, w, out, ctx);
    else if (kind == "validate")
        cmd_validate(config, w, out, ctx);
    std::sort(out.artifacts.begin(), out.artifacts.end());
    out.artifacts.erase(std::unique(out.artifacts.begin(), out.artifacts.end()), out.artifacts.end());
    ctx.progress(1.0);
    return out;
}

LoadedData load_data_dir(const fs::path& dir)
{
    LoadedData out;
    if (fs::exists(dir / "observed.csv"))
    {
        out.synthetic = import_dataset(dir);
        out.data = to_dataset(*out.synthetic);
    }
    else if (fs::exists(dir / "index.json"))
        out.data = store_to_dataset(load_store(dir));
    else
        throw Error(ErrorKind::not_found,
                    dir.string() + " holds neither a synthetic dataset (observed.csv) nor a store (index.json)");
    return out;
}

ModelParams initial_params(const LoadedData& data, const std::string& category)
{
    ModelParams p;
    p.category = category;
    if (data.synthetic)
    {
        p.scale = data.synthetic->config.scale;
        p.n.n = data.synthetic->config.transform_n;
    }
    return p;
}

// ---------------------------------------------------------------------------------------------

ElementAnalysis analyze_element(const ElementSeries& series, const ModelParams& params, int horizon)
{
    if (horizon < 0)
        throw Error(ErrorKind::invalid_input, "forecast horizon must be >= 0");
    const PreparedSeries prep = prepare_series(series, params);
    if (!prep.usable)
        throw Error(ErrorKind::invalid_input, "element '" + series.id + "' has no ratings to analyze");
    const SeriesResult r = analyze_series(series, params, horizon);

    ElementAnalysis a;
    a.element_id = series.id;
    a.horizon = horizon;
    for (const auto& ins : series.inspections)
    {
        if (!ins.condition)
            continue;
        const InspectorModel& m = params.inspectors.get(ins.inspector);
        AnalysisPoint p;
        p.year = ins.year;
        p.kind = "observation";
        p.condition = *ins.condition;
        p.band_low = *ins.condition - 2.0 * m.sigma_v;
        p.band_high = *ins.condition + 2.0 * m.sigma_v;
        p.inspector = ins.inspector;
        a.points.push_back(p);
    }
    auto add = [&](const GaussianState& s, const char* kind) {
        AnalysisPoint p;
        p.year = s.time;
        p.kind = kind;
        const double sd = std::sqrt(std::max(s.cov(0, 0), 0.0));
        p.condition = to_bounded(s.mean(0), params.scale, params.n);
        p.band_low = to_bounded(s.mean(0) - 2.0 * sd, params.scale, params.n);
        p.band_high = to_bounded(s.mean(0) + 2.0 * sd, params.scale, params.n);
        p.speed = s.mean(1);
        p.speed_sd = std::sqrt(std::max(s.cov(1, 1), 0.0));
        p.acceleration = s.mean(2);
        p.acceleration_sd = std::sqrt(std::max(s.cov(2, 2), 0.0));
        a.points.push_back(p);
    };
    for (const auto& s : r.filtered)
        add(s, "filtered");
    for (const auto& s : r.smoothed)
        add(s, "smoothed");
    for (const auto& s : r.forecast)
        add(s, "forecast");
    return a;
}

std::string analysis_csv(const ElementAnalysis& a)
{
    CsvWriter w({"year", "kind", "condition", "band_low", "band_high", "speed", "speed_sd", "acceleration",
                 "acceleration_sd", "inspector_id"});
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const auto& p : a.points)
        w.row(p.year, p.kind, p.condition, p.band_low, p.band_high, opt(p.speed), opt(p.speed_sd),
              opt(p.acceleration), opt(p.acceleration_sd), p.inspector);
    return w.str();
}

json analysis_json(const ElementAnalysis& a)
{
    json groups{{"observations", json::array()},
                {"filtered", json::array()},
                {"smoothed", json::array()},
                {"forecast", json::array()}};
    for (const auto& p : a.points)
    {
        json j{{"year", p.year}, {"condition", p.condition}, {"band_low", p.band_low}, {"band_high", p.band_high}};
        if (p.kind == "observation")
        {
            j["inspector_id"] = p.inspector;
            groups["observations"].push_back(j);
            continue;
        }
        j["speed"] = *p.speed;
        j["speed_sd"] = *p.speed_sd;
        j["acceleration"] = *p.acceleration;
        j["acceleration_sd"] = *p.acceleration_sd;
        groups[p.kind].push_back(j);
    }
    groups["element_id"] = a.element_id;
    groups["horizon"] = a.horizon;
    return groups;
}

} // namespace ipdm
