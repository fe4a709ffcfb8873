#include "ipdm/synth.hpp"

#include "ipdm/io.hpp"
#include "ipdm/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace ipdm
{

namespace
{

/// Counter-derived stream: one engine per (seed, stream) pair.
class Stream
{
public:
    Stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          static_cast<std::uint32_t>(salt)};
        engine_.seed(seq);
    }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(const Range& r) { return r.lo + (r.hi - r.lo) * uniform(); }
    int uniform_int(int lo, int hi)
    {
        const auto span = static_cast<std::uint64_t>(hi - lo + 1);
        return lo + static_cast<int>(engine_() % span);
    }
    double normal()
    {
        if (has_spare_)
        {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

constexpr std::uint64_t kSaltInspectors = 1;
constexpr std::uint64_t kSaltSeries = 2;
constexpr std::uint64_t kSaltProbe = 3;

struct Trajectory
{
    std::vector<Vec3> states;
    bool accepted = false;
};

Trajectory simulate_trajectory(Stream& rng, const SynthConfig& cfg, const Mat3& chol, const Mat3& a,
                               const std::vector<const SyntheticJump*>& jumps)
{
    const ConditionScale& scale = cfg.scale;
    const TransformParam n{cfg.transform_n};
    const double limit = transformed_limit(scale, n);
    Trajectory t;
    t.states.reserve(static_cast<std::size_t>(cfg.time_span) + 1);
    Vec3 x;
    x << to_unbounded(rng.uniform(cfg.initial_condition), scale, n), rng.uniform(cfg.initial_speed),
        rng.uniform(cfg.initial_accel);
    t.states.push_back(x);
    for (int year = 1; year <= cfg.time_span; ++year)
    {
        const Vec3 z(rng.normal(), rng.normal(), rng.normal());
        Vec3 next = a * x + chol * z;
        bool jumped = false;
        for (const SyntheticJump* j : jumps)
            if (j->year == year)
            {
                next += j->delta;
                jumped = true;
            }
        if (!jumped && next(kCondition) - x(kCondition) > cfg.monotone_tolerance)
            return t;
        if (std::abs(next(kCondition)) >= limit)
            return t;
        x = next;
        t.states.push_back(x);
    }
    t.accepted = true;
    return t;
}

Mat3 noise_factor(const SynthConfig& cfg)
{
    if (cfg.sigma_w <= 0.0)
        return Mat3::Zero();
    Eigen::LLT<Mat3> llt(process_noise(1.0, cfg.sigma_w));
    return llt.matrixL();
}

std::string pad_id(char prefix, std::size_t index, std::size_t count)
{
    const std::string digits = std::to_string(count);
    std::string s = std::to_string(index);
    if (s.size() < digits.size())
        s.insert(0, digits.size() - s.size(), '0');
    return prefix + s;
}

} // namespace

void SynthConfig::validate() const
{
    if (time_span < 1 || series < 1 || inspectors < 1)
        throw Error(ErrorKind::invalid_input, "time span, series and inspectors must be >= 1");
    const Range* ranges[] = {&sigma_v, &mu_v, &initial_condition, &initial_speed, &initial_accel};
    for (const Range* r : ranges)
        if (!(r->lo <= r->hi) || !std::isfinite(r->lo) || !std::isfinite(r->hi))
            throw Error(ErrorKind::invalid_input, "synthetic config ranges must be ordered and finite");
    if (sigma_v.lo < 0.0)
        throw Error(ErrorKind::invalid_input, "sigma_v range must be non-negative");
    if (!(sigma_w >= 0.0) || !(transform_n > 0.0))
        throw Error(ErrorKind::invalid_input, "sigma_w must be >= 0 and transform n > 0");
    if (interval_min < 1 || interval_max < interval_min || offset_max < 0)
        throw Error(ErrorKind::invalid_input, "inspection interval distribution is invalid");
    scale.validate();
    for (const auto& j : jumps)
        if (j.series >= static_cast<std::size_t>(series) || j.year < 1 || j.year > time_span)
            throw Error(ErrorKind::invalid_input, "injected jump outside the generated data");
}

namespace
{

void set_range(Range& r, const std::string& value, const std::string& key)
{
    std::string v = value;
    std::erase(v, '[');
    std::erase(v, ']');
    const auto comma = v.find(',');
    const auto lo = parse_double(v.substr(0, comma));
    const auto hi = comma == std::string::npos ? lo : parse_double(v.substr(comma + 1));
    if (!lo || !hi)
        throw Error(ErrorKind::schema, "invalid range for '" + key + "': " + value);
    r = {*lo, *hi};
}

double need_double(const std::string& value, const std::string& key)
{
    const auto v = parse_double(value);
    if (!v)
        throw Error(ErrorKind::schema, "invalid number for '" + key + "': " + value);
    return *v;
}

int need_int(const std::string& value, const std::string& key)
{
    const auto v = parse_int(value);
    if (!v)
        throw Error(ErrorKind::schema, "invalid integer for '" + key + "': " + value);
    return static_cast<int>(*v);
}

std::string range_text(const Range& r) { return format_double(r.lo) + "," + format_double(r.hi); }

void apply_key(SynthConfig& cfg, const std::string& key, const std::string& value)
{
    if (key == "time_span")
        cfg.time_span = need_int(value, key);
    else if (key == "series")
        cfg.series = need_int(value, key);
    else if (key == "inspectors")
        cfg.inspectors = need_int(value, key);
    else if (key == "sigma_v")
        set_range(cfg.sigma_v, value, key);
    else if (key == "mu_v")
        set_range(cfg.mu_v, value, key);
    else if (key == "transform_n")
        cfg.transform_n = need_double(value, key);
    else if (key == "sigma_w")
        cfg.sigma_w = need_double(value, key);
    else if (key == "scale")
    {
        Range r;
        set_range(r, value, key);
        cfg.scale = {r.lo, r.hi};
    }
    else if (key == "initial_condition")
        set_range(cfg.initial_condition, value, key);
    else if (key == "initial_speed")
        set_range(cfg.initial_speed, value, key);
    else if (key == "initial_accel")
        set_range(cfg.initial_accel, value, key);
    else if (key == "interval")
    {
        Range r;
        set_range(r, value, key);
        cfg.interval_min = static_cast<int>(r.lo);
        cfg.interval_max = static_cast<int>(r.hi);
    }
    else if (key == "offset_max")
        cfg.offset_max = need_int(value, key);
    else if (key == "monotone_tolerance")
        cfg.monotone_tolerance = need_double(value, key);
    else if (key == "seed")
    {
        const auto v = parse_int(value);
        if (!v || *v < 0)
            throw Error(ErrorKind::schema, "invalid seed: " + value);
        cfg.seed = static_cast<std::uint64_t>(*v);
    }
    else if (key == "jump")
    {
        std::vector<std::string> parts;
        std::stringstream ss(value);
        for (std::string p; std::getline(ss, p, ':');)
            parts.push_back(p);
        if (parts.size() != 5)
            throw Error(ErrorKind::schema, "jump must be series:year:d_cond:d_speed:d_accel");
        SyntheticJump j;
        j.series = static_cast<std::size_t>(need_int(parts[0], key));
        j.year = need_int(parts[1], key);
        j.delta << need_double(parts[2], key), need_double(parts[3], key), need_double(parts[4], key);
        cfg.jumps.push_back(j);
    }
    else
        throw Error(ErrorKind::schema, "unknown synthetic config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> config_entries(const SynthConfig& cfg)
{
    std::vector<std::pair<std::string, std::string>> kv{
        {"time_span", std::to_string(cfg.time_span)},
        {"series", std::to_string(cfg.series)},
        {"inspectors", std::to_string(cfg.inspectors)},
        {"sigma_v", range_text(cfg.sigma_v)},
        {"mu_v", range_text(cfg.mu_v)},
        {"transform_n", format_double(cfg.transform_n)},
        {"sigma_w", format_double(cfg.sigma_w)},
        {"scale", format_double(cfg.scale.lower) + "," + format_double(cfg.scale.upper)},
        {"initial_condition", range_text(cfg.initial_condition)},
        {"initial_speed", range_text(cfg.initial_speed)},
        {"initial_accel", range_text(cfg.initial_accel)},
        {"interval", std::to_string(cfg.interval_min) + "," + std::to_string(cfg.interval_max)},
        {"offset_max", std::to_string(cfg.offset_max)},
        {"monotone_tolerance", format_double(cfg.monotone_tolerance)},
        {"seed", std::to_string(cfg.seed)},
    };
    for (const auto& j : cfg.jumps)
        kv.emplace_back("jump", std::to_string(j.series) + ":" + std::to_string(j.year) + ":" +
                                    format_double(j.delta(0)) + ":" + format_double(j.delta(1)) + ":" +
                                    format_double(j.delta(2)));
    return kv;
}

} // namespace

SynthConfig synth_config_from_text(const std::string& text, const std::string& source)
{
    SynthConfig cfg;
    for (const auto& [k, v] : parse_key_values(text, source))
    {
        try
        {
            apply_key(cfg, k, v);
        }
        catch (const Error& e)
        {
            throw Error(e.kind(), source + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

SynthConfig load_synth_config(const std::filesystem::path& path)
{
    return synth_config_from_text(read_file(path), path.string());
}

std::map<std::string, InspectorModel> SyntheticDataset::inspector_truth() const
{
    std::map<std::string, InspectorModel> m;
    for (const auto& i : inspectors)
        m[i.id] = i;
    return m;
}

std::size_t SyntheticDataset::observation_count() const
{
    std::size_t n = 0;
    for (const auto& s : series)
        n += s.observations.size();
    return n;
}

SyntheticDataset generate(const SynthConfig& cfg, const RunContext& ctx)
{
    cfg.validate();
    SyntheticDataset ds;
    ds.config = cfg;

    {
        Stream rng(cfg.seed, 0, kSaltInspectors);
        for (int i = 0; i < cfg.inspectors; ++i)
        {
            InspectorModel m;
            m.id = pad_id('I', static_cast<std::size_t>(i + 1), static_cast<std::size_t>(cfg.inspectors));
            m.sigma_v = rng.uniform(cfg.sigma_v);
            m.mu_v = rng.uniform(cfg.mu_v);
            ds.inspectors.push_back(m);
        }
    }

    const Mat3 chol = noise_factor(cfg);
    const Mat3 a = transition_matrix(1.0);

    {
        constexpr int kProbe = 1000;
        int rejected = 0;
        for (int p = 0; p < kProbe; ++p)
        {
            Stream rng(cfg.seed, static_cast<std::uint64_t>(p), kSaltProbe);
            if (!simulate_trajectory(rng, cfg, chol, a, {}).accepted)
                ++rejected;
        }
        if (rejected > kProbe * 99 / 100)
            throw Error(ErrorKind::invalid_input, "config incompatible with monotonic deterioration (" +
                                                      std::to_string(rejected) + "/1000 probe trajectories rejected)");
    }

    std::vector<std::vector<const SyntheticJump*>> jumps_by_series(static_cast<std::size_t>(cfg.series));
    for (const auto& j : cfg.jumps)
        jumps_by_series[j.series].push_back(&j);

    ds.series.resize(static_cast<std::size_t>(cfg.series));
    std::vector<long long> attempts(ds.series.size(), 0);
    std::atomic<std::size_t> done{0};
    const std::size_t total = ds.series.size();
    const TransformParam n{cfg.transform_n};

    parallel_for(total, [&](std::size_t s) {
        if (ctx.cancelled())
            return;
        Stream rng(cfg.seed, s, kSaltSeries);
        SyntheticSeries& out = ds.series[s];
        out.id = pad_id('E', s + 1, total);
        Trajectory traj;
        constexpr long long kMaxAttempts = 1000000;
        do
        {
            if (++attempts[s] > kMaxAttempts)
                throw Error(ErrorKind::invalid_input, "config incompatible with monotonic deterioration");
            traj = simulate_trajectory(rng, cfg, chol, a, jumps_by_series[s]);
        } while (!traj.accepted);
        out.true_states = std::move(traj.states);

        for (int year = rng.uniform_int(0, cfg.offset_max); year <= cfg.time_span;
             year += rng.uniform_int(cfg.interval_min, cfg.interval_max))
        {
            const auto& inspector = ds.inspectors[static_cast<std::size_t>(rng.uniform_int(0, cfg.inspectors - 1))];
            const double truth = to_bounded(out.true_states[static_cast<std::size_t>(year)](kCondition), cfg.scale, n);
            double y = truth + inspector.mu_v + inspector.sigma_v * rng.normal();
            y = std::clamp(y, cfg.scale.lower, cfg.scale.upper);
            out.observations.push_back({year, y, inspector.id});
        }
        const std::size_t finished = ++done;
        if (finished % 256 == 0)
            ctx.progress(static_cast<double>(finished) / static_cast<double>(total));
    });
    ctx.check_cancelled();

    for (long long at : attempts)
    {
        ds.attempts += at;
        ds.rejected += at - 1;
    }
    ctx.progress(1.0);
    return ds;
}

void export_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());

    CsvWriter meta({"key", "value"});
    for (const auto& [k, v] : config_entries(ds.config))
        meta.row(k, v);
    meta.row(std::string("attempts"), std::to_string(ds.attempts));
    meta.row(std::string("rejected"), std::to_string(ds.rejected));
    write_file_atomic(dir / "generated_meta.csv", meta.str());

    if (ds.has_true_states)
    {
        CsvWriter states({"element_id", "year", "cond_t", "speed_t", "accel_t"});
        for (const auto& s : ds.series)
            for (std::size_t y = 0; y < s.true_states.size(); ++y)
                states.row(s.id, static_cast<int>(y), s.true_states[y](0), s.true_states[y](1), s.true_states[y](2));
        write_file_atomic(dir / "true_states.csv", states.str());
    }

    CsvWriter observed({"element_id", "year", "condition", "inspector_id"});
    for (const auto& s : ds.series)
        for (const auto& o : s.observations)
            observed.row(s.id, o.year, o.condition, o.inspector);
    write_file_atomic(dir / "observed.csv", observed.str());

    CsvWriter ids({"inspector_id"});
    CsvWriter truth({"inspector_id", "mu_v", "sigma_v"});
    for (const auto& i : ds.inspectors)
    {
        ids.row(i.id);
        truth.row(i.id, i.mu_v, i.sigma_v);
    }
    write_file_atomic(dir / "inspector_ids.csv", ids.str());
    write_file_atomic(dir / "true_inspectors.csv", truth.str());
}

namespace
{

[[noreturn]] void bad_row(const CsvTable& t, std::size_t r, const std::string& what)
{
    throw Error(ErrorKind::schema, t.source.string() + ":" + std::to_string(t.line_numbers[r]) + ": " + what);
}

void expect_header(const CsvTable& t, const std::vector<std::string>& header)
{
    if (t.header != header)
        throw Error(ErrorKind::schema, t.source.string() + ": unexpected header");
}

} // namespace

SyntheticDataset import_dataset(const std::filesystem::path& dir)
{
    SyntheticDataset ds;
    {
        const CsvTable meta = read_csv_table(dir / "generated_meta.csv");
        expect_header(meta, {"key", "value"});
        SynthConfig cfg;
        for (std::size_t r = 0; r < meta.rows.size(); ++r)
        {
            const auto& key = meta.rows[r][0];
            const auto& value = meta.rows[r][1];
            if (key == "attempts" || key == "rejected")
            {
                const auto v = parse_int(value);
                if (!v)
                    bad_row(meta, r, "invalid count");
                (key == "attempts" ? ds.attempts : ds.rejected) = *v;
                continue;
            }
            try
            {
                apply_key(cfg, key, value);
            }
            catch (const Error& e)
            {
                bad_row(meta, r, e.what());
            }
        }
        ds.config = cfg;
    }

    {
        const CsvTable t = read_csv_table(dir / "true_inspectors.csv");
        expect_header(t, {"inspector_id", "mu_v", "sigma_v"});
        for (std::size_t r = 0; r < t.rows.size(); ++r)
        {
            const auto mu = parse_double(t.rows[r][1]);
            const auto sigma = parse_double(t.rows[r][2]);
            if (!mu || !sigma)
                bad_row(t, r, "invalid inspector parameters");
            InspectorModel m;
            m.id = t.rows[r][0];
            m.mu_v = *mu;
            m.sigma_v = *sigma;
            ds.inspectors.push_back(m);
        }
        const CsvTable ids = read_csv_table(dir / "inspector_ids.csv");
        expect_header(ids, {"inspector_id"});
        if (ids.rows.size() != ds.inspectors.size())
            throw Error(ErrorKind::schema, ids.source.string() + ": inspector count differs from true_inspectors.csv");
    }

    std::map<std::string, std::size_t> index;
    auto series_for = [&](const std::string& id) -> SyntheticSeries& {
        auto [it, inserted] = index.emplace(id, ds.series.size());
        if (inserted)
        {
            ds.series.emplace_back();
            ds.series.back().id = id;
        }
        return ds.series[it->second];
    };

    const auto states_path = dir / "true_states.csv";
    ds.has_true_states = std::filesystem::exists(states_path);
    if (ds.has_true_states)
    {
        const CsvTable t = read_csv_table(states_path);
        expect_header(t, {"element_id", "year", "cond_t", "speed_t", "accel_t"});
        for (std::size_t r = 0; r < t.rows.size(); ++r)
        {
            const auto& row = t.rows[r];
            const auto year = parse_int(row[1]);
            const auto c = parse_double(row[2]), s = parse_double(row[3]), a = parse_double(row[4]);
            if (!year || !c || !s || !a)
                bad_row(t, r, "invalid true state");
            SyntheticSeries& ser = series_for(row[0]);
            if (*year != static_cast<long long>(ser.true_states.size()))
                bad_row(t, r, "true states must list consecutive years from 0");
            ser.true_states.emplace_back(*c, *s, *a);
        }
    }

    {
        const CsvTable t = read_csv_table(dir / "observed.csv");
        expect_header(t, {"element_id", "year", "condition", "inspector_id"});
        for (std::size_t r = 0; r < t.rows.size(); ++r)
        {
            const auto& row = t.rows[r];
            const auto year = parse_int(row[1]);
            const auto y = parse_double(row[2]);
            if (!year || !y)
                bad_row(t, r, "invalid observation");
            series_for(row[0]).observations.push_back({static_cast<int>(*year), *y, row[3]});
        }
    }
    return ds;
}

Dataset to_dataset(const SyntheticDataset& ds, const std::string& category)
{
    Dataset out;
    out.elements.reserve(ds.series.size());
    for (const auto& s : ds.series)
    {
        ElementSeries e;
        e.id = s.id;
        e.category = category;
        e.inspections.reserve(s.observations.size());
        for (const auto& o : s.observations)
            e.inspections.push_back({static_cast<double>(o.year), o.condition, o.inspector, false});
        out.elements.push_back(std::move(e));
    }
    return out;
}

ModelParams truth_params(const SyntheticDataset& ds)
{
    const SynthConfig& cfg = ds.config;
    ModelParams p;
    p.category = "synthetic";
    p.scale = cfg.scale;
    p.n = {cfg.transform_n};
    p.sigma_w = cfg.sigma_w;
    p.bounds.sigma_w.lo = std::min(p.bounds.sigma_w.lo, cfg.sigma_w);
    auto var = [](const Range& r) { return (r.hi - r.lo) * (r.hi - r.lo) / 12.0; };
    p.prior.speed_mean = 0.5 * (cfg.initial_speed.lo + cfg.initial_speed.hi);
    p.prior.speed_var = std::max(var(cfg.initial_speed), p.bounds.prior_var.lo);
    p.prior.accel_var = std::max(var(cfg.initial_accel), p.bounds.prior_var.lo);
    p.prior.condition_var = p.bounds.prior_var.lo;
    p.inspector_bounds.sigma_min = std::min(p.inspector_bounds.sigma_min, cfg.sigma_v.lo);
    for (const auto& i : ds.inspectors)
        p.inspectors.set(i);
    return p;
}

} // namespace ipdm
