#include "ipdm/parallel.hpp"
#include "ipdm/verify.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace ipdm;

namespace
{

SynthConfig verify_config(std::uint64_t seed = 3)
{
    SynthConfig c;
    c.time_span = 40;
    c.series = 400;
    c.inspectors = 15;
    c.sigma_w = 0.01;
    c.seed = seed;
    return c;
}

/// Holdout design: model-consistent data, old database = ratings up to `cut`.
struct Holdout
{
    SyntheticDataset ds;
    Dataset old_db;
    Dataset new_db;
};

Holdout holdout_data(int series, std::uint64_t seed)
{
    SynthConfig c;
    c.time_span = 30;
    c.series = series;
    c.inspectors = 30;
    c.sigma_v = {1.0, 2.0};
    c.sigma_w = 0.002;
    c.initial_condition = {70.0, 90.0};
    c.initial_speed = {-1.1, -0.9};
    c.initial_accel = {-0.01732, 0.01732};
    c.seed = seed;
    Holdout h;
    h.ds = generate(c);
    h.new_db = to_dataset(h.ds);
    h.old_db = h.new_db;
    for (auto& e : h.old_db.elements)
        std::erase_if(e.inspections, [](const Inspection& i) { return i.year > 24.0; });
    return h;
}

std::size_t bytes_on_disk(const std::filesystem::path& p)
{
    return static_cast<std::size_t>(std::filesystem::file_size(p));
}

} // namespace

TEST_CASE("forecast errors vanish for exact data and the generating model")
{
    SynthConfig c = verify_config();
    c.sigma_w = 0.0;
    c.sigma_v = {0.0, 0.0};
    c.initial_condition = {85.0, 95.0};
    c.initial_speed = {-0.3, -0.1};
    c.time_span = 30;
    const auto ds = generate(c);
    const auto fe = forecast_error_report(ds, truth_params(ds), 5, 100, 1);
    REQUIRE(fe.signed_report.cells.size() == 15);
    for (const auto& cell : fe.signed_report.cells)
    {
        INFO(component_name(cell.component) << " h=" << cell.horizon_year);
        CHECK(std::abs(cell.mean_error) < 1e-6);
    }
}

TEST_CASE("forecast error report structure")
{
    const auto ds = generate(verify_config());
    const auto p = truth_params(ds);
    const int H = 6;
    const auto fe = forecast_error_report(ds, p, H, 120, 11);
    REQUIRE(fe.elements.size() == 120);
    CHECK(fe.warnings.empty());
    CHECK(fe.signed_report.cells.size() == 3 * H);
    CHECK(fe.absolute_report.cells.size() == 3 * H);
    CHECK(fe.condition_units.cells.size() == H);

    SUBCASE("mae matches an independent pass over the raw errors")
    {
        for (StateComponent comp : {kCondition, kSpeed, kAcceleration})
            for (int h = 1; h <= H; ++h)
            {
                double sum = 0.0;
                for (const auto& e : fe.raw)
                    sum += std::abs(e[static_cast<std::size_t>(h - 1)](comp));
                const double mae = sum / static_cast<double>(fe.raw.size());
                CHECK(std::abs(fe.signed_report.at(comp, h).mae - mae) <= 1e-12);
                CHECK(std::abs(fe.absolute_report.at(comp, h).mean_error - mae) <= 1e-12);
            }
    }
    SUBCASE("cell invariants")
    {
        int prev_n = -1;
        for (const auto& cell : fe.signed_report.cells)
        {
            CHECK(cell.mae >= std::abs(cell.mean_error) - 1e-15);
            CHECK(cell.band_high - cell.mean_error == doctest::Approx(cell.mean_error - cell.band_low));
            if (cell.horizon_year > 1)
                CHECK(cell.n <= prev_n);
            prev_n = cell.n;
        }
    }
    SUBCASE("deterministic for a seed, different sample for another")
    {
        const auto again = forecast_error_report(ds, p, H, 120, 11);
        CHECK(error_report_csv(again.signed_report) == error_report_csv(fe.signed_report));
        const auto other = forecast_error_report(ds, p, H, 120, 12);
        CHECK(other.elements != fe.elements);
    }
    SUBCASE("thread count does not change the report")
    {
        set_thread_count(1);
        const auto one = forecast_error_report(ds, p, H, 120, 11);
        set_thread_count(3);
        const auto three = forecast_error_report(ds, p, H, 120, 11);
        set_thread_count(0);
        CHECK(error_report_csv(one.signed_report) == error_report_csv(three.signed_report));
        CHECK(error_report_csv(one.absolute_report) == error_report_csv(three.absolute_report));
    }
}

TEST_CASE("forecast error report: oversized sample and bad input")
{
    const auto ds = generate(verify_config());
    const auto fe = forecast_error_report(ds, truth_params(ds), 4, 100000, 1);
    CHECK(fe.elements.size() < 100000);
    CHECK(fe.elements.size() > 0);
    REQUIRE(fe.warnings.size() == 1);
    CHECK(fe.warnings[0].find("using all") != std::string::npos);

    CHECK_THROWS_AS(forecast_error_report(ds, truth_params(ds), 0, 10, 1), Error);
    CHECK_THROWS_AS(forecast_error_report(ds, truth_params(ds), 3, 0, 1), Error);
    auto no_truth = ds;
    no_truth.has_true_states = false;
    CHECK_THROWS_AS(forecast_error_report(no_truth, truth_params(ds), 3, 10, 1), Error);
}

TEST_CASE("render_report writes CSVs and one plot per component")
{
    const auto ds = generate(verify_config());
    const int H = 5;
    const auto fe = forecast_error_report(ds, truth_params(ds), H, 60, 2);
    test::TempDir dir("render");
    const auto written = render_report(fe, dir.path());
    CHECK(written.size() == 6);

    for (const char* name : {"verify_signed.csv", "verify_absolute.csv"})
    {
        const auto report = read_error_report(dir / name);
        CHECK(report.cells.size() == 3 * H);
        CHECK(report.horizon == H);
    }
    const std::string before = read_file(dir / "verify_signed.csv");
    CHECK(before.rfind("component,horizon_year,mean_error,mae,band_low,band_high,n\n", 0) == 0);
    for (const char* comp : {"condition", "speed", "acceleration"})
        CHECK(bytes_on_disk(dir / (std::string("verify_") + comp + ".png")) > 0);

    render_report(fe, dir.path());
    CHECK(read_file(dir / "verify_signed.csv") == before);

    const auto back = read_error_report(dir / "verify_signed.csv");
    CHECK(error_report_csv(back) == before);
}

TEST_CASE("recovery report")
{
    const auto ds = generate(verify_config());
    const ModelParams truth = truth_params(ds);

    SUBCASE("fitted equal to the truth")
    {
        const auto r = recovery_report(truth, generating_truth(ds.config), ds.inspector_truth(), 0);
        REQUIRE(r.rows.size() == 2 + ds.inspectors.size());
        for (const auto& row : r.rows)
        {
            REQUIRE(row.relative_error.has_value());
            CHECK(*row.relative_error == 0.0);
        }
        REQUIRE(r.inspectors.has_value());
        CHECK(r.inspectors->rmse == 0.0);
    }
    SUBCASE("missing truth entries are marked n/a")
    {
        auto t = generating_truth(ds.config);
        t.erase("transform_n");
        const auto r = recovery_report(truth, t, {}, 50);
        CHECK_FALSE(r.inspectors.has_value());
        const std::string csv = recovery_csv(r);
        CHECK(csv.find("transform_n,n/a,") != std::string::npos);
        CHECK(csv.find("sigma_w,") != std::string::npos);
    }
    SUBCASE("relative error sign and size")
    {
        ModelParams off = truth;
        off.sigma_w = 1.5 * truth.sigma_w;
        const auto r = recovery_report(off, generating_truth(ds.config), {}, 50);
        CHECK(r.rows[0].parameter == "sigma_w");
        CHECK(*r.rows[0].relative_error == doctest::Approx(0.5));
    }
}

TEST_CASE("holdout: identical databases carry no additional data")
{
    const auto h = holdout_data(50, 5);
    try
    {
        validate_holdout(h.new_db, h.new_db, truth_params(h.ds));
        FAIL("expected an error");
    }
    catch (const Error& e)
    {
        CHECK(std::string(e.what()).find("no additional data") != std::string::npos);
    }
}

TEST_CASE("holdout: standardized innovations are calibrated on model-consistent data")
{
    const auto h = holdout_data(4000, 17);
    const auto p = truth_params(h.ds);
    const auto r = validate_holdout(h.old_db, h.new_db, p);
    INFO("n=" << r.n << " mean=" << r.mean << " std=" << r.std);
    CHECK(r.n >= 2000);
    CHECK(std::abs(r.mean) < 0.05);
    CHECK(r.std >= 0.9);
    CHECK(r.std <= 1.1);
    CHECK(std::isfinite(r.predictive_loglik));
    CHECK(r.predictive_loglik < 0.0);

    SUBCASE("a +5 condition-unit shift of the new ratings is detected")
    {
        Dataset shifted = h.new_db;
        for (std::size_t i = 0; i < shifted.elements.size(); ++i)
            for (auto& ins : shifted.elements[i].inspections)
                if (ins.year > 24.0 && ins.condition)
                    ins.condition = std::min(*ins.condition + 5.0, 100.0);
        const auto s = validate_holdout(h.old_db, shifted, p);
        CHECK(s.mean > r.mean);
        CHECK(s.z_score > 3.0);
        CHECK(s.predictive_loglik < r.predictive_loglik);
    }
    SUBCASE("summary CSV")
    {
        const std::string csv = holdout_summary_csv(r);
        CHECK(csv.rfind("key,value\nn," + std::to_string(r.n) + "\n", 0) == 0);
        const std::string obs = holdout_observations_csv(r);
        CHECK(std::count(obs.begin(), obs.end(), '\n') == static_cast<long>(r.n + 1));
    }
}
