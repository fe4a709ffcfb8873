#include "ipdm/interventions.hpp"
#include "ipdm/model.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace ipdm;

namespace
{

GaussianState state(Vec3 mean, Mat3 cov = Mat3::Zero())
{
    GaussianState s;
    s.mean = mean;
    s.cov = cov;
    return s;
}

InterventionEffect effect(Vec3 d, Mat3 cov = Mat3::Zero())
{
    InterventionEffect e;
    e.type_id = "T";
    e.delta_mean = d;
    e.delta_cov = cov;
    return e;
}

/// One element observed every year by a precise inspector. The condition drops by one
/// condition unit a year and jumps by `jump` at year 10.
ElementSeries stepped_element(const std::string& id, double jump)
{
    ElementSeries e;
    e.id = id;
    for (int t = 0; t <= 20; ++t)
    {
        double y = 70.0 - t + (t >= 10 ? jump : 0.0);
        e.inspections.push_back({double(t), y, "P", false});
    }
    return e;
}

ModelParams precise_params()
{
    ModelParams p;
    p.sigma_w = 0.01;
    p.prior.speed_mean = -1.0;
    p.prior.speed_var = 0.5;
    p.prior.accel_var = 1e-4;
    p.inspectors.set({"P", 0.0, 0.5, 0, false});
    return p;
}

} // namespace

TEST_CASE("apply_intervention")
{
    const Mat3 cov = Vec3(1.0, 0.001, 0.0001).asDiagonal();
    const auto same = apply_intervention(state({-10, -1, 0}, cov), effect(Vec3::Zero()));
    CHECK((same.mean - Vec3(-10, -1, 0)).norm() < 1e-12);
    CHECK((same.cov - cov).norm() < 1e-12);

    const Mat3 dcov = Vec3(0.5, 0.0, 1e-5).asDiagonal();
    const auto moved = apply_intervention(state({-10, -1, 0}, cov), effect({5, 0.5, 0}, dcov));
    CHECK(moved.mean(0) == doctest::Approx(-5.0));
    CHECK(moved.mean(1) == doctest::Approx(-0.5).epsilon(1e-9));
    CHECK(moved.mean(2) == doctest::Approx(0.0));
    for (int i = 0; i < 3; ++i)
        CHECK(moved.cov(i, i) >= cov(i, i));
}

TEST_CASE("service life: basic rules")
{
    const ProcessModel still{0.0, 1.0};
    CHECK(service_life(state({0, -1, 0}), effect(Vec3::Zero()), still).years == 0.0);
    CHECK(service_life(state({0, -1, 0}), effect({-2, 0, 0}), still).years == 0.0);

    const auto six = service_life(state({0, -1, 0}), effect({6, 0, 0}), still);
    CHECK(six.years == doctest::Approx(6.0).epsilon(1e-12));
    CHECK_FALSE(six.censored);
    CHECK(six.baseline == doctest::Approx(62.5));

    ServiceLifeOptions cap;
    cap.horizon_cap = 100.0;
    const auto big = service_life(state({0, -0.01, 0}), effect({50, 0, 0}), still, {}, {}, cap);
    CHECK(big.censored);
    CHECK(big.years == 100.0);

    cap.horizon_cap = 0.5;
    CHECK_THROWS_AS(service_life(state({0, -1, 0}), effect({6, 0, 0}), still, {}, {}, cap), Error);
}

TEST_CASE("service life: closed-form crossing times without dynamics noise")
{
    const ProcessModel still{0.0, 1.0};
    SUBCASE("condition gain over a constant speed")
    {
        for (double dc : {0.3, 2.5, 7.25, 13.0})
            for (double v : {-0.4, -1.0, -2.3})
            {
                const auto s = service_life(state({5, v, 0}), effect({dc, 0, 0}), still);
                CHECK(std::abs(s.years - dc / -v) < 1e-6);
            }
    }
    SUBCASE("gain plus a slower post-intervention speed")
    {
        const auto s = service_life(state({-3, -2.0, 0}), effect({9, 0.8, 0}), still);
        CHECK(std::abs(s.years - 9.0 / 1.2) < 1e-6);
    }
    SUBCASE("decelerating condition: root of the quadratic")
    {
        for (double a : {-0.05, -0.2, -1.0})
        {
            const double dc = 8.0, v = -0.6;
            const auto s = service_life(state({0, v, a}), effect({dc, 0, 0}), still);
            // dc + v t + a t^2 / 2 = 0, positive root
            const double t = (-v - std::sqrt(v * v - 2.0 * a * dc)) / a;
            CHECK(std::abs(s.years - t) < 1e-6);
        }
    }
    SUBCASE("bands collapse onto the mean without uncertainty")
    {
        const auto s = service_life(state({0, -1, 0}), effect({6, 0, 0}), still);
        CHECK(s.band_low == doctest::Approx(s.years).epsilon(1e-9));
        CHECK(s.band_high == doctest::Approx(s.years).epsilon(1e-9));
    }
}

TEST_CASE("service life: monotone in the condition gain and banded")
{
    const ProcessModel pm{0.05, 1.0};
    const Mat3 cov = Vec3(0.5, 0.02, 0.001).asDiagonal();
    double prev = 0.0;
    for (double dc = 0.5; dc <= 20.0; dc += 0.5)
    {
        const auto s = service_life(state({0, -1, 0}, cov), effect({dc, 0, 0}), pm);
        CHECK(s.years >= prev);
        CHECK(s.band_low <= s.years + 1e-9);
        CHECK(s.band_high >= s.years - 1e-9);
        prev = s.years;
    }
}

TEST_CASE("service life: fixed threshold option")
{
    ServiceLifeOptions opt;
    opt.threshold = to_bounded(-4.0);
    const auto s = service_life(state({0, -1, 0}), effect({6, 0, 0}), {0.0, 1.0}, {}, {}, opt);
    CHECK(std::abs(s.years - 10.0) < 1e-6);
}

TEST_CASE("estimate_effect: null effect on one element")
{
    Dataset d;
    d.elements.push_back(stepped_element("e1", 0.0));
    const std::vector<InterventionRecord> recs{{"e1", 10.0, "T"}};
    const auto est = estimate_effect(d, recs, precise_params(), "T");
    REQUIRE(est.elements.size() == 1);
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(est.pooled_mean(i)) < 2.0 * std::sqrt(est.pooled_cov(i, i)));
}

TEST_CASE("estimate_effect: a visible jump is found")
{
    Dataset d;
    d.elements.push_back(stepped_element("e1", 8.0));
    const std::vector<InterventionRecord> recs{{"e1", 10.0, "T"}};
    const auto est = estimate_effect(d, recs, precise_params(), "T");
    // 8 condition units mid-scale are about 8 transformed units
    CHECK(est.pooled_mean(0) > 5.0);
    CHECK(est.effect.delta_mean(0) >= 0.0);
}

TEST_CASE("estimate_effect: duplicating the set")
{
    Dataset d;
    std::vector<InterventionRecord> recs;
    for (int i = 0; i < 3; ++i)
    {
        auto e = stepped_element("e" + std::to_string(i), 4.0 + i);
        d.elements.push_back(e);
        recs.push_back({e.id, 10.0, "T"});
    }
    const auto p = precise_params();
    const auto once = estimate_effect(d, recs, p, "T");
    Dataset dd = d;
    auto rr = recs;
    for (const auto& e : d.elements)
    {
        auto c = e;
        c.id += "_copy";
        dd.elements.push_back(c);
        rr.push_back({c.id, 10.0, "T"});
    }
    const auto twice = estimate_effect(dd, rr, p, "T");
    CHECK((once.pooled_mean - twice.pooled_mean).norm() < 1e-9);
    for (int i = 0; i < 3; ++i)
        CHECK(twice.pooled_cov(i, i) < once.pooled_cov(i, i));
}

TEST_CASE("estimate_effect: no post-intervention data")
{
    Dataset d;
    d.elements.push_back(stepped_element("e1", 0.0));
    const std::vector<InterventionRecord> recs{{"e1", 30.0, "T"}};
    try
    {
        estimate_effect(d, recs, precise_params(), "T");
        FAIL("expected an error");
    }
    catch (const Error& e)
    {
        CHECK(e.kind() == ErrorKind::unidentifiable);
        CHECK(std::string(e.what()).find("effect unidentifiable") != std::string::npos);
    }
}

TEST_CASE("intervention CSV formats round trip")
{
    test::TempDir dir("interv");
    const std::vector<InterventionRecord> recs{{"b~s~1", 2004.0, "repaint"}, {"b~s~2", 2010.5, "deck"}};
    const auto rp = dir.write("records.csv", intervention_records_to_csv(recs));
    const auto back = read_intervention_records(rp);
    REQUIRE(back.size() == 2);
    CHECK(back[1].element_id == "b~s~2");
    CHECK(back[1].time == 2010.5);
    CHECK(back[0].type_id == "repaint");

    std::map<std::string, InterventionEffect> effects;
    effects["deck"] = effect({3.5, 0.25, 0.0}, Vec3(0.5, 0.01, 1e-4).asDiagonal());
    effects["deck"].type_id = "deck";
    const auto ep = dir.write("effects.csv", effects_to_csv(effects));
    CHECK(read_file(ep).rfind("type_id,d_cond,d_speed,d_accel,var_cond,var_speed,var_accel\n", 0) == 0);
    const auto eb = read_effects(ep);
    REQUIRE(eb.size() == 1);
    CHECK(eb.at("deck").delta_mean(0) == 3.5);
    CHECK(eb.at("deck").delta_cov(1, 1) == 0.01);
    CHECK(effects_to_csv(eb) == effects_to_csv(effects));

    dir.write("bad.csv", "element_id,year,type_id\ne1,notayear,T\n");
    CHECK_THROWS_AS(read_intervention_records(dir / "bad.csv"), Error);
}
