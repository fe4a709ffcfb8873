#include "ipdm/domain.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace ipdm;

TEST_CASE("midpoint maps to zero and back")
{
    CHECK(to_unbounded(62.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(to_bounded(0.0) == doctest::Approx(62.5).epsilon(1e-12));
}

TEST_CASE("closed form at y = 80")
{
    const double expected = 18.75 * std::log((55.0 / 75.0) / (20.0 / 75.0));
    CHECK(std::abs(to_unbounded(80.0) - expected) < 1e-12);
    // 18.75 * ln(2.75)
    CHECK(std::abs(to_unbounded(80.0) - 18.96751709) < 1e-8);
    CHECK(std::abs(to_bounded(expected) - 80.0) < 1e-9);
}

TEST_CASE("upper bound is clamped to a large finite value")
{
    bool clamped = false;
    const double x = to_unbounded(100.0, {}, {}, clamped);
    CHECK(clamped);
    CHECK(std::isfinite(x));
    CHECK(x > 100.0);
    CHECK(x == doctest::Approx(transformed_limit()));
    CHECK(to_unbounded(25.0) == doctest::Approx(-transformed_limit()));
}

TEST_CASE("non-finite input is rejected")
{
    CHECK_THROWS_AS(to_unbounded(std::numeric_limits<double>::quiet_NaN()), Error);
    CHECK_THROWS_AS(to_bounded(std::numeric_limits<double>::infinity()), Error);
}

TEST_CASE("round trip on a 1000-point interior grid")
{
    const ConditionScale sc;
    const double lo = sc.lower + kClampEps * sc.width();
    const double hi = sc.upper - kClampEps * sc.width();
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 1000; ++i)
    {
        const double y = lo + (hi - lo) * (i + 0.5) / 1000.0;
        const double x = to_unbounded(y);
        CHECK(std::abs(to_bounded(x) - y) < 1e-9);
        CHECK(x > prev);
        prev = x;
        const double h = 1e-5;
        const double fd = (to_unbounded(y + h) - to_unbounded(y - h)) / (2 * h);
        CHECK(std::abs(fd - transform_derivative(y)) / transform_derivative(y) < 1e-6);
    }
    CHECK(std::abs(to_bounded(to_unbounded(40.0)) - 40.0) < 1e-9);
}

TEST_CASE("derivative values")
{
    CHECK(transform_derivative(62.5) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(transform_derivative(80.0) == doctest::Approx(18.75 * 75.0 / (55.0 * 20.0)).epsilon(1e-12));
    CHECK(std::abs(transform_derivative(80.0) - 1.27840909) < 1e-8);
    // slope at the midpoint is 4 / n
    CHECK(transform_derivative(62.5, {}, TransformParam{2.0}) == doctest::Approx(2.0));
    CHECK(transform_derivative(62.5, {}, TransformParam{8.0}) == doctest::Approx(0.5));

    const double y = 99.99;
    const double h = 1e-6;
    const double fd = (to_unbounded(y + h) - to_unbounded(y - h)) / (2 * h);
    CHECK(std::abs(fd - transform_derivative(y)) / transform_derivative(y) < 1e-4);
}

TEST_CASE("observation mapping")
{
    InspectorModel i;
    i.sigma_v = 2.0;
    auto t = observation_to_transformed(62.5, i);
    CHECK(t.value.mean == doctest::Approx(0.0));
    CHECK(t.value.variance == doctest::Approx(4.0));
    CHECK_FALSE(t.clamped);

    i.sigma_v = 0.0;
    t = observation_to_transformed(62.5, i);
    CHECK(t.value.variance == 0.0);

    i.sigma_v = 3.0;
    t = observation_to_transformed(80.0, i);
    CHECK(t.value.mean == doctest::Approx(18.75 * std::log(2.75)).epsilon(1e-12));
    CHECK(t.value.variance == doctest::Approx(std::pow(3.0 * 1.27840909090909, 2)).epsilon(1e-10));
    CHECK(std::abs(t.value.variance - 14.709) < 1e-3);

    i.mu_v = 1.0;
    t = observation_to_transformed(101.5, i);
    CHECK(t.clamped);
}

TEST_CASE("scale and transform validation")
{
    CHECK_THROWS_AS((ConditionScale{10.0, 5.0}.validate()), Error);
    CHECK_THROWS_AS(TransformParam{0.0}.validate(), Error);
    CHECK_NOTHROW(ConditionScale{}.validate());
}

TEST_CASE("covariance validity")
{
    CHECK(is_valid_covariance(Mat3::Identity()));
    Mat3 bad = Mat3::Identity();
    bad(0, 0) = -1.0;
    CHECK_FALSE(is_valid_covariance(bad));
    Mat3 asym = Mat3::Identity();
    asym(0, 1) = 0.5;
    CHECK_FALSE(is_valid_covariance(asym));
}

TEST_CASE("gaussian helpers")
{
    CHECK(std_normal_cdf(0.0) == doctest::Approx(0.5));
    CHECK(std_normal_pdf(0.0) == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)));
    CHECK(log_normal_pdf(0.0, 0.0, 4.0) == doctest::Approx(std::log(1.0 / std::sqrt(8.0 * M_PI))));
}
