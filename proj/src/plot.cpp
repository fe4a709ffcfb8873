#include "ipdm/plot.hpp"

#include "ipdm/domain.hpp"
#include "ipdm/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>

namespace ipdm
{

namespace
{

using Glyph = std::array<std::uint8_t, 7>;

// 5x7, bit 4 is the leftmost column
const std::map<char, Glyph>& font()
{
    static const std::map<char, Glyph> f{
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}}, {'^', {0x04, 0x0A, 0x11, 0x00, 0x00, 0x00, 0x00}},
    };
    return f;
}

std::string tick_label(double v)
{
    char buf[32];
    const double a = std::abs(v);
    if (a != 0.0 && (a < 1e-3 || a >= 1e5))
        std::snprintf(buf, sizeof buf, "%.1e", v);
    else
        std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

double nice_step(double span)
{
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double f = raw / mag;
    return (f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0) * mag;
}

} // namespace

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), data_(static_cast<std::size_t>(width * height * 3))
{
    for (std::size_t i = 0; i < data_.size(); i += 3)
    {
        data_[i] = background.r;
        data_[i + 1] = background.g;
        data_[i + 2] = background.b;
    }
}

Rgb Canvas::at(int x, int y) const
{
    const auto* p = &data_[static_cast<std::size_t>((y * width_ + x) * 3)];
    return {p[0], p[1], p[2]};
}

void Canvas::pixel(int x, int y, Rgb c) { blend(x, y, c, 1.0); }

void Canvas::blend(int x, int y, Rgb c, double alpha)
{
    if (x < 0 || y < 0 || x >= width_ || y >= height_)
        return;
    auto* p = &data_[static_cast<std::size_t>((y * width_ + x) * 3)];
    auto mix = [alpha](std::uint8_t dst, std::uint8_t src) {
        return static_cast<std::uint8_t>(std::lround(dst * (1.0 - alpha) + src * alpha));
    };
    p[0] = mix(p[0], c.r);
    p[1] = mix(p[1], c.g);
    p[2] = mix(p[2], c.b);
}

void Canvas::line(double x0, double y0, double x1, double y1, Rgb c)
{
    if (!std::isfinite(x0) || !std::isfinite(y0) || !std::isfinite(x1) || !std::isfinite(y1))
        return;
    const double steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1.0});
    if (steps > 1e5)
        return;
    for (int i = 0; i <= static_cast<int>(steps); ++i)
    {
        const double t = i / steps;
        pixel(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c, double alpha)
{
    for (int y = std::max(0, std::min(y0, y1)); y <= std::min(height_ - 1, std::max(y0, y1)); ++y)
        for (int x = std::max(0, std::min(x0, x1)); x <= std::min(width_ - 1, std::max(x0, x1)); ++x)
            blend(x, y, c, alpha);
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale)
{
    const auto& f = font();
    for (char ch : s)
    {
        const auto it = f.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (it != f.end())
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (it->second[static_cast<std::size_t>(row)] & (0x10 >> col))
                        fill_rect(x + col * scale, y + row * scale, x + col * scale + scale - 1,
                                  y + row * scale + scale - 1, c);
        x += 6 * scale;
    }
}

int Canvas::text_width(const std::string& s, int scale) { return static_cast<int>(s.size()) * 6 * scale; }

void Canvas::save_png(const std::filesystem::path& path) const
{
    const std::filesystem::path tmp = path.string() + ".tmp";
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(tmp.string().c_str(), "wb"), &std::fclose);
    if (!fp)
        throw Error(ErrorKind::io, "cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info)
    {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::io, "cannot initialise PNG writer");
    }
    if (setjmp(png_jmpbuf(png)))
    {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::io, "PNG encoding failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width_), static_cast<png_uint_32>(height_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height_; ++y)
        png_write_row(png, const_cast<png_bytep>(&data_[static_cast<std::size_t>(y * width_ * 3)]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    fp.reset();
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot write " + path.string() + ": " + ec.message());
}

Canvas render_chart(const Chart& chart, int width, int height)
{
    Canvas c(width, height);
    const int left = 70, right = width - 20, top = 30, bottom = height - 45;

    double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
    auto take_x = [&](const std::vector<double>& v) {
        for (double x : v)
            if (std::isfinite(x))
            {
                x_lo = std::min(x_lo, x);
                x_hi = std::max(x_hi, x);
            }
    };
    auto take_y = [&](const std::vector<double>& v) {
        for (double y : v)
            if (std::isfinite(y))
            {
                y_lo = std::min(y_lo, y);
                y_hi = std::max(y_hi, y);
            }
    };
    for (const auto& b : chart.bands)
    {
        take_x(b.x);
        take_y(b.low);
        take_y(b.high);
    }
    for (const auto& s : chart.series)
    {
        take_x(s.x);
        take_y(s.y);
    }
    for (const auto& e : chart.error_bars)
    {
        take_x(e.x);
        take_y(e.low);
        take_y(e.high);
    }
    take_x(chart.shade_from);
    if (chart.zero_line)
        take_y({0.0});
    if (chart.fixed_y)
    {
        y_lo = chart.y_min;
        y_hi = chart.y_max;
    }
    if (!std::isfinite(x_lo))
    {
        x_lo = 0.0;
        x_hi = 1.0;
    }
    if (!std::isfinite(y_lo))
    {
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if (x_hi - x_lo <= 0.0)
    {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if (y_hi - y_lo <= 0.0)
    {
        const double pad = std::max(std::abs(y_lo) * 0.1, 1e-9);
        y_lo -= pad;
        y_hi += pad;
    }
    else if (!chart.fixed_y)
    {
        const double pad = 0.05 * (y_hi - y_lo);
        y_lo -= pad;
        y_hi += pad;
    }

    auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * (right - left); };
    auto py = [&](double y) { return bottom - (std::clamp(y, y_lo, y_hi) - y_lo) / (y_hi - y_lo) * (bottom - top); };

    const Rgb axis{60, 60, 60}, grid{225, 225, 225};
    for (double x0 : chart.shade_from)
        c.fill_rect(static_cast<int>(px(x0)), top, right, bottom, {200, 200, 200}, 0.35);

    const double ys = nice_step(y_hi - y_lo);
    for (double t = std::ceil(y_lo / ys) * ys; t <= y_hi + 1e-12 * ys; t += ys)
    {
        const double yy = py(t);
        c.line(left, yy, right, yy, grid);
        const std::string lbl = tick_label(std::abs(t) < 1e-12 * ys ? 0.0 : t);
        c.text(left - 6 - Canvas::text_width(lbl), static_cast<int>(yy) - 3, lbl, axis);
    }
    const double xs = nice_step(x_hi - x_lo);
    for (double t = std::ceil(x_lo / xs) * xs; t <= x_hi + 1e-12 * xs; t += xs)
    {
        const double xx = px(t);
        c.line(xx, top, xx, bottom, grid);
        const std::string lbl = tick_label(std::abs(t) < 1e-12 * xs ? 0.0 : t);
        c.text(static_cast<int>(xx) - Canvas::text_width(lbl) / 2, bottom + 6, lbl, axis);
    }

    for (const auto& b : chart.bands)
    {
        for (std::size_t i = 0; i + 1 < b.x.size(); ++i)
        {
            const double xa = px(b.x[i]), xb = px(b.x[i + 1]);
            for (int x = static_cast<int>(std::ceil(xa)); x <= static_cast<int>(std::floor(xb)); ++x)
            {
                const double t = xb > xa ? (x - xa) / (xb - xa) : 0.0;
                const double lo = b.low[i] + t * (b.low[i + 1] - b.low[i]);
                const double hi = b.high[i] + t * (b.high[i + 1] - b.high[i]);
                c.fill_rect(x, static_cast<int>(py(hi)), x, static_cast<int>(py(lo)), b.color, 0.3);
            }
        }
        if (b.x.size() == 1)
            c.fill_rect(static_cast<int>(px(b.x[0])) - 2, static_cast<int>(py(b.high[0])),
                        static_cast<int>(px(b.x[0])) + 2, static_cast<int>(py(b.low[0])), b.color, 0.3);
    }
    if (chart.zero_line && y_lo <= 0.0 && y_hi >= 0.0)
        c.line(left, py(0.0), right, py(0.0), {120, 120, 120});
    for (const auto& e : chart.error_bars)
        for (std::size_t i = 0; i < e.x.size(); ++i)
        {
            const double xx = px(e.x[i]);
            c.line(xx, py(e.low[i]), xx, py(e.high[i]), e.color);
            c.line(xx - 3, py(e.low[i]), xx + 3, py(e.low[i]), e.color);
            c.line(xx - 3, py(e.high[i]), xx + 3, py(e.high[i]), e.color);
        }
    for (const auto& s : chart.series)
    {
        for (std::size_t i = 0; s.line && i + 1 < s.x.size(); ++i)
            c.line(px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), s.color);
        if (s.markers)
            for (std::size_t i = 0; i < s.x.size(); ++i)
                c.fill_rect(static_cast<int>(px(s.x[i])) - 2, static_cast<int>(py(s.y[i])) - 2,
                            static_cast<int>(px(s.x[i])) + 2, static_cast<int>(py(s.y[i])) + 2, s.color);
    }

    c.line(left, top, left, bottom, axis);
    c.line(left, bottom, right, bottom, axis);
    c.text(left, 8, chart.title, {0, 0, 0}, 2);
    c.text((left + right - Canvas::text_width(chart.x_label)) / 2, height - 16, chart.x_label, axis);
    c.text(4, top - 14, chart.y_label, axis);

    int lx = right - 10;
    for (auto it = chart.series.rbegin(); it != chart.series.rend(); ++it)
    {
        if (it->label.empty())
            continue;
        lx -= Canvas::text_width(it->label) + 18;
        c.fill_rect(lx, top - 12, lx + 10, top - 6, it->color);
        c.text(lx + 14, top - 14, it->label, axis);
    }
    return c;
}

Canvas stack(const std::vector<Canvas>& panels)
{
    int w = 0, h = 0;
    for (const auto& p : panels)
    {
        w = std::max(w, p.width());
        h += p.height();
    }
    Canvas out(std::max(w, 1), std::max(h, 1));
    int y0 = 0;
    for (const auto& p : panels)
    {
        for (int y = 0; y < p.height(); ++y)
            for (int x = 0; x < p.width(); ++x)
                out.pixel(x, y0 + y, p.at(x, y));
        y0 += p.height();
    }
    return out;
}

} // namespace ipdm
