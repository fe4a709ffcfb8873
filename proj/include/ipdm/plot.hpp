/// @file plot.hpp
/// Small raster charts written as PNG.

#ifndef IPDM_PLOT_HPP
#define IPDM_PLOT_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ipdm
{

struct Rgb
{
    std::uint8_t r = 0, g = 0, b = 0;
};

class Canvas
{
public:
    Canvas(int width, int height, Rgb background = {255, 255, 255});

    int width() const { return width_; }
    int height() const { return height_; }

    Rgb at(int x, int y) const;
    void pixel(int x, int y, Rgb c);
    void blend(int x, int y, Rgb c, double alpha);
    void line(double x0, double y0, double x1, double y1, Rgb c);
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c, double alpha = 1.0);
    /// 5x7 glyphs scaled by `scale`; unknown characters render as blanks.
    void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
    static int text_width(const std::string& s, int scale = 1);

    void save_png(const std::filesystem::path& path) const;

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> data_;
};

struct ChartSeries
{
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    Rgb color;
    bool markers = false;
    bool line = true;
};

struct ChartBand
{
    std::vector<double> x;
    std::vector<double> low;
    std::vector<double> high;
    Rgb color;
};

struct ChartErrorBars
{
    std::vector<double> x;
    std::vector<double> low;
    std::vector<double> high;
    Rgb color;
};

struct Chart
{
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<ChartBand> bands;
    std::vector<ChartSeries> series;
    std::vector<ChartErrorBars> error_bars;
    /// Vertical shading from this x to the right edge (forecast region).
    std::vector<double> shade_from;
    bool zero_line = false;
    /// Fixed y range; otherwise fitted to the data.
    bool fixed_y = false;
    double y_min = 0.0, y_max = 1.0;
};

/// Renders a chart onto a new canvas.
Canvas render_chart(const Chart& chart, int width = 640, int height = 400);

/// Stacks canvases vertically.
Canvas stack(const std::vector<Canvas>& panels);

} // namespace ipdm

#endif // IPDM_PLOT_HPP
