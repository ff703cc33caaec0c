#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace emslab {

/// Piecewise-linear table y(x). Queries outside the grid clamp to the end values.
class Table1D {
public:
    Table1D() = default;
    Table1D(std::vector<double> grid, std::vector<double> values);

    double operator()(double x) const;

    const std::vector<double>& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }
    bool empty() const { return grid_.empty(); }

private:
    std::vector<double> grid_;
    std::vector<double> values_;
};

/// Bilinear table z(x, y), values stored row-major with x as the slow index.
class Table2D {
public:
    Table2D() = default;
    Table2D(std::vector<double> x_grid, std::vector<double> y_grid, std::vector<double> values);

    double operator()(double x, double y) const;

    const std::vector<double>& x_grid() const { return x_; }
    const std::vector<double>& y_grid() const { return y_; }
    const std::vector<double>& values() const { return values_; }
    double min_value() const;
    double max_value() const;

private:
    std::vector<double> x_;
    std::vector<double> y_;
    std::vector<double> values_;
};

/// `count` evenly spaced points from lo to hi inclusive (lo alone when count == 1).
std::vector<double> linspace(double lo, double hi, std::size_t count);

}  // namespace emslab
