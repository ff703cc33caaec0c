#include "emslab/interp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emslab {

namespace {

void check_grid(const std::vector<double>& g, const char* what)
{
    if (g.size() < 2) throw std::invalid_argument(std::string{what} + ": grid needs at least 2 points");
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) throw std::invalid_argument(std::string{what} + ": non-finite grid point");
        if (i > 0 && !(g[i] > g[i - 1]))
            throw std::invalid_argument(std::string{what} + ": grid must be strictly increasing");
    }
}

// Segment index and weight for x on g, clamped to the grid ends.
std::pair<std::size_t, double> locate(const std::vector<double>& g, double x)
{
    if (x <= g.front()) return {0, 0.0};
    if (x >= g.back()) return {g.size() - 2, 1.0};
    auto it = std::upper_bound(g.begin(), g.end(), x);
    std::size_t i = static_cast<std::size_t>(it - g.begin()) - 1;
    return {i, (x - g[i]) / (g[i + 1] - g[i])};
}

}  // namespace

Table1D::Table1D(std::vector<double> grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values))
{
    check_grid(grid_, "Table1D");
    if (values_.size() != grid_.size()) throw std::invalid_argument("Table1D: grid/value size mismatch");
    for (double v : values_)
        if (!std::isfinite(v)) throw std::invalid_argument("Table1D: non-finite value");
}

double Table1D::operator()(double x) const
{
    auto [i, w] = locate(grid_, x);
    return values_[i] + w * (values_[i + 1] - values_[i]);
}

Table2D::Table2D(std::vector<double> x_grid, std::vector<double> y_grid, std::vector<double> values)
    : x_(std::move(x_grid)), y_(std::move(y_grid)), values_(std::move(values))
{
    check_grid(x_, "Table2D x");
    check_grid(y_, "Table2D y");
    if (values_.size() != x_.size() * y_.size()) throw std::invalid_argument("Table2D: value matrix size mismatch");
    for (double v : values_)
        if (!std::isfinite(v)) throw std::invalid_argument("Table2D: non-finite value");
}

double Table2D::operator()(double x, double y) const
{
    auto [i, wx] = locate(x_, x);
    auto [j, wy] = locate(y_, y);
    const std::size_t ny = y_.size();
    const double v00 = values_[i * ny + j];
    const double v01 = values_[i * ny + j + 1];
    const double v10 = values_[(i + 1) * ny + j];
    const double v11 = values_[(i + 1) * ny + j + 1];
    const double a = v00 + wy * (v01 - v00);
    const double b = v10 + wy * (v11 - v10);
    return a + wx * (b - a);
}

double Table2D::min_value() const { return *std::min_element(values_.begin(), values_.end()); }
double Table2D::max_value() const { return *std::max_element(values_.begin(), values_.end()); }

std::vector<double> linspace(double lo, double hi, std::size_t count)
{
    std::vector<double> out;
    if (count == 0) return out;
    out.reserve(count);
    if (count == 1) {
        out.push_back(lo);
        return out;
    }
    const double span = hi - lo;
    const double denom = static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back(lo + span * (static_cast<double>(i) / denom));
    out.back() = hi;
    return out;
}

}  // namespace emslab
