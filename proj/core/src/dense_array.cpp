#include "flowdro/dense_array.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>

#include "flowdro/error.hpp"

namespace flowdro::ad {
namespace {

std::atomic<bool> g_checked{true};

std::size_t product(const std::vector<std::size_t>& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }
void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }

DenseArray::DenseArray(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill)
{
}

DenseArray::DenseArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    if (product(shape_) != data_.size()) {
        throw ValidationError("DenseArray: shape " + shape_string(shape_) + " does not match " +
                              std::to_string(data_.size()) + " values");
    }
    if (checked_mode()) require_finite("DenseArray construction");
}

std::size_t DenseArray::cols() const
{
    if (shape_.size() <= 1) return 1;
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
}

double DenseArray::item() const
{
    FLOWDRO_REQUIRE(data_.size() == 1, "DenseArray::item on array of size " + std::to_string(data_.size()));
    return data_[0];
}

bool DenseArray::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void DenseArray::require_finite(const std::string& what) const
{
    for (std::size_t k = 0; k < data_.size(); ++k) {
        if (!std::isfinite(data_[k])) {
            throw NumericalError(what + ": non-finite value at flat index " + std::to_string(k));
        }
    }
}

void DenseArray::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const std::vector<std::size_t>& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace flowdro::ad
