#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace flowdro::ad {

/// Process-wide default for NaN/Inf trapping. On unless a benchmark turns it off.
bool checked_mode();
void set_checked_mode(bool on);

/// Dense row-major array of doubles. Rank 0 (scalar), 1 or 2 in practice.
class DenseArray {
public:
    DenseArray() = default;
    explicit DenseArray(std::vector<std::size_t> shape, double fill = 0.0);
    DenseArray(std::vector<std::size_t> shape, std::vector<double> data);

    static DenseArray scalar(double v) { return DenseArray({}, std::vector<double>{v}); }
    static DenseArray matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    {
        return DenseArray({rows, cols}, std::move(data));
    }
    static DenseArray zeros_like(const DenseArray& other) { return DenseArray(other.shape_, 0.0); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    /// Leading dimension; 1 for scalars.
    std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
    /// Product of trailing dimensions; 1 for rank <= 1.
    std::size_t cols() const;

    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    double item() const;

    bool same_shape(const DenseArray& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    /// Throws NumericalError naming `what` if any entry is NaN/Inf.
    void require_finite(const std::string& what) const;

    void fill(double v);

    friend bool operator==(const DenseArray&, const DenseArray&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace flowdro::ad
