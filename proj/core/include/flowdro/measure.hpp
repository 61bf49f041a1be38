#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flowdro/dense_array.hpp"

namespace flowdro {

class Rng;

/// Weighted point cloud. Points are rows of an n x d array; weights sum to 1;
/// an optional integer label rides along with each point.
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;
    /// Uniform weights when `weights` is empty. Weights are validated, not
    /// renormalized.
    explicit EmpiricalMeasure(ad::DenseArray points, std::vector<double> weights = {}, std::vector<int> labels = {});

    static EmpiricalMeasure from_rows(std::size_t dim, std::vector<double> flat, std::vector<int> labels = {});

    std::size_t size() const { return points_.rows(); }
    std::size_t dim() const { return points_.cols(); }
    std::span<const double> point(std::size_t i) const { return points_.row(i); }
    const ad::DenseArray& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }
    double weight(std::size_t i) const { return weights_[i]; }
    bool is_uniform(double tol = 1e-12) const;

    bool has_labels() const { return !labels_.empty(); }
    const std::vector<int>& labels() const { return labels_; }
    int label(std::size_t i) const { return labels_.at(i); }
    /// Sorted distinct labels.
    std::vector<int> distinct_labels() const;

    /// Same weights and labels, new point coordinates (same n x d).
    EmpiricalMeasure with_points(ad::DenseArray points) const;
    EmpiricalMeasure with_labels(std::vector<int> labels) const;
    /// Rows at `indices`; weights renormalized.
    EmpiricalMeasure subset(std::span<const std::size_t> indices) const;
    EmpiricalMeasure filter_label(int label) const;
    /// Indices of points carrying `label`.
    std::vector<std::size_t> indices_with_label(int label) const;

    /// Weighted mean of each coordinate.
    std::vector<double> mean() const;
    /// Weighted mean of squared norms.
    double second_moment() const;

private:
    ad::DenseArray points_;
    std::vector<double> weights_;
    std::vector<int> labels_;
};

/// Diagonal Gaussian N(mean, diag(variances)).
struct DiagGaussian {
    std::vector<double> mean;
    std::vector<double> variances;

    DiagGaussian(std::vector<double> mean, std::vector<double> variances);
    std::size_t dim() const { return mean.size(); }
    EmpiricalMeasure sample(std::size_t count, Rng& rng) const;
};

/// Resample (without replacement) to `count` points; uniform weights.
EmpiricalMeasure subsample(const EmpiricalMeasure& m, std::size_t count, Rng& rng);

/// Concatenate measures of equal dimension; weights proportional to point counts.
EmpiricalMeasure concatenate(const std::vector<EmpiricalMeasure>& parts);

// Point-cloud CSV: header dim0,...,dim{d-1}[,weight][,label]. Weight column
// optional (uniform assumed); label column optional.
EmpiricalMeasure read_point_csv(std::istream& in);
EmpiricalMeasure read_point_csv(const std::string& path);
void write_point_csv(const EmpiricalMeasure& m, std::ostream& out, bool with_weights = true);
void write_point_csv(const EmpiricalMeasure& m, const std::string& path, bool with_weights = true);

}  // namespace flowdro
