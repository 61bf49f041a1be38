#include "flowdro/measure.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro/rng.hpp"

namespace flowdro {

EmpiricalMeasure::EmpiricalMeasure(ad::DenseArray points, std::vector<double> weights, std::vector<int> labels)
    : points_(std::move(points)), weights_(std::move(weights)), labels_(std::move(labels))
{
    FLOWDRO_REQUIRE(points_.rank() == 2, "EmpiricalMeasure: points must be an n x d array");
    const std::size_t n = points_.rows();
    FLOWDRO_REQUIRE(n >= 1, "EmpiricalMeasure: empty measure");
    FLOWDRO_REQUIRE(points_.cols() >= 1, "EmpiricalMeasure: zero dimension");
    if (!points_.all_finite()) throw ValidationError("EmpiricalMeasure: non-finite point coordinates");
    if (weights_.empty()) {
        weights_.assign(n, 1.0 / static_cast<double>(n));
    } else {
        FLOWDRO_REQUIRE(weights_.size() == n, "EmpiricalMeasure: weight count does not match point count");
        double total = 0;
        for (double w : weights_) {
            FLOWDRO_REQUIRE(std::isfinite(w) && w >= 0, "EmpiricalMeasure: weights must be finite and nonnegative");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw ValidationError("EmpiricalMeasure: weights sum to " + format_double(total) + ", expected 1");
    }
    FLOWDRO_REQUIRE(labels_.empty() || labels_.size() == n, "EmpiricalMeasure: label count does not match point count");
}

EmpiricalMeasure EmpiricalMeasure::from_rows(std::size_t dim, std::vector<double> flat, std::vector<int> labels)
{
    FLOWDRO_REQUIRE(dim > 0 && flat.size() % dim == 0, "EmpiricalMeasure::from_rows: size not a multiple of dim");
    const std::size_t n = flat.size() / dim;
    return EmpiricalMeasure(ad::DenseArray({n, dim}, std::move(flat)), {}, std::move(labels));
}

bool EmpiricalMeasure::is_uniform(double tol) const
{
    const double u = 1.0 / static_cast<double>(size());
    return std::all_of(weights_.begin(), weights_.end(), [&](double w) { return std::abs(w - u) <= tol; });
}

std::vector<int> EmpiricalMeasure::distinct_labels() const
{
    std::set<int> s(labels_.begin(), labels_.end());
    return {s.begin(), s.end()};
}

EmpiricalMeasure EmpiricalMeasure::with_points(ad::DenseArray points) const
{
    FLOWDRO_REQUIRE(points.shape() == points_.shape(), "EmpiricalMeasure::with_points: shape mismatch");
    return EmpiricalMeasure(std::move(points), weights_, labels_);
}

EmpiricalMeasure EmpiricalMeasure::with_labels(std::vector<int> labels) const
{
    return EmpiricalMeasure(points_, weights_, std::move(labels));
}

EmpiricalMeasure EmpiricalMeasure::subset(std::span<const std::size_t> indices) const
{
    FLOWDRO_REQUIRE(!indices.empty(), "EmpiricalMeasure::subset: empty index set");
    const std::size_t d = dim();
    std::vector<double> flat;
    flat.reserve(indices.size() * d);
    std::vector<double> w;
    std::vector<int> lbl;
    double total = 0;
    for (auto i : indices) {
        FLOWDRO_REQUIRE(i < size(), "EmpiricalMeasure::subset: index out of range");
        auto p = point(i);
        flat.insert(flat.end(), p.begin(), p.end());
        w.push_back(weights_[i]);
        total += weights_[i];
        if (has_labels()) lbl.push_back(labels_[i]);
    }
    FLOWDRO_REQUIRE(total > 0, "EmpiricalMeasure::subset: selected points carry zero mass");
    const bool uniform = is_uniform();
    for (auto& v : w) v = uniform ? 1.0 / static_cast<double>(indices.size()) : v / total;
    if (!uniform) {
        // Absorb rounding so the sum is exactly representable as 1 within 1e-12.
        const double s = std::accumulate(w.begin(), w.end(), 0.0);
        w.back() += 1.0 - s;
    }
    return EmpiricalMeasure(ad::DenseArray({indices.size(), d}, std::move(flat)), std::move(w), std::move(lbl));
}

std::vector<std::size_t> EmpiricalMeasure::indices_with_label(int label) const
{
    FLOWDRO_REQUIRE(has_labels(), "EmpiricalMeasure: measure has no labels");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] == label) idx.push_back(i);
    return idx;
}

EmpiricalMeasure EmpiricalMeasure::filter_label(int label) const
{
    auto idx = indices_with_label(label);
    FLOWDRO_REQUIRE(!idx.empty(), "EmpiricalMeasure::filter_label: no points with label " + std::to_string(label));
    return subset(idx);
}

std::vector<double> EmpiricalMeasure::mean() const
{
    std::vector<double> m(dim(), 0.0);
    for (std::size_t i = 0; i < size(); ++i) {
        auto p = point(i);
        for (std::size_t j = 0; j < dim(); ++j) m[j] += weights_[i] * p[j];
    }
    return m;
}

double EmpiricalMeasure::second_moment() const
{
    double s = 0;
    for (std::size_t i = 0; i < size(); ++i) {
        double r = 0;
        for (double v : point(i)) r += v * v;
        s += weights_[i] * r;
    }
    return s;
}

DiagGaussian::DiagGaussian(std::vector<double> m, std::vector<double> v) : mean(std::move(m)), variances(std::move(v))
{
    FLOWDRO_REQUIRE(!mean.empty() && mean.size() == variances.size(), "DiagGaussian: mean/variance size mismatch");
    for (double s : variances) FLOWDRO_REQUIRE(s > 0 && std::isfinite(s), "DiagGaussian: variances must be positive");
}

EmpiricalMeasure DiagGaussian::sample(std::size_t count, Rng& rng) const
{
    FLOWDRO_REQUIRE(count > 0, "DiagGaussian::sample: count must be positive");
    std::vector<double> flat(count * dim());
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < dim(); ++j) flat[i * dim() + j] = mean[j] + std::sqrt(variances[j]) * rng.normal();
    return EmpiricalMeasure::from_rows(dim(), std::move(flat));
}

EmpiricalMeasure subsample(const EmpiricalMeasure& m, std::size_t count, Rng& rng)
{
    FLOWDRO_REQUIRE(count >= 1 && count <= m.size(), "subsample: count out of range");
    auto perm = rng.permutation(m.size());
    perm.resize(count);
    std::sort(perm.begin(), perm.end());
    auto sub = m.subset(perm);
    return EmpiricalMeasure(sub.points(), {}, sub.labels());
}

EmpiricalMeasure concatenate(const std::vector<EmpiricalMeasure>& parts)
{
    FLOWDRO_REQUIRE(!parts.empty(), "concatenate: no parts");
    const std::size_t d = parts.front().dim();
    const bool labels = parts.front().has_labels();
    std::vector<double> flat;
    std::vector<int> lbl;
    for (const auto& p : parts) {
        FLOWDRO_REQUIRE(p.dim() == d, "concatenate: dimension mismatch");
        FLOWDRO_REQUIRE(p.has_labels() == labels, "concatenate: mixing labeled and unlabeled parts");
        flat.insert(flat.end(), p.points().values().begin(), p.points().values().end());
        lbl.insert(lbl.end(), p.labels().begin(), p.labels().end());
    }
    return EmpiricalMeasure::from_rows(d, std::move(flat), std::move(lbl));
}

// ---- CSV -------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    return out;
}

double parse_number(const std::string& s, std::size_t line_no)
{
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("point CSV line " + std::to_string(line_no) + ": cannot parse '" + s + "'");
    }
}

}  // namespace

EmpiricalMeasure read_point_csv(std::istream& in)
{
    std::string line;
    FLOWDRO_REQUIRE(static_cast<bool>(std::getline(in, line)), "point CSV: missing header");
    const auto header = split_csv_line(line);
    std::size_t d = 0;
    while (d < header.size() && header[d] == "dim" + std::to_string(d)) ++d;
    FLOWDRO_REQUIRE(d >= 1, "point CSV: header must start with dim0");
    int weight_col = -1;
    int label_col = -1;
    for (std::size_t c = d; c < header.size(); ++c) {
        if (header[c] == "weight" && weight_col < 0)
            weight_col = static_cast<int>(c);
        else if (header[c] == "label" && label_col < 0)
            label_col = static_cast<int>(c);
        else
            throw ValidationError("point CSV: unexpected header column '" + header[c] + "'");
    }
    std::vector<double> flat;
    std::vector<double> weights;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        FLOWDRO_REQUIRE(cells.size() == header.size(),
                        "point CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " columns");
        for (std::size_t j = 0; j < d; ++j) flat.push_back(parse_number(cells[j], line_no));
        if (weight_col >= 0) weights.push_back(parse_number(cells[static_cast<std::size_t>(weight_col)], line_no));
        if (label_col >= 0)
            labels.push_back(static_cast<int>(parse_number(cells[static_cast<std::size_t>(label_col)], line_no)));
    }
    FLOWDRO_REQUIRE(!flat.empty(), "point CSV: no data rows");
    const std::size_t n = flat.size() / d;
    return EmpiricalMeasure(ad::DenseArray({n, d}, std::move(flat)), std::move(weights), std::move(labels));
}

EmpiricalMeasure read_point_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("point CSV: cannot open '" + path + "'");
    return read_point_csv(in);
}

void write_point_csv(const EmpiricalMeasure& m, std::ostream& out, bool with_weights)
{
    for (std::size_t j = 0; j < m.dim(); ++j) out << (j ? "," : "") << "dim" << j;
    if (with_weights) out << ",weight";
    if (m.has_labels()) out << ",label";
    out << '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        auto p = m.point(i);
        for (std::size_t j = 0; j < m.dim(); ++j) out << (j ? "," : "") << format_double(p[j]);
        if (with_weights) out << ',' << format_double(m.weight(i));
        if (m.has_labels()) out << ',' << m.label(i);
        out << '\n';
    }
}

void write_point_csv(const EmpiricalMeasure& m, const std::string& path, bool with_weights)
{
    std::ofstream out(path);
    if (!out) throw ValidationError("point CSV: cannot open '" + path + "' for writing");
    write_point_csv(m, out, with_weights);
}

}  // namespace flowdro
