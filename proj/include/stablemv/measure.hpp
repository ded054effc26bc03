#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stablemv/csv.hpp"
#include "stablemv/errors.hpp"
#include "stablemv/grid.hpp"

namespace stablemv {

// Finitely supported probability measure on R^d. Atoms are stored flat,
// dim entries each.
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;

    EmpiricalMeasure(int dim, std::vector<double> atoms, std::vector<double> weights)
        : dim_(dim), atoms_(std::move(atoms)), weights_(std::move(weights)) {
        validate();
    }

    // Equal weights 1/n.
    static EmpiricalMeasure uniform(int dim, std::vector<double> atoms) {
        if (dim < 1) throw DomainError("measure dimension must be >= 1");
        const std::size_t n = atoms.size() / static_cast<std::size_t>(dim);
        if (n == 0) throw EmptyDataError("measure needs at least one atom");
        std::vector<double> w(n, 1.0 / static_cast<double>(n));
        return EmpiricalMeasure(dim, std::move(atoms), std::move(w));
    }

    static EmpiricalMeasure dirac(std::vector<double> point) {
        const int d = static_cast<int>(point.size());
        return EmpiricalMeasure(d, std::move(point), {1.0});
    }

    int dim() const { return dim_; }
    std::size_t size() const { return weights_.size(); }
    std::span<const double> atom(std::size_t i) const {
        return {atoms_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
    }
    double weight(std::size_t i) const { return weights_[i]; }
    const std::vector<double>& atoms() const { return atoms_; }
    const std::vector<double>& weights() const { return weights_; }

    std::vector<double> mean() const {
        std::vector<double> m(static_cast<std::size_t>(dim_), 0.0);
        for (std::size_t i = 0; i < size(); ++i)
            for (int c = 0; c < dim_; ++c) m[static_cast<std::size_t>(c)] += weights_[i] * atom(i)[static_cast<std::size_t>(c)];
        return m;
    }

    bool operator==(const EmpiricalMeasure&) const = default;

private:
    void validate() const {
        if (dim_ < 1) throw DomainError("measure dimension must be >= 1");
        if (weights_.empty()) throw EmptyDataError("measure needs at least one atom");
        if (atoms_.size() != weights_.size() * static_cast<std::size_t>(dim_))
            throw DomainError("atom array size does not match weights x dim");
        for (double x : atoms_)
            if (!std::isfinite(x)) throw DomainError("measure atoms must be finite");
        // Kahan sum so that 1e-12 is meaningful for large supports.
        double s = 0.0, comp = 0.0;
        for (double w : weights_) {
            if (!(w >= 0.0)) throw DomainError("measure weights must be nonnegative");
            const double y = w - comp;
            const double t = s + y;
            comp = (t - s) - y;
            s = t;
        }
        if (std::abs(s - 1.0) > 1e-12) throw DomainError("measure weights sum to " + csv::format(s) + ", not 1");
    }

    int dim_ = 1;
    std::vector<double> atoms_;
    std::vector<double> weights_;
};

// One measure per grid node.
struct MeasureFlow {
    TimeGrid grid;
    std::vector<EmpiricalMeasure> nodes;

    MeasureFlow() = default;
    MeasureFlow(TimeGrid g, std::vector<EmpiricalMeasure> ms) : grid(std::move(g)), nodes(std::move(ms)) {
        if (nodes.size() != grid.size()) throw GridAlignmentError("flow needs one measure per grid node");
    }

    static MeasureFlow constant(const TimeGrid& g, const EmpiricalMeasure& m) {
        return MeasureFlow(g, std::vector<EmpiricalMeasure>(g.size(), m));
    }

    const EmpiricalMeasure& operator[](std::size_t i) const { return nodes[i]; }
    std::size_t size() const { return nodes.size(); }
    int dim() const { return nodes.front().dim(); }
    bool operator==(const MeasureFlow&) const = default;
};

inline double moment(const EmpiricalMeasure& g, double p) {
    if (!(p > 0.0)) throw DomainError("moment order must be > 0");
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double r2 = 0.0;
        for (double x : g.atom(i)) r2 += x * x;
        s += g.weight(i) * std::pow(r2, p / 2.0);
    }
    return s;
}

// Columns weight,x_1..x_d.
inline void write_measure_csv(std::ostream& out, const EmpiricalMeasure& g) {
    csv::Writer w(out);
    std::vector<std::string> cols{"weight"};
    for (int c = 1; c <= g.dim(); ++c) cols.push_back("x_" + std::to_string(c));
    w.header(cols);
    for (std::size_t i = 0; i < g.size(); ++i) {
        std::vector<double> row{g.weight(i)};
        for (double x : g.atom(i)) row.push_back(x);
        w.row(row);
    }
}

inline EmpiricalMeasure read_measure_csv(std::istream& in) {
    const auto t = csv::read_numeric(in);
    if (t.header.size() < 2 || t.header.front() != "weight")
        throw DomainError("measure CSV must have columns weight,x_1..x_d");
    const int d = static_cast<int>(t.header.size()) - 1;
    std::vector<double> atoms, weights;
    for (const auto& row : t.rows) {
        weights.push_back(row[0]);
        atoms.insert(atoms.end(), row.begin() + 1, row.end());
    }
    if (weights.empty()) throw EmptyDataError("measure CSV has no rows");
    return EmpiricalMeasure(d, std::move(atoms), std::move(weights));
}

// Columns t,x_1..x_d,weight; one row per atom per node.
inline void write_flow_csv(std::ostream& out, const MeasureFlow& f) {
    csv::Writer w(out);
    std::vector<std::string> cols{"t"};
    for (int c = 1; c <= f.dim(); ++c) cols.push_back("x_" + std::to_string(c));
    cols.emplace_back("weight");
    w.header(cols);
    for (std::size_t j = 0; j < f.size(); ++j) {
        const auto& g = f[j];
        for (std::size_t i = 0; i < g.size(); ++i) {
            std::vector<double> row{f.grid[j]};
            for (double x : g.atom(i)) row.push_back(x);
            row.push_back(g.weight(i));
            w.row(row);
        }
    }
}

}  // namespace stablemv
