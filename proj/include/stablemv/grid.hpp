#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stablemv/errors.hpp"

namespace stablemv {

// Nodes 0 = t_0 < t_1 < ... < t_n = T.
class TimeGrid {
public:
    TimeGrid() : nodes_{0.0} {}

    explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
        if (nodes_.empty() || nodes_.front() != 0.0) throw DomainError("time grid must start exactly at 0");
        for (std::size_t i = 1; i < nodes_.size(); ++i) {
            if (!(nodes_[i] > nodes_[i - 1]) || !std::isfinite(nodes_[i]))
                throw DomainError("time grid must be strictly increasing and finite");
        }
    }

    static TimeGrid uniform(double horizon, std::size_t steps) {
        if (!(horizon > 0.0) || steps == 0) throw DomainError("uniform grid needs T > 0 and >= 1 step");
        std::vector<double> nodes(steps + 1);
        for (std::size_t i = 0; i <= steps; ++i)
            nodes[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
        nodes.back() = horizon;
        return TimeGrid(std::move(nodes));
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t steps() const { return nodes_.size() - 1; }
    double horizon() const { return nodes_.back(); }
    double operator[](std::size_t i) const { return nodes_[i]; }
    double dt(std::size_t i) const { return nodes_[i + 1] - nodes_[i]; }
    const std::vector<double>& nodes() const { return nodes_; }

    // Index of the node equal to t (relative tolerance 1e-12).
    std::size_t index_of(double t) const {
        const double tol = 1e-12 * std::max(1.0, horizon());
        std::size_t lo = 0, hi = nodes_.size();
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (nodes_[mid] < t - tol) lo = mid + 1;
            else hi = mid;
        }
        if (lo == nodes_.size() || std::abs(nodes_[lo] - t) > tol)
            throw GridAlignmentError("time " + std::to_string(t) + " is not a grid node");
        return lo;
    }

    bool operator==(const TimeGrid&) const = default;

private:
    std::vector<double> nodes_;
};

}  // namespace stablemv
