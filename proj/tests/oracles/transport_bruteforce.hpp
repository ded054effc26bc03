#pragma once

// Exhaustive transportation LP: every vertex of the transportation polytope is
// the unique flow on a spanning tree of the bipartite row/column graph, so the
// optimum is the cheapest nonnegative tree flow. Trees are enumerated by
// depth-first search over cells with cycle pruning, flows by leaf peeling.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

class BruteForceTransport {
public:
    // supply (n), demand (m), costs[c] row-major n x m, one result per cost matrix.
    BruteForceTransport(std::vector<double> supply, std::vector<double> demand, std::vector<std::vector<double>> costs)
        : n_(supply.size()), m_(demand.size()), supply_(std::move(supply)), demand_(std::move(demand)),
          costs_(std::move(costs)), best_(costs_.size(), std::numeric_limits<double>::infinity()) {
        std::vector<int> parent(n_ + m_);
        for (std::size_t v = 0; v < parent.size(); ++v) parent[v] = static_cast<int>(v);
        search(0, parent);
    }

    const std::vector<double>& optimum() const { return best_; }
    std::size_t trees() const { return trees_; }
    std::size_t feasible_trees() const { return feasible_; }

private:
    static int find(std::vector<int>& p, int v) {
        while (p[static_cast<std::size_t>(v)] != v) v = p[static_cast<std::size_t>(v)];
        return v;
    }

    void search(std::size_t cell, std::vector<int> parent) {
        const std::size_t need = n_ + m_ - 1;
        if (chosen_.size() == need) {
            evaluate();
            return;
        }
        const std::size_t cells = n_ * m_;
        if (cell == cells || cells - cell < need - chosen_.size()) return;
        const int r = find(parent, static_cast<int>(cell / m_));
        const int c = find(parent, static_cast<int>(n_ + cell % m_));
        if (r != c) {
            auto next = parent;
            next[static_cast<std::size_t>(r)] = c;
            chosen_.push_back(cell);
            search(cell + 1, std::move(next));
            chosen_.pop_back();
        }
        search(cell + 1, std::move(parent));
    }

    void evaluate() {
        ++trees_;
        const std::size_t nodes = n_ + m_;
        std::vector<double> rest(nodes);
        for (std::size_t i = 0; i < n_; ++i) rest[i] = supply_[i];
        for (std::size_t j = 0; j < m_; ++j) rest[n_ + j] = demand_[j];
        std::vector<int> degree(nodes, 0);
        std::vector<bool> used(chosen_.size(), false);
        for (std::size_t cell : chosen_) {
            ++degree[cell / m_];
            ++degree[n_ + cell % m_];
        }
        std::vector<double> flow(chosen_.size(), 0.0);
        for (std::size_t done = 0; done < chosen_.size(); ++done) {
            bool peeled = false;
            for (std::size_t e = 0; e < chosen_.size() && !peeled; ++e) {
                if (used[e]) continue;
                const std::size_t a = chosen_[e] / m_, b = n_ + chosen_[e] % m_;
                std::size_t leaf = nodes, other = nodes;
                if (degree[a] == 1) {
                    leaf = a;
                    other = b;
                } else if (degree[b] == 1) {
                    leaf = b;
                    other = a;
                }
                if (leaf == nodes) continue;
                flow[e] = rest[leaf];
                rest[other] -= rest[leaf];
                rest[leaf] = 0.0;
                --degree[leaf];
                --degree[other];
                used[e] = true;
                peeled = true;
            }
            if (!peeled) return;
        }
        for (double f : flow)
            if (f < -1e-12) return;
        ++feasible_;
        for (std::size_t k = 0; k < costs_.size(); ++k) {
            double total = 0.0;
            for (std::size_t e = 0; e < chosen_.size(); ++e) total += flow[e] * costs_[k][chosen_[e]];
            best_[k] = std::min(best_[k], total);
        }
    }

    std::size_t n_, m_;
    std::vector<double> supply_, demand_;
    std::vector<std::vector<double>> costs_;
    std::vector<double> best_;
    std::vector<std::size_t> chosen_;
    std::size_t trees_ = 0, feasible_ = 0;
};

}  // namespace oracle
