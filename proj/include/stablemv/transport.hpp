#pragma once

// Exact discrete optimal transport: transportation simplex (MODI pricing) on
// a spanning-tree basis, started from the north-west corner rule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "stablemv/errors.hpp"

namespace stablemv::ot {

struct Plan {
    double cost = 0.0;
    // Basic cells (row, col, flow); zero-flow cells may appear under degeneracy.
    struct Cell {
        std::size_t row, col;
        double flow;
    };
    std::vector<Cell> cells;
    std::size_t pivots = 0;
};

// cost is row-major n x m.
inline Plan solve(std::span<const double> supply, std::span<const double> demand, std::span<const double> cost) {
    const std::size_t n = supply.size(), m = demand.size();
    if (n == 0 || m == 0) throw EmptyDataError("transport problem with an empty side");
    if (cost.size() != n * m) throw DomainError("cost matrix has wrong size");

    double cmax = 0.0;
    for (double c : cost) {
        if (!std::isfinite(c)) throw NumericalError("non-finite transport cost");
        cmax = std::max(cmax, std::abs(c));
    }
    const double tol = 1e-13 * std::max(1.0, cmax);

    // Basis: n + m - 1 cells. Node ids: rows [0,n), cols [n, n+m).
    std::vector<Plan::Cell> basis;
    basis.reserve(n + m - 1);
    {
        std::vector<double> a(supply.begin(), supply.end()), b(demand.begin(), demand.end());
        std::size_t i = 0, j = 0;
        while (true) {
            const double f = std::min(a[i], b[j]);
            basis.push_back({i, j, f});
            a[i] -= f;
            b[j] -= f;
            if (i == n - 1 && j == m - 1) break;
            if (i == n - 1) ++j;
            else if (j == m - 1) ++i;
            else if (a[i] <= b[j]) ++i;
            else ++j;
        }
    }

    const std::size_t nodes = n + m;
    std::vector<double> pot(nodes);
    std::vector<std::vector<std::size_t>> adj(nodes);  // basis cell indices per node
    std::vector<std::size_t> parent_cell(nodes), order;
    std::vector<char> seen(nodes);
    order.reserve(nodes);

    auto other = [&](const Plan::Cell& c, std::size_t node) { return node < n ? n + c.col : c.row; };

    auto rebuild = [&] {
        for (auto& v : adj) v.clear();
        for (std::size_t e = 0; e < basis.size(); ++e) {
            adj[basis[e].row].push_back(e);
            adj[n + basis[e].col].push_back(e);
        }
    };

    // BFS from row 0 computing potentials u_i + v_j = c_ij and the parent tree.
    auto potentials = [&] {
        std::fill(seen.begin(), seen.end(), 0);
        order.clear();
        order.push_back(0);
        seen[0] = 1;
        pot[0] = 0.0;
        parent_cell[0] = std::numeric_limits<std::size_t>::max();
        for (std::size_t h = 0; h < order.size(); ++h) {
            const std::size_t u = order[h];
            for (std::size_t e : adj[u]) {
                const std::size_t w = other(basis[e], u);
                if (seen[w]) continue;
                seen[w] = 1;
                parent_cell[w] = e;
                pot[w] = cost[basis[e].row * m + basis[e].col] - pot[u];
                order.push_back(w);
            }
        }
        if (order.size() != nodes) throw NumericalError("transport basis lost connectivity");
    };

    std::vector<std::size_t> depth(nodes);
    const std::size_t max_pivots = 50 * (n + m) * (n + m) + 1000;
    std::size_t pivots = 0;
    rebuild();
    for (;;) {
        potentials();
        // Most negative reduced cost.
        double best = -tol;
        std::size_t bi = n, bj = m;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = pot[i];
            const double* crow = cost.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) {
                const double r = crow[j] - u - pot[n + j];
                if (r < best) {
                    best = r;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi == n) break;
        if (++pivots > max_pivots) throw NumericalError("transport simplex exceeded its pivot budget");

        // Tree path between row bi and column bj via the BFS parents.
        for (std::size_t h = 0; h < order.size(); ++h) {
            const std::size_t u = order[h];
            depth[u] = h == 0 ? 0 : depth[other(basis[parent_cell[u]], u)] + 1;
        }
        std::vector<std::size_t> from_row, from_col;  // cell indices
        std::size_t a = bi, b = n + bj;
        while (a != b) {
            if (depth[a] >= depth[b]) {
                const std::size_t e = parent_cell[a];
                from_row.push_back(e);
                a = other(basis[e], a);
            } else {
                const std::size_t e = parent_cell[b];
                from_col.push_back(e);
                b = other(basis[e], b);
            }
        }
        // Cycle: entering (+), then walk col bj -> ... -> row bi alternating signs.
        std::vector<std::size_t> cycle(from_col.begin(), from_col.end());
        cycle.insert(cycle.end(), from_row.rbegin(), from_row.rend());
        // cycle[0] touches column bj: sign -, cycle[1]: +, ...
        double theta = std::numeric_limits<double>::infinity();
        std::size_t leave = basis.size();
        for (std::size_t q = 0; q < cycle.size(); q += 2) {
            const double f = basis[cycle[q]].flow;
            if (f < theta) {
                theta = f;
                leave = cycle[q];
            }
        }
        for (std::size_t q = 0; q < cycle.size(); ++q) {
            auto& c = basis[cycle[q]];
            c.flow += (q % 2 == 0) ? -theta : theta;
            if (c.flow < 0.0) c.flow = 0.0;
        }
        basis[leave] = {bi, bj, theta};
        rebuild();
    }

    Plan plan;
    plan.pivots = pivots;
    plan.cells = basis;
    for (const auto& c : basis) plan.cost += c.flow * cost[c.row * m + c.col];
    return plan;
}

}  // namespace stablemv::ot
