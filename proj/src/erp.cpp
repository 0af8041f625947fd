#include "certilev/erp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace certilev {

NormOrder holder_conjugate(NormOrder p) {
    switch (p) {
        case NormOrder::p1: return NormOrder::pinf;
        case NormOrder::p2: return NormOrder::p2;
        case NormOrder::pinf: return NormOrder::p1;
    }
    throw std::logic_error("bad NormOrder");
}

std::string norm_name(NormOrder p) {
    switch (p) {
        case NormOrder::p1: return "1";
        case NormOrder::p2: return "2";
        case NormOrder::pinf: return "inf";
    }
    throw std::logic_error("bad NormOrder");
}

NormOrder norm_from_name(const std::string& name) {
    if (name == "1") return NormOrder::p1;
    if (name == "2") return NormOrder::p2;
    if (name == "inf" || name == "Inf" || name == "INF") return NormOrder::pinf;
    throw std::runtime_error("unknown norm order '" + name + "' (expected 1, 2 or inf)");
}

double vec_norm(const double* x, int d, NormOrder p) {
    switch (p) {
        case NormOrder::p1: {
            double s = 0;
            for (int i = 0; i < d; ++i) s += std::abs(x[i]);
            return s;
        }
        case NormOrder::p2: {
            double s = 0;
            for (int i = 0; i < d; ++i) s += x[i] * x[i];
            return std::sqrt(s);
        }
        case NormOrder::pinf: {
            double s = 0;
            for (int i = 0; i < d; ++i) s = std::max(s, std::abs(x[i]));
            return s;
        }
    }
    throw std::logic_error("bad NormOrder");
}

double vec_norm(const Vec& x, NormOrder p) {
    return vec_norm(x.data(), static_cast<int>(x.size()), p);
}

double vec_diff_norm(const double* x, const double* y, int d, NormOrder p) {
    switch (p) {
        case NormOrder::p1: {
            double s = 0;
            for (int i = 0; i < d; ++i) s += std::abs(x[i] - y[i]);
            return s;
        }
        case NormOrder::p2: {
            double s = 0;
            for (int i = 0; i < d; ++i) {
                double t = x[i] - y[i];
                s += t * t;
            }
            return std::sqrt(s);
        }
        case NormOrder::pinf: {
            double s = 0;
            for (int i = 0; i < d; ++i) s = std::max(s, std::abs(x[i] - y[i]));
            return s;
        }
    }
    throw std::logic_error("bad NormOrder");
}

double erp_distance(const VecSequence& a, const VecSequence& b, NormOrder p) {
    const int m = a.rows();
    const int n = b.rows();
    if (m > 0 && n > 0 && a.cols() != b.cols())
        throw std::runtime_error("erp_distance: dimension mismatch (" +
                                 std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
    const int d = m > 0 ? a.cols() : b.cols();

    std::vector<double> a_norm(static_cast<size_t>(m)), b_norm(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) a_norm[i] = vec_norm(a.row(i), d, p);
    for (int j = 0; j < n; ++j) b_norm[j] = vec_norm(b.row(j), d, p);

    // cell (i,j) = distance between the first i rows of a and first j rows of b;
    // borders are prefix norm sums, two-row rolling update
    std::vector<double> prev(static_cast<size_t>(n) + 1), cur(static_cast<size_t>(n) + 1);
    prev[0] = 0;
    for (int j = 1; j <= n; ++j) prev[j] = prev[j - 1] + b_norm[j - 1];
    for (int i = 1; i <= m; ++i) {
        cur[0] = prev[0] + a_norm[i - 1];
        for (int j = 1; j <= n; ++j) {
            double del_a = a_norm[i - 1] + prev[j];
            double del_b = b_norm[j - 1] + cur[j - 1];
            double match = vec_diff_norm(a.row(i - 1), b.row(j - 1), d, p) + prev[j - 1];
            cur[j] = std::min({del_a, del_b, match});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

double erp_padding_oracle(const VecSequence& a, const VecSequence& b, NormOrder p) {
    const int m = a.rows();
    const int n = b.rows();
    if (m + n > 10) throw std::runtime_error("erp_padding_oracle: m+n must be <= 10");
    if (m > 0 && n > 0 && a.cols() != b.cols())
        throw std::runtime_error("erp_padding_oracle: dimension mismatch");
    const int len = m + n;
    if (len == 0) return 0.0;
    const int d = m > 0 ? a.cols() : b.cols();

    // a placement is a bitmask of the slots holding real rows (in order);
    // all other slots hold zero rows
    std::vector<uint32_t> a_masks, b_masks;
    for (uint32_t mask = 0; mask < (1u << len); ++mask) {
        int pc = std::popcount(mask);
        if (pc == m) a_masks.push_back(mask);
        if (pc == n) b_masks.push_back(mask);
    }

    const Vec zero(static_cast<size_t>(d), 0.0);
    auto slot_row = [&](const VecSequence& s, uint32_t mask, int slot, int& next) -> const double* {
        if (mask & (1u << slot)) return s.row(next++);
        return zero.data();
    };

    double best = std::numeric_limits<double>::infinity();
    for (uint32_t ma : a_masks) {
        for (uint32_t mb : b_masks) {
            double cost = 0;
            int ia = 0, ib = 0;
            for (int slot = 0; slot < len; ++slot) {
                const double* ra = slot_row(a, ma, slot, ia);
                const double* rb = slot_row(b, mb, slot, ib);
                cost += vec_diff_norm(ra, rb, d, p);
                if (cost >= best) break;
            }
            best = std::min(best, cost);
        }
    }
    return best;
}

} // namespace certilev
