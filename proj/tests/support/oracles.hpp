#pragma once

// Independent reference implementations used as test oracles. Everything here
// is deliberately naive and kept separate from the library code paths it
// checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "certilev/erp.hpp"
#include "certilev/mat.hpp"
#include "certilev/model.hpp"
#include "certilev/rng.hpp"
#include "certilev/textcore.hpp"

namespace oracles {

using certilev::Mat;
using certilev::NormOrder;
using certilev::Rng;
using certilev::Sentence;
using certilev::Vec;

// Edit distance straight from the recursive definition (memoized).
inline int levenshtein_recursive(const Sentence& a, const Sentence& b) {
    std::map<std::pair<size_t, size_t>, int> memo;
    std::function<int(size_t, size_t)> rec = [&](size_t i, size_t j) -> int {
        if (i == a.size()) return static_cast<int>(b.size() - j);
        if (j == b.size()) return static_cast<int>(a.size() - i);
        auto key = std::make_pair(i, j);
        auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        int res;
        if (a[i] == b[j]) {
            res = rec(i + 1, j + 1);
        } else {
            res = 1 + std::min({rec(i + 1, j + 1), rec(i + 1, j), rec(i, j + 1)});
        }
        memo[key] = res;
        return res;
    };
    return rec(0, 0);
}

// Full-matrix dynamic program, independent of the two-row production version.
inline int levenshtein_full_matrix(const Sentence& a, const Sentence& b) {
    const size_t m = a.size(), n = b.size();
    std::vector<std::vector<int>> d(m + 1, std::vector<int>(n + 1, 0));
    for (size_t i = 0; i <= m; ++i) d[i][0] = static_cast<int>(i);
    for (size_t j = 0; j <= n; ++j) d[0][j] = static_cast<int>(j);
    for (size_t i = 1; i <= m; ++i)
        for (size_t j = 1; j <= n; ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                                d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    return d[m][n];
}

// Every non-empty sentence over [vocab) with length in [1, max_len].
inline std::vector<Sentence> all_sentences(int vocab, int max_len) {
    std::vector<Sentence> out;
    std::vector<Sentence> frontier{{}};
    for (int len = 1; len <= max_len; ++len) {
        std::vector<Sentence> next;
        for (const Sentence& s : frontier)
            for (int c = 0; c < vocab; ++c) {
                Sentence q = s;
                q.push_back(c);
                next.push_back(q);
            }
        out.insert(out.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return out;
}

// Exhaustive radius-1 ball by definitional filter (excluding the empty
// sentence): every sentence with length within +-1 at edit distance <= 1.
inline std::vector<Sentence> ball_by_filter(const Sentence& s, int vocab) {
    std::vector<Sentence> out;
    const int m = static_cast<int>(s.size());
    for (const Sentence& q : all_sentences(vocab, m + 1)) {
        if (static_cast<int>(q.size()) < m - 1) continue;
        if (levenshtein_full_matrix(s, q) <= 1) out.push_back(q);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Reference convolution written directly over the padded input: pad q-1 zero
// rows on both sides, window t = 0..q-1, output row i = sum_t K[t] pad[i+t].
inline Mat conv_reference(const Mat& input, const certilev::KernelTensor& kernel) {
    const int q = static_cast<int>(kernel.size());
    const int k = kernel[0].rows();
    const int r = kernel[0].cols();
    const int m = input.rows();
    Mat padded(m + 2 * (q - 1), r);
    for (int i = 0; i < m; ++i)
        for (int c = 0; c < r; ++c) padded(i + q - 1, c) = input(i, c);
    Mat out(m + q - 1, k);
    for (int i = 0; i < out.rows(); ++i)
        for (int t = 0; t < q; ++t)
            for (int f = 0; f < k; ++f)
                for (int c = 0; c < r; ++c) out(i, f) += kernel[t](f, c) * padded(i + t, c);
    return out;
}

// Straight-line classifier forward, plain mode only.
inline Vec forward_reference(const certilev::ConvTextClassifier& model, const Sentence& s) {
    Mat z(static_cast<int>(s.size()), model.shape.embed_dim);
    for (size_t i = 0; i < s.size(); ++i)
        for (int c = 0; c < model.shape.embed_dim; ++c)
            z(static_cast<int>(i), c) = model.embedding(s[i], c);
    for (const auto& tensor : model.kernels) {
        Mat h = conv_reference(z, tensor);
        for (size_t i = 0; i < h.size(); ++i) h.data()[i] = std::max(0.0, h.data()[i]);
        z = std::move(h);
    }
    Vec pooled(static_cast<size_t>(model.shape.hidden), 0.0);
    for (int i = 0; i < z.rows(); ++i)
        for (int c = 0; c < model.shape.hidden; ++c) pooled[static_cast<size_t>(c)] += z(i, c);
    Vec logits(static_cast<size_t>(model.shape.classes), 0.0);
    for (int o = 0; o < model.shape.classes; ++o)
        for (int c = 0; c < model.shape.hidden; ++c)
            logits[static_cast<size_t>(o)] += pooled[static_cast<size_t>(c)] * model.head(c, o);
    return logits;
}

// Largest singular value through a Jacobi eigenvalue sweep of M^T M,
// independent of power iteration.
inline double spectral_norm_jacobi(const Mat& m) {
    const int n = m.cols();
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int r = 0; r < m.rows(); ++r) s += m(r, i) * m(r, j);
            a[i][j] = s;
        }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = 0.5 * std::atan2(2 * a[p][q], a[q][q] - a[p][p]);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int i = 0; i < n; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
            }
    }
    double lam = 0;
    for (int i = 0; i < n; ++i) lam = std::max(lam, a[i][i]);
    return std::sqrt(std::max(0.0, lam));
}

// Closed-form 2x2 spectral norm from the characteristic polynomial of M^T M.
inline double spectral_norm_2x2(double a, double b, double c, double d) {
    const double t = a * a + b * b + c * c + d * d;
    const double det = a * d - b * c;
    const double disc = std::sqrt(std::max(0.0, t * t - 4 * det * det));
    return std::sqrt(0.5 * (t + disc));
}

inline Sentence random_sentence(Rng& rng, int vocab, int min_len, int max_len) {
    const int len = rng.next_int(min_len, max_len);
    Sentence s(static_cast<size_t>(len));
    for (int& t : s) t = rng.next_int(0, vocab - 1);
    return s;
}

inline Mat random_mat(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
    Mat m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

inline Mat one_hot_rows(const Sentence& s, int vocab) {
    Mat m(static_cast<int>(s.size()), vocab);
    for (size_t i = 0; i < s.size(); ++i) m(static_cast<int>(i), s[i]) = 1.0;
    return m;
}

// Applies `edits` random single-token edits (sub/del/ins), keeping the
// sentence non-empty.
inline Sentence random_perturbation(Rng& rng, const Sentence& s, int vocab, int edits) {
    Sentence q = s;
    for (int e = 0; e < edits; ++e) {
        const int kind = rng.next_int(0, 2);
        const int m = static_cast<int>(q.size());
        if (kind == 0) { // substitute
            q[static_cast<size_t>(rng.next_int(0, m - 1))] = rng.next_int(0, vocab - 1);
        } else if (kind == 1 && m > 1) { // delete
            q.erase(q.begin() + rng.next_int(0, m - 1));
        } else { // insert
            q.insert(q.begin() + rng.next_int(0, m), rng.next_int(0, vocab - 1));
        }
    }
    return q;
}

} // namespace oracles
