#include <doctest.h>

#include <cmath>

#include "certilev/erp.hpp"
#include "certilev/textcore.hpp"
#include "support/oracles.hpp"

using namespace certilev;

namespace {

const NormOrder kAllNorms[] = {NormOrder::p1, NormOrder::p2, NormOrder::pinf};

} // namespace

TEST_CASE("vector norms") {
    Vec x{3, 4};
    CHECK(vec_norm(x, NormOrder::p2) == doctest::Approx(5.0));
    Vec y{3, -4};
    CHECK(vec_norm(y, NormOrder::p1) == doctest::Approx(7.0));
    CHECK(vec_norm(y, NormOrder::pinf) == doctest::Approx(4.0));
}

TEST_CASE("holder conjugates") {
    CHECK(holder_conjugate(NormOrder::p1) == NormOrder::pinf);
    CHECK(holder_conjugate(NormOrder::pinf) == NormOrder::p1);
    CHECK(holder_conjugate(NormOrder::p2) == NormOrder::p2);
}

TEST_CASE("erp distance to the empty sequence is the row norm sum") {
    Rng rng(101);
    for (NormOrder p : kAllNorms) {
        Mat a = oracles::random_mat(rng, 5, 3);
        double want = 0;
        for (int i = 0; i < a.rows(); ++i) want += vec_norm(a.row(i), a.cols(), p);
        CHECK(erp_distance(a, Mat(), p) == doctest::Approx(want).epsilon(1e-12));
        CHECK(erp_distance(Mat(), a, p) == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(erp_distance(Mat(), Mat(), NormOrder::p2) == 0.0);
}

TEST_CASE("erp rejects dimension mismatch") {
    Mat a(2, 3), b(2, 4);
    CHECK_THROWS_WITH(erp_distance(a, b, NormOrder::p1), doctest::Contains("dimension mismatch"));
}

TEST_CASE("erp on one-hot rows at p=inf equals levenshtein") {
    Rng rng(103);
    for (int trial = 0; trial < 500; ++trial) {
        const int vocab = rng.next_int(2, 10);
        Sentence s = oracles::random_sentence(rng, vocab, 1, 20);
        Sentence t = oracles::random_sentence(rng, vocab, 1, 20);
        const double d = erp_distance(oracles::one_hot_rows(s, vocab),
                                      oracles::one_hot_rows(t, vocab), NormOrder::pinf);
        CHECK(d == static_cast<double>(levenshtein(s, t)));
    }
}

TEST_CASE("erp symmetry") {
    Rng rng(107);
    for (int trial = 0; trial < 300; ++trial) {
        const int d = rng.next_int(1, 4);
        Mat a = oracles::random_mat(rng, rng.next_int(0, 7), d);
        Mat b = oracles::random_mat(rng, rng.next_int(0, 7), d);
        for (NormOrder p : kAllNorms)
            CHECK(erp_distance(a, b, p) == doctest::Approx(erp_distance(b, a, p)).epsilon(1e-12));
    }
}

TEST_CASE("erp triangle inequality") {
    Rng rng(109);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = rng.next_int(1, 4);
        Mat a = oracles::random_mat(rng, rng.next_int(1, 6), d);
        Mat b = oracles::random_mat(rng, rng.next_int(1, 6), d);
        Mat c = oracles::random_mat(rng, rng.next_int(1, 6), d);
        for (NormOrder p : kAllNorms)
            CHECK(erp_distance(a, b, p) <= erp_distance(a, c, p) + erp_distance(c, b, p) + 1e-9);
    }
}

TEST_CASE("erp is invariant to zero-row padding") {
    Rng rng(113);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = rng.next_int(1, 4);
        Mat a = oracles::random_mat(rng, rng.next_int(1, 5), d);
        Mat b = oracles::random_mat(rng, rng.next_int(1, 5), d);
        Mat a_pre(a.rows() + 1, d), a_post(a.rows() + 1, d);
        for (int i = 0; i < a.rows(); ++i)
            for (int c = 0; c < d; ++c) {
                a_pre(i + 1, c) = a(i, c);
                a_post(i, c) = a(i, c);
            }
        for (NormOrder p : kAllNorms) {
            const double base = erp_distance(a, b, p);
            CHECK(erp_distance(a_pre, b, p) == doctest::Approx(base).epsilon(1e-12));
            CHECK(erp_distance(a_post, b, p) == doctest::Approx(base).epsilon(1e-12));
        }
    }
}

TEST_CASE("erp is a subdistance: zero against a zero-padded copy") {
    Rng rng(127);
    Mat a = oracles::random_mat(rng, 4, 3);
    Mat padded(5, 3);
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 3; ++c) padded(i, c) = a(i, c);
    for (NormOrder p : kAllNorms) CHECK(erp_distance(a, padded, p) == 0.0);
}

TEST_CASE("erp difference-of-sums bound") {
    Rng rng(131);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = rng.next_int(1, 4);
        Mat a = oracles::random_mat(rng, rng.next_int(1, 6), d);
        Mat b = oracles::random_mat(rng, rng.next_int(1, 6), d);
        Vec sum_diff(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < a.rows(); ++i)
            for (int c = 0; c < d; ++c) sum_diff[static_cast<size_t>(c)] += a(i, c);
        for (int i = 0; i < b.rows(); ++i)
            for (int c = 0; c < d; ++c) sum_diff[static_cast<size_t>(c)] -= b(i, c);
        for (NormOrder p : kAllNorms)
            CHECK(vec_norm(sum_diff, p) <= erp_distance(a, b, p) + 1e-9);
    }
}

TEST_CASE("erp linear-transform bound") {
    Rng rng(137);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = rng.next_int(1, 4);
        const int k = rng.next_int(1, 4);
        Mat a = oracles::random_mat(rng, rng.next_int(1, 5), d);
        Mat b = oracles::random_mat(rng, rng.next_int(1, 5), d);
        Mat v = oracles::random_mat(rng, d, k);
        auto times = [&](const Mat& x) {
            Mat out(x.rows(), k);
            for (int i = 0; i < x.rows(); ++i)
                for (int j = 0; j < k; ++j) {
                    double s = 0;
                    for (int c = 0; c < d; ++c) s += x(i, c) * v(c, j);
                    out(i, j) = s;
                }
            return out;
        };
        for (NormOrder p : kAllNorms) {
            // rows transform as x^T V, so the matrix acting on column vectors is V^T
            Mat vt(k, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < k; ++j) vt(j, i) = v(i, j);
            const double op = induced_opnorm(vt, p);
            CHECK(erp_distance(times(a), times(b), p) <= erp_distance(a, b, p) * op + 1e-9);
        }
    }
}

TEST_CASE("padding oracle basics") {
    CHECK(erp_padding_oracle(Mat(), Mat(), NormOrder::p2) == 0.0);
    Rng rng(139);
    Mat a = oracles::random_mat(rng, 4, 2);
    for (NormOrder p : kAllNorms)
        CHECK(erp_padding_oracle(a, a, p) == doctest::Approx(0.0).epsilon(1e-12));
    Mat big = oracles::random_mat(rng, 6, 2);
    CHECK_THROWS_WITH(erp_padding_oracle(big, big, NormOrder::p1), doctest::Contains("<= 10"));
}

TEST_CASE("erp dynamic program equals the padding oracle on small instances") {
    Rng rng(149);
    int checked = 0;
    while (checked < 200) {
        const int m = rng.next_int(0, 5);
        const int n = rng.next_int(0, 5);
        if (m + n > 8) continue;
        const int d = rng.next_int(1, 3);
        Mat a = oracles::random_mat(rng, m, d);
        Mat b = oracles::random_mat(rng, n, d);
        for (NormOrder p : kAllNorms) {
            const double dp = erp_distance(a, b, p);
            const double oracle = erp_padding_oracle(a, b, p);
            CHECK(std::abs(dp - oracle) < 1e-9);
        }
        ++checked;
    }
}
