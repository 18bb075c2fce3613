#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "aum/fdcheck.hpp"
#include "aum/ssm.hpp"

using namespace aum;

namespace {

template <class T>
struct RandomScanCase {
    Array<T> x, delta, A_log, B, C, d_skip;
};

template <class T>
RandomScanCase<T> random_case(std::size_t L, std::size_t D, std::size_t S, std::uint32_t seed) {
    std::mt19937 rng(seed);
    RandomScanCase<T> c;
    c.x = Array<T>({L, D});
    fill_normal(c.x, rng, T(0), T(1));
    c.delta = Array<T>({L, D});
    std::uniform_real_distribution<double> du(0.001, 0.2);
    for (auto& v : c.delta.data) v = static_cast<T>(du(rng));
    c.A_log = Array<T>({D, S});
    std::uniform_real_distribution<double> da(std::log(0.5), std::log(8.0));
    for (auto& v : c.A_log.data) v = static_cast<T>(da(rng));
    c.B = Array<T>({L, S});
    fill_normal(c.B, rng, T(0), T(1));
    c.C = Array<T>({L, S});
    fill_normal(c.C, rng, T(0), T(1));
    c.d_skip = Array<T>({D});
    fill_normal(c.d_skip, rng, T(0), T(0.5));
    return c;
}

template <class T>
Array<T> neg_exp(const Array<T>& a_log) {
    Array<T> a = a_log;
    for (auto& v : a.data) v = -std::exp(v);
    return a;
}

template <class T>
Array<T> reversed_rows(const Array<T>& a) {
    Array<T> out = a;
    std::size_t L = a.rows(), C = a.cols();
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c) out.at2(t, c) = a.at2(L - 1 - t, c);
    return out;
}

}  // namespace

TEST_CASE("scalar discretization rule") {
    auto [abar, bbar] = discretize_scalar(-1.0, 1.0, std::log(2.0));
    CHECK(abar == doctest::Approx(0.5));
    CHECK(bbar == doctest::Approx(std::log(2.0)));
    auto [a2, b2] = discretize_scalar(-2.0, 3.0, 0.1);
    CHECK(a2 == doctest::Approx(0.818731).epsilon(1e-5));
    CHECK(b2 == doctest::Approx(0.3));
    CHECK_THROWS_AS(discretize_scalar(-1.0, 1.0, 0.0), NumericError);
    CHECK_THROWS_AS(discretize_scalar(-1.0, 1.0, -0.5), NumericError);
}

TEST_CASE("discretize fills abar/bbar per (t, d, s)") {
    Array<double> A({1, 1}), B({2, 1}), C({2, 1}), delta({2, 1});
    A.at2(0, 0) = -1.0;
    B.at2(0, 0) = 2.0; B.at2(1, 0) = 4.0;
    C.at2(0, 0) = 1.0; C.at2(1, 0) = 1.0;
    delta.at2(0, 0) = 0.5; delta.at2(1, 0) = 1.0;
    StepParams<double> sp = discretize(A, B, C, delta);
    CHECK(sp.abar.at3(0, 0, 0) == doctest::Approx(std::exp(-0.5)));
    CHECK(sp.abar.at3(1, 0, 0) == doctest::Approx(std::exp(-1.0)));
    CHECK(sp.bbar.at3(0, 0, 0) == doctest::Approx(1.0));
    CHECK(sp.bbar.at3(1, 0, 0) == doctest::Approx(4.0));
    delta.at2(1, 0) = 0.0;
    CHECK_THROWS_AS(discretize(A, B, C, delta), NumericError);
}

TEST_CASE("naive scan, hand-derived four-step recurrence") {
    // abar = 0.5, bbar = 1, C = 2, skip = 0.1, x = [1, -1, 2, 0.5]
    Array<double> A({1, 1}), B({4, 1}), C({4, 1}), delta({4, 1}), x({4, 1}), skip({1});
    A.at2(0, 0) = std::log(0.5);
    for (int t = 0; t < 4; ++t) { B.at2(t, 0) = 1.0; C.at2(t, 0) = 2.0; delta.at2(t, 0) = 1.0; }
    x[0] = 1.0; x[1] = -1.0; x[2] = 2.0; x[3] = 0.5;
    skip[0] = 0.1;
    Array<double> y = scan_naive(x, discretize(A, B, C, delta), skip);
    CHECK(y[0] == doctest::Approx(2.1));
    CHECK(y[1] == doctest::Approx(-1.1));
    CHECK(y[2] == doctest::Approx(3.7));
    CHECK(y[3] == doctest::Approx(2.8));
}

TEST_CASE("naive scan, single step and zero input") {
    auto c = random_case<double>(1, 3, 4, 77);
    StepParams<double> sp = discretize(neg_exp(c.A_log), c.B, c.C, c.delta);
    Array<double> y = scan_naive(c.x, sp, c.d_skip);
    for (std::size_t d = 0; d < 3; ++d) {
        double h_dot_c = 0;
        for (std::size_t s = 0; s < 4; ++s)
            h_dot_c += sp.bbar.at3(0, d, s) * c.x.at2(0, d) * sp.C.at2(0, s);
        CHECK(y.at2(0, d) == doctest::Approx(h_dot_c + c.d_skip[d] * c.x.at2(0, d)));
    }
    Array<double> zero({5, 3});
    auto c2 = random_case<double>(5, 3, 4, 78);
    Array<double> y0 = scan_naive(zero, discretize(neg_exp(c2.A_log), c2.B, c2.C, c2.delta),
                                  c2.d_skip);
    for (double v : y0.data) CHECK(v == 0.0);
}

TEST_CASE("fused scan matches the naive recurrence") {
    for (std::uint32_t seed = 0; seed < 60; ++seed) {
        std::size_t L = 1 + seed % 19, D = 1 + seed % 5, S = 1 + seed % 7;
        auto cd = random_case<double>(L, D, S, seed);
        Array<double> ref = scan_naive(cd.x, discretize(neg_exp(cd.A_log), cd.B, cd.C, cd.delta),
                                       cd.d_skip);
        Tape<double> t;
        Val<double> y = selective_scan(t.leaf(cd.x), t.leaf(cd.delta), t.leaf(cd.A_log),
                                       t.leaf(cd.B), t.leaf(cd.C), t.leaf(cd.d_skip),
                                       ScanDirection::Forward);
        for (std::size_t i = 0; i < ref.numel(); ++i)
            CHECK(std::abs(y.v()[i] - ref[i]) < 1e-12);

        Array<float> reff = ref.cast<float>();
        Tape<float> tf;
        Val<float> yf = selective_scan(
            tf.leaf(cd.x.cast<float>()), tf.leaf(cd.delta.cast<float>()),
            tf.leaf(cd.A_log.cast<float>()), tf.leaf(cd.B.cast<float>()),
            tf.leaf(cd.C.cast<float>()), tf.leaf(cd.d_skip.cast<float>()),
            ScanDirection::Forward);
        for (std::size_t i = 0; i < ref.numel(); ++i)
            CHECK(std::abs(double(yf.v()[i]) - ref[i]) < 1e-5);
    }
}

TEST_CASE("backward scan is the forward scan on the reversed sequence") {
    auto c = random_case<double>(9, 3, 4, 5);
    Tape<double> t;
    Val<double> back = selective_scan(t.leaf(c.x), t.leaf(c.delta), t.leaf(c.A_log), t.leaf(c.B),
                                      t.leaf(c.C), t.leaf(c.d_skip), ScanDirection::Backward);
    Array<double> ref = reversed_rows(
        scan_naive(reversed_rows(c.x),
                   discretize(neg_exp(c.A_log), reversed_rows(c.B), reversed_rows(c.C),
                              reversed_rows(c.delta)),
                   c.d_skip));
    for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(back.v()[i] == doctest::Approx(ref[i]));
}

TEST_CASE("as delta approaches zero the scan degenerates to the skip path") {
    auto c = random_case<double>(6, 2, 3, 12);
    for (auto& v : c.delta.data) v = 1e-9;
    Tape<double> t;
    Val<double> y = selective_scan(t.leaf(c.x), t.leaf(c.delta), t.leaf(c.A_log), t.leaf(c.B),
                                   t.leaf(c.C), t.leaf(c.d_skip), ScanDirection::Forward);
    for (std::size_t tt = 0; tt < 6; ++tt)
        for (std::size_t d = 0; d < 2; ++d)
            CHECK(y.v().at2(tt, d) ==
                  doctest::Approx(c.d_skip[d] * c.x.at2(tt, d)).epsilon(1e-6));
}

TEST_CASE("forward scan gradients are causal, backward scan anti-causal") {
    std::size_t L = 8, D = 2, S = 3, probe = 4;
    auto c = random_case<double>(L, D, S, 31);
    for (ScanDirection dir : {ScanDirection::Forward, ScanDirection::Backward}) {
        Tape<double> t;
        Val<double> x = t.leaf(c.x, true);
        Val<double> y = selective_scan(x, t.leaf(c.delta), t.leaf(c.A_log), t.leaf(c.B),
                                       t.leaf(c.C), t.leaf(c.d_skip), dir);
        t.backward(sum_all(select_row(y, probe)));
        for (std::size_t s = 0; s < L; ++s) {
            bool reachable = dir == ScanDirection::Forward ? s <= probe : s >= probe;
            for (std::size_t d = 0; d < D; ++d) {
                if (!reachable)
                    CHECK(x.g().at2(s, d) == 0.0);  // exact zero, not approximate
                else if (s == probe)
                    CHECK(x.g().at2(s, d) != 0.0);
            }
        }
    }
}

TEST_CASE("long stable scan stays bounded") {
    auto c = random_case<double>(512, 2, 4, 99);
    Tape<double> t;
    Val<double> y = selective_scan(t.leaf(c.x), t.leaf(c.delta), t.leaf(c.A_log), t.leaf(c.B),
                                   t.leaf(c.C), t.leaf(c.d_skip), ScanDirection::Forward);
    for (double v : y.v().data) {
        CHECK(std::isfinite(v));
        CHECK(std::abs(v) < 1e3);
    }
}

TEST_CASE("scan gradients match finite differences") {
    for (std::uint32_t seed : {1u, 2u, 3u}) {
        std::size_t L = 5 + seed, D = 2, S = 3;
        auto c = random_case<double>(L, D, S, 1000 + seed);
        auto eval = [&]() {
            Tape<double> t;
            Val<double> y = selective_scan(t.leaf(c.x), t.leaf(c.delta), t.leaf(c.A_log),
                                           t.leaf(c.B), t.leaf(c.C), t.leaf(c.d_skip),
                                           ScanDirection::Forward);
            return sum_all(mul(y, y)).v()[0];
        };
        Tape<double> t;
        Val<double> x = t.leaf(c.x, true), delta = t.leaf(c.delta, true),
                    alog = t.leaf(c.A_log, true), b = t.leaf(c.B, true), cc = t.leaf(c.C, true),
                    skip = t.leaf(c.d_skip, true);
        Val<double> y = selective_scan(x, delta, alog, b, cc, skip, ScanDirection::Forward);
        t.backward(sum_all(mul(y, y)));
        Array<double> gx = x.g(), gd = delta.g(), ga = alog.g(), gb = b.g(), gc = cc.g(),
                      gs = skip.g();
        FdReport rep = finite_difference_check(
            eval,
            {{"x", &c.x, &gx},
             {"delta", &c.delta, &gd},
             {"A_log", &c.A_log, &ga},
             {"B", &c.B, &gb},
             {"C", &c.C, &gc},
             {"d_skip", &c.d_skip, &gs}},
            1e-5);
        INFO(rep.describe());
        CHECK(rep.ok(1e-4));
    }
}

TEST_CASE("selectivize with zero projections is the bias path") {
    std::size_t L = 3, D = 4, S = 2;
    SsmParams<double> p;
    p.d_inner = D;
    p.state_dim = S;
    p.dt_rank = dt_rank_for(D);
    p.A_log = Array<double>({D, S});
    p.B_w = Array<double>({D, S});
    p.C_w = Array<double>({D, S});
    p.dt_w1 = Array<double>({D, p.dt_rank});
    p.dt_w2 = Array<double>({p.dt_rank, D});
    p.dt_bias = Array<double>::full({D}, 0.25);
    p.d_skip = Array<double>::full({D}, 1.0);
    p.B_w.at2(1, 0) = 2.0;
    Tape<double> t;
    Array<double> uv({L, D});
    uv.at2(0, 1) = 3.0;
    SsmVals<double> vals = bind(t, p, false);
    Selectivized<double> sel = selectivize(t.leaf(uv), vals);
    double sp = std::log1p(std::exp(0.25));
    for (std::size_t tt = 0; tt < L; ++tt)
        for (std::size_t d = 0; d < D; ++d)
            CHECK(sel.delta.v().at2(tt, d) == doctest::Approx(sp));
    CHECK(sel.B.v().at2(0, 0) == doctest::Approx(6.0));  // u[0,1] * B_w[1,0]
    CHECK(sel.C.v().at2(0, 0) == 0.0);
}

TEST_CASE("dt rank is ceil(d_inner / 16)") {
    CHECK(dt_rank_for(16) == 1);
    CHECK(dt_rank_for(17) == 2);
    CHECK(dt_rank_for(32) == 2);
    CHECK(dt_rank_for(768) == 48);
}

TEST_CASE("ssm initialization matches the published statistics") {
    std::mt19937 rng(0);
    SsmParams<double> p = init_ssm_params<double>(8, 5, rng);
    for (std::size_t d = 0; d < 8; ++d)
        for (std::size_t s = 0; s < 5; ++s)
            CHECK(-std::exp(p.A_log.at2(d, s)) == doctest::Approx(-double(s + 1)));
    for (std::size_t d = 0; d < 8; ++d) {
        double dt = std::log1p(std::exp(p.dt_bias[d]));
        CHECK(dt >= 1e-3 * 0.999);
        CHECK(dt <= 1e-1 * 1.001);
    }
    for (double v : p.d_skip.data) CHECK(v == 1.0);
}
