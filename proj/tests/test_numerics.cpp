#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cgvlm/numerics.hpp"

using namespace cgvlm;

TEST_CASE("softmax basics", "[numerics]") {
    auto p = softmax_row(std::vector<double>{0.0, 0.0});
    REQUIRE(p[0] == Catch::Approx(0.5));
    REQUIRE(p[1] == Catch::Approx(0.5));

    // large inputs must not overflow
    auto q = softmax_row(std::vector<double>{1000.0, 0.0});
    REQUIRE(q[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(q[1] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(std::isfinite(q[0]));

    // independently computed exp/normalize values
    auto r = softmax_row(std::vector<double>{0.55, -0.05});
    REQUIRE(r[0] == Catch::Approx(0.6457).margin(1e-4));
    REQUIRE(r[1] == Catch::Approx(0.3543).margin(1e-4));

    REQUIRE_THROWS_AS(softmax_row(std::vector<double>{1.0, std::nan("")}), std::domain_error);
    REQUIRE_THROWS_AS(softmax_row(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and stay positive", "[numerics]") {
    Rng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 2 + static_cast<int>(rng.next() % 12);
        std::vector<double> scores(n);
        for (double& s : scores) s = (rng.uniform() - 0.5) * 200.0;
        auto p = softmax_row(scores);
        double sum = 0.0;
        for (double v : p) {
            REQUIRE(v > 0.0);
            sum += v;
        }
        REQUIRE(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("variance population convention", "[numerics]") {
    REQUIRE(variance(std::vector<double>{2.0, 2.0, 2.0}) == 0.0);
    REQUIRE(variance(std::vector<double>{0.0, 3.0}) == Catch::Approx(2.25));
    REQUIRE(variance(std::vector<double>{1, 2, 3, 4}) == Catch::Approx(1.25));
    REQUIRE_THROWS_AS(variance(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("variance affine property", "[numerics]") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 2 + static_cast<int>(rng.next() % 10);
        std::vector<double> x(n), y(n);
        double c = (rng.uniform() - 0.5) * 6.0;
        double b = (rng.uniform() - 0.5) * 10.0;
        for (int i = 0; i < n; ++i) {
            x[i] = (rng.uniform() - 0.5) * 8.0;
            y[i] = c * x[i] + b;
        }
        REQUIRE(variance(y) == Catch::Approx(c * c * variance(x)).margin(1e-9));
    }
}

TEST_CASE("kl divergence", "[numerics]") {
    std::vector<double> u{0.5, 0.5};
    REQUIRE(kl_divergence(u, u) == Catch::Approx(0.0).margin(1e-12));

    std::vector<double> q{0.9, 0.1};
    REQUIRE(kl_divergence(u, q) == Catch::Approx(0.51083).margin(1e-4));
    REQUIRE(kl_divergence(q, u) == Catch::Approx(0.36806).margin(1e-4));

    REQUIRE_THROWS_AS(kl_divergence(u, std::vector<double>{1.0}), std::domain_error);
    REQUIRE_THROWS_AS(kl_divergence(u, std::vector<double>{1.0, 0.0}), std::domain_error);
}

TEST_CASE("kl divergence non-negative on random pairs", "[numerics]") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 2 + static_cast<int>(rng.next() % 8);
        std::vector<double> a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a[i] = rng.uniform() + 1e-3;
            b[i] = rng.uniform() + 1e-3;
        }
        double sa = 0, sb = 0;
        for (int i = 0; i < n; ++i) { sa += a[i]; sb += b[i]; }
        for (int i = 0; i < n; ++i) { a[i] /= sa; b[i] /= sb; }
        REQUIRE(kl_divergence(a, b) >= -1e-12);
        REQUIRE(kl_divergence(a, a) == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("categorical sampling", "[numerics]") {
    Rng rng(1);
    std::vector<double> degenerate{1.0, 0.0};
    for (int i = 0; i < 10; ++i) REQUIRE(sample_categorical(degenerate, rng) == 0);

    // top_p = 0.5 keeps only the head of (0.6, 0.3, 0.1)
    std::vector<double> p{0.6, 0.3, 0.1};
    for (int i = 0; i < 50; ++i) REQUIRE(sample_categorical(p, rng, 0.5) == 0);

    // determinism under a fixed seed
    std::vector<double> q{0.25, 0.25, 0.25, 0.25};
    Rng a(42), b(42);
    for (int i = 0; i < 64; ++i) {
        REQUIRE(sample_categorical(q, a, 0.9, 0.7) == sample_categorical(q, b, 0.9, 0.7));
    }

    REQUIRE_THROWS_AS(sample_categorical(p, rng, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(sample_categorical(p, rng, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("matrix helpers", "[numerics]") {
    Matrix m(2, 3);
    m.at(0, 0) = 1.0;
    m.at(1, 2) = -2.0;
    REQUIRE(m.row(1)[2] == -2.0);
    REQUIRE(m.all_finite());
    REQUIRE_FALSE(m.all_zero());

    std::vector<double> x{1.0, 2.0, 3.0};
    std::vector<double> y{0.0, 1.0};
    matvec_add(m, x, y);
    REQUIRE(y[0] == Catch::Approx(1.0));
    REQUIRE(y[1] == Catch::Approx(-5.0));
}
