#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "tdodif/core.hpp"

using namespace tdodif;

TEST_CASE("cosine_similarity basic values") {
    std::vector<float> e1 = {1.0f, 0.0f};
    std::vector<float> e2 = {0.0f, 1.0f};
    std::vector<float> diag = {1.0f, 1.0f};
    CHECK(cosine_similarity(e1, e1) == doctest::Approx(1.0));
    CHECK(cosine_similarity(e1, e2) == doctest::Approx(0.0));
    CHECK(cosine_similarity(diag, e1) == doctest::Approx(0.70710678).epsilon(1e-8));
}

TEST_CASE("cosine_similarity zero-norm input yields 0") {
    std::vector<float> z = {0.0f, 0.0f};
    std::vector<float> a = {1.0f, 2.0f};
    CHECK(cosine_similarity(z, a) == 0.0);
    CHECK(cosine_similarity(a, z) == 0.0);
}

TEST_CASE("cosine_similarity dimension mismatch throws") {
    std::vector<float> a = {1.0f};
    std::vector<float> b = {1.0f, 2.0f};
    CHECK_THROWS_AS((void)cosine_similarity(a, b), ConfigError);
}

TEST_CASE("cosine_similarity symmetry and scale invariance on random vectors") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        size_t dim = 1 + rng() % 8;
        std::vector<float> a(dim), b(dim), ka(dim);
        double k = 0.1 + std::abs(u(rng));
        for (size_t i = 0; i < dim; ++i) {
            a[i] = float(u(rng));
            b[i] = float(u(rng));
            ka[i] = float(k * a[i]);
        }
        double ab = cosine_similarity(a, b);
        CHECK(ab == doctest::Approx(cosine_similarity(b, a)).epsilon(1e-12));
        CHECK(ab == doctest::Approx(cosine_similarity(ka, b)).epsilon(1e-6));
        CHECK(ab >= -1.0);
        CHECK(ab <= 1.0);
    }
}

TEST_CASE("argmax_channel examples and tie-break") {
    ProbMap p(1, 1, 3);
    p.at(0, 0, 0) = 0.1f;
    p.at(1, 0, 0) = 0.7f;
    p.at(2, 0, 0) = 0.2f;
    CHECK(argmax_channel(p, 0, 0) == 2);

    ProbMap tie(1, 1, 2);
    tie.at(0, 0, 0) = 0.5f;
    tie.at(1, 0, 0) = 0.5f;
    CHECK(argmax_channel(tie, 0, 0) == 1);

    ProbMap q(1, 1, 3);
    q.at(0, 0, 0) = 0.2f;
    q.at(1, 0, 0) = 0.3f;
    q.at(2, 0, 0) = 0.5f;
    CHECK(argmax_channel(q, 0, 0) == 3);
}

TEST_CASE("argmax_channel maximizes over channels") {
    std::mt19937_64 rng(7);
    ProbMap p(4, 4, 5);
    for (float& v : p.data) v = float(rng() % 1000) / 1000.0f;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            int best = argmax_channel(p, x, y);
            for (int c = 0; c < 5; ++c) CHECK(p.at(c, x, y) <= p.at(best - 1, x, y));
        }
}

TEST_CASE("Raster2D rejects degenerate dimensions") {
    CHECK_THROWS_AS(Raster2D<int>(0, 3), ConfigError);
    CHECK_THROWS_AS(Raster2D<int>(3, 0), ConfigError);
}
