#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sipa/common.hpp"
#include "sipa/trainmath.hpp"

using namespace sipa;

TEST_CASE("cosine_lr endpoints and midpoint") {
    CosineScheduleParams p{0.001, 0.1, 200};
    CHECK(cosine_lr(0, p) == 0.1);
    CHECK(cosine_lr(200, p) == Catch::Approx(0.001).margin(1e-15));
    CHECK(cosine_lr(100, p) == Catch::Approx((0.001 + 0.1) / 2).margin(1e-15));
}

TEST_CASE("cosine_lr is monotone non-increasing") {
    CosineScheduleParams p{0.0, 1.0, 357};
    double prev = cosine_lr(0, p);
    for (int t = 1; t <= p.t_max; ++t) {
        const double cur = cosine_lr(t, p);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("cosine_lr rejects out-of-range epochs") {
    CosineScheduleParams p{0.0, 1.0, 10};
    CHECK_THROWS_AS(cosine_lr(-1, p), ValidationError);
    CHECK_THROWS_AS(cosine_lr(11, p), ValidationError);
    CHECK_THROWS_AS(cosine_lr(0, CosineScheduleParams{0.2, 0.1, 10}), ValidationError);
}

TEST_CASE("label_smooth pinned values") {
    SECTION("eps=0 is one-hot") {
        auto d = label_smooth(2, 5, 0.0);
        for (int i = 0; i < 5; ++i) CHECK(d[static_cast<size_t>(i)] == (i == 2 ? 1.0 : 0.0));
    }
    SECTION("eps=0.3, K=100") {
        auto d = label_smooth(3, 100, 0.3);
        CHECK(d[3] == 0.7);
        CHECK(d[0] == Catch::Approx(0.3 / 99).epsilon(1e-15));
        CHECK(d[99] == d[0]);
    }
    SECTION("eps=0.5, K=2 is uniform") {
        auto d = label_smooth(0, 2, 0.5);
        CHECK(d[0] == 0.5);
        CHECK(d[1] == 0.5);
    }
}

TEST_CASE("label_smooth sums to 1 under compensated summation") {
    Rng rng(20260814);
    for (int it = 0; it < 500; ++it) {
        const int k = static_cast<int>(rng.uniform_int(2, 500));
        const double eps = rng.uniform() * 0.99;
        const auto d = label_smooth(static_cast<int>(rng.uniform_int(0, k - 1)), k, eps);
        CHECK(std::abs(compensated_sum(d.begin(), d.end()) - 1.0) <= 1e-12);
    }
}

TEST_CASE("swish pinned values") {
    CHECK(swish(0.0) == 0.0);
    CHECK(swish(1.0, 1.0) == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
    CHECK(std::abs(swish(100.0) - 100.0) < 1e-12);
    CHECK(swish(2.0, 0.0) == 1.0);  // sigmoid(0) = 1/2
}

TEST_CASE("mixup endpoints and convexity") {
    const std::vector<double> x1{1, 2, 3}, x2{4, 5, 6};
    const std::vector<double> y1{1, 0}, y2{0, 1};
    SECTION("lambda=1 returns the first pair") {
        auto [x, y] = mixup(x1, y1, x2, y2, 1.0);
        CHECK(x == x1);
        CHECK(y == y1);
    }
    SECTION("lambda=0 returns the second pair") {
        auto [x, y] = mixup(x1, y1, x2, y2, 0.0);
        CHECK(x == x2);
        CHECK(y == y2);
    }
    SECTION("lambda=0.5 splits one-hot targets") {
        auto [x, y] = mixup(x1, y1, x2, y2, 0.5);
        CHECK(y[0] == 0.5);
        CHECK(y[1] == 0.5);
        CHECK(x[0] == 2.5);
    }
    SECTION("target mass is preserved") {
        Rng rng(7);
        for (int it = 0; it < 200; ++it) {
            const double lam = rng.uniform();
            auto [x, y] = mixup(x1, y1, x2, y2, lam);
            CHECK(compensated_sum(y.begin(), y.end()) == Catch::Approx(1.0).margin(1e-12));
        }
    }
    SECTION("shape mismatch throws") {
        const std::vector<double> short_x{1.0};
        CHECK_THROWS_AS(mixup(x1, y1, short_x, y2, 0.5), ValidationError);
    }
}

TEST_CASE("nn_upscale pinned 2x2 -> 4x4") {
    Image in;
    in.h = 2;
    in.w = 2;
    in.c = 1;
    in.data = {1, 2, 3, 4};
    Image out = nn_upscale(in, 2);
    REQUIRE(out.h == 4);
    REQUIRE(out.w == 4);
    const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    CHECK(out.data == want);
}

TEST_CASE("nn_upscale factor 1 is the identity") {
    Image in;
    in.h = 3;
    in.w = 5;
    in.c = 2;
    in.data.resize(30);
    Rng rng(99);
    for (auto& v : in.data) v = rng.uniform();
    Image out = nn_upscale(in, 1);
    CHECK(out.data == in.data);
    CHECK(out.h == in.h);
    CHECK(out.w == in.w);
}

TEST_CASE("nn_upscale then factor-stride subsampling recovers the input") {
    Rng rng(123);
    for (int it = 0; it < 50; ++it) {
        Image in;
        in.h = static_cast<int>(rng.uniform_int(1, 8));
        in.w = static_cast<int>(rng.uniform_int(1, 8));
        in.c = static_cast<int>(rng.uniform_int(1, 3));
        in.data.resize(static_cast<size_t>(in.h) * in.w * in.c);
        for (auto& v : in.data) v = rng.uniform();
        const int f = static_cast<int>(rng.uniform_int(1, 4));
        const Image up = nn_upscale(in, f);
        REQUIRE(up.h == f * in.h);
        REQUIRE(up.w == f * in.w);
        for (int r = 0; r < in.h; ++r)
            for (int col = 0; col < in.w; ++col)
                for (int ch = 0; ch < in.c; ++ch)
                    CHECK(up.at(r * f, col * f, ch) == in.at(r, col, ch));
    }
}

TEST_CASE("rng beta sampler stays inside (0, 1)") {
    Rng rng(55);
    for (int it = 0; it < 2000; ++it) {
        const double v = rng.beta(1.0, 1.0);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    Rng a(10), b(10);
    for (int it = 0; it < 100; ++it) CHECK(a.beta(0.4, 2.0) == b.beta(0.4, 2.0));
}
