#include <catch2/catch_amalgamated.hpp>

#include "proxkit/rng.hpp"

using namespace proxkit;

// Reference values for the SplitMix64 stream; the same constants are quoted
// in the README so other implementations can check their port.
TEST_CASE("SplitMix64 matches its published stream") {
    SplitMix64 a(1234567);
    REQUIRE(a.next_u64() == 6457827717110365317ull);
    REQUIRE(a.next_u64() == 3203168211198807973ull);
    REQUIRE(a.next_u64() == 9817491932198370423ull);

    SplitMix64 b(0);
    REQUIRE(b.next_u64() == 16294208416658607535ull);
    REQUIRE(b.next_u64() == 7960286522194355700ull);
}

TEST_CASE("uniform draws live in [0,1) and reproduce per seed") {
    SplitMix64 a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.next_uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        REQUIRE(u == b.next_uniform());
    }
}

TEST_CASE("normal draws have roughly standard moments") {
    SplitMix64 rng(99);
    double mean = 0.0, var = 0.0;
    const int n = 20000;
    std::vector<double> xs(n);
    for (double& x : xs) x = rng.next_normal();
    for (double x : xs) mean += x;
    mean /= n;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n - 1;
    REQUIRE(std::abs(mean) < 0.03);
    REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle is deterministic per seed") {
    std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> v2 = v1;
    SplitMix64 a(7), b(7);
    a.shuffle(v1);
    b.shuffle(v2);
    REQUIRE(v1 == v2);
}
