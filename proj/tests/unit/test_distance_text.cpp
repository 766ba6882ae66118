#include "doctest.h"
#include "oracles.hpp"
#include "patuntrack/distance.hpp"
#include "patuntrack/text.hpp"

using namespace patuntrack;
using patuntrack::testing::recursive_levenshtein;

TEST_CASE("levenshtein examples") {
    CHECK(levenshtein("", "abc") == 3);
    CHECK(levenshtein("abc", "abc") == 0);
    CHECK(levenshtein("kitten", "sitting") == 3);
    CHECK(levenshtein("A\nB", "A\nC") == 1);
}

TEST_CASE("levenshtein agrees with the recursive definition") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 300; ++i) {
        const auto a = testing::random_string(rng, "abcd", 7);
        const auto b = testing::random_string(rng, "abcd", 7);
        REQUIRE(levenshtein(a, b) == recursive_levenshtein(a, b));
    }
}

TEST_CASE("levenshtein is a metric on random triples") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        const auto a = testing::random_string(rng, "xyz", 10);
        const auto b = testing::random_string(rng, "xyz", 10);
        const auto c = testing::random_string(rng, "xyz", 10);
        CHECK(levenshtein(a, b) == levenshtein(b, a));
        CHECK(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
        CHECK((levenshtein(a, b) == 0) == (a == b));
    }
}

TEST_CASE("normalized distance") {
    CHECK(normalized_levenshtein("", "") == 0.0);
    CHECK(normalized_levenshtein("abc", "") == 1.0);
    CHECK(normalized_levenshtein("kitten", "sitting") == doctest::Approx(3.0 / 7.0));
    CHECK(edit_similarity("abcd", "abce") == doctest::Approx(0.75));
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto a = testing::random_string(rng, "ab", 12);
        const auto b = testing::random_string(rng, "ab", 12);
        const double d = normalized_levenshtein(a, b);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
}

TEST_CASE("distance modes") {
    CHECK(text_distance("abc", "abd", DistanceMode::raw) == 1.0);
    CHECK(text_distance("abc", "abd", DistanceMode::normalized) == doctest::Approx(1.0 / 3.0));
    CHECK(distance_mode_from_string("normalized") == DistanceMode::normalized);
    CHECK(to_string(DistanceMode::raw) == "raw");
    CHECK_THROWS(distance_mode_from_string("cosine"));
}

TEST_CASE("text helpers") {
    CHECK(text::collapse_whitespace("  a \t  b  ") == "a b");
    CHECK(text::normalized_lines("x\n\n  y   z \r\n") == std::vector<std::string>{"x", "y z"});
    CHECK(text::contains_ci("Hello World", "WORLD"));
    const auto kw = text::keyword_tokens("Executes the system command via a Shell");
    CHECK(std::find(kw.begin(), kw.end(), "system") != kw.end());
    CHECK(std::find(kw.begin(), kw.end(), "the") == kw.end());
    CHECK(std::find(kw.begin(), kw.end(), "shell") != kw.end());
}
