#include <random>
#include <set>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "continuity/chunker.hpp"

namespace continuity {
namespace {

using Bounds = std::vector<std::pair<std::size_t, std::size_t>>;

std::vector<Sentence> sentences(std::size_t n) {
    std::vector<Sentence> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_sentence(i, "s" + std::to_string(i)));
    return out;
}

TEST(Chunker, HandEnumeratedWindowFourStrideTwo) {
    const std::vector<Bounds> expected{
        {},
        {{0, 1}},
        {{0, 2}},
        {{0, 3}},
        {{0, 4}},
        {{0, 4}, {1, 5}},
        {{0, 4}, {2, 6}},
        {{0, 4}, {2, 6}, {3, 7}},
        {{0, 4}, {2, 6}, {4, 8}},
        {{0, 4}, {2, 6}, {4, 8}, {5, 9}},
        {{0, 4}, {2, 6}, {4, 8}, {6, 10}},
        {{0, 4}, {2, 6}, {4, 8}, {6, 10}, {7, 11}},
        {{0, 4}, {2, 6}, {4, 8}, {6, 10}, {8, 12}},
    };
    for (std::size_t n = 1; n <= 12; ++n) EXPECT_EQ(chunk_bounds(n, 4, 2), expected[n]) << "n=" << n;
}

TEST(Chunker, JoinsTextWithSingleSpaces) {
    const std::vector<Chunk> chunks = chunk(sentences(5), Hyperparams{});
    ASSERT_EQ(chunks.size(), 2u);
    EXPECT_EQ(chunks[0].text, "s0 s1 s2 s3");
    EXPECT_EQ(chunks[1], (Chunk{1, 5, "s1 s2 s3 s4"}));
}

TEST(Chunker, EmptyInputRejected) {
    EXPECT_THROW(chunk({}, Hyperparams{}), InputDomainError);
    EXPECT_THROW(make_sentence(0, "   "), InputDomainError);
}

TEST(Chunker, CoverageCountAndOrderOnRandomSizes) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> size(1, 10000), win(1, 8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = size(rng);
        const std::size_t window = win(rng);
        const std::size_t stride = std::uniform_int_distribution<std::size_t>(1, window)(rng);
        const Bounds b = chunk_bounds(n, window, stride);
        ASSERT_LE(b.size(), (n + stride - 1) / stride + 1);
        std::set<std::pair<std::size_t, std::size_t>> unique(b.begin(), b.end());
        ASSERT_EQ(unique.size(), b.size());
        std::size_t covered = 0;  // every index below `covered` is in some chunk
        for (std::size_t i = 0; i < b.size(); ++i) {
            ASSERT_LT(b[i].first, b[i].second);
            ASSERT_LE(b[i].second, n);
            ASSERT_LE(b[i].second - b[i].first, window);
            if (i > 0) {
                ASSERT_GT(b[i].first, b[i - 1].first);
            }
            ASSERT_LE(b[i].first, covered);
            covered = std::max(covered, b[i].second);
        }
        ASSERT_EQ(covered, n);
        ASSERT_EQ(b.back().second, n);
        ASSERT_EQ(b.back().second - b.back().first, std::min(n, window));
    }
}

TEST(Chunker, Deterministic) {
    const auto s = sentences(37);
    EXPECT_EQ(chunk(s, Hyperparams{}), chunk(s, Hyperparams{}));
}

}  // namespace
}  // namespace continuity
