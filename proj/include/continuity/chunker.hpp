#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "continuity/core.hpp"
#include "continuity/errors.hpp"
#include "continuity/text.hpp"

namespace continuity {

enum class Speaker { user, bot, unknown };

inline std::string_view to_string(Speaker s) {
    switch (s) {
        case Speaker::user: return "user";
        case Speaker::bot: return "bot";
        case Speaker::unknown: break;
    }
    return "unknown";
}

inline Speaker parse_speaker(std::string_view s) {
    const std::string lower = to_lower(trim(s));
    if (lower == "user") return Speaker::user;
    if (lower == "bot") return Speaker::bot;
    return Speaker::unknown;
}

struct Sentence {
    std::size_t index = 0;
    std::string text;
    Speaker speaker = Speaker::unknown;
};

inline Sentence make_sentence(std::size_t index, std::string_view text,
                              Speaker speaker = Speaker::unknown) {
    if (trim(text).empty()) throw InputDomainError("sentence text is empty");
    return Sentence{index, std::string(text), speaker};
}

// Half-open range [start, end) of sentence indices with its joined text.
struct Chunk {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string text;

    friend bool operator==(const Chunk&, const Chunk&) = default;
};

// Window boundaries only: starts at 0, stride, 2*stride, ... while the window
// fits, then one right-aligned tail window if the last one stops short of n.
inline std::vector<std::pair<std::size_t, std::size_t>> chunk_bounds(std::size_t n,
                                                                     std::size_t window,
                                                                     std::size_t stride) {
    if (n == 0) throw InputDomainError("cannot chunk an empty conversation");
    if (window == 0 || stride == 0 || stride > window)
        throw InputDomainError("invalid window/stride");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t start = 0; start + window <= n; start += stride) {
        out.emplace_back(start, start + window);
    }
    if (out.empty() || out.back().second != n) {
        out.emplace_back(n > window ? n - window : 0, n);
    }
    return out;
}

inline std::vector<Chunk> chunk(const std::vector<Sentence>& sentences, const Hyperparams& hp) {
    if (sentences.empty()) throw InputDomainError("cannot chunk an empty conversation");
    std::vector<Chunk> out;
    for (auto [start, end] : chunk_bounds(sentences.size(), hp.window, hp.stride)) {
        std::string text;
        for (std::size_t i = start; i < end; ++i) {
            if (i > start) text.push_back(' ');
            text.append(sentences[i].text);
        }
        out.push_back(Chunk{start, end, std::move(text)});
    }
    return out;
}

}  // namespace continuity
