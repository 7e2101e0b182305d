#pragma once

// Labeled conversations: one JSON object per line,
//   {"id": s, "topic": s, "sentences": [{"text": s, "speaker": s,
//                                        "label": null|s, "leap_target": null|n}]}
// Exactly one sentence per record is labeled, and it is scored against the
// sentences that precede it.

#include <cstddef>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "continuity/chunker.hpp"
#include "continuity/errors.hpp"
#include "continuity/text.hpp"

namespace continuity {

enum class Label { normal, leap, ood_shift, id_shift };

inline constexpr Label kAllLabels[] = {Label::normal, Label::leap, Label::ood_shift, Label::id_shift};

inline std::string_view to_string(Label l) {
    switch (l) {
        case Label::normal: return "normal";
        case Label::leap: return "leap";
        case Label::ood_shift: return "ood_shift";
        case Label::id_shift: return "id_shift";
    }
    return "normal";
}

inline Label parse_label(std::string_view s) {
    for (Label l : kAllLabels)
        if (to_string(l) == s) return l;
    throw InputDomainError("unknown label \"" + std::string(s) + "\"");
}

// Normal and leap sentences continue the topic; both shifts leave it.
inline bool is_on_topic(Label l) { return l == Label::normal || l == Label::leap; }

struct RecordSentence {
    std::string text;
    Speaker speaker = Speaker::unknown;
    std::optional<Label> label;
    std::optional<std::size_t> leap_target;
};

struct ConversationRecord {
    std::string id;
    std::string topic;
    std::vector<RecordSentence> sentences;

    std::size_t labeled_index() const {
        for (std::size_t i = 0; i < sentences.size(); ++i)
            if (sentences[i].label) return i;
        throw InputDomainError("record " + id + " has no labeled sentence");
    }

    Label label() const { return *sentences[labeled_index()].label; }

    void validate() const {
        std::size_t labeled = 0;
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            const RecordSentence& s = sentences[i];
            if (trim(s.text).empty())
                throw InputDomainError("record " + id + ": sentence " + std::to_string(i) + " is empty");
            if (!s.label) {
                if (s.leap_target)
                    throw InputDomainError("record " + id + ": leap_target on an unlabeled sentence");
                continue;
            }
            ++labeled;
            if (*s.label == Label::leap) {
                if (!s.leap_target || *s.leap_target >= i)
                    throw InputDomainError("record " + id + ": leap needs a leap_target before it");
            } else if (s.leap_target) {
                throw InputDomainError("record " + id + ": only leap sentences carry leap_target");
            }
        }
        if (labeled != 1)
            throw InputDomainError("record " + id + " must label exactly one sentence, found " +
                                   std::to_string(labeled));
        if (labeled_index() == 0)
            throw InputDomainError("record " + id + ": the labeled sentence has no history");
    }
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

inline std::size_t history_tokens(const ConversationRecord& r, const TokenCounter& count = count_tokens) {
    std::size_t total = 0;
    const std::size_t labeled = r.labeled_index();
    for (std::size_t i = 0; i < labeled; ++i) total += count(r.sentences[i].text);
    return total;
}

// Tokens strictly between the sentence a leap answers and the leap itself.
inline std::size_t token_gap(const ConversationRecord& r, const TokenCounter& count = count_tokens) {
    const std::size_t labeled = r.labeled_index();
    const auto& target = r.sentences[labeled].leap_target;
    if (!target) throw InputDomainError("record " + r.id + " is not a leap");
    std::size_t total = 0;
    for (std::size_t i = *target + 1; i < labeled; ++i) total += count(r.sentences[i].text);
    return total;
}

inline nlohmann::json to_json(const ConversationRecord& r) {
    nlohmann::json sentences = nlohmann::json::array();
    for (const RecordSentence& s : r.sentences) {
        nlohmann::json j = {{"text", s.text}, {"speaker", std::string(to_string(s.speaker))}};
        j["label"] = s.label ? nlohmann::json(std::string(to_string(*s.label))) : nlohmann::json(nullptr);
        j["leap_target"] = s.leap_target ? nlohmann::json(*s.leap_target) : nlohmann::json(nullptr);
        sentences.push_back(std::move(j));
    }
    return {{"id", r.id}, {"topic", r.topic}, {"sentences", std::move(sentences)}};
}

inline ConversationRecord record_from_json(const nlohmann::json& j) {
    try {
        ConversationRecord r;
        r.id = j.at("id").get<std::string>();
        r.topic = j.at("topic").get<std::string>();
        for (const auto& s : j.at("sentences")) {
            RecordSentence out;
            out.text = s.at("text").get<std::string>();
            if (s.contains("speaker")) out.speaker = parse_speaker(s.at("speaker").get<std::string>());
            if (s.contains("label") && !s.at("label").is_null())
                out.label = parse_label(s.at("label").get<std::string>());
            if (s.contains("leap_target") && !s.at("leap_target").is_null())
                out.leap_target = s.at("leap_target").get<std::size_t>();
            r.sentences.push_back(std::move(out));
        }
        r.validate();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InputDomainError(std::string("malformed conversation record: ") + e.what());
    }
}

inline void write_dataset(const std::vector<ConversationRecord>& records, std::ostream& out) {
    for (const ConversationRecord& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<ConversationRecord> read_dataset(std::istream& in) {
    std::vector<ConversationRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw InputDomainError("dataset line " + std::to_string(line_no) + ": " + e.what());
        } catch (const InputDomainError& e) {
            throw InputDomainError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace continuity
