#pragma once

// Line-delimited request/response records exchanged with the scorer process.
//
// After start-up the scorer writes one handshake line:
//   {"ready": true, "model": "<name>"}            or  {"ready": false, "error": "..."}
// then answers each request line with exactly one response line carrying the same
// request_id. Response fields present per mode:
//   masked       log_p_attribute, log_p_prior, pppl, n_tokens, n_attribute_tokens
//   pppl         pppl, n_tokens
//   causal_loss  loss, pppl (optional; exp(loss) when absent), n_tokens
//   crows_pll    pll_more, pll_less
// A response may instead carry "error" with a message.

#include <optional>
#include <string>
#include <vector>

#include "domain.hpp"

namespace biasaudit {

struct ScoreRequest {
    std::string request_id;
    ScoringMode mode = ScoringMode::masked;
    std::string text;                         // unmasked sentence (masked, pppl, causal_loss)
    std::string masked_attribute_text;        // S^(A)       (masked)
    std::string masked_attribute_target_text; // S^(A,T)     (masked)
    std::vector<Span> mask_spans;             // character spans of `text` that are masked, attribute first
    std::string attribute;                    // attribute surface form
    bool first_mask = true;                   // only the first mask span contributes to p
    std::string sentence_more;                // crows_pll
    std::string sentence_less;                // crows_pll

    bool operator==(const ScoreRequest&) const = default;
};

struct ScoreResponse {
    std::string request_id;
    ScoringMode mode = ScoringMode::masked;
    std::optional<double> log_p_attribute;
    std::optional<double> log_p_prior;
    std::optional<double> pppl;
    std::optional<double> loss;
    std::optional<double> pll_more;
    std::optional<double> pll_less;
    std::optional<int> n_tokens;
    std::optional<int> n_attribute_tokens;
    std::optional<std::string> error;

    bool operator==(const ScoreResponse&) const = default;
};

inline void to_json(json& j, const ScoreRequest& r) {
    j = json{{"request_id", r.request_id}, {"mode", r.mode}};
    switch (r.mode) {
    case ScoringMode::masked:
        j["text"] = r.text;
        j["masked_attribute_text"] = r.masked_attribute_text;
        j["masked_attribute_target_text"] = r.masked_attribute_target_text;
        j["mask_spans"] = r.mask_spans;
        j["attribute"] = r.attribute;
        j["first_mask"] = r.first_mask;
        break;
    case ScoringMode::pppl:
        j["text"] = r.text;
        break;
    case ScoringMode::causal_loss:
        j["text"] = r.text;
        if (!r.attribute.empty()) j["attribute"] = r.attribute;
        break;
    case ScoringMode::crows_pll:
        j["sentence_more"] = r.sentence_more;
        j["sentence_less"] = r.sentence_less;
        break;
    }
}

inline void from_json(const json& j, ScoreRequest& r) {
    j.at("request_id").get_to(r.request_id);
    j.at("mode").get_to(r.mode);
    r.text = j.value("text", std::string{});
    r.masked_attribute_text = j.value("masked_attribute_text", std::string{});
    r.masked_attribute_target_text = j.value("masked_attribute_target_text", std::string{});
    r.mask_spans = j.value("mask_spans", std::vector<Span>{});
    r.attribute = j.value("attribute", std::string{});
    r.first_mask = j.value("first_mask", true);
    r.sentence_more = j.value("sentence_more", std::string{});
    r.sentence_less = j.value("sentence_less", std::string{});
}

inline void to_json(json& j, const ScoreResponse& r) {
    j = json{{"request_id", r.request_id}, {"mode", r.mode}};
    detail::put_optional(j, "log_p_attribute", r.log_p_attribute);
    detail::put_optional(j, "log_p_prior", r.log_p_prior);
    detail::put_optional(j, "pppl", r.pppl);
    detail::put_optional(j, "loss", r.loss);
    detail::put_optional(j, "pll_more", r.pll_more);
    detail::put_optional(j, "pll_less", r.pll_less);
    detail::put_optional(j, "n_tokens", r.n_tokens);
    detail::put_optional(j, "n_attribute_tokens", r.n_attribute_tokens);
    detail::put_optional(j, "error", r.error);
}

inline void from_json(const json& j, ScoreResponse& r) {
    j.at("request_id").get_to(r.request_id);
    r.mode = j.value("mode", ScoringMode::masked);
    detail::get_optional(j, "log_p_attribute", r.log_p_attribute);
    detail::get_optional(j, "log_p_prior", r.log_p_prior);
    detail::get_optional(j, "pppl", r.pppl);
    detail::get_optional(j, "loss", r.loss);
    detail::get_optional(j, "pll_more", r.pll_more);
    detail::get_optional(j, "pll_less", r.pll_less);
    detail::get_optional(j, "n_tokens", r.n_tokens);
    detail::get_optional(j, "n_attribute_tokens", r.n_attribute_tokens);
    detail::get_optional(j, "error", r.error);
}

/// Identity of a scoring question: equal keys must always yield equal responses.
struct CacheKey {
    std::string model_name;
    ScoringMode scoring_mode = ScoringMode::masked;
    std::string text_hash;
    std::string span_hash;

    bool operator==(const CacheKey&) const = default;

    std::string str() const {
        return model_name + "|" + to_string(scoring_mode) + "|" + text_hash + "|" + span_hash;
    }
};

inline CacheKey cache_key(const std::string& model, const ScoreRequest& r) {
    CacheKey k;
    k.model_name = model;
    k.scoring_mode = r.mode;
    switch (r.mode) {
    case ScoringMode::masked:
        k.text_hash = hash_fields({r.text, r.masked_attribute_text, r.masked_attribute_target_text,
                                   r.attribute, r.first_mask ? "first" : "all"});
        break;
    case ScoringMode::crows_pll:
        k.text_hash = hash_fields({r.sentence_more, r.sentence_less});
        break;
    default:
        k.text_hash = hash_fields({r.text, r.attribute});
        break;
    }
    std::string spans;
    for (const auto& s : r.mask_spans)
        spans += std::to_string(s.offset) + ":" + std::to_string(s.length) + ";";
    k.span_hash = hash_fields({spans});
    return k;
}

} // namespace biasaudit
