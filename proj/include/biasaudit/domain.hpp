#pragma once

// Shared data vocabulary: lexicons, templates, probe sentences, score records and
// the joined analysis dataset, plus their line-delimited JSON encodings.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "util.hpp"

namespace biasaudit {

using json = nlohmann::json;

enum class Polarity { positive, negative };

NLOHMANN_JSON_SERIALIZE_ENUM(Polarity, {
    {Polarity::positive, "positive"},
    {Polarity::negative, "negative"},
})

/// Scoring modes understood by the scorer. `pppl` is request-only (candidate selection).
enum class ScoringMode { masked, pppl, causal_loss, crows_pll };

NLOHMANN_JSON_SERIALIZE_ENUM(ScoringMode, {
    {ScoringMode::masked, "masked"},
    {ScoringMode::pppl, "pppl"},
    {ScoringMode::causal_loss, "causal_loss"},
    {ScoringMode::crows_pll, "crows_pll"},
})

inline std::string to_string(ScoringMode m) { return json(m).get<std::string>(); }

inline ScoringMode parse_scoring_mode(const std::string& s) {
    for (auto m : {ScoringMode::masked, ScoringMode::pppl, ScoringMode::causal_loss,
                   ScoringMode::crows_pll}) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError("unknown scoring mode: " + s);
}

// ---------------------------------------------------------------------------
// Lexicon
// ---------------------------------------------------------------------------

struct TraitWord {
    std::string word;
    Polarity polarity = Polarity::positive;

    bool operator==(const TraitWord&) const = default;
};

/// Case forms of a pronoun used as an attribute word.
struct PronounForms {
    std::string subject;
    std::string object;
    std::string possessive;

    bool operator==(const PronounForms&) const = default;
};

struct Lexicon {
    /// Group label -> ordered attribute words. Groups named in `paired_groups` pair positionally.
    std::map<std::string, std::vector<std::string>> attribute_groups;
    /// Dimension label -> trait words with polarity.
    std::map<std::string, std::vector<TraitWord>> target_dimensions;
    /// Attribute words that are pronouns, with their case forms.
    std::map<std::string, PronounForms> pronouns;
    /// Possessive pronoun agreeing with a group, for noun attributes (female -> her).
    std::map<std::string, std::string> group_possessive;
    /// Exactly two groups whose lists pair entry by entry, or empty.
    std::vector<std::string> paired_groups;
    /// Named subsets of attribute pairs, each pair ordered as `paired_groups`.
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> subsets;

    bool operator==(const Lexicon&) const = default;

    bool is_paired(const std::string& group) const {
        return std::find(paired_groups.begin(), paired_groups.end(), group) != paired_groups.end();
    }

    /// Pair indices whose (first, second) words match a named subset.
    std::set<int> subset_pair_indices(const std::string& name) const {
        auto it = subsets.find(name);
        if (it == subsets.end()) throw ConfigError("unknown lexicon subset: " + name);
        if (paired_groups.size() != 2) throw ConfigError("lexicon has no paired groups");
        const auto& a = attribute_groups.at(paired_groups[0]);
        const auto& b = attribute_groups.at(paired_groups[1]);
        std::set<int> out;
        for (const auto& [first, second] : it->second) {
            bool found = false;
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a[i] == first && b[i] == second) {
                    out.insert(static_cast<int>(i));
                    found = true;
                }
            }
            if (!found) throw ConfigError("subset pair not in lexicon: " + first + "-" + second);
        }
        return out;
    }

    /// Returns a list of invariant violations; empty when the lexicon is well formed.
    std::vector<std::string> validate() const {
        std::vector<std::string> out;
        for (const auto& [g, words] : attribute_groups) {
            if (words.empty()) out.push_back("empty attribute group: " + g);
        }
        for (const auto& [d, traits] : target_dimensions) {
            if (traits.empty()) out.push_back("empty target dimension: " + d);
            std::set<std::pair<std::string, Polarity>> seen;
            for (const auto& t : traits) {
                if (!seen.insert({t.word, t.polarity}).second)
                    out.push_back("duplicate trait word in " + d + ": " + t.word);
            }
        }
        if (!paired_groups.empty()) {
            if (paired_groups.size() != 2) {
                out.push_back("paired_groups must name exactly two groups");
            } else {
                auto a = attribute_groups.find(paired_groups[0]);
                auto b = attribute_groups.find(paired_groups[1]);
                if (a == attribute_groups.end() || b == attribute_groups.end())
                    out.push_back("paired group not defined");
                else if (a->second.size() != b->second.size())
                    out.push_back("paired groups differ in length: " + paired_groups[0] + " " +
                                  std::to_string(a->second.size()) + " vs " + paired_groups[1] +
                                  " " + std::to_string(b->second.size()));
            }
        }
        return out;
    }
};

inline void to_json(json& j, const TraitWord& t) { j = json{{"word", t.word}, {"polarity", t.polarity}}; }
inline void from_json(const json& j, TraitWord& t) {
    j.at("word").get_to(t.word);
    t.polarity = j.value("polarity", Polarity::positive);
}

inline void to_json(json& j, const PronounForms& p) {
    j = json{{"subject", p.subject}, {"object", p.object}, {"possessive", p.possessive}};
}
inline void from_json(const json& j, PronounForms& p) {
    j.at("subject").get_to(p.subject);
    j.at("object").get_to(p.object);
    j.at("possessive").get_to(p.possessive);
}

inline void to_json(json& j, const Lexicon& l) {
    j = json{{"attribute_groups", l.attribute_groups},
             {"target_dimensions", l.target_dimensions},
             {"pronouns", l.pronouns},
             {"group_possessive", l.group_possessive},
             {"paired_groups", l.paired_groups},
             {"subsets", l.subsets}};
}
inline void from_json(const json& j, Lexicon& l) {
    j.at("attribute_groups").get_to(l.attribute_groups);
    j.at("target_dimensions").get_to(l.target_dimensions);
    l.pronouns = j.value("pronouns", std::map<std::string, PronounForms>{});
    l.group_possessive = j.value("group_possessive", std::map<std::string, std::string>{});
    l.paired_groups = j.value("paired_groups", std::vector<std::string>{});
    l.subsets = j.value("subsets",
                        std::map<std::string, std::vector<std::pair<std::string, std::string>>>{});
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

enum class TemplateCategory { direct, indirect };

NLOHMANN_JSON_SERIALIZE_ENUM(TemplateCategory, {
    {TemplateCategory::direct, "direct"},
    {TemplateCategory::indirect, "indirect"},
})

/// Grammatical case of the attribute slot; matters only for pronoun attributes.
enum class AttributeCase { subject, object, possessive };

NLOHMANN_JSON_SERIALIZE_ENUM(AttributeCase, {
    {AttributeCase::subject, "subject"},
    {AttributeCase::object, "object"},
    {AttributeCase::possessive, "possessive"},
})

enum class SlotKind { literal, determiner, attribute, article, target, pronoun };

struct PatternPiece {
    SlotKind kind = SlotKind::literal;
    std::string text; // literal text only

    bool operator==(const PatternPiece&) const = default;
};

/// Splits a pattern such as "[DET/PRONOUN] [attribute] is [ARTICLE] [target] person."
/// into literal and slot pieces. Throws TemplateError on unknown slots.
inline std::vector<PatternPiece> parse_pattern(const std::string& pattern) {
    std::vector<PatternPiece> out;
    std::string literal;
    int attributes = 0;
    int targets = 0;
    for (std::size_t i = 0; i < pattern.size(); ++i) {
        if (pattern[i] != '[') {
            literal.push_back(pattern[i]);
            continue;
        }
        const auto close = pattern.find(']', i);
        if (close == std::string::npos) throw TemplateError("unterminated slot in: " + pattern);
        const std::string name = pattern.substr(i + 1, close - i - 1);
        SlotKind kind;
        if (name == "DET/PRONOUN") kind = SlotKind::determiner;
        else if (name == "attribute") kind = SlotKind::attribute;
        else if (name == "ARTICLE") kind = SlotKind::article;
        else if (name == "target") kind = SlotKind::target;
        else if (name == "PRONOUN") kind = SlotKind::pronoun;
        else throw TemplateError("unknown slot name [" + name + "] in: " + pattern);
        if (!literal.empty()) out.push_back({SlotKind::literal, std::move(literal)});
        literal.clear();
        out.push_back({kind, {}});
        attributes += kind == SlotKind::attribute;
        targets += kind == SlotKind::target;
        i = close;
    }
    if (!literal.empty()) out.push_back({SlotKind::literal, std::move(literal)});
    if (attributes != 1 || targets != 1)
        throw TemplateError("pattern needs exactly one [attribute] and one [target] slot: " + pattern);
    return out;
}

struct Template {
    std::string id;
    TemplateCategory category = TemplateCategory::indirect;
    std::string pattern;
    std::set<Polarity> polarities{Polarity::positive, Polarity::negative};
    AttributeCase attribute_case = AttributeCase::subject;

    bool operator==(const Template&) const = default;

    bool allows(Polarity p) const { return polarities.count(p) > 0; }

    std::vector<std::string> validate() const {
        std::vector<std::string> out;
        try {
            parse_pattern(pattern);
        } catch (const TemplateError& e) {
            out.push_back(id + ": " + e.what());
        }
        const bool has_personality = pattern.find("personality") != std::string::npos;
        if (category == TemplateCategory::direct && !has_personality)
            out.push_back(id + ": direct template lacks the word 'personality'");
        if (category == TemplateCategory::indirect && has_personality)
            out.push_back(id + ": indirect template contains the word 'personality'");
        if (polarities.empty()) out.push_back(id + ": empty polarity set");
        return out;
    }
};

inline void to_json(json& j, const Template& t) {
    j = json{{"id", t.id},
             {"category", t.category},
             {"pattern", t.pattern},
             {"polarity", std::vector<Polarity>(t.polarities.begin(), t.polarities.end())},
             {"attribute_case", t.attribute_case}};
}
inline void from_json(const json& j, Template& t) {
    j.at("id").get_to(t.id);
    j.at("category").get_to(t.category);
    j.at("pattern").get_to(t.pattern);
    if (j.contains("polarity")) {
        auto v = j.at("polarity").get<std::vector<Polarity>>();
        t.polarities = {v.begin(), v.end()};
    }
    if (j.contains("attribute_case")) {
        j.at("attribute_case").get_to(t.attribute_case);
    } else if (t.pattern.find("[attribute]'s") != std::string::npos) {
        t.attribute_case = AttributeCase::possessive;
    }
}

// ---------------------------------------------------------------------------
// Probes and scores
// ---------------------------------------------------------------------------

struct Span {
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const Span&) const = default;
    std::size_t end() const { return offset + length; }
};

inline void to_json(json& j, const Span& s) { j = json::array({s.offset, s.offset + s.length}); }
inline void from_json(const json& j, Span& s) {
    s.offset = j.at(0).get<std::size_t>();
    s.length = j.at(1).get<std::size_t>() - s.offset;
}

struct ProbeSentence {
    std::string sentence_id;
    std::string template_id;
    std::string group;
    std::string attribute;         // lexicon entry, e.g. "she"
    std::string attribute_surface; // form in the sentence, e.g. "her"
    std::string trait;
    std::string dimension;
    Polarity polarity = Polarity::positive;
    std::string determiner; // "" when the attribute takes none
    int pair_index = -1;    // position in the paired lexicon lists; -1 when unpaired
    std::string text;
    std::string masked_attribute_text;        // S^(A); empty until masks are built
    std::string masked_attribute_target_text; // S^(A,T)
    int attribute_mask_index = -1;            // whitespace-token index of the first mask in S^(A)
    std::optional<int> attribute_subtokens;
    Span attribute_span;
    Span target_span;
    std::vector<Span> pronoun_spans;

    bool operator==(const ProbeSentence&) const = default;

    bool has_masks() const { return !masked_attribute_text.empty(); }
};

/// Content hash over (template, group, attribute, trait, surface text).
inline std::string make_sentence_id(const std::string& template_id, const std::string& group,
                                    const std::string& attribute, const std::string& trait,
                                    const std::string& text) {
    return hash_fields({template_id, group, attribute, trait, text});
}

inline void to_json(json& j, const ProbeSentence& p) {
    j = json{{"sentence_id", p.sentence_id},
             {"template_id", p.template_id},
             {"group", p.group},
             {"attribute", p.attribute},
             {"attribute_surface", p.attribute_surface},
             {"trait", p.trait},
             {"dimension", p.dimension},
             {"polarity", p.polarity},
             {"determiner", p.determiner},
             {"pair_index", p.pair_index},
             {"text", p.text},
             {"masked_attribute_text", p.masked_attribute_text},
             {"masked_attribute_target_text", p.masked_attribute_target_text},
             {"attribute_mask_index", p.attribute_mask_index},
             {"attribute_span", p.attribute_span},
             {"target_span", p.target_span},
             {"pronoun_spans", p.pronoun_spans}};
    if (p.attribute_subtokens) j["attribute_subtokens"] = *p.attribute_subtokens;
}
inline void from_json(const json& j, ProbeSentence& p) {
    j.at("sentence_id").get_to(p.sentence_id);
    j.at("template_id").get_to(p.template_id);
    j.at("group").get_to(p.group);
    j.at("attribute").get_to(p.attribute);
    p.attribute_surface = j.value("attribute_surface", p.attribute);
    j.at("trait").get_to(p.trait);
    j.at("dimension").get_to(p.dimension);
    j.at("polarity").get_to(p.polarity);
    p.determiner = j.value("determiner", std::string{});
    p.pair_index = j.value("pair_index", -1);
    j.at("text").get_to(p.text);
    p.masked_attribute_text = j.value("masked_attribute_text", std::string{});
    p.masked_attribute_target_text = j.value("masked_attribute_target_text", std::string{});
    p.attribute_mask_index = j.value("attribute_mask_index", -1);
    if (j.contains("attribute_subtokens")) p.attribute_subtokens = j.at("attribute_subtokens").get<int>();
    j.at("attribute_span").get_to(p.attribute_span);
    j.at("target_span").get_to(p.target_span);
    p.pronoun_spans = j.value("pronoun_spans", std::vector<Span>{});
}

struct ScoreRecord {
    std::string sentence_id;
    std::optional<double> p_attribute;
    std::optional<double> p_prior;
    std::optional<double> log_p_attribute;
    std::optional<double> log_p_prior;
    double association_score = 0.0; // log(p_attribute / p_prior), or mean token loss in causal mode
    double pseudo_perplexity = 1.0;
    double weight = 1.0; // 1 / pseudo_perplexity
    std::string model_name;
    ScoringMode scoring_mode = ScoringMode::masked;
    std::optional<int> n_tokens;

    bool operator==(const ScoreRecord&) const = default;
};

namespace detail {
template <class T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
    if (v) j[key] = *v;
}
template <class T>
void get_optional(const json& j, const char* key, std::optional<T>& v) {
    if (j.contains(key) && !j.at(key).is_null()) v = j.at(key).get<T>();
    else v.reset();
}
} // namespace detail

inline void to_json(json& j, const ScoreRecord& r) {
    j = json{{"sentence_id", r.sentence_id},
             {"association_score", r.association_score},
             {"pseudo_perplexity", r.pseudo_perplexity},
             {"weight", r.weight},
             {"model_name", r.model_name},
             {"scoring_mode", r.scoring_mode}};
    detail::put_optional(j, "p_attribute", r.p_attribute);
    detail::put_optional(j, "p_prior", r.p_prior);
    detail::put_optional(j, "log_p_attribute", r.log_p_attribute);
    detail::put_optional(j, "log_p_prior", r.log_p_prior);
    detail::put_optional(j, "n_tokens", r.n_tokens);
}
inline void from_json(const json& j, ScoreRecord& r) {
    j.at("sentence_id").get_to(r.sentence_id);
    j.at("association_score").get_to(r.association_score);
    j.at("pseudo_perplexity").get_to(r.pseudo_perplexity);
    j.at("weight").get_to(r.weight);
    j.at("model_name").get_to(r.model_name);
    j.at("scoring_mode").get_to(r.scoring_mode);
    detail::get_optional(j, "p_attribute", r.p_attribute);
    detail::get_optional(j, "p_prior", r.p_prior);
    detail::get_optional(j, "log_p_attribute", r.log_p_attribute);
    detail::get_optional(j, "log_p_prior", r.log_p_prior);
    detail::get_optional(j, "n_tokens", r.n_tokens);
}

// ---------------------------------------------------------------------------
// Analysis dataset
// ---------------------------------------------------------------------------

struct AnalysisRow {
    ProbeSentence probe;
    ScoreRecord score;
};

struct AnalysisDataset {
    std::vector<AnalysisRow> rows;
    std::pair<std::string, std::string> contrast; // (g1, g2); coefficient > 0 means g1 scores higher
    std::optional<std::string> dimension;
    std::vector<std::string> templates; // empty = no template filter

    std::size_t count(const std::string& group) const {
        std::size_t n = 0;
        for (const auto& r : rows) n += r.probe.group == group;
        return n;
    }
};

/// Checks every row against the domain invariants. Violations are returned, never thrown.
inline std::vector<std::string> validate_dataset(const AnalysisDataset& ds) {
    constexpr double tol = 1e-12;
    std::vector<std::string> out;
    const auto& [g1, g2] = ds.contrast;
    if (g1.empty() || g2.empty() || g1 == g2) out.push_back("invalid contrast specification");

    std::set<std::string> models;
    std::set<ScoringMode> modes;
    for (const auto& row : ds.rows) {
        const auto& p = row.probe;
        const auto& s = row.score;
        const std::string where = " (sentence " + p.sentence_id + ")";
        if (p.group != g1 && p.group != g2) out.push_back("group outside contrast: " + p.group + where);
        if (s.sentence_id != p.sentence_id) out.push_back("probe/score id mismatch" + where);
        if (ds.dimension && p.dimension != *ds.dimension) out.push_back("dimension outside filter" + where);
        if (!ds.templates.empty() &&
            std::find(ds.templates.begin(), ds.templates.end(), p.template_id) == ds.templates.end())
            out.push_back("template outside filter" + where);
        models.insert(s.model_name);
        modes.insert(s.scoring_mode);

        if (p.attribute_span.end() > p.text.size() ||
            p.text.compare(p.attribute_span.offset, p.attribute_span.length, p.attribute_surface) != 0)
            out.push_back("surface text lacks attribute in its slot" + where);
        if (p.target_span.end() > p.text.size() ||
            p.text.compare(p.target_span.offset, p.target_span.length, p.trait) != 0)
            out.push_back("surface text lacks trait in its slot" + where);
        if (p.text != to_lower(p.text)) out.push_back("surface text not lowercase" + where);

        if (!(s.pseudo_perplexity > 0.0) || !std::isfinite(s.pseudo_perplexity))
            out.push_back("non-positive pseudo-perplexity" + where);
        if (!(s.weight > 0.0) || std::abs(s.weight * s.pseudo_perplexity - 1.0) > tol)
            out.push_back("weight/pppl mismatch" + where);
        if (!std::isfinite(s.association_score)) out.push_back("non-finite association score" + where);

        if (s.scoring_mode == ScoringMode::masked) {
            for (const auto& pv : {s.p_attribute, s.p_prior}) {
                if (!pv || !(*pv > 0.0) || *pv > 1.0) out.push_back("probability outside (0,1]" + where);
            }
            const double la = s.log_p_attribute.value_or(s.p_attribute ? std::log(*s.p_attribute) : NAN);
            const double lp = s.log_p_prior.value_or(s.p_prior ? std::log(*s.p_prior) : NAN);
            if (!(std::abs(s.association_score - (la - lp)) <= tol))
                out.push_back("association score != log p_attribute - log p_prior" + where);
        } else if (s.scoring_mode == ScoringMode::causal_loss) {
            if (s.p_attribute || s.p_prior) out.push_back("probability fields present in causal_loss mode" + where);
        }
    }
    if (models.size() > 1) out.push_back("rows mix several model names");
    if (modes.size() > 1) out.push_back("rows mix several scoring modes");
    if (!g1.empty() && ds.count(g1) == 0) out.push_back("empty contrast group: " + g1);
    if (!g2.empty() && g2 != g1 && ds.count(g2) == 0) out.push_back("empty contrast group: " + g2);
    return out;
}

// ---------------------------------------------------------------------------
// Line-delimited files
// ---------------------------------------------------------------------------

template <class T>
void write_jsonl(const std::string& path, const std::vector<T>& items) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    for (const auto& item : items) out << json(item).dump() << '\n';
}

template <class T>
std::vector<T> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<T> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line).get<T>());
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline json read_json_file(const std::string& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1 + static_cast<std::size_t>(
                                   std::count(text.begin(), text.begin() + std::min(e.byte, text.size()), '\n'));
        throw ConfigError(path + ":" + std::to_string(line) + ": " + e.what());
    }
}

} // namespace biasaudit
