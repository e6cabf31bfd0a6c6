#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "domain.hpp"

namespace biasaudit {

inline constexpr std::array<std::string_view, 5> kDeterminers{"the", "my", "your", "our", "their"};

/// a/an for a trait phrase, decided by the first word's initial letter plus exceptions.
inline std::string indefinite_article(std::string_view phrase) {
    static const std::set<std::string_view> an_words{"honest", "honorable", "honourable", "honor",
                                                     "hour", "heir", "herbal"};
    static const std::set<std::string_view> a_words{
        "useful", "unique", "usual", "university", "unicorn", "uniform", "united", "universal",
        "unified", "utopian", "one", "once", "user", "used", "unanimous", "ewe"};
    const auto first = phrase.substr(0, phrase.find_first_of(" -"));
    if (first.empty()) return "a";
    if (an_words.count(first)) return "an";
    if (a_words.count(first) || first.substr(0, 2) == "eu") return "a";
    return std::string_view("aeiou").find(first.front()) != std::string_view::npos ? "an" : "a";
}

struct Candidate {
    std::string determiner;
    std::string text;
    std::string attribute_surface;
    Span attribute_span;
    Span target_span;
    std::vector<Span> pronoun_spans;
    std::optional<double> pppl;

    bool operator==(const Candidate&) const = default;
};

/// Surface variants of one (attribute, trait, template) assignment that differ only in DET/PRONOUN.
struct CandidateSet {
    std::string template_id;
    std::string group;
    std::string attribute;
    std::string trait;
    std::string dimension;
    Polarity polarity = Polarity::positive;
    int pair_index = -1;
    std::vector<Candidate> candidates;

    bool operator==(const CandidateSet&) const = default;
};

inline void to_json(json& j, const Candidate& c) {
    j = json{{"determiner", c.determiner},         {"text", c.text},
             {"attribute_surface", c.attribute_surface}, {"attribute_span", c.attribute_span},
             {"target_span", c.target_span},       {"pronoun_spans", c.pronoun_spans}};
    if (c.pppl) j["pppl"] = *c.pppl;
}
inline void from_json(const json& j, Candidate& c) {
    j.at("determiner").get_to(c.determiner);
    j.at("text").get_to(c.text);
    j.at("attribute_surface").get_to(c.attribute_surface);
    j.at("attribute_span").get_to(c.attribute_span);
    j.at("target_span").get_to(c.target_span);
    c.pronoun_spans = j.value("pronoun_spans", std::vector<Span>{});
    if (j.contains("pppl") && !j.at("pppl").is_null()) c.pppl = j.at("pppl").get<double>();
    else c.pppl.reset();
}
inline void to_json(json& j, const CandidateSet& s) {
    j = json{{"template_id", s.template_id}, {"group", s.group},         {"attribute", s.attribute},
             {"trait", s.trait},             {"dimension", s.dimension}, {"polarity", s.polarity},
             {"pair_index", s.pair_index},   {"candidates", s.candidates}};
}
inline void from_json(const json& j, CandidateSet& s) {
    j.at("template_id").get_to(s.template_id);
    j.at("group").get_to(s.group);
    j.at("attribute").get_to(s.attribute);
    j.at("trait").get_to(s.trait);
    j.at("dimension").get_to(s.dimension);
    j.at("polarity").get_to(s.polarity);
    s.pair_index = j.value("pair_index", -1);
    j.at("candidates").get_to(s.candidates);
}

/// Fills one template for a given group/attribute/trait/determiner, recording slot spans.
inline Candidate render_candidate(const Template& tpl, const Lexicon& lex, const std::string& group,
                                  const std::string& attribute, const std::string& trait,
                                  const std::string& determiner) {
    const auto pieces = parse_pattern(tpl.pattern);
    const auto pron = lex.pronouns.find(attribute);
    const bool is_pronoun = pron != lex.pronouns.end();

    std::string surface = attribute;
    if (is_pronoun) {
        switch (tpl.attribute_case) {
        case AttributeCase::subject: surface = pron->second.subject; break;
        case AttributeCase::object: surface = pron->second.object; break;
        case AttributeCase::possessive: surface = pron->second.possessive; break;
        }
    }
    std::string possessive;
    if (is_pronoun) {
        possessive = pron->second.possessive;
    } else if (auto it = lex.group_possessive.find(group); it != lex.group_possessive.end()) {
        possessive = it->second;
    }

    Candidate c;
    c.determiner = determiner;
    c.attribute_surface = to_lower(surface);
    std::string& out = c.text;
    bool drop_space = false;        // determiner slot was empty
    bool drop_possessive_s = false; // pronoun attribute in "[attribute]'s"
    for (const auto& piece : pieces) {
        switch (piece.kind) {
        case SlotKind::literal: {
            std::string_view lit = piece.text;
            if (drop_possessive_s && lit.substr(0, 2) == "'s") lit.remove_prefix(2);
            if (drop_space && !lit.empty() && lit.front() == ' ') lit.remove_prefix(1);
            drop_space = drop_possessive_s = false;
            out += to_lower(std::string(lit));
            break;
        }
        case SlotKind::determiner:
            if (determiner.empty()) drop_space = true;
            else out += determiner;
            break;
        case SlotKind::attribute:
            c.attribute_span = {out.size(), c.attribute_surface.size()};
            out += c.attribute_surface;
            drop_possessive_s = is_pronoun && tpl.attribute_case == AttributeCase::possessive;
            break;
        case SlotKind::article:
            out += indefinite_article(trait);
            break;
        case SlotKind::target:
            c.target_span = {out.size(), trait.size()};
            out += to_lower(trait);
            break;
        case SlotKind::pronoun:
            if (possessive.empty())
                throw TemplateError(tpl.id + ": no possessive pronoun for group '" + group + "'");
            c.pronoun_spans.push_back({out.size(), possessive.size()});
            out += possessive;
            break;
        }
    }
    return c;
}

struct ExpansionResult {
    std::vector<CandidateSet> sets;
    std::vector<std::string> notes;
};

/// One CandidateSet per (template, trait, group, attribute). Templates that exclude a
/// requested polarity skip those traits and leave a note.
inline ExpansionResult expand(const std::vector<Template>& templates, const Lexicon& lex,
                              const std::string& dimension, const std::set<Polarity>& polarities,
                              const std::vector<std::string>& groups) {
    auto dim = lex.target_dimensions.find(dimension);
    if (dim == lex.target_dimensions.end()) throw ConfigError("unknown dimension: " + dimension);
    ExpansionResult result;
    for (const auto& tpl : templates) {
        parse_pattern(tpl.pattern);
        std::size_t filtered = 0;
        for (const auto& trait : dim->second) {
            if (!polarities.count(trait.polarity)) continue;
            if (!tpl.allows(trait.polarity)) {
                ++filtered;
                continue;
            }
            for (const auto& group : groups) {
                auto words = lex.attribute_groups.find(group);
                if (words == lex.attribute_groups.end()) throw ConfigError("unknown group: " + group);
                const bool paired = lex.is_paired(group);
                for (std::size_t i = 0; i < words->second.size(); ++i) {
                    const auto& attribute = words->second[i];
                    CandidateSet set{tpl.id,       group, attribute, trait.word, dimension,
                                     trait.polarity, paired ? static_cast<int>(i) : -1, {}};
                    if (lex.pronouns.count(attribute)) {
                        set.candidates.push_back(render_candidate(tpl, lex, group, attribute, trait.word, ""));
                    } else {
                        for (auto det : kDeterminers)
                            set.candidates.push_back(
                                render_candidate(tpl, lex, group, attribute, trait.word, std::string(det)));
                    }
                    result.sets.push_back(std::move(set));
                }
            }
        }
        if (filtered > 0)
            result.notes.push_back(tpl.id + ": " + std::to_string(filtered) + " " + dimension +
                                   " trait(s) skipped; template excludes their polarity");
    }
    return result;
}

/// Index of the lowest-pppl candidate; ties go to the lexicographically smaller determiner.
inline std::size_t select_min_pppl(const CandidateSet& set) {
    if (set.candidates.empty()) throw IncompleteScoringError("empty candidate set");
    std::size_t best = 0;
    for (std::size_t i = 0; i < set.candidates.size(); ++i) {
        const auto& c = set.candidates[i];
        if (!c.pppl) throw IncompleteScoringError("no pseudo-perplexity for candidate \"" + c.text + "\"");
        if (i == 0) continue;
        const auto& b = set.candidates[best];
        if (*c.pppl < *b.pppl || (*c.pppl == *b.pppl && c.determiner < b.determiner)) best = i;
    }
    return best;
}

inline ProbeSentence make_probe(const CandidateSet& set, const Candidate& c) {
    ProbeSentence p;
    p.template_id = set.template_id;
    p.group = set.group;
    p.attribute = set.attribute;
    p.attribute_surface = c.attribute_surface;
    p.trait = set.trait;
    p.dimension = set.dimension;
    p.polarity = set.polarity;
    p.determiner = c.determiner;
    p.pair_index = set.pair_index;
    p.text = c.text;
    p.attribute_span = c.attribute_span;
    p.target_span = c.target_span;
    p.pronoun_spans = c.pronoun_spans;
    p.sentence_id = make_sentence_id(p.template_id, p.group, p.attribute, p.trait, p.text);
    return p;
}

/// Picks the minimum-pppl variant per set. When two paired sets pick different
/// determiners, each set also receives the other's choice so the pair stays balanced.
/// Augmentation is a single final step; added sentences are not re-selected.
inline std::vector<ProbeSentence> select_variants(const std::vector<CandidateSet>& sets) {
    using Key = std::tuple<std::string, std::string, Polarity, std::string, int>;
    std::map<Key, std::vector<std::size_t>> pairs;
    std::vector<std::size_t> chosen(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) {
        chosen[i] = select_min_pppl(sets[i]);
        const auto& s = sets[i];
        if (s.pair_index >= 0)
            pairs[{s.template_id, s.dimension, s.polarity, s.trait, s.pair_index}].push_back(i);
    }

    std::vector<std::vector<std::string>> dets(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) dets[i] = {sets[i].candidates[chosen[i]].determiner};
    for (const auto& [key, members] : pairs) {
        if (members.size() != 2 || sets[members[0]].group == sets[members[1]].group) continue;
        const auto a = members[0];
        const auto b = members[1];
        const auto& da = dets[a].front();
        const auto& db = dets[b].front();
        if (da == db) continue;
        auto has = [&](std::size_t s, const std::string& d) {
            return std::any_of(sets[s].candidates.begin(), sets[s].candidates.end(),
                               [&](const Candidate& c) { return c.determiner == d; });
        };
        const std::string add_a = db;
        const std::string add_b = da;
        if (has(a, add_a)) dets[a].push_back(add_a);
        if (has(b, add_b)) dets[b].push_back(add_b);
    }

    std::vector<ProbeSentence> out;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        for (const auto& d : dets[i]) {
            for (const auto& c : sets[i].candidates) {
                if (c.determiner == d) {
                    out.push_back(make_probe(sets[i], c));
                    break;
                }
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const ProbeSentence& x, const ProbeSentence& y) {
        return x.sentence_id < y.sentence_id;
    });
    return out;
}

struct MaskedTexts {
    std::string attribute_masked;        // S^(A)
    std::string attribute_target_masked; // S^(A,T)
    int attribute_mask_index = -1;
};

namespace detail {
inline std::string mask_spans(const std::string& text, std::vector<Span> spans, const std::string& mask) {
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.offset > b.offset; });
    std::string out = text;
    for (const auto& s : spans) out.replace(s.offset, s.length, mask);
    return out;
}

} // namespace detail

/// Masks the attribute and every gendered pronoun slot (S^(A)); S^(A,T) also masks the trait.
inline MaskedTexts build_masks(const ProbeSentence& probe, const std::string& mask_token) {
    const auto& t = probe.text;
    auto check = [&](const Span& s, const std::string& expected, const char* what) {
        if (s.end() > t.size() || t.compare(s.offset, s.length, expected) != 0)
            throw ConsistencyError(std::string(what) + " '" + expected + "' not found at recorded offset in \"" + t + "\"");
    };
    check(probe.attribute_span, probe.attribute_surface, "attribute");
    check(probe.target_span, probe.trait, "trait");
    for (const auto& s : probe.pronoun_spans) {
        if (s.end() > t.size()) throw ConsistencyError("pronoun span outside text: \"" + t + "\"");
        if (s.offset < probe.attribute_span.offset)
            throw ConsistencyError("pronoun precedes attribute; attribute must be the first mask");
    }
    std::vector<Span> spans = probe.pronoun_spans;
    spans.push_back(probe.attribute_span);
    MaskedTexts m;
    m.attribute_masked = detail::mask_spans(t, spans, mask_token);
    spans.push_back(probe.target_span);
    m.attribute_target_masked = detail::mask_spans(t, spans, mask_token);

    // Whitespace tokens before the attribute's offset (unchanged by masking later spans).
    int tokens = 0;
    bool in_token = false;
    for (std::size_t i = 0; i < probe.attribute_span.offset; ++i) {
        const bool space = t[i] == ' ';
        if (!space && !in_token) ++tokens;
        in_token = !space;
    }
    m.attribute_mask_index = tokens;
    return m;
}

inline ProbeSentence with_masks(ProbeSentence probe, const std::string& mask_token) {
    auto m = build_masks(probe, mask_token);
    probe.masked_attribute_text = std::move(m.attribute_masked);
    probe.masked_attribute_target_text = std::move(m.attribute_target_masked);
    probe.attribute_mask_index = m.attribute_mask_index;
    return probe;
}

} // namespace biasaudit
