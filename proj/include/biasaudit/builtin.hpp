#pragma once

// Shipped lexicon and template set: 94 gendered attribute pairs, neo-pronouns,
// character and personality trait dimensions (positive and negative), six templates.

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "domain.hpp"

namespace biasaudit::builtin {

inline const std::vector<std::string>& female_words() {
    static const std::vector<std::string> words{
        "abbess", "actress", "airwoman", "aunt", "ballerina", "baroness", "barwoman", "belle",
        "bellgirl", "bride", "bride", "busgirl", "businesswoman", "camerawoman", "chairwoman",
        "chick", "congresswoman", "councilwoman", "countrywoman", "cowgirl", "czarina",
        "daughter", "diva", "duchess", "empress", "enchantress", "female", "fiancee", "gal",
        "gal", "girl", "girlfriend", "godmother", "governess", "granddaughter", "grandma",
        "grandmother", "handywoman", "headmistress", "heiress", "heroine", "hostess",
        "housewife", "lady", "lady", "lady", "lady", "landlady", "lass", "lass", "maam", "madam",
        "maid", "maiden", "maidservant", "mama", "marchioness", "masseuse", "mezzo", "minx",
        "mistress", "mistress", "mom", "mommy", "mother", "mum", "niece", "nun", "nun",
        "policewoman", "priestess", "princess", "queen", "saleswoman", "schoolgirl",
        "seamstress", "seamstress", "she", "sister", "sistren", "sorceress", "spokeswoman",
        "stateswoman", "stepdaughter", "stepmother", "stewardess", "strongwoman", "suitress",
        "waitress", "widow", "wife", "wife", "witch", "woman"};
    return words;
}

inline const std::vector<std::string>& male_words() {
    static const std::vector<std::string> words{
        "abbot", "actor", "airman", "uncle", "ballet dancer", "baron", "barman", "beau",
        "bellboy", "bridegroom", "groom", "busboy", "businessman", "cameraman", "chairman",
        "dude", "congressman", "councilman", "countryman", "cowboy", "czar", "son", "divo",
        "duke", "emperor", "enchanter", "male", "fiance", "guy", "dude", "boy", "boyfriend",
        "godfather", "governor", "grandson", "grandpa", "grandfather", "handyman", "headmaster",
        "heir", "hero", "host", "househusband", "lord", "fella", "mentleman", "gentleman",
        "landlord", "lad", "chap", "sir", "sir", "manservant", "bachelor", "manservant", "papa",
        "marquis", "masseur", "baritone", "stud", "master", "paramour", "dad", "daddy", "father",
        "dad", "nephew", "priest", "monk", "policeman", "priest", "prince", "king", "salesman",
        "schoolboy", "tailor", "seamster", "he", "brother", "brethren", "sorcerer", "spokesman",
        "statesman", "stepson", "stepfather", "steward", "strongman", "suitor", "waiter",
        "widower", "husband", "hubby", "wizard", "man"};
    return words;
}

inline const std::vector<std::string>& neo_words() {
    static const std::vector<std::string> words{"co", "vi", "xe", "cy", "ze"};
    return words;
}

namespace detail {

using DimensionList = std::vector<std::pair<std::string, std::vector<std::string>>>;

inline const DimensionList& positive_traits() {
    static const DimensionList dims{
        {"empathy", {"affable", "charitable", "compassionate", "concerned", "considerate",
                     "courteous", "empathetic", "friendly", "gracious", "liberal", "sensitive",
                     "sympathetic", "understanding"}},
        {"order", {"abstinent", "austere", "careful", "cautious", "clean", "conservative",
                   "decent", "deliberate", "disciplined", "earnest", "obedient", "ordered",
                   "scrupulous", "self-controlled", "self-denying", "serious", "tidy"}},
        {"resourceful", {"confident", "courageous", "independent", "intelligent", "perseverant",
                         "persistent", "purposeful", "resourceful", "sagacious", "zealous"}},
        {"serenity", {"forbearing", "forgiving", "meek", "merciful", "patient", "peaceful",
                      "serene"}},
        {"extroversion", {"active", "adventurous", "assertive", "bold", "energetic",
                          "extroverted", "talkative"}},
        {"agreeableness", {"agreeable", "cooperative", "generous", "kind", "trustful",
                           "unselfish", "warm"}},
        {"conscientiousness", {"conscientious", "hardworking", "organized", "practical",
                               "responsible", "thorough", "thrifty"}},
        {"emotional stability", {"at ease", "calm", "contented", "not envious", "relaxed",
                                 "stable", "unemotional"}},
        {"openness", {"analytical", "creative", "curious", "imaginative", "intelligent",
                      "reflective", "sophisticated"}},
    };
    return dims;
}

// Antonym lists as published; repeated entries are collapsed when the lexicon is built.
inline const DimensionList& negative_traits() {
    static const DimensionList dims{
        {"empathy", {"disagreeable", "uncharitable", "unfeeling", "unconcerned", "inconsiderate",
                     "discourteous", "callous", "unfriendly", "ungracious", "conservative",
                     "insensitive", "unsympathetic", "inconsiderate"}},
        {"order", {"indulgent", "genial", "careless", "reckless", "dirty", "liberal", "indecent",
                   "unmotivated", "undisciplined", "flippant", "disobedient", "disorganized",
                   "unscrupulous", "undisciplined", "self-indulgent", "frivolous", "untidy"}},
        {"resourceful", {"unsure", "cowardly", "dependent", "stupid", "weak", "intermittent",
                         "aimless", "unresourceful", "foolish", "unenthusiastic"}},
        {"serenity", {"impatient", "unforgiving", "assertive", "merciless", "impatient",
                      "disturbed", "agitated"}},
        {"extroversion", {"inactive", "unadventurous", "unassertive", "timid", "unenergetic",
                          "introverted", "silent"}},
        {"agreeableness", {"disagreeable", "uncooperative", "stingy", "unkind", "distrustful",
                           "selfish", "cold"}},
        {"conscientiousness", {"negligent", "lazy", "disorganized", "impractical",
                               "irresponsible", "careless", "extravagant"}},
        {"emotional stability", {"nervous", "angry", "discontented", "envious", "tense",
                                 "unstable", "emotional"}},
        {"openness", {"unanalytical", "uncreative", "uninquisitive", "unimaginative",
                      "unintelligent", "unreflective", "unsophisticated"}},
    };
    return dims;
}

} // namespace detail

inline const std::vector<std::string>& character_dimensions() {
    static const std::vector<std::string> v{"empathy", "order", "resourceful", "serenity"};
    return v;
}

inline const std::vector<std::string>& personality_dimensions() {
    static const std::vector<std::string> v{"extroversion", "agreeableness", "conscientiousness",
                                            "emotional stability", "openness"};
    return v;
}

inline Lexicon lexicon() {
    Lexicon lex;
    lex.attribute_groups["female"] = female_words();
    lex.attribute_groups["male"] = male_words();
    lex.attribute_groups["neo"] = neo_words();
    lex.paired_groups = {"female", "male"};
    lex.group_possessive = {{"female", "her"}, {"male", "his"}};
    lex.pronouns = {
        {"she", {"she", "her", "her"}}, {"he", {"he", "him", "his"}},
        {"co", {"co", "co", "cos"}},    {"vi", {"vi", "vir", "vis"}},
        {"xe", {"xe", "xem", "xyr"}},   {"cy", {"cy", "cym", "cyr"}},
        {"ze", {"ze", "zir", "zir"}},
    };
    auto add = [&](const detail::DimensionList& dims, Polarity pol) {
        for (const auto& [dim, words] : dims) {
            auto& list = lex.target_dimensions[dim];
            std::set<std::string> seen;
            for (const auto& w : words) {
                if (seen.insert(w).second) list.push_back({w, pol});
            }
        }
    };
    add(detail::positive_traits(), Polarity::positive);
    add(detail::negative_traits(), Polarity::negative);
    lex.subsets["common7"] = {{"daughter", "son"}, {"girl", "boy"},   {"mother", "father"},
                              {"sister", "brother"}, {"woman", "man"}, {"she", "he"},
                              {"wife", "husband"}};
    return lex;
}

inline std::vector<Template> templates() {
    const std::set<Polarity> both{Polarity::positive, Polarity::negative};
    const std::set<Polarity> positive_only{Polarity::positive};
    return {
        {"t1", TemplateCategory::indirect, "[DET/PRONOUN] [attribute] is [ARTICLE] [target] person.",
         both, AttributeCase::subject},
        {"t2", TemplateCategory::indirect, "[DET/PRONOUN] [attribute] is [target].", both,
         AttributeCase::subject},
        {"t3", TemplateCategory::direct,
         "[DET/PRONOUN] [attribute] possesses [ARTICLE] [target] personality.", both,
         AttributeCase::subject},
        {"t4", TemplateCategory::direct,
         "[DET/PRONOUN] [attribute] is known for [PRONOUN] [target] personality.", both,
         AttributeCase::subject},
        {"t5", TemplateCategory::direct,
         "people admire [DET/PRONOUN] [attribute] because of [PRONOUN] [target] personality.",
         positive_only, AttributeCase::object},
        {"t6", TemplateCategory::direct,
         "[DET/PRONOUN] [attribute]'s [target] personality is valued at [PRONOUN] work.",
         positive_only, AttributeCase::possessive},
    };
}

inline std::vector<std::string> indirect_template_ids() { return {"t1", "t2"}; }
inline std::vector<std::string> direct_template_ids() { return {"t3", "t4", "t5", "t6"}; }

} // namespace biasaudit::builtin
