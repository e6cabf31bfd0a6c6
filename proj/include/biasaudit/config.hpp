#pragma once

// Study configuration: JSON file with validation errors reported as path:line.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "builtin.hpp"
#include "domain.hpp"
#include "error.hpp"

namespace biasaudit {

struct ScorerSettings {
    std::string command;
    std::size_t batch_size = 64;
    double timeout_s = 600.0;
    std::string device = "cpu";
    std::string cache; // empty: <out>/score_cache.jsonl

    bool operator==(const ScorerSettings&) const = default;
};

struct BinSettings {
    bool enabled = false;
    double width = 5.0;
    double max_pppl = 100.0;
    bool cumulative = false;
    std::size_t min_per_group = 30;

    bool operator==(const BinSettings&) const = default;
};

struct StudyConfig {
    std::string model = "bert-base-uncased";
    ScoringMode mode = ScoringMode::masked;
    std::string lexicon_subset;              // empty: full lexicon
    std::vector<std::string> dimensions;
    std::string template_selection = "all";  // all | indirect | direct | custom
    std::vector<std::string> templates;      // resolved template ids
    std::vector<std::pair<std::string, std::string>> contrasts{{"male", "female"}};
    bool include_negative = false;
    bool by_template_category = false;       // also emit indirect/direct verdicts
    int bootstrap = 1000;
    std::uint64_t seed = 0;
    bool weighted_welch = true;
    std::string mask_token = "[MASK]";
    unsigned threads = 0;
    std::string lexicon_file;                // empty: built-in lexicon
    std::string templates_file;              // empty: built-in templates
    ScorerSettings scorer;
    BinSettings bins;
    std::vector<std::string> notes;          // adjustments made during validation

    /// Groups referenced by any contrast, in first-use order.
    std::vector<std::string> groups() const {
        std::vector<std::string> out;
        for (const auto& [a, b] : contrasts) {
            for (const auto& g : {a, b})
                if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
        }
        return out;
    }

    std::set<Polarity> polarities() const {
        if (include_negative) return {Polarity::positive, Polarity::negative};
        return {Polarity::positive};
    }
};

inline void to_json(json& j, const StudyConfig& c) {
    json contrasts = json::array();
    for (const auto& [a, b] : c.contrasts) contrasts.push_back(json::array({a, b}));
    j = json{{"model", c.model},
             {"mode", c.mode},
             {"lexicon", c.lexicon_subset.empty() ? "full" : c.lexicon_subset},
             {"dimensions", c.dimensions},
             {"templates", c.template_selection == "custom" ? json(c.templates) : json(c.template_selection)},
             {"resolved_templates", c.templates},
             {"contrasts", contrasts},
             {"polarity", c.include_negative ? "positive+negative" : "positive"},
             {"by_template_category", c.by_template_category},
             {"bootstrap", c.bootstrap},
             {"seed", c.seed},
             {"weighted_welch", c.weighted_welch},
             {"mask_token", c.mask_token},
             {"threads", c.threads},
             {"lexicon_file", c.lexicon_file},
             {"templates_file", c.templates_file},
             {"scorer",
              {{"command", c.scorer.command},
               {"batch_size", c.scorer.batch_size},
               {"timeout_s", c.scorer.timeout_s},
               {"device", c.scorer.device},
               {"cache", c.scorer.cache}}},
             {"bins",
              {{"enabled", c.bins.enabled},
               {"width", c.bins.width},
               {"max_pppl", c.bins.max_pppl},
               {"cumulative", c.bins.cumulative},
               {"min_per_group", c.bins.min_per_group}}},
             {"notes", c.notes}};
}

namespace detail {

/// Line of the first occurrence of `"key"` in `text`, or 0.
inline std::size_t key_line(const std::string& text, const std::string& key) {
    const auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

} // namespace detail

/// Loaded lexicon and templates for a config (files when given, otherwise built in).
struct StudyResources {
    Lexicon lexicon;
    std::vector<Template> templates;
};

inline StudyResources load_resources(const StudyConfig& c) {
    StudyResources r;
    if (c.lexicon_file.empty()) r.lexicon = builtin::lexicon();
    else {
        try {
            r.lexicon = read_json_file(c.lexicon_file).get<Lexicon>();
        } catch (const json::exception& e) {
            throw ConfigError(c.lexicon_file + ": " + e.what());
        }
    }
    if (auto v = r.lexicon.validate(); !v.empty()) throw ConfigError("lexicon: " + v.front());
    if (c.templates_file.empty()) r.templates = builtin::templates();
    else {
        try {
            r.templates = read_json_file(c.templates_file).get<std::vector<Template>>();
        } catch (const json::exception& e) {
            throw ConfigError(c.templates_file + ": " + e.what());
        }
    }
    for (const auto& t : r.templates) t.validate();
    return r;
}

/// Parses and validates a config document. `source` names the file in messages and
/// `text` is its raw content (used for line numbers).
inline StudyConfig parse_study_config(const json& j, const std::string& source = "<config>",
                                      const std::string& text = "", const std::filesystem::path& base_dir = {}) {
    auto fail = [&](const std::string& key, const std::string& msg) -> ConfigError {
        const auto line = detail::key_line(text, key);
        return ConfigError(source + (line ? ":" + std::to_string(line) : std::string{}) + ": " + msg);
    };
    if (!j.is_object()) throw ConfigError(source + ": config must be a JSON object");
    static const std::set<std::string> known{"model", "mode", "lexicon", "dimensions", "templates", "contrasts",
                                             "polarity", "by_template_category", "bootstrap", "seed",
                                             "weighted_welch", "mask_token", "threads", "lexicon_file",
                                             "templates_file", "scorer", "bins"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw fail(k, "unknown key '" + k + "'");

    StudyConfig c;
    try {
        c.model = j.value("model", c.model);
        if (j.contains("mode")) {
            try {
                c.mode = parse_scoring_mode(j.at("mode").get<std::string>());
            } catch (const ConfigError& e) {
                throw fail("mode", e.what());
            }
            if (c.mode != ScoringMode::masked && c.mode != ScoringMode::causal_loss)
                throw fail("mode", "study mode must be masked or causal_loss");
        }
        const std::string lex = j.value("lexicon", std::string{"full"});
        c.lexicon_subset = lex == "full" ? "" : lex;
        c.dimensions = j.value("dimensions", std::vector<std::string>{});
        c.include_negative = [&] {
            const std::string p = j.value("polarity", std::string{"positive"});
            if (p == "positive") return false;
            if (p == "positive+negative") return true;
            throw fail("polarity", "polarity must be 'positive' or 'positive+negative'");
        }();
        c.by_template_category = j.value("by_template_category", false);
        c.bootstrap = j.value("bootstrap", c.bootstrap);
        c.seed = j.value("seed", c.seed);
        c.weighted_welch = j.value("weighted_welch", true);
        c.mask_token = j.value("mask_token", c.mask_token);
        c.threads = j.value("threads", 0u);
        auto resolve_path = [&](const std::string& p) {
            if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
            return (base_dir / p).lexically_normal().string();
        };
        c.lexicon_file = resolve_path(j.value("lexicon_file", std::string{}));
        c.templates_file = resolve_path(j.value("templates_file", std::string{}));
        if (j.contains("contrasts")) {
            c.contrasts.clear();
            for (const auto& pair : j.at("contrasts")) {
                if (!pair.is_array() || pair.size() != 2) throw fail("contrasts", "each contrast is a [g1, g2] pair");
                c.contrasts.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
            }
        }
        if (j.contains("scorer")) {
            const auto& s = j.at("scorer");
            c.scorer.command = s.value("command", std::string{});
            c.scorer.batch_size = s.value("batch_size", std::size_t{64});
            c.scorer.timeout_s = s.value("timeout_s", 600.0);
            c.scorer.device = s.value("device", std::string{"cpu"});
            c.scorer.cache = resolve_path(s.value("cache", std::string{}));
        }
        if (j.contains("bins")) {
            const auto& b = j.at("bins");
            c.bins.enabled = b.value("enabled", true);
            c.bins.width = b.value("width", 5.0);
            c.bins.max_pppl = b.value("max_pppl", 100.0);
            c.bins.cumulative = b.value("cumulative", false);
            c.bins.min_per_group = b.value("min_per_group", std::size_t{30});
        }
        if (j.contains("templates")) {
            const auto& t = j.at("templates");
            if (t.is_string()) c.template_selection = t.get<std::string>();
            else {
                c.template_selection = "custom";
                c.templates = t.get<std::vector<std::string>>();
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(source + ": " + e.what());
    }

    if (c.dimensions.empty()) throw fail("dimensions", "usage: at least one dimension is required");
    if (c.contrasts.empty()) throw fail("contrasts", "at least one contrast is required");
    if (c.bootstrap < 0) throw fail("bootstrap", "bootstrap must be >= 0");
    if (c.scorer.batch_size == 0) throw fail("batch_size", "batch_size must be >= 1");
    if (!(c.scorer.timeout_s > 0)) throw fail("timeout_s", "timeout_s must be positive");
    if (!(c.bins.width > 0) || !(c.bins.max_pppl > c.bins.width)) throw fail("bins", "bins need 0 < width < max_pppl");

    const auto res = load_resources(c);
    std::set<std::string> template_ids;
    for (const auto& t : res.templates) template_ids.insert(t.id);
    for (const auto& d : c.dimensions)
        if (!res.lexicon.target_dimensions.count(d)) throw fail("dimensions", "unknown dimension '" + d + "'");
    for (const auto& [a, b] : c.contrasts) {
        for (const auto& g : {a, b})
            if (!res.lexicon.attribute_groups.count(g)) throw fail("contrasts", "unknown group '" + g + "'");
        if (a == b) throw fail("contrasts", "contrast compares '" + a + "' with itself");
    }
    if (!c.lexicon_subset.empty()) {
        try {
            res.lexicon.subset_pair_indices(c.lexicon_subset);
        } catch (const ConfigError& e) {
            throw fail("lexicon", e.what());
        }
    }

    auto category_ids = [&](std::optional<TemplateCategory> cat) {
        std::vector<std::string> ids;
        for (const auto& t : res.templates)
            if (!cat || t.category == *cat) ids.push_back(t.id);
        return ids;
    };
    if (c.template_selection == "all") c.templates = category_ids(std::nullopt);
    else if (c.template_selection == "indirect") c.templates = category_ids(TemplateCategory::indirect);
    else if (c.template_selection == "direct") c.templates = category_ids(TemplateCategory::direct);
    else if (c.template_selection == "custom") {
        if (c.templates.empty()) throw fail("templates", "template list is empty");
        for (const auto& id : c.templates)
            if (!template_ids.count(id)) throw fail("templates", "unknown template '" + id + "'");
    } else {
        throw fail("templates", "templates must be all, indirect, direct or a list of ids");
    }

    if (c.include_negative) {
        std::vector<std::string> kept;
        for (const auto& id : c.templates) {
            const auto& t = *std::find_if(res.templates.begin(), res.templates.end(),
                                          [&](const Template& x) { return x.id == id; });
            if (t.allows(Polarity::negative)) kept.push_back(id);
            else if (c.template_selection == "custom")
                throw fail("templates", "template '" + id + "' does not admit negative traits; remove it or use positive polarity");
        }
        if (kept.size() != c.templates.size())
            c.notes.push_back("negative polarity: templates restricted to those admitting negative traits");
        c.templates = kept;
        if (c.templates.empty()) throw fail("templates", "no template admits negative traits");
    }
    return c;
}

inline StudyConfig load_study_config(const std::string& path) {
    const std::string text = read_file(path);
    const json j = read_json_file(path);
    return parse_study_config(j, path, text, std::filesystem::path(path).parent_path());
}

} // namespace biasaudit
