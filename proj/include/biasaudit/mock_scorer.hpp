#pragma once

// Deterministic stand-in for the language-model scorer. Scores are pure functions of
// the request text (FNV-1a hashes mapped to [0, 1)), so repeated or re-batched
// requests always agree. Optional boosts shift the association (masked) or loss
// (causal) of sentences whose attribute matches a given word.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "util.hpp"
#include "wire.hpp"

namespace biasaudit {

struct MockScorerOptions {
    std::string model = "mock-mlm";
    ScoringMode mode = ScoringMode::masked;
    std::map<std::string, double> boost; // attribute word -> shift
};

class MockScorer {
public:
    explicit MockScorer(MockScorerOptions opt = {}) : opt_(std::move(opt)) {}

    /// Masked-LM scorers answer masked, pppl and pair requests; causal scorers only loss.
    static bool serves(ScoringMode started, ScoringMode requested) {
        if (started == requested) return true;
        const bool mlm = started == ScoringMode::masked || started == ScoringMode::crows_pll || started == ScoringMode::pppl;
        return mlm && requested != ScoringMode::causal_loss;
    }

    static bool known_model(const std::string& name) { return !name.empty() && name.rfind("unknown", 0) != 0; }

    json handshake() const {
        if (!known_model(opt_.model))
            return json{{"ready", false}, {"error", "model '" + opt_.model + "' not found on the model hub"}};
        return json{{"ready", true}, {"model", opt_.model}};
    }

    ScoreResponse score(const ScoreRequest& r) const {
        ScoreResponse out;
        out.request_id = r.request_id;
        out.mode = r.mode;
        if (!serves(opt_.mode, r.mode)) {
            out.error = "mode " + to_string(r.mode) + " requested from a scorer started in " + to_string(opt_.mode) + " mode";
            return out;
        }
        switch (r.mode) {
        case ScoringMode::masked: {
            if (r.masked_attribute_text.empty() || r.masked_attribute_target_text.empty()) {
                out.error = "masked request without masked texts";
                return out;
            }
            const double lp = -1.0 - 3.0 * unit("prior|" + r.attribute + "|" + r.masked_attribute_target_text);
            const double delta = 0.5 * (unit("assoc|" + r.text) - 0.5) + boost_for(r.attribute);
            out.log_p_prior = lp;
            out.log_p_attribute = std::min(-1e-6, lp + delta);
            out.pppl = pppl(r.text);
            out.n_tokens = static_cast<int>(words(r.text).size()) + 2;
            out.n_attribute_tokens = r.attribute.size() > 8 ? 2 : 1;
            break;
        }
        case ScoringMode::pppl:
            out.pppl = pppl(r.text);
            out.n_tokens = static_cast<int>(words(r.text).size()) + 2;
            break;
        case ScoringMode::causal_loss: {
            double b = 0.0;
            for (const auto& w : words(r.text)) b += boost_for(w);
            out.loss = 2.0 + unit("loss|" + r.text) + b;
            out.n_tokens = static_cast<int>(words(r.text).size()) + 1;
            break;
        }
        case ScoringMode::crows_pll: {
            const auto more = words(r.sentence_more), less = words(r.sentence_less);
            const std::multiset<std::string> a(more.begin(), more.end()), b(less.begin(), less.end());
            std::multiset<std::string> common;
            std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(common, common.begin()));
            if (common.empty()) {
                out.error = "pairing error: sentences share no unmodified tokens";
                return out;
            }
            out.pll_more = pll(more, common, r.sentence_more);
            out.pll_less = pll(less, common, r.sentence_less);
            out.pppl = pppl(r.sentence_more);
            out.n_tokens = static_cast<int>(more.size());
            break;
        }
        }
        return out;
    }

    static double unit(const std::string& s) {
        return static_cast<double>(splitmix64(fnv1a64(s)) >> 11) * 0x1.0p-53;
    }

    static double pppl(const std::string& text) { return 1.0 + 20.0 * unit("pppl|" + text); }

    static std::vector<std::string> words(const std::string& s) {
        std::istringstream in(s);
        std::vector<std::string> out;
        std::string w;
        while (in >> w) out.push_back(w);
        return out;
    }

private:
    double boost_for(const std::string& word) const {
        auto it = opt_.boost.find(word);
        return it == opt_.boost.end() ? 0.0 : it->second;
    }

    static double pll(const std::vector<std::string>& tokens, const std::multiset<std::string>& common,
                      const std::string& sentence) {
        double s = 0.0;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (!common.count(tokens[i])) continue;
            s -= 0.5 + unit("pll|" + std::to_string(i) + "|" + tokens[i] + "|" + std::to_string(sentence.size()));
        }
        return s;
    }

    MockScorerOptions opt_;
};

} // namespace biasaudit
