#pragma once

// End-to-end studies: probe construction and scoring, per-cell analysis
// (LMM + Welch + part R^2 + bootstrap), perplexity bins, pair corpora and the
// profession replication.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "config.hpp"
#include "domain.hpp"
#include "error.hpp"
#include "inference.hpp"
#include "lmm.hpp"
#include "scorer_bridge.hpp"
#include "template_engine.hpp"
#include "util.hpp"

namespace biasaudit {

// ---------------------------------------------------------------------------
// Probe construction and scoring
// ---------------------------------------------------------------------------

inline std::vector<Template> select_templates(const std::vector<Template>& all, const std::vector<std::string>& ids) {
    std::vector<Template> out;
    for (const auto& id : ids) {
        auto it = std::find_if(all.begin(), all.end(), [&](const Template& t) { return t.id == id; });
        if (it == all.end()) throw ConfigError("unknown template '" + id + "'");
        out.push_back(*it);
    }
    return out;
}

/// Candidate sets for every configured dimension over the union of contrast groups.
inline ExpansionResult expand_study(const StudyConfig& c, const StudyResources& res) {
    const auto templates = select_templates(res.templates, c.templates);
    ExpansionResult out;
    for (const auto& dim : c.dimensions) {
        auto r = expand(templates, res.lexicon, dim, c.polarities(), c.groups());
        out.sets.insert(out.sets.end(), std::make_move_iterator(r.sets.begin()), std::make_move_iterator(r.sets.end()));
        out.notes.insert(out.notes.end(), r.notes.begin(), r.notes.end());
    }
    return out;
}

struct ScoredStudy {
    std::vector<ProbeSentence> probes;
    std::vector<ScoreRecord> records;
};

/// Scores candidates, keeps the minimum-pppl variants (with pair balancing), builds
/// masks in masked mode and scores the resulting probes.
inline ScoredStudy score_study(const StudyConfig& c, ScorerBridge& bridge, std::vector<CandidateSet>& sets) {
    bridge.score_candidates(sets, c.mode == ScoringMode::masked ? ScoringMode::pppl : ScoringMode::causal_loss);
    ScoredStudy out;
    out.probes = select_variants(sets);
    if (c.mode == ScoringMode::masked)
        for (auto& p : out.probes) p = with_masks(std::move(p), c.mask_token);
    out.records = bridge.score_batch(out.probes, c.mode);
    return out;
}

/// Pairs each probe with its score record by sentence id.
inline std::vector<AnalysisRow> join_scores(const std::vector<ProbeSentence>& probes,
                                            const std::vector<ScoreRecord>& records) {
    std::unordered_map<std::string, const ScoreRecord*> by_id;
    for (const auto& r : records) by_id.emplace(r.sentence_id, &r);
    std::vector<AnalysisRow> rows;
    rows.reserve(probes.size());
    std::size_t missing = 0;
    std::string first;
    for (const auto& p : probes) {
        auto it = by_id.find(p.sentence_id);
        if (it == by_id.end()) {
            if (missing++ == 0) first = p.sentence_id;
            continue;
        }
        rows.push_back({p, *it->second});
    }
    if (missing)
        throw IncompleteScoringError(std::to_string(missing) + " probe(s) have no score record (first: " + first + ")");
    return rows;
}

// ---------------------------------------------------------------------------
// Row filters
// ---------------------------------------------------------------------------

/// Negates the association of negative-polarity rows. Applying it twice is the identity.
inline std::vector<AnalysisRow> apply_polarity_flip(std::vector<AnalysisRow> rows) {
    for (auto& r : rows)
        if (r.probe.polarity == Polarity::negative) r.score.association_score = -r.score.association_score;
    return rows;
}

/// Keeps rows of paired groups whose pair index belongs to the named subset. Rows of
/// unpaired groups are kept unchanged.
inline std::vector<AnalysisRow> filter_lexicon_subset(const std::vector<AnalysisRow>& rows, const Lexicon& lex,
                                                      const std::string& subset) {
    if (subset.empty()) return rows;
    const auto keep = lex.subset_pair_indices(subset);
    std::vector<AnalysisRow> out;
    for (const auto& r : rows)
        if (!lex.is_paired(r.probe.group) || keep.count(r.probe.pair_index)) out.push_back(r);
    return out;
}

inline std::vector<AnalysisRow> filter_templates(const std::vector<AnalysisRow>& rows,
                                                 const std::vector<std::string>& template_ids) {
    std::vector<AnalysisRow> out;
    for (const auto& r : rows)
        if (std::find(template_ids.begin(), template_ids.end(), r.probe.template_id) != template_ids.end())
            out.push_back(r);
    return out;
}

/// Template ids of `selected` that belong to `category`; "all" returns `selected`.
inline std::vector<std::string> category_templates(const std::vector<Template>& all,
                                                   const std::vector<std::string>& selected,
                                                   const std::string& category) {
    if (category == "all") return selected;
    const auto cat = json(category).get<TemplateCategory>();
    std::vector<std::string> out;
    for (const auto& id : selected) {
        auto it = std::find_if(all.begin(), all.end(), [&](const Template& t) { return t.id == id; });
        if (it != all.end() && it->category == cat) out.push_back(id);
    }
    return out;
}

inline AnalysisDataset make_dataset(const std::vector<AnalysisRow>& rows, const std::string& dimension,
                                    const std::pair<std::string, std::string>& contrast,
                                    const std::vector<std::string>& templates) {
    AnalysisDataset ds;
    ds.contrast = contrast;
    ds.dimension = dimension;
    ds.templates = templates;
    for (const auto& r : rows) {
        if (r.probe.dimension != dimension) continue;
        if (r.probe.group != contrast.first && r.probe.group != contrast.second) continue;
        if (!templates.empty() &&
            std::find(templates.begin(), templates.end(), r.probe.template_id) == templates.end())
            continue;
        ds.rows.push_back(r);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Per-cell analysis
// ---------------------------------------------------------------------------

struct AnalysisOptions {
    int bootstrap = 1000;
    unsigned threads = 0;
    bool weighted_welch = true;
    bool lower_is_stronger = false;
    FitOptions fit{};
};

inline AnalysisOptions analysis_options(const StudyConfig& c) {
    AnalysisOptions o;
    o.bootstrap = c.bootstrap;
    o.threads = c.threads;
    o.weighted_welch = c.weighted_welch;
    o.lower_is_stronger = c.mode == ScoringMode::causal_loss;
    return o;
}

/// Seed of one analysis cell. It depends only on the cell's identity, so results do not
/// change with the order or number of cells in a run.
inline std::uint64_t cell_seed(std::uint64_t master, const std::string& dimension,
                               const std::pair<std::string, std::string>& contrast, const std::string& scope) {
    return derive_seed(master, fnv1a64(dimension + '\x1f' + contrast.first + '\x1f' + contrast.second + '\x1f' + scope));
}

/// Model frame with factors group, template and trait; response is the association score.
inline Frame make_frame(const std::vector<AnalysisRow>& rows) {
    Frame f;
    auto& group = f.factors["group"];
    auto& tmpl = f.factors["template"];
    auto& trait = f.factors["trait"];
    for (const auto& r : rows) {
        f.response.push_back(r.score.association_score);
        f.weights.push_back(r.score.weight);
        group.push_back(r.probe.group);
        tmpl.push_back(r.probe.template_id);
        trait.push_back(r.probe.trait);
    }
    return f;
}

inline ModelSpec study_spec(const std::pair<std::string, std::string>& contrast) {
    ModelSpec s;
    s.fixed = FixedContrast{"group", contrast.first, contrast.second};
    s.random = {"template", "trait"};
    return s;
}

/// Full analysis of one frame: LMM coefficient, Welch p-value on the contrast factor,
/// part R^2 with a parametric-bootstrap interval and the resulting verdict.
inline BiasVerdict analyze_frame(const Frame& frame, const ModelSpec& spec, const std::string& dimension,
                                 const std::string& scope, const AnalysisOptions& opt, std::uint64_t seed) {
    if (!spec.fixed) throw ConfigError("analysis needs a fixed contrast");
    const auto& fc = *spec.fixed;
    const auto fac = frame.factors.find(fc.factor);
    if (fac == frame.factors.end()) throw ConfigError("frame lacks factor '" + fc.factor + "'");

    std::vector<double> y1, w1, y2, w2;
    for (std::size_t i = 0; i < frame.size(); ++i) {
        if (fac->second[i] == fc.level1) {
            y1.push_back(frame.response[i]);
            w1.push_back(frame.weights[i]);
        } else if (fac->second[i] == fc.level2) {
            y2.push_back(frame.response[i]);
            w2.push_back(frame.weights[i]);
        }
    }
    const auto welch = welch_test(y1, w1, y2, w2, opt.weighted_welch);

    const LmmProblem full(frame, spec);
    const LmmProblem reduced(frame, drop_fixed(spec));
    const auto full_fit = full.fit(opt.fit);
    const auto reduced_fit = reduced.fit(opt.fit);
    const double r2 = part_r2(full_fit, reduced_fit);

    BiasVerdict v = verdict(full_fit.coefficient(), welch.p, r2, {fc.level1, fc.level2}, opt.lower_is_stronger);
    v.dimension = dimension;
    v.scope = scope;
    if (opt.bootstrap > 0) {
        BootstrapOptions bo;
        bo.replicates = opt.bootstrap;
        bo.seed = seed;
        bo.threads = opt.threads;
        bo.fit = opt.fit;
        const auto ci = bootstrap_ci(full, reduced, full_fit, bo);
        v.effect.ci_low = ci.ci_low;
        v.effect.ci_high = ci.ci_high;
        v.effect.n_bootstrap = ci.n_bootstrap;
        v.effect.n_failed = ci.n_failed;
        v.effect.ci_unreliable = ci.unreliable;
        v.effect.ci_excludes_point = std::isfinite(ci.ci_low) && (r2 < ci.ci_low || r2 > ci.ci_high);
    } else {
        v.effect.ci_low = v.effect.ci_high = std::nan("");
    }

    std::vector<std::string> warnings = full.warnings();
    for (const auto& w : full_fit.warnings) warnings.push_back(w);
    if (v.effect.ci_unreliable) warnings.push_back("bootstrap interval unreliable: too many failed replicates");
    if (v.effect.ci_excludes_point) warnings.push_back("point estimate lies outside the bootstrap interval");
    const double se = full_fit.coefficient_se();
    v.diagnostics = json{{"n", frame.size()},
                         {"n_g1", y1.size()},
                         {"n_g2", y2.size()},
                         {"welch", welch},
                         {"lmm", full_fit},
                         {"lmm_t", se > 0 ? json(full_fit.coefficient() / se) : json(nullptr)},
                         {"reduced",
                          {{"marginal_r2", reduced_fit.marginal_r2},
                           {"converged", reduced_fit.converged},
                           {"theta", reduced_fit.theta}}},
                         {"seed", seed},
                         {"warnings", warnings}};
    return v;
}

struct CellFailure {
    std::string dimension;
    std::pair<std::string, std::string> contrast;
    std::string scope;
    std::string reason;
};

inline void to_json(json& j, const CellFailure& f) {
    j = json{{"dimension", f.dimension},
             {"contrast", json::array({f.contrast.first, f.contrast.second})},
             {"scope", f.scope},
             {"reason", f.reason}};
}

struct StudyResult {
    std::vector<BiasVerdict> verdicts;
    std::vector<CellFailure> failures;
    std::vector<std::string> notes;
};

/// Validates a cell's rows and analyses them. Empty groups become a recorded failure;
/// any other invariant violation is a data error.
inline std::optional<BiasVerdict> analyze_cell(const AnalysisDataset& ds, const std::string& dim,
                                               const std::string& scope, const AnalysisOptions& opt,
                                               std::uint64_t master_seed, std::vector<CellFailure>& failures) {
    auto fail = [&](const std::string& reason) {
        failures.push_back({dim, ds.contrast, scope, reason});
        return std::nullopt;
    };
    const auto violations = validate_dataset(ds);
    std::vector<std::string> hard;
    for (const auto& v : violations)
        if (v.rfind("empty contrast group", 0) != 0) hard.push_back(v);
    if (!hard.empty())
        throw DataError(dim + " " + ds.contrast.first + "-" + ds.contrast.second + ": " + hard.front() +
                        (hard.size() > 1 ? " (+" + std::to_string(hard.size() - 1) + " more)" : ""));
    if (!violations.empty()) return fail(violations.front());
    try {
        return analyze_frame(make_frame(apply_polarity_flip(ds.rows)), study_spec(ds.contrast), dim, scope, opt,
                             cell_seed(master_seed, dim, ds.contrast, scope));
    } catch (const NumericalError& e) {
        return fail(e.what());
    } catch (const DataError& e) {
        return fail(e.what());
    }
}

/// One verdict per dimension x contrast (x template category when configured).
inline StudyResult run_contrast_study(const StudyConfig& c, const StudyResources& res,
                                      const std::vector<AnalysisRow>& all_rows) {
    if (c.mode == ScoringMode::causal_loss)
        for (const auto& r : all_rows)
            if (r.probe.has_masks()) throw ConfigError("causal study received masked probes");
    const auto rows = filter_lexicon_subset(all_rows, res.lexicon, c.lexicon_subset);
    const auto opt = analysis_options(c);
    std::vector<std::string> scopes{"all"};
    if (c.by_template_category) scopes = {"indirect", "direct", "all"};

    StudyResult out;
    for (const auto& dim : c.dimensions) {
        for (const auto& contrast : c.contrasts) {
            for (const auto& scope : scopes) {
                const auto ids = category_templates(res.templates, c.templates, scope);
                if (ids.empty()) {
                    out.failures.push_back({dim, contrast, scope, "no selected template in this category"});
                    continue;
                }
                const auto ds = make_dataset(rows, dim, contrast, ids);
                if (auto v = analyze_cell(ds, dim, scope, opt, c.seed, out.failures)) out.verdicts.push_back(std::move(*v));
            }
        }
    }
    return out;
}

/// Causal-LM variant of the contrast study; lower loss marks the stronger association.
inline StudyResult causal_study(StudyConfig c, const StudyResources& res, const std::vector<AnalysisRow>& rows) {
    if (c.mode != ScoringMode::causal_loss) throw ConfigError("causal study needs mode causal_loss");
    for (const auto& r : rows)
        if (r.score.scoring_mode != ScoringMode::causal_loss)
            throw ConfigError("causal study received " + to_string(r.score.scoring_mode) + " scores");
    return run_contrast_study(c, res, rows);
}

// ---------------------------------------------------------------------------
// Perplexity bins
// ---------------------------------------------------------------------------

struct BinRow {
    std::string label;
    double lower = 0.0;
    double upper = 0.0; // +inf for the overflow bin and the ALL row
    bool is_all = false;
    bool is_overflow = false;
    std::size_t n_g1 = 0;
    std::size_t n_g2 = 0;
    std::optional<BiasVerdict> verdict;
    std::string skipped; // reason when no verdict was produced
};

inline void to_json(json& j, const BinRow& b) {
    j = json{{"label", b.label},
             {"lower", b.lower},
             {"upper", std::isfinite(b.upper) ? json(b.upper) : json(nullptr)},
             {"all", b.is_all},
             {"overflow", b.is_overflow},
             {"n_g1", b.n_g1},
             {"n_g2", b.n_g2},
             {"verdict", b.verdict ? json(*b.verdict) : json(nullptr)},
             {"skipped", b.skipped}};
}

struct BinAnalysis {
    std::string dimension;
    std::pair<std::string, std::string> contrast;
    bool cumulative = false;
    std::vector<BinRow> rows; // regular bins, overflow bin, then ALL
};

inline void to_json(json& j, const BinAnalysis& b) {
    j = json{{"dimension", b.dimension},
             {"contrast", json::array({b.contrast.first, b.contrast.second})},
             {"cumulative", b.cumulative},
             {"rows", b.rows}};
}

/// Re-runs the cell analysis on pseudo-perplexity bins [k*w, (k+1)*w) up to `max_pppl`,
/// plus an overflow bin and an ALL row. Cumulative bins take every row below the upper
/// edge. Bins with fewer than `min_per_group` rows in either group are skipped.
inline BinAnalysis perplexity_bin_analysis(const AnalysisDataset& ds, const BinSettings& bins,
                                           const AnalysisOptions& opt, std::uint64_t master_seed) {
    BinAnalysis out;
    out.dimension = ds.dimension.value_or("");
    out.contrast = ds.contrast;
    out.cumulative = bins.cumulative;
    const auto nbins = static_cast<std::size_t>(std::llround(bins.max_pppl / bins.width));
    const double inf = std::numeric_limits<double>::infinity();

    auto run = [&](BinRow row, const std::string& scope) {
        AnalysisDataset sub = ds;
        sub.rows.clear();
        for (const auto& r : ds.rows) {
            const double x = r.score.pseudo_perplexity;
            if (x >= row.lower && x < row.upper) sub.rows.push_back(r);
        }
        row.n_g1 = sub.count(ds.contrast.first);
        row.n_g2 = sub.count(ds.contrast.second);
        if (std::min(row.n_g1, row.n_g2) < bins.min_per_group) {
            row.skipped = "fewer than " + std::to_string(bins.min_per_group) + " rows in a group (" +
                          std::to_string(row.n_g1) + "/" + std::to_string(row.n_g2) + ")";
        } else {
            std::vector<CellFailure> failures;
            row.verdict = analyze_cell(sub, out.dimension, scope, opt, master_seed, failures);
            if (!failures.empty()) row.skipped = failures.front().reason;
        }
        out.rows.push_back(std::move(row));
    };

    for (std::size_t k = 0; k < nbins; ++k) {
        BinRow row;
        row.upper = static_cast<double>(k + 1) * bins.width;
        row.lower = bins.cumulative ? 0.0 : static_cast<double>(k) * bins.width;
        row.label = bins.cumulative ? "<" + format_general(row.upper)
                                    : "[" + format_general(row.lower) + "," + format_general(row.upper) + ")";
        run(row, "pppl" + row.label);
    }
    BinRow over;
    over.lower = bins.cumulative ? 0.0 : static_cast<double>(nbins) * bins.width;
    over.upper = inf;
    over.is_overflow = true;
    over.label = ">=" + format_general(static_cast<double>(nbins) * bins.width);
    if (bins.cumulative) over.label = "<inf";
    run(over, "pppl" + over.label);
    BinRow all;
    all.lower = -inf;
    all.upper = inf;
    all.is_all = true;
    all.label = "ALL";
    run(all, "all");
    return out;
}

// ---------------------------------------------------------------------------
// Pair corpus (CrowS-Pairs format)
// ---------------------------------------------------------------------------

struct SentencePair {
    std::string sent_more;
    std::string sent_less;
    std::string stereo_antistereo; // "stereo" when sent_more is the stereotypical sentence
    std::string bias_type;
};

/// Reads a CSV with columns sent_more, sent_less, stereo_antistereo and bias_type.
inline std::vector<SentencePair> read_pair_corpus(const std::string& path) {
    const auto table = parse_csv(read_file(path));
    if (table.empty()) throw DataError(path + ": empty pair corpus");
    const auto& header = table.front();
    auto col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError(path + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto cm = col("sent_more"), cl = col("sent_less"), cs = col("stereo_antistereo"), cb = col("bias_type");
    std::vector<SentencePair> out;
    for (std::size_t i = 1; i < table.size(); ++i) {
        const auto& row = table[i];
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() != header.size())
            throw DataError(path + ": row " + std::to_string(i + 1) + " has " + std::to_string(row.size()) +
                            " fields, expected " + std::to_string(header.size()));
        SentencePair p{row[cm], row[cl], row[cs], row[cb]};
        if (p.stereo_antistereo != "stereo" && p.stereo_antistereo != "antistereo")
            throw DataError(path + ": row " + std::to_string(i + 1) + ": stereo_antistereo must be stereo or antistereo");
        out.push_back(std::move(p));
    }
    return out;
}

struct PairScore {
    double pll_more = 0.0;
    double pll_less = 0.0;
    double pppl_more = 1.0;
    double pppl_less = 1.0;
    int tokens_more = 0;
    int tokens_less = 0;
};

inline void to_json(json& j, const PairScore& s) {
    j = json{{"pll_more", s.pll_more},   {"pll_less", s.pll_less},       {"pppl_more", s.pppl_more},
             {"pppl_less", s.pppl_less}, {"tokens_more", s.tokens_more}, {"tokens_less", s.tokens_less}};
}

/// Pseudo-log-likelihoods of both sentences plus each sentence's pppl and token count.
inline std::vector<PairScore> score_pairs(ScorerBridge& bridge, const std::vector<SentencePair>& pairs) {
    std::vector<ScoreRequest> reqs;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        ScoreRequest pll;
        pll.request_id = "p" + std::to_string(i);
        pll.mode = ScoringMode::crows_pll;
        pll.sentence_more = pairs[i].sent_more;
        pll.sentence_less = pairs[i].sent_less;
        reqs.push_back(pll);
        for (const auto* s : {&pairs[i].sent_more, &pairs[i].sent_less}) {
            ScoreRequest r;
            r.request_id = "s" + std::to_string(reqs.size());
            r.mode = ScoringMode::pppl;
            r.text = *s;
            reqs.push_back(r);
        }
    }
    const auto res = bridge.dispatch(reqs);
    std::vector<PairScore> out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = res[3 * i];
        const auto& m = res[3 * i + 1];
        const auto& l = res[3 * i + 2];
        if (!p.pll_more || !p.pll_less || !std::isfinite(*p.pll_more) || !std::isfinite(*p.pll_less))
            throw ProtocolError("pair response lacks finite pseudo-log-likelihoods");
        for (const auto* r : {&m, &l})
            if (!r->pppl || !(*r->pppl > 0) || !std::isfinite(*r->pppl))
                throw ProtocolError("pppl response lacks a positive pppl");
        out.push_back({*p.pll_more, *p.pll_less, *m.pppl, *l.pppl, m.n_tokens.value_or(0), l.n_tokens.value_or(0)});
    }
    return out;
}

struct PairTypeResult {
    std::string bias_type; // "all" aggregates every pair
    std::size_t n_pairs = 0;
    double cps = 0.0; // % of pairs where the stereotypical sentence has the higher PLL; ties count half
    bool low_n = false;
    std::optional<BiasVerdict> verdict;
    std::string failure;
    std::vector<double> length_cuts; // 33rd and 67th token-length percentiles
};

inline void to_json(json& j, const PairTypeResult& r) {
    j = json{{"bias_type", r.bias_type},
             {"n_pairs", r.n_pairs},
             {"cps", r.cps},
             {"low_n", r.low_n},
             {"verdict", r.verdict ? json(*r.verdict) : json(nullptr)},
             {"failure", r.failure},
             {"length_cuts", r.length_cuts}};
}

/// Conditional pseudo-log-likelihood analysis per bias type: CPS plus an LMM of the
/// sentence PLL on stereotype direction with a random intercept for length tercile.
inline std::vector<PairTypeResult> pair_corpus_analysis(const std::vector<SentencePair>& pairs,
                                                        const std::vector<PairScore>& scores,
                                                        const AnalysisOptions& opt, std::uint64_t master_seed) {
    if (pairs.size() != scores.size()) throw DataError("pair corpus and scores differ in length");
    std::vector<std::string> types{"all"};
    for (const auto& p : pairs)
        if (std::find(types.begin() + 1, types.end(), p.bias_type) == types.end()) types.push_back(p.bias_type);
    std::sort(types.begin() + 1, types.end());

    std::vector<PairTypeResult> out;
    const std::pair<std::string, std::string> contrast{"stereo", "antistereo"};
    for (const auto& type : types) {
        PairTypeResult res;
        res.bias_type = type;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < pairs.size(); ++i)
            if (type == "all" || pairs[i].bias_type == type) idx.push_back(i);
        res.n_pairs = idx.size();
        res.low_n = idx.size() < 10;
        double wins = 0.0;
        std::vector<double> lengths;
        for (auto i : idx) {
            const auto& s = scores[i];
            const double stereo = pairs[i].stereo_antistereo == "stereo" ? s.pll_more : s.pll_less;
            const double anti = pairs[i].stereo_antistereo == "stereo" ? s.pll_less : s.pll_more;
            wins += stereo > anti ? 1.0 : (stereo == anti ? 0.5 : 0.0);
            lengths.push_back(s.tokens_more);
            lengths.push_back(s.tokens_less);
        }
        res.cps = idx.empty() ? 0.0 : 100.0 * wins / static_cast<double>(idx.size());
        if (idx.size() < 2) {
            res.failure = "fewer than 2 pairs";
            out.push_back(std::move(res));
            continue;
        }
        res.length_cuts = {quantile(lengths, 1.0 / 3.0), quantile(lengths, 2.0 / 3.0)};
        auto tercile = [&](double len) {
            if (len <= res.length_cuts[0]) return std::string("short");
            if (len <= res.length_cuts[1]) return std::string("medium");
            return std::string("long");
        };

        Frame f;
        for (auto i : idx) {
            const auto& s = scores[i];
            const bool more_is_stereo = pairs[i].stereo_antistereo == "stereo";
            const std::pair<double, double> pll{s.pll_more, s.pll_less};
            const std::pair<double, double> pppl{s.pppl_more, s.pppl_less};
            const std::pair<int, int> len{s.tokens_more, s.tokens_less};
            for (int k = 0; k < 2; ++k) {
                const bool first = k == 0;
                f.response.push_back(first ? pll.first : pll.second);
                f.weights.push_back(1.0 / (first ? pppl.first : pppl.second));
                f.factors["direction"].push_back((first == more_is_stereo) ? "stereo" : "antistereo");
                f.factors["length"].push_back(tercile(first ? len.first : len.second));
            }
        }
        ModelSpec spec;
        spec.response = "pll";
        spec.fixed = FixedContrast{"direction", contrast.first, contrast.second};
        spec.random = {"length"};
        try {
            res.verdict = analyze_frame(f, spec, type, "pairs", opt, cell_seed(master_seed, type, contrast, "pairs"));
            res.verdict->diagnostics["cps"] = res.cps;
            res.verdict->diagnostics["low_n"] = res.low_n;
        } catch (const NumericalError& e) {
            res.failure = e.what();
        } catch (const DataError& e) {
            res.failure = e.what();
        }
        out.push_back(std::move(res));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Profession replication
// ---------------------------------------------------------------------------

struct BartlCategoryResult {
    std::string category;
    std::size_t n_g1 = 0;
    std::size_t n_g2 = 0;
    double mean_g1 = 0.0;
    double mean_g2 = 0.0;
    double difference = 0.0; // mean_g1 - mean_g2
    std::optional<BiasVerdict> verdict;
    std::string failure;
};

inline void to_json(json& j, const BartlCategoryResult& r) {
    j = json{{"category", r.category}, {"n_g1", r.n_g1},
             {"n_g2", r.n_g2},         {"mean_g1", r.mean_g1},
             {"mean_g2", r.mean_g2},   {"difference", r.difference},
             {"verdict", r.verdict ? json(*r.verdict) : json(nullptr)},
             {"failure", r.failure}};
}

/// Per profession category: plain group means of the association and their difference,
/// plus the full LMM verdict with professions as the trait factor.
inline std::vector<BartlCategoryResult> bartl_replication(const std::vector<AnalysisRow>& rows,
                                                          const std::map<std::string, std::string>& category_of,
                                                          const std::pair<std::string, std::string>& contrast,
                                                          const AnalysisOptions& opt, std::uint64_t master_seed) {
    std::map<std::string, std::vector<AnalysisRow>> by_cat;
    for (const auto& r : rows) {
        if (r.probe.group != contrast.first && r.probe.group != contrast.second) continue;
        auto it = category_of.find(r.probe.trait);
        if (it == category_of.end()) throw DataError("profession '" + r.probe.trait + "' has no category");
        by_cat[it->second].push_back(r);
    }
    std::vector<BartlCategoryResult> out;
    for (const auto& [cat, cat_rows] : by_cat) {
        BartlCategoryResult res;
        res.category = cat;
        std::vector<double> a, b;
        for (const auto& r : cat_rows)
            (r.probe.group == contrast.first ? a : b).push_back(r.score.association_score);
        res.n_g1 = a.size();
        res.n_g2 = b.size();
        res.mean_g1 = a.empty() ? std::nan("") : mean(a);
        res.mean_g2 = b.empty() ? std::nan("") : mean(b);
        res.difference = res.mean_g1 - res.mean_g2;
        AnalysisDataset ds;
        ds.rows = cat_rows;
        ds.contrast = contrast;
        std::vector<CellFailure> failures;
        res.verdict = analyze_cell(ds, cat, "bartl", opt, master_seed, failures);
        if (!failures.empty()) res.failure = failures.front().reason;
        out.push_back(std::move(res));
    }
    return out;
}

/// Reads a two-column CSV (profession, category).
inline std::map<std::string, std::string> read_profession_categories(const std::string& path) {
    const auto table = parse_csv(read_file(path));
    std::map<std::string, std::string> out;
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& row = table[i];
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() < 2) throw DataError(path + ": row " + std::to_string(i + 1) + " needs profession,category");
        if (i == 0 && row[0] == "profession") continue;
        out[to_lower(row[0])] = row[1];
    }
    return out;
}

} // namespace biasaudit
