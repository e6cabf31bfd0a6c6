#include <gtest/gtest.h>

#include <random>

#include "biasaudit/builtin.hpp"
#include "biasaudit/mock_scorer.hpp"
#include "biasaudit/pipelines.hpp"
#include "biasaudit/report.hpp"
#include "support.hpp"

using namespace biasaudit;
using namespace testsupport;

namespace {

std::map<std::string, double> male_boost(double delta) {
    std::map<std::string, double> b;
    for (const auto& w : builtin::male_words()) b[w] = delta;
    for (const auto& w : {"he", "him", "his"}) b[w] = delta;
    return b;
}

StudyConfig base_config(ScoringMode mode = ScoringMode::masked) {
    json j{{"model", "mock-mlm"},
           {"mode", to_string(mode)},
           {"dimensions", {"empathy"}},
           {"contrasts", json::array({json::array({"male", "female"})})},
           {"bootstrap", 40},
           {"seed", 11}};
    return parse_study_config(j);
}

std::vector<AnalysisRow> scored_rows(const StudyConfig& c, const std::map<std::string, double>& boost) {
    const auto res = load_resources(c);
    auto exp = expand_study(c, res);
    MockScorerOptions mo;
    mo.model = c.model;
    mo.mode = c.mode;
    mo.boost = boost;
    MockScorer scorer(mo);
    FunctionTransport t([&](const ScoreRequest& r) { return scorer.score(r); });
    ScoreCache cache;
    ScorerBridge bridge(t, cache, c.model);
    auto scored = score_study(c, bridge, exp.sets);
    return join_scores(scored.probes, scored.records);
}

const std::vector<AnalysisRow>& biased_rows() {
    static const auto rows = scored_rows(base_config(), male_boost(0.8));
    return rows;
}

const std::vector<AnalysisRow>& neutral_rows() {
    static const auto rows = scored_rows(base_config(), {});
    return rows;
}

} // namespace

TEST(Pipelines, DetectsInjectedBias) {
    const auto c = base_config();
    const auto res = run_contrast_study(c, load_resources(c), biased_rows());
    ASSERT_EQ(res.verdicts.size(), 1u);
    const auto& v = res.verdicts[0];
    EXPECT_EQ(v.verdict, Verdict::biased);
    EXPECT_NEAR(v.bias_score, 0.8, 0.1);
    EXPECT_EQ(v.direction, Direction::against_g2);
    EXPECT_EQ(v.label, "female");
    EXPECT_LT(v.p_value, 1e-6);
    EXPECT_EQ(v.effect.n_bootstrap + v.effect.n_failed, 40);
    EXPECT_LE(v.effect.ci_low, v.effect.ci_high);
}

TEST(Pipelines, NeutralScorerIsUnbiased) {
    const auto c = base_config();
    const auto res = run_contrast_study(c, load_resources(c), neutral_rows());
    ASSERT_EQ(res.verdicts.size(), 1u);
    EXPECT_EQ(res.verdicts[0].verdict, Verdict::unbiased);
    EXPECT_LT(res.verdicts[0].effect.r2_part, 0.01);
}

TEST(Pipelines, ProbesAreBalancedAcrossPairs) {
    std::map<std::tuple<std::string, std::string, int>, std::map<std::string, std::set<std::string>>> dets;
    for (const auto& r : neutral_rows())
        if (r.probe.pair_index >= 0) {
            dets[{r.probe.template_id, r.probe.trait, r.probe.pair_index}][r.probe.group].insert(r.probe.determiner);
        }
    for (const auto& [key, by_group] : dets) {
        ASSERT_EQ(by_group.size(), 2u);
        EXPECT_EQ(by_group.at("male"), by_group.at("female"));
    }
}

TEST(Pipelines, ContrastSwapNegatesScore) {
    auto c = base_config();
    const auto res = load_resources(c);
    const auto a = run_contrast_study(c, res, biased_rows());
    c.contrasts = {{"female", "male"}};
    const auto b = run_contrast_study(c, res, biased_rows());
    ASSERT_EQ(a.verdicts.size(), 1u);
    ASSERT_EQ(b.verdicts.size(), 1u);
    EXPECT_NEAR(a.verdicts[0].bias_score, -b.verdicts[0].bias_score, 1e-6);
    EXPECT_NEAR(a.verdicts[0].p_value, b.verdicts[0].p_value, 1e-9);
    EXPECT_NEAR(a.verdicts[0].effect.r2_part, b.verdicts[0].effect.r2_part, 1e-6);
    EXPECT_EQ(a.verdicts[0].label, b.verdicts[0].label);
}

TEST(Pipelines, CellResultsIndependentOfOtherCells) {
    auto c = base_config();
    c.dimensions = {"empathy", "order"};
    c.bootstrap = 20;
    const auto rows = scored_rows(c, male_boost(0.3));
    const auto res = load_resources(c);
    const auto both = run_contrast_study(c, res, rows);
    c.dimensions = {"order"};
    const auto one = run_contrast_study(c, res, rows);
    ASSERT_EQ(both.verdicts.size(), 2u);
    ASSERT_EQ(one.verdicts.size(), 1u);
    EXPECT_EQ(json(both.verdicts[1]).dump(), json(one.verdicts[0]).dump());
}

TEST(Pipelines, PolarityFlipIsAnInvolution) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    std::vector<AnalysisRow> rows(200);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].probe.polarity = i % 3 ? Polarity::positive : Polarity::negative;
        rows[i].score.association_score = z(rng);
    }
    const auto once = apply_polarity_flip(rows);
    const auto twice = apply_polarity_flip(once);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(twice[i].score.association_score, rows[i].score.association_score);
        const double expect = rows[i].probe.polarity == Polarity::negative ? -rows[i].score.association_score
                                                                            : rows[i].score.association_score;
        EXPECT_EQ(once[i].score.association_score, expect);
    }
}

TEST(Pipelines, NegativeTraitsAreFlippedBeforeFitting) {
    json j{{"model", "mock-mlm"}, {"dimensions", {"empathy"}}, {"polarity", "positive+negative"}, {"bootstrap", 0}};
    const auto c = parse_study_config(j);
    EXPECT_EQ(c.templates, (std::vector<std::string>{"t1", "t2", "t3", "t4"}));
    const auto rows = scored_rows(c, male_boost(0.8));
    const auto res = run_contrast_study(c, load_resources(c), rows);
    ASSERT_EQ(res.verdicts.size(), 1u);
    // The boost raises every male association, so flipping negative rows cancels it out.
    std::size_t pos = 0, neg = 0;
    for (const auto& r : rows) {
        if (r.probe.polarity == Polarity::negative) ++neg;
        else ++pos;
    }
    EXPECT_GT(neg, 0u);
    const double expected = 0.8 * (static_cast<double>(pos) - static_cast<double>(neg)) / static_cast<double>(pos + neg);
    EXPECT_NEAR(res.verdicts[0].bias_score, expected, 0.15);
}

TEST(Pipelines, LexiconSubsetKeepsOnlySubsetPairs) {
    const auto lex = builtin::lexicon();
    const auto keep = lex.subset_pair_indices("common7");
    const auto sub = filter_lexicon_subset(neutral_rows(), lex, "common7");
    EXPECT_LT(sub.size(), neutral_rows().size());
    std::set<int> seen;
    for (const auto& r : sub) {
        EXPECT_TRUE(keep.count(r.probe.pair_index));
        seen.insert(r.probe.pair_index);
    }
    EXPECT_EQ(seen, keep);
    EXPECT_EQ(filter_lexicon_subset(neutral_rows(), lex, "").size(), neutral_rows().size());
}

TEST(Pipelines, TemplateCategoriesPartitionRows) {
    const auto c = base_config();
    const auto res = load_resources(c);
    const auto ind = filter_templates(neutral_rows(), category_templates(res.templates, c.templates, "indirect"));
    const auto dir = filter_templates(neutral_rows(), category_templates(res.templates, c.templates, "direct"));
    const auto all = filter_templates(neutral_rows(), category_templates(res.templates, c.templates, "all"));
    EXPECT_EQ(ind.size() + dir.size(), all.size());
    EXPECT_EQ(all.size(), neutral_rows().size());
    std::set<std::string> a, b;
    for (const auto& r : ind) a.insert(r.probe.sentence_id);
    for (const auto& r : dir) b.insert(r.probe.sentence_id);
    for (const auto& id : a) EXPECT_FALSE(b.count(id));
}

TEST(Pipelines, ByTemplateCategoryEmitsThreeScopes) {
    auto c = base_config();
    c.by_template_category = true;
    c.bootstrap = 0;
    const auto res = run_contrast_study(c, load_resources(c), biased_rows());
    ASSERT_EQ(res.verdicts.size(), 3u);
    EXPECT_EQ(res.verdicts[0].scope, "indirect");
    EXPECT_EQ(res.verdicts[1].scope, "direct");
    EXPECT_EQ(res.verdicts[2].scope, "all");
    const std::size_t n0 = res.verdicts[0].diagnostics.at("n"), n1 = res.verdicts[1].diagnostics.at("n"),
                      n2 = res.verdicts[2].diagnostics.at("n");
    EXPECT_EQ(n0 + n1, n2);
}

TEST(Pipelines, BinAllRowMatchesStudy) {
    auto c = base_config();
    c.bootstrap = 30;
    const auto res = load_resources(c);
    const auto study = run_contrast_study(c, res, biased_rows());
    const auto ds = make_dataset(biased_rows(), "empathy", {"male", "female"}, c.templates);
    const auto bins = perplexity_bin_analysis(ds, c.bins, analysis_options(c), c.seed);
    ASSERT_EQ(bins.rows.size(), 22u);
    EXPECT_TRUE(bins.rows.back().is_all);
    EXPECT_TRUE(bins.rows[20].is_overflow);
    ASSERT_TRUE(bins.rows.back().verdict);
    EXPECT_EQ(json(*bins.rows.back().verdict).dump(), json(study.verdicts[0]).dump());

    std::size_t total = 0;
    for (std::size_t k = 0; k < 21; ++k) {
        total += bins.rows[k].n_g1 + bins.rows[k].n_g2;
        if (!bins.rows[k].verdict) {
            EXPECT_FALSE(bins.rows[k].skipped.empty());
        }
    }
    EXPECT_EQ(total, ds.rows.size());
    // Mock pppl lies in [1, 21): bins above 25 are empty and skipped.
    EXPECT_FALSE(bins.rows[10].verdict);
    EXPECT_NE(bins.rows[10].skipped.find("fewer than 30"), std::string::npos);

    const auto tsv = render_chart_tsv({bins});
    EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 22);
    EXPECT_NE(tsv.find("\tALL\t"), std::string::npos);
    const auto svg = render_chart_svg({bins});
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
}

TEST(Pipelines, CumulativeBinsGrow) {
    auto c = base_config();
    c.bootstrap = 0;
    c.bins.cumulative = true;
    const auto ds = make_dataset(neutral_rows(), "empathy", {"male", "female"}, c.templates);
    const auto bins = perplexity_bin_analysis(ds, c.bins, analysis_options(c), c.seed);
    for (std::size_t k = 1; k < 21; ++k) {
        EXPECT_GE(bins.rows[k].n_g1, bins.rows[k - 1].n_g1);
        EXPECT_GE(bins.rows[k].n_g2, bins.rows[k - 1].n_g2);
    }
    EXPECT_EQ(bins.rows[20].n_g1 + bins.rows[20].n_g2, ds.rows.size());
}

TEST(Pipelines, JoinReportsMissingScores) {
    auto rows = neutral_rows();
    std::vector<ProbeSentence> probes;
    std::vector<ScoreRecord> records;
    for (const auto& r : rows) {
        probes.push_back(r.probe);
        records.push_back(r.score);
    }
    records.pop_back();
    EXPECT_THROW(join_scores(probes, records), IncompleteScoringError);
}

TEST(Pipelines, DataViolationsAreErrors) {
    auto rows = neutral_rows();
    rows[0].score.weight *= 2.0;
    const auto c = base_config();
    EXPECT_THROW(run_contrast_study(c, load_resources(c), rows), DataError);
}

TEST(Pipelines, EmptyGroupIsRecordedAsFailure) {
    auto c = base_config();
    c.contrasts = {{"male", "neo"}};
    const auto res = run_contrast_study(c, load_resources(c), neutral_rows());
    EXPECT_TRUE(res.verdicts.empty());
    ASSERT_EQ(res.failures.size(), 1u);
    EXPECT_NE(res.failures[0].reason.find("empty contrast group"), std::string::npos);
}

TEST(Pipelines, CausalStudyInvertsReading) {
    auto c = base_config(ScoringMode::causal_loss);
    c.bootstrap = 0;
    const auto rows = scored_rows(c, male_boost(0.5));
    for (const auto& r : rows) {
        EXPECT_FALSE(r.probe.has_masks());
        EXPECT_EQ(r.score.scoring_mode, ScoringMode::causal_loss);
    }
    const auto res = causal_study(c, load_resources(c), rows);
    ASSERT_EQ(res.verdicts.size(), 1u);
    const auto& v = res.verdicts[0];
    EXPECT_TRUE(v.lower_is_stronger);
    EXPECT_GT(v.bias_score, 0.3);
    EXPECT_EQ(v.verdict, Verdict::biased);
    EXPECT_EQ(v.label, "male");
}

TEST(Pipelines, CausalStudyRejectsMaskedProbes) {
    auto c = base_config(ScoringMode::causal_loss);
    EXPECT_THROW(causal_study(c, load_resources(c), neutral_rows()), ConfigError);
}

TEST(Pipelines, PairsWithEqualScoresAreNeutral) {
    std::vector<SentencePair> pairs;
    std::vector<PairScore> scores;
    for (int i = 0; i < 40; ++i) {
        pairs.push_back({"a b c " + std::to_string(i), "a b d " + std::to_string(i), i % 3 ? "stereo" : "antistereo",
                         i < 30 ? "gender" : "age"});
        scores.push_back({-5.0, -5.0, 10.0, 10.0, 4 + i % 5, 4 + i % 5});
    }
    AnalysisOptions opt;
    opt.bootstrap = 20;
    const auto res = pair_corpus_analysis(pairs, scores, opt, 1);
    ASSERT_EQ(res.size(), 3u);
    EXPECT_EQ(res[0].bias_type, "all");
    EXPECT_EQ(res[1].bias_type, "age");
    EXPECT_EQ(res[2].bias_type, "gender");
    for (const auto& r : res) {
        EXPECT_DOUBLE_EQ(r.cps, 50.0);
        ASSERT_TRUE(r.verdict) << r.failure;
        EXPECT_NEAR(r.verdict->bias_score, 0.0, 1e-10);
        EXPECT_EQ(r.verdict->p_value, 1.0);
        EXPECT_EQ(r.verdict->verdict, Verdict::unbiased);
    }
    EXPECT_EQ(res[1].n_pairs, 10u);
    EXPECT_FALSE(res[1].low_n);
}

TEST(Pipelines, PairCorpusEndToEnd) {
    const auto dir = temp_dir("pairs");
    const auto path = (dir / "pairs.csv").string();
    {
        std::ofstream out(path);
        out << ",sent_more,sent_less,stereo_antistereo,bias_type\n";
        for (int i = 0; i < 24; ++i)
            out << i << ",\"the man number " << i << " is strong, yes\",the woman number " << i << " is strong,"
                << (i % 4 ? "stereo" : "antistereo") << "," << (i < 18 ? "gender" : "race-color") << "\n";
    }
    const auto pairs = read_pair_corpus(path);
    ASSERT_EQ(pairs.size(), 24u);
    EXPECT_EQ(pairs[0].sent_more, "the man number 0 is strong, yes");
    MockScorer scorer;
    FunctionTransport t([&](const ScoreRequest& r) { return scorer.score(r); });
    ScoreCache cache;
    ScorerBridge bridge(t, cache, "mock-mlm");
    const auto scores = score_pairs(bridge, pairs);
    AnalysisOptions opt;
    opt.bootstrap = 10;
    const auto res = pair_corpus_analysis(pairs, scores, opt, 2);
    ASSERT_EQ(res.size(), 3u);
    EXPECT_EQ(res[0].n_pairs, 24u);
    EXPECT_TRUE(res[2].low_n);
    EXPECT_EQ(res[2].bias_type, "race-color");
    for (const auto& r : res) {
        EXPECT_GE(r.cps, 0.0);
        EXPECT_LE(r.cps, 100.0);
        EXPECT_TRUE(r.verdict) << r.failure;
    }
    double wins = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const bool stereo = pairs[i].stereo_antistereo == "stereo";
        const double s = stereo ? scores[i].pll_more : scores[i].pll_less;
        const double a = stereo ? scores[i].pll_less : scores[i].pll_more;
        wins += s > a ? 1.0 : (s == a ? 0.5 : 0.0);
    }
    EXPECT_DOUBLE_EQ(res[0].cps, 100.0 * wins / 24.0);
}

TEST(Pipelines, PairCorpusRejectsMalformedCsv) {
    const auto dir = temp_dir("pairs_bad");
    const auto path = (dir / "bad.csv").string();
    std::ofstream(path) << "sent_more,sent_less,bias_type\na,b,c\n";
    EXPECT_THROW(read_pair_corpus(path), DataError);
    std::ofstream(path) << "sent_more,sent_less,stereo_antistereo,bias_type\na,b,maybe,c\n";
    EXPECT_THROW(read_pair_corpus(path), DataError);
}

TEST(Pipelines, BartlMeansAndVerdicts) {
    std::vector<AnalysisRow> rows;
    const std::map<std::string, std::string> cats{{"nurse", "female"}, {"engineer", "male"}, {"doctor", "balanced"},
                                                  {"baker", "balanced"}, {"pilot", "male"}, {"nanny", "female"}};
    std::mt19937_64 rng(9);
    std::normal_distribution<double> z(0.0, 0.3);
    int k = 0;
    for (const auto& [prof, cat] : cats) {
        for (const std::string g : {"male", "female"}) {
            for (int i = 0; i < 40; ++i) {
                AnalysisRow r;
                auto& p = r.probe;
                p.template_id = "b" + std::to_string(i % 4);
                p.group = g;
                p.attribute = g == "male" ? "he" : "she";
                p.attribute_surface = p.attribute;
                p.trait = prof;
                p.dimension = "professions";
                p.text = p.attribute + " is a " + prof + " " + std::to_string(i);
                p.attribute_span = {0, p.attribute.size()};
                p.target_span = {p.attribute.size() + 6, prof.size()};
                p.sentence_id = "s" + std::to_string(k++);
                const double shift = cat == "male" ? (g == "male" ? 0.5 : 0.0) : 0.0;
                const double lp = -3.0;
                r.score.sentence_id = p.sentence_id;
                r.score.log_p_prior = lp;
                r.score.log_p_attribute = std::min(-1e-6, lp + shift + z(rng));
                r.score.p_prior = std::exp(*r.score.log_p_prior);
                r.score.p_attribute = std::exp(*r.score.log_p_attribute);
                r.score.association_score = *r.score.log_p_attribute - *r.score.log_p_prior;
                r.score.pseudo_perplexity = 2.0 + i % 3;
                r.score.weight = 1.0 / r.score.pseudo_perplexity;
                r.score.model_name = "m";
                rows.push_back(r);
            }
        }
    }
    AnalysisOptions opt;
    opt.bootstrap = 0;
    const auto res = bartl_replication(rows, cats, {"male", "female"}, opt, 4);
    ASSERT_EQ(res.size(), 3u);
    EXPECT_EQ(res[0].category, "balanced");
    for (const auto& r : res) {
        std::vector<double> a, b;
        for (const auto& row : rows)
            if (cats.at(row.probe.trait) == r.category)
                (row.probe.group == "male" ? a : b).push_back(row.score.association_score);
        EXPECT_NEAR(r.mean_g1, mean(a), 1e-12);
        EXPECT_NEAR(r.mean_g2, mean(b), 1e-12);
        EXPECT_NEAR(r.difference, mean(a) - mean(b), 1e-12);
        ASSERT_TRUE(r.verdict) << r.failure;
    }
    EXPECT_EQ(res[1].verdict->verdict, Verdict::unbiased);
    EXPECT_EQ(res[2].category, "male");
    EXPECT_NEAR(res[2].difference, 0.5, 0.1);
    EXPECT_EQ(res[2].verdict->verdict, Verdict::biased);
    rows[0].probe.trait = "astronaut";
    EXPECT_THROW(bartl_replication(rows, cats, {"male", "female"}, opt, 4), DataError);
}
