// Command-line driver: expand probes, score them through the scorer process, analyze,
// and the pair-corpus and profession studies. Each command writes into a run directory
// described by manifest.json.

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biasaudit/builtin.hpp"
#include "biasaudit/config.hpp"
#include "biasaudit/manifest.hpp"
#include "biasaudit/pipelines.hpp"
#include "biasaudit/report.hpp"
#include "biasaudit/score_cache.hpp"
#include "biasaudit/scorer_bridge.hpp"

namespace fs = std::filesystem;
using namespace biasaudit;

namespace {

constexpr const char* kDefaultScorer = "python3 -m mlm_scorer";

struct Options {
    std::string config;
    std::string out;
    std::string model;
    std::string mode;
    std::optional<std::uint64_t> seed;
    std::optional<int> bootstrap;
    std::string scorer_cmd;
    std::string cache;
    bool resume = false;
    bool unicode = false;
    std::string pairs;
    std::string probes;
    std::string scores;
    std::string categories;
    std::vector<std::string> contrast{"male", "female"};
};

void info(const std::string& msg) { std::cerr << "biasaudit: " << msg << "\n"; }

std::string fingerprint(const json& j) { return to_hex(fnv1a64(j.dump())); }

/// Run directory plus its manifest; outputs are registered as they are written.
class RunDir {
public:
    RunDir(const std::string& out, const std::string& command, const json& config, std::uint64_t seed,
           std::map<std::string, std::string> inputs)
        : dir_(out) {
        if (out.empty()) throw ConfigError("--out is required");
        fs::create_directories(dir_);
        RunManifest fresh;
        fresh.command = command;
        fresh.config = config;
        fresh.seed = seed;
        fresh.inputs = std::move(inputs);
        fresh.run_id = compute_run_id(fresh);
        auto old = read_manifest(dir_);
        if (old && old->command == command) {
            m_ = *old;
            if (m_.run_id != fresh.run_id) {
                m_.run_id = fresh.run_id;
                m_.config = fresh.config;
                m_.seed = fresh.seed;
                m_.inputs = fresh.inputs;
            }
        } else {
            m_ = fresh;
            m_.created_at = utc_timestamp();
        }
        m_.tool_version = kToolVersion;
    }

    const fs::path& dir() const { return dir_; }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    RunManifest& manifest() { return m_; }

    bool current(const std::string& stage, const std::string& fp) const { return stage_current(m_, dir_, stage, fp); }

    void complete(const std::string& stage, const std::string& fp, const std::vector<std::string>& outputs,
                  json stage_info = json::object()) {
        for (const auto& o : outputs) record_output(m_, dir_, o);
        m_.stages[stage] = StageRecord{fp, outputs, std::move(stage_info)};
        save();
    }

    void save() {
        m_.updated_at = utc_timestamp();
        write_manifest(dir_, m_);
    }

private:
    fs::path dir_;
    RunManifest m_;
};

// ---------------------------------------------------------------------------
// Study commands (expand / score / analyze / run)
// ---------------------------------------------------------------------------

StudyConfig load_config(const Options& o) {
    json j = json::object();
    std::string text;
    fs::path base;
    const std::string source = o.config.empty() ? "<defaults>" : o.config;
    if (!o.config.empty()) {
        text = read_file(o.config);
        j = read_json_file(o.config);
        base = fs::path(o.config).parent_path();
        if (!j.is_object()) throw ConfigError(o.config + ": config must be a JSON object");
    }
    if (!o.model.empty()) j["model"] = o.model;
    if (!o.mode.empty()) j["mode"] = o.mode;
    if (o.seed) j["seed"] = *o.seed;
    if (o.bootstrap) j["bootstrap"] = *o.bootstrap;
    if (!o.scorer_cmd.empty()) j["scorer"]["command"] = o.scorer_cmd;
    if (!o.cache.empty()) j["scorer"]["cache"] = o.cache;
    return parse_study_config(j, source, text, base);
}

std::map<std::string, std::string> input_digests(const Options& o, const StudyConfig& c) {
    std::map<std::string, std::string> in;
    for (const auto& p : {o.config, c.lexicon_file, c.templates_file})
        if (!p.empty()) in[p] = file_digest(p);
    return in;
}

RunDir open_study(const Options& o, const StudyConfig& c) {
    RunDir run(o.out, "study", json(c), c.seed, input_digests(o, c));
    std::ofstream(run.path("config.snapshot.json"), std::ios::trunc) << json(c).dump(2) << '\n';
    record_output(run.manifest(), run.dir(), "config.snapshot.json");
    run.save();
    return run;
}

std::string expand_fingerprint(const StudyConfig& c, const StudyResources& res) {
    return fingerprint(json{{"lexicon", res.lexicon},
                            {"templates", res.templates},
                            {"selected", c.templates},
                            {"dimensions", c.dimensions},
                            {"polarity", c.include_negative},
                            {"groups", c.groups()}});
}

void stage_expand(RunDir& run, const StudyConfig& c, const StudyResources& res, bool resume) {
    const auto fp = expand_fingerprint(c, res);
    if (resume && run.current("expand", fp)) {
        info("expand: up to date, skipped");
        return;
    }
    const auto exp = expand_study(c, res);
    write_jsonl(run.path("candidates.jsonl"), exp.sets);
    std::map<std::string, std::size_t> per_template;
    std::size_t candidates = 0;
    for (const auto& s : exp.sets) {
        ++per_template[s.template_id];
        candidates += s.candidates.size();
    }
    for (const auto& n : exp.notes) info("note: " + n);
    run.complete("expand", fp, {"candidates.jsonl"},
                 json{{"sets", exp.sets.size()},
                      {"candidates", candidates},
                      {"sets_per_template", per_template},
                      {"notes", exp.notes}});
    info("expand: " + std::to_string(exp.sets.size()) + " candidate sets, " + std::to_string(candidates) +
         " sentences -> " + run.path("candidates.jsonl"));
}

std::string score_fingerprint(const RunDir& run, const StudyConfig& c) {
    return fingerprint(json{{"candidates", file_digest(run.path("candidates.jsonl"))},
                            {"model", c.model},
                            {"mode", c.mode},
                            {"mask_token", c.mask_token},
                            {"device", c.scorer.device}});
}

/// Scorer process for a study, started on first use.
class LazyScorer {
public:
    explicit LazyScorer(const StudyConfig& c) {
        so_.command = c.scorer.command.empty() ? kDefaultScorer : c.scorer.command;
        so_.model = c.model;
        so_.mode = c.mode;
        so_.batch_size = c.scorer.batch_size;
        so_.device = c.scorer.device;
        so_.timeout = std::chrono::milliseconds(static_cast<long>(c.scorer.timeout_s * 1000.0));
    }

    SubprocessTransport& get() {
        if (!t_) {
            t_ = std::make_unique<SubprocessTransport>(so_);
            t_->resolve();
        }
        return *t_;
    }

private:
    SubprocessOptions so_;
    std::unique_ptr<SubprocessTransport> t_;
};

void stage_score(RunDir& run, const StudyConfig& c, LazyScorer& scorer, bool resume) {
    if (!fs::exists(run.path("candidates.jsonl")))
        throw DataError(run.path("candidates.jsonl") + " not found; run 'expand' first");
    const auto fp = score_fingerprint(run, c);
    if (resume && run.current("score", fp)) {
        info("score: up to date, skipped");
        return;
    }
    auto sets = read_jsonl<CandidateSet>(run.path("candidates.jsonl"));
    auto& transport = scorer.get();
    const std::string resolved = transport.resolved_model().empty() ? c.model : transport.resolved_model();
    run.manifest().resolved_model = resolved;

    const std::string cache_path = c.scorer.cache.empty() ? run.path("score_cache.jsonl") : c.scorer.cache;
    ScoreCache cache(cache_path);
    ScorerBridge bridge(transport, cache, c.model, c.scorer.batch_size);
    const auto scored = score_study(c, bridge, sets);
    write_jsonl(run.path("probes.jsonl"), scored.probes);
    write_jsonl(run.path("scores.jsonl"), scored.records);
    const auto& st = bridge.stats();
    run.complete("score", fp, {"probes.jsonl", "scores.jsonl"},
                 json{{"probes", scored.probes.size()},
                      {"requests", st.requests},
                      {"cache_hits", st.cache_hits},
                      {"dispatched", st.dispatched},
                      {"batches", st.batches},
                      {"cache", cache_path},
                      {"resolved_model", resolved}});
    info("score: " + std::to_string(scored.probes.size()) + " probes; " + std::to_string(st.requests) +
         " requests, " + std::to_string(st.cache_hits) + " cache hits, " + std::to_string(st.dispatched) +
         " dispatched in " + std::to_string(st.batches) + " batches");
}

void check_consistency(const StudyConfig& c, const std::vector<ScoreRecord>& records) {
    std::set<std::string> models;
    for (const auto& r : records) {
        models.insert(r.model_name);
        if (r.scoring_mode != c.mode)
            throw ConfigError("scores were produced in " + to_string(r.scoring_mode) + " mode but the study uses " +
                              to_string(c.mode));
    }
    if (models.size() > 1) {
        std::string list;
        for (const auto& m : models) list += (list.empty() ? "" : ", ") + m;
        throw ConsistencyError("scores mix model names: " + list);
    }
    if (!models.empty() && *models.begin() != c.model)
        throw ConsistencyError("scores come from model '" + *models.begin() + "' but the study names '" + c.model + "'");
}

void stage_analyze(RunDir& run, const StudyConfig& c, const StudyResources& res, const Options& o) {
    const std::string probes_path = o.probes.empty() ? run.path("probes.jsonl") : o.probes;
    const std::string scores_path = o.scores.empty() ? run.path("scores.jsonl") : o.scores;
    for (const auto& p : {probes_path, scores_path})
        if (!fs::exists(p)) throw DataError(p + " not found; run 'score' first");
    const auto fp = fingerprint(json{{"config", c},
                                     {"probes", file_digest(probes_path)},
                                     {"scores", file_digest(scores_path)},
                                     {"unicode", o.unicode}});
    if (o.resume && run.current("analyze", fp)) {
        info("analyze: up to date, skipped");
        return;
    }
    const auto probes = read_jsonl<ProbeSentence>(probes_path);
    const auto records = read_jsonl<ScoreRecord>(scores_path);
    check_consistency(c, records);
    const auto rows = join_scores(probes, records);
    const auto study = c.mode == ScoringMode::causal_loss ? causal_study(c, res, rows) : run_contrast_study(c, res, rows);

    std::vector<std::string> outputs{"verdicts.jsonl", "failures.jsonl", "report.txt"};
    write_jsonl(run.path("verdicts.jsonl"), study.verdicts);
    write_jsonl(run.path("failures.jsonl"), study.failures);

    ReportContext ctx;
    ctx.model = c.model;
    ctx.mode = to_string(c.mode);
    ctx.unicode = o.unicode;
    std::vector<std::string> notes = c.notes;
    std::string report = render_report(ctx, study.verdicts, study.failures, notes);

    if (c.bins.enabled) {
        const auto filtered = filter_lexicon_subset(rows, res.lexicon, c.lexicon_subset);
        const auto opt = analysis_options(c);
        std::vector<BinAnalysis> bins;
        for (const auto& dim : c.dimensions)
            for (const auto& contrast : c.contrasts)
                bins.push_back(perplexity_bin_analysis(make_dataset(filtered, dim, contrast, c.templates), c.bins,
                                                       opt, c.seed));
        write_jsonl(run.path("bins.jsonl"), bins);
        write_text(run.path("chart.tsv"), render_chart_tsv(bins));
        write_text(run.path("chart.svg"), render_chart_svg(bins));
        report += "\npseudo-perplexity bins\n" + render_bin_table(bins);
        outputs.insert(outputs.end(), {"bins.jsonl", "chart.tsv", "chart.svg"});
    }
    write_text(run.path("report.txt"), report);
    run.complete("analyze", fp, outputs,
                 json{{"verdicts", study.verdicts.size()}, {"failures", study.failures.size()}});
    std::cout << report;
    if (study.verdicts.empty()) throw DataError("no analysis cell produced a verdict; see " + run.path("report.txt"));
}

int cmd_study(const Options& o, bool expand, bool score, bool analyze) {
    const auto c = load_config(o);
    const auto res = load_resources(c);
    auto run = open_study(o, c);
    for (const auto& n : c.notes) info("note: " + n);
    LazyScorer scorer(c);
    if (score && !(o.resume && run.manifest().stages.count("score"))) scorer.get();
    if (expand || (score && !fs::exists(run.path("candidates.jsonl")))) stage_expand(run, c, res, o.resume);
    if (score) stage_score(run, c, scorer, o.resume);
    if (analyze) stage_analyze(run, c, res, o);
    return 0;
}

// ---------------------------------------------------------------------------
// Pair corpus and profession studies
// ---------------------------------------------------------------------------

AnalysisOptions plain_analysis(const Options& o) {
    AnalysisOptions a;
    a.bootstrap = o.bootstrap.value_or(1000);
    if (a.bootstrap < 0) throw ConfigError("--bootstrap must be >= 0");
    return a;
}

int cmd_pairs(const Options& o) {
    if (o.pairs.empty()) throw ConfigError("--pairs is required");
    if (o.model.empty()) throw ConfigError("--model is required");
    const auto opt = plain_analysis(o);
    const std::uint64_t seed = o.seed.value_or(0);
    json cfg{{"pairs", o.pairs}, {"model", o.model}, {"bootstrap", opt.bootstrap}, {"seed", seed}};
    RunDir run(o.out, "pairs", cfg, seed, {{o.pairs, file_digest(o.pairs)}});
    std::ofstream(run.path("config.snapshot.json"), std::ios::trunc) << cfg.dump(2) << '\n';
    record_output(run.manifest(), run.dir(), "config.snapshot.json");

    const auto pairs = read_pair_corpus(o.pairs);
    const auto score_fp = fingerprint(json{{"pairs", file_digest(o.pairs)}, {"model", o.model}});
    if (!(o.resume && run.current("pairs_score", score_fp))) {
        SubprocessOptions so;
        so.command = o.scorer_cmd.empty() ? kDefaultScorer : o.scorer_cmd;
        so.model = o.model;
        so.mode = ScoringMode::crows_pll;
        SubprocessTransport transport(so);
        transport.resolve();
        ScoreCache cache(o.cache.empty() ? run.path("score_cache.jsonl") : o.cache);
        ScorerBridge bridge(transport, cache, o.model);
        const auto scores = score_pairs(bridge, pairs);
        write_jsonl(run.path("pair_scores.jsonl"), scores);
        run.complete("pairs_score", score_fp, {"pair_scores.jsonl"},
                     json{{"pairs", pairs.size()}, {"dispatched", bridge.stats().dispatched}});
    } else {
        info("pairs_score: up to date, skipped");
    }

    const auto fp = fingerprint(json{{"config", cfg}, {"scores", file_digest(run.path("pair_scores.jsonl"))}});
    if (o.resume && run.current("pairs_analyze", fp)) {
        info("pairs_analyze: up to date, skipped");
        return 0;
    }
    std::vector<PairScore> scores;
    for (const auto& j : read_jsonl<json>(run.path("pair_scores.jsonl")))
        scores.push_back({j.at("pll_more"), j.at("pll_less"), j.at("pppl_more"), j.at("pppl_less"),
                          j.at("tokens_more"), j.at("tokens_less")});
    const auto results = pair_corpus_analysis(pairs, scores, opt, seed);
    write_jsonl(run.path("pair_results.jsonl"), results);

    std::ostringstream rep;
    rep << "Pair corpus\nmodel: " << o.model << "\n\n";
    rep << "bias type            n      CPS   score (stereo-anti)\n";
    for (const auto& r : results) {
        rep << detail::pad(r.bias_type, 18) << " " << detail::pad(std::to_string(r.n_pairs), 6) << " "
            << detail::pad(format_fixed(r.cps, 2), 7) << " "
            << (r.verdict ? format_cell(*r.verdict, o.unicode) : "failed: " + r.failure)
            << (r.low_n ? "  (low n)" : "") << "\n";
    }
    write_text(run.path("report.txt"), rep.str());
    run.complete("pairs_analyze", fp, {"pair_results.jsonl", "report.txt"});
    std::cout << rep.str();
    return 0;
}

int cmd_bartl(const Options& o) {
    if (o.probes.empty() || o.scores.empty() || o.categories.empty())
        throw ConfigError("--probes, --scores and --categories are required");
    if (o.contrast.size() != 2) throw ConfigError("--contrast takes two groups");
    const auto opt = plain_analysis(o);
    const std::uint64_t seed = o.seed.value_or(0);
    json cfg{{"probes", o.probes},
             {"scores", o.scores},
             {"categories", o.categories},
             {"contrast", o.contrast},
             {"bootstrap", opt.bootstrap},
             {"seed", seed}};
    std::map<std::string, std::string> inputs;
    for (const auto& p : {o.probes, o.scores, o.categories}) inputs[p] = file_digest(p);
    RunDir run(o.out, "bartl", cfg, seed, inputs);
    std::ofstream(run.path("config.snapshot.json"), std::ios::trunc) << cfg.dump(2) << '\n';
    record_output(run.manifest(), run.dir(), "config.snapshot.json");
    const auto fp = fingerprint(json{{"config", cfg}, {"inputs", inputs}});
    if (o.resume && run.current("bartl", fp)) {
        info("bartl: up to date, skipped");
        return 0;
    }
    const auto rows = join_scores(read_jsonl<ProbeSentence>(o.probes), read_jsonl<ScoreRecord>(o.scores));
    const auto results =
        bartl_replication(rows, read_profession_categories(o.categories), {o.contrast[0], o.contrast[1]}, opt, seed);
    write_jsonl(run.path("bartl.jsonl"), results);
    std::ostringstream rep;
    rep << "Profession replication (" << o.contrast[0] << " - " << o.contrast[1] << ")\n\n";
    rep << "category     mean " << o.contrast[0] << "  mean " << o.contrast[1] << "  difference  lmm\n";
    for (const auto& r : results)
        rep << detail::pad(r.category, 12) << " " << detail::pad(format_fixed(r.mean_g1, 3), 9) << " "
            << detail::pad(format_fixed(r.mean_g2, 3), 11) << " " << detail::pad(format_fixed(r.difference, 3), 11)
            << " " << (r.verdict ? format_cell(*r.verdict, o.unicode) : "failed: " + r.failure) << "\n";
    write_text(run.path("report.txt"), rep.str());
    run.complete("bartl", fp, {"bartl.jsonl", "report.txt"});
    std::cout << rep.str();
    return 0;
}

int cmd_export_defaults(const Options& o) {
    if (o.out.empty()) throw ConfigError("--out is required");
    fs::create_directories(o.out);
    const fs::path dir(o.out);
    std::ofstream(dir / "lexicon.json", std::ios::trunc) << json(builtin::lexicon()).dump(2) << '\n';
    std::ofstream(dir / "templates.json", std::ios::trunc) << json(builtin::templates()).dump(2) << '\n';
    json study{{"model", "bert-base-uncased"},
               {"mode", "masked"},
               {"lexicon", "full"},
               {"dimensions", builtin::character_dimensions()},
               {"templates", "all"},
               {"contrasts", json::array({json::array({"male", "female"})})},
               {"polarity", "positive"},
               {"bootstrap", 1000},
               {"seed", 1},
               {"scorer", {{"command", kDefaultScorer}, {"batch_size", 64}, {"device", "cpu"}}}};
    std::ofstream(dir / "study.json", std::ios::trunc) << study.dump(2) << '\n';
    info("wrote lexicon.json, templates.json and study.json to " + o.out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Template-based bias audit for language models"};
    app.require_subcommand(1);
    Options o;

    auto study_flags = [&](CLI::App* s) {
        s->add_option("--config", o.config, "study config (JSON)");
        s->add_option("--out", o.out, "run directory")->required();
        s->add_option("--model", o.model, "model name (overrides the config)");
        s->add_option("--mode", o.mode, "masked or causal_loss (overrides the config)");
        s->add_option("--seed", o.seed, "master seed");
        s->add_option("--bootstrap", o.bootstrap, "bootstrap replicates (0 disables the interval)");
        s->add_option("--scorer-cmd", o.scorer_cmd, "scorer executable and leading arguments");
        s->add_option("--cache", o.cache, "score cache file (default <out>/score_cache.jsonl)");
        s->add_flag("--resume", o.resume, "skip stages whose outputs are current");
        s->add_flag("--unicode", o.unicode, "Unicode effect glyphs in tables");
    };
    auto* expand = app.add_subcommand("expand", "write candidate probe sentences");
    auto* score = app.add_subcommand("score", "select variants and score probes");
    auto* analyze = app.add_subcommand("analyze", "fit models and write verdicts and reports");
    auto* run = app.add_subcommand("run", "expand, score and analyze");
    for (auto* s : {expand, score, analyze, run}) study_flags(s);
    analyze->add_option("--probes", o.probes, "probe file (default <out>/probes.jsonl)");
    analyze->add_option("--scores", o.scores, "score file (default <out>/scores.jsonl)");

    auto* pairs = app.add_subcommand("pairs", "pair-corpus study (CrowS-Pairs CSV)");
    pairs->add_option("--pairs", o.pairs, "CSV with sent_more, sent_less, stereo_antistereo, bias_type")->required();
    pairs->add_option("--model", o.model, "model name")->required();
    pairs->add_option("--out", o.out, "run directory")->required();
    pairs->add_option("--scorer-cmd", o.scorer_cmd, "scorer executable and leading arguments");
    pairs->add_option("--cache", o.cache, "score cache file");
    pairs->add_option("--seed", o.seed, "master seed");
    pairs->add_option("--bootstrap", o.bootstrap, "bootstrap replicates");
    pairs->add_flag("--resume", o.resume, "skip stages whose outputs are current");
    pairs->add_flag("--unicode", o.unicode, "Unicode effect glyphs in tables");

    auto* bartl = app.add_subcommand("bartl", "profession replication from scored probes");
    bartl->add_option("--probes", o.probes, "probe file")->required();
    bartl->add_option("--scores", o.scores, "score file")->required();
    bartl->add_option("--categories", o.categories, "CSV profession,category")->required();
    bartl->add_option("--contrast", o.contrast, "two groups, default male female")->expected(2);
    bartl->add_option("--out", o.out, "run directory")->required();
    bartl->add_option("--seed", o.seed, "master seed");
    bartl->add_option("--bootstrap", o.bootstrap, "bootstrap replicates");
    bartl->add_flag("--resume", o.resume, "skip stages whose outputs are current");
    bartl->add_flag("--unicode", o.unicode, "Unicode effect glyphs in tables");

    auto* defaults = app.add_subcommand("export-defaults", "write the built-in lexicon, templates and a sample config");
    defaults->add_option("--out", o.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (*expand) return cmd_study(o, true, false, false);
        if (*score) return cmd_study(o, false, true, false);
        if (*analyze) return cmd_study(o, false, false, true);
        if (*run) return cmd_study(o, true, true, true);
        if (*pairs) return cmd_pairs(o);
        if (*bartl) return cmd_bartl(o);
        if (*defaults) return cmd_export_defaults(o);
    } catch (const Error& e) {
        std::cerr << "biasaudit: error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "biasaudit: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
