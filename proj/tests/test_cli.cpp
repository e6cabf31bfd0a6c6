#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "biasaudit/manifest.hpp"
#include "biasaudit/pipelines.hpp"
#include "support.hpp"

using namespace biasaudit;
using namespace testsupport;

namespace {

struct Result {
    int rc = -1;
    std::string out;
    std::string err;
};

Result run_cli(const std::string& args, const fs::path& dir) {
    const auto err_file = dir / "stderr.txt";
    const std::string cmd = std::string(BIASAUDIT_CLI_PATH) + " " + args + " 2>" + shell_quote(err_file.string());
    Result r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    while (auto n = fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = read_file(err_file.string());
    return r;
}

std::string mock(const std::string& extra = "") {
    return shell_quote(std::string(MOCK_SCORER_PATH) + (extra.empty() ? "" : " " + extra));
}

fs::path write_config(const fs::path& dir, const json& extra = json::object()) {
    json c{{"model", "mock-mlm"},
           {"dimensions", {"empathy"}},
           {"templates", {"t2"}},
           {"bootstrap", 10},
           {"seed", 5}};
    c.update(extra);
    const auto path = dir / "study.json";
    std::ofstream(path) << c.dump(2) << '\n';
    return path;
}

std::string flags(const fs::path& cfg, const fs::path& out) {
    return "--config " + shell_quote(cfg.string()) + " --out " + shell_quote(out.string());
}

RunManifest manifest(const fs::path& out) { return *read_manifest(out); }

} // namespace

TEST(Cli, ExportDefaultsWritesUsableFiles) {
    const auto dir = temp_dir("cli_defaults");
    const auto r = run_cli("export-defaults --out " + shell_quote(dir.string()), dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    EXPECT_EQ(read_json_file((dir / "lexicon.json").string()).get<Lexicon>(), builtin::lexicon());
    EXPECT_EQ(read_json_file((dir / "templates.json").string()).get<std::vector<Template>>(), builtin::templates());
    EXPECT_NO_THROW(load_study_config((dir / "study.json").string()));
}

TEST(Cli, ExpandIsDeterministicAndSized) {
    const auto dir = temp_dir("cli_expand");
    json extra{{"templates", "all"}};
    const auto cfg = write_config(dir, extra);
    auto r = run_cli("expand " + flags(cfg, dir / "a"), dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    r = run_cli("expand " + flags(cfg, dir / "b"), dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    EXPECT_EQ(file_digest((dir / "a" / "candidates.jsonl").string()),
              file_digest((dir / "b" / "candidates.jsonl").string()));
    const auto m = manifest(dir / "a");
    const auto& per = m.stages.at("expand").info.at("sets_per_template");
    EXPECT_EQ(per.size(), 6u);
    for (const auto& [id, n] : per.items()) {
        EXPECT_GE(n.get<int>(), 1000) << id;
        EXPECT_LE(n.get<int>(), 10000) << id;
    }
    EXPECT_EQ(m.run_id, manifest(dir / "b").run_id);
    EXPECT_TRUE(m.outputs.count("candidates.jsonl"));
    EXPECT_TRUE(m.outputs.count("config.snapshot.json"));
}

TEST(Cli, EmptyDimensionListIsUsageError) {
    const auto dir = temp_dir("cli_nodim");
    const auto cfg = dir / "c.json";
    std::ofstream(cfg) << "{\n  \"model\": \"m\",\n  \"dimensions\": []\n}\n";
    const auto r = run_cli("expand " + flags(cfg, dir / "out"), dir);
    EXPECT_EQ(r.rc, 2);
    EXPECT_NE(r.err.find("c.json:3:"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("usage"), std::string::npos) << r.err;
}

TEST(Cli, ConfigSyntaxErrorReportsLine) {
    const auto dir = temp_dir("cli_syntax");
    const auto cfg = dir / "c.json";
    std::ofstream(cfg) << "{\n  \"model\": \"m\",\n  \"dimensions\": [\"empathy\"\n}\n";
    const auto r = run_cli("expand " + flags(cfg, dir / "out"), dir);
    EXPECT_EQ(r.rc, 2);
    EXPECT_NE(r.err.find("c.json:4:"), std::string::npos) << r.err;
}

TEST(Cli, BadFlagIsConfigError) {
    const auto dir = temp_dir("cli_flag");
    EXPECT_EQ(run_cli("analyze --no-such-flag", dir).rc, 2);
    EXPECT_EQ(run_cli("", dir).rc, 2);
}

TEST(Cli, FullRunWritesRunDirectory) {
    const auto dir = temp_dir("cli_run");
    const auto cfg = write_config(dir, json{{"bins", {{"enabled", true}}}});
    const auto out = dir / "run";
    const auto r = run_cli("run " + flags(cfg, out) + " --scorer-cmd " + mock("--boost he=1.5 --boost him=1.5"), dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    for (const auto* f : {"config.snapshot.json", "candidates.jsonl", "probes.jsonl", "scores.jsonl", "verdicts.jsonl",
                          "report.txt", "chart.tsv", "chart.svg", "bins.jsonl", "manifest.json"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    const auto m = manifest(out);
    for (const auto& [name, digest] : m.outputs) EXPECT_EQ(file_digest((out / name).string()), digest) << name;
    for (const auto* s : {"expand", "score", "analyze"}) EXPECT_TRUE(m.stages.count(s)) << s;
    EXPECT_EQ(m.resolved_model, "mock-mlm");

    const auto verdicts = read_jsonl<json>((out / "verdicts.jsonl").string());
    ASSERT_EQ(verdicts.size(), 1u);
    EXPECT_EQ(verdicts[0].at("dimension"), "empathy");
    const std::string report = read_file((out / "report.txt").string());
    EXPECT_EQ(r.out.substr(0, report.size()), report);
    EXPECT_NE(report.find("empathy"), std::string::npos);
    const std::string tsv = read_file((out / "chart.tsv").string());
    EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 22);
}

TEST(Cli, WarmCacheAndResume) {
    const auto dir = temp_dir("cli_resume");
    const auto cfg = write_config(dir);
    const auto out = dir / "run";
    const std::string scorer = " --scorer-cmd " + mock();
    ASSERT_EQ(run_cli("run " + flags(cfg, out) + scorer, dir).rc, 0);
    const auto first = manifest(out);

    auto r = run_cli("score " + flags(cfg, out) + scorer, dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    const auto warm = manifest(out).stages.at("score").info;
    EXPECT_EQ(warm.at("dispatched"), 0);
    EXPECT_EQ(warm.at("cache_hits"), warm.at("requests"));
    EXPECT_EQ(manifest(out).outputs, first.outputs);
    const auto before_resume = manifest(out);

    r = run_cli("run --resume " + flags(cfg, out) + scorer, dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    for (const auto* s : {"expand: up to date", "score: up to date", "analyze: up to date"})
        EXPECT_NE(r.err.find(s), std::string::npos) << r.err;
    EXPECT_EQ(manifest(out).outputs, first.outputs);
    EXPECT_EQ(manifest(out).stages, before_resume.stages);

    r = run_cli("analyze --resume --bootstrap 12 " + flags(cfg, out), dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    EXPECT_EQ(r.err.find("analyze: up to date"), std::string::npos);
    EXPECT_NE(manifest(out).run_id, first.run_id);
}

TEST(Cli, UnknownModelFailsBeforeScoring) {
    const auto dir = temp_dir("cli_unknown");
    const auto cfg = write_config(dir);
    const auto out = dir / "run";
    const auto r = run_cli("score " + flags(cfg, out) + " --model unknown-model --scorer-cmd " + mock(), dir);
    EXPECT_EQ(r.rc, 2) << r.err;
    EXPECT_NE(r.err.find("unknown-model"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(out / "probes.jsonl"));
    EXPECT_FALSE(fs::exists(out / "candidates.jsonl"));
    EXPECT_FALSE(fs::exists(out / "score_cache.jsonl") && fs::file_size(out / "score_cache.jsonl") > 0);
}

TEST(Cli, ModeMismatchIsConfigError) {
    const auto dir = temp_dir("cli_mode");
    const auto cfg = write_config(dir);
    const auto out = dir / "run";
    ASSERT_EQ(run_cli("score " + flags(cfg, out) + " --scorer-cmd " + mock(), dir).rc, 0);
    const auto r = run_cli("analyze --mode causal_loss " + flags(cfg, out), dir);
    EXPECT_EQ(r.rc, 2) << r.err;
    EXPECT_NE(r.err.find("mode"), std::string::npos);
}

TEST(Cli, InconsistentModelsIsDataError) {
    const auto dir = temp_dir("cli_models");
    const auto cfg = write_config(dir);
    const auto out = dir / "run";
    ASSERT_EQ(run_cli("score " + flags(cfg, out) + " --scorer-cmd " + mock(), dir).rc, 0);
    auto records = read_jsonl<ScoreRecord>((out / "scores.jsonl").string());
    records[3].model_name = "other-model";
    write_jsonl((out / "scores.jsonl").string(), records);
    const auto r = run_cli("analyze " + flags(cfg, out), dir);
    EXPECT_EQ(r.rc, 3) << r.err;
    EXPECT_NE(r.err.find("other-model"), std::string::npos);
}

TEST(Cli, TransportFailureReportsPartialProgress) {
    const auto dir = temp_dir("cli_transport");
    const auto cfg = write_config(dir);
    const auto out = dir / "run";
    const auto r = run_cli("score " + flags(cfg, out) + " --scorer-cmd " + mock("--fail-after 100"), dir);
    EXPECT_EQ(r.rc, 4) << r.err;
    EXPECT_NE(r.err.find("partial responses saved"), std::string::npos) << r.err;
    EXPECT_EQ(read_jsonl<json>((out / "score_cache.jsonl").string()).size(), 100u);
}

TEST(Cli, AnalyzeWithoutScoresIsDataError) {
    const auto dir = temp_dir("cli_noscores");
    const auto cfg = write_config(dir);
    const auto r = run_cli("analyze " + flags(cfg, dir / "run"), dir);
    EXPECT_EQ(r.rc, 3) << r.err;
}

TEST(Cli, PairsCommand) {
    const auto dir = temp_dir("cli_pairs");
    const auto csv = dir / "pairs.csv";
    {
        std::ofstream out(csv);
        out << "sent_more,sent_less,stereo_antistereo,bias_type\n";
        for (int i = 0; i < 30; ++i)
            out << "the man " << i << " was rude,the woman " << i << " was rude," << (i % 5 ? "stereo" : "antistereo")
                << "," << (i % 2 ? "gender" : "age") << "\n";
    }
    const auto out = dir / "run";
    const auto r = run_cli("pairs --pairs " + shell_quote(csv.string()) + " --model mock-mlm --bootstrap 10 --out " +
                               shell_quote(out.string()) + " --scorer-cmd " + mock(),
                           dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    const auto res = read_jsonl<json>((out / "pair_results.jsonl").string());
    ASSERT_EQ(res.size(), 3u);
    EXPECT_EQ(res[0].at("bias_type"), "all");
    EXPECT_EQ(res[0].at("n_pairs"), 30);
    EXPECT_NE(r.out.find("CPS"), std::string::npos);
    EXPECT_TRUE(manifest(out).stages.count("pairs_analyze"));
}

TEST(Cli, BartlCommand) {
    const auto dir = temp_dir("cli_bartl");
    // Professions lexicon: one dimension whose trait words are professions.
    Lexicon lex = builtin::lexicon();
    lex.target_dimensions = {{"professions",
                              {{"nurse", Polarity::positive},
                               {"engineer", Polarity::positive},
                               {"teacher", Polarity::positive},
                               {"pilot", Polarity::positive}}}};
    std::ofstream(dir / "lexicon.json") << json(lex).dump();
    std::ofstream(dir / "cats.csv") << "profession,category\nnurse,female\nengineer,male\nteacher,balanced\npilot,male\n";
    const auto cfg = write_config(dir, json{{"dimensions", {"professions"}}, {"lexicon_file", "lexicon.json"}});
    const auto out = dir / "run";
    ASSERT_EQ(run_cli("score " + flags(cfg, out) + " --scorer-cmd " + mock(), dir).rc, 0);
    const auto r = run_cli("bartl --probes " + shell_quote((out / "probes.jsonl").string()) + " --scores " +
                               shell_quote((out / "scores.jsonl").string()) + " --categories " +
                               shell_quote((dir / "cats.csv").string()) + " --bootstrap 0 --out " +
                               shell_quote((dir / "bartl").string()),
                           dir);
    ASSERT_EQ(r.rc, 0) << r.err;
    const auto res = read_jsonl<json>((dir / "bartl" / "bartl.jsonl").string());
    ASSERT_EQ(res.size(), 3u);
    EXPECT_EQ(res[0].at("category"), "balanced");
    EXPECT_FALSE(res[2].at("verdict").is_null());
}
