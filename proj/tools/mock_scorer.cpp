// Deterministic scorer process for end-to-end tests of the line protocol.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "biasaudit/mock_scorer.hpp"

using namespace biasaudit;

int main(int argc, char** argv) {
    CLI::App app{"Deterministic mock scorer speaking the line protocol on stdin/stdout"};
    std::string model = "mock-mlm", mode = "masked", device = "cpu";
    std::size_t batch_size = 64;
    bool lowercase = true;
    std::vector<std::string> boosts;
    long fail_after = -1, bad_id_after = -1;
    int sleep_ms = 0;
    app.add_option("--model", model);
    app.add_option("--mode", mode);
    app.add_option("--batch-size", batch_size);
    app.add_option("--device", device);
    app.add_flag("--lowercase,!--no-lowercase", lowercase);
    app.add_option("--boost", boosts, "word=delta shift for sentences with this attribute")->take_all();
    app.add_option("--fail-after", fail_after, "exit with status 3 after this many responses");
    app.add_option("--bad-id-after", bad_id_after, "answer with a wrong request id after this many responses");
    app.add_option("--sleep-ms", sleep_ms, "delay before each response");
    CLI11_PARSE(app, argc, argv);

    MockScorerOptions opt;
    opt.model = model;
    try {
        opt.mode = parse_scoring_mode(mode);
    } catch (const std::exception& e) {
        std::cout << json{{"ready", false}, {"error", e.what()}}.dump() << std::endl;
        return 2;
    }
    for (const auto& b : boosts) {
        const auto eq = b.find('=');
        if (eq == std::string::npos) {
            std::cerr << "bad --boost '" << b << "'\n";
            return 2;
        }
        opt.boost[b.substr(0, eq)] = std::stod(b.substr(eq + 1));
    }

    MockScorer scorer(opt);
    const json hello = scorer.handshake();
    std::cout << hello.dump() << std::endl;
    if (!hello.at("ready").get<bool>()) return 2;

    long answered = 0;
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.empty()) continue;
        if (fail_after >= 0 && answered >= fail_after) return 3;
        if (sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
        ScoreResponse resp;
        try {
            auto req = json::parse(line).get<ScoreRequest>();
            if (lowercase) {
                req.text = to_lower(req.text);
                req.sentence_more = to_lower(req.sentence_more);
                req.sentence_less = to_lower(req.sentence_less);
            }
            resp = scorer.score(req);
        } catch (const std::exception& e) {
            resp.request_id = "";
            resp.error = std::string("bad request: ") + e.what();
        }
        if (bad_id_after >= 0 && answered >= bad_id_after) resp.request_id += "-x";
        std::cout << json(resp).dump() << '\n' << std::flush;
        ++answered;
    }
    return 0;
}
