#pragma once

// Request batching, caching and record assembly on top of a scorer transport.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "domain.hpp"
#include "error.hpp"
#include "score_cache.hpp"
#include "subprocess.hpp"
#include "template_engine.hpp"
#include "wire.hpp"

namespace biasaudit {

/// Transport failure carrying the responses that did arrive.
class PartialScoreError : public TransportError {
public:
    PartialScoreError(const std::string& what, std::vector<ScoreResponse> partial)
        : TransportError(what), partial_(std::move(partial)) {}
    const std::vector<ScoreResponse>& partial() const noexcept { return partial_; }

private:
    std::vector<ScoreResponse> partial_;
};

class ScorerTransport {
public:
    virtual ~ScorerTransport() = default;
    /// Confirms the scorer can serve the configured model; throws ConfigError otherwise.
    virtual void resolve() {}
    /// Sends one batch and returns its responses in any order.
    virtual std::vector<ScoreResponse> send(const std::vector<ScoreRequest>& batch) = 0;
};

/// In-process transport around a scoring function.
class FunctionTransport : public ScorerTransport {
public:
    explicit FunctionTransport(std::function<ScoreResponse(const ScoreRequest&)> fn) : fn_(std::move(fn)) {}
    std::vector<ScoreResponse> send(const std::vector<ScoreRequest>& batch) override {
        ++batches_;
        std::vector<ScoreResponse> out;
        out.reserve(batch.size());
        for (const auto& r : batch) out.push_back(fn_(r));
        return out;
    }
    std::size_t batches() const { return batches_; }

private:
    std::function<ScoreResponse(const ScoreRequest&)> fn_;
    std::size_t batches_ = 0;
};

struct SubprocessOptions {
    std::string command;     // scorer executable (shell words allowed)
    std::string model;
    ScoringMode mode = ScoringMode::masked;
    std::size_t batch_size = 64;
    std::string device = "cpu";
    bool lowercase = true;
    std::chrono::milliseconds timeout{600000};
    std::chrono::milliseconds startup_timeout{600000};
};

inline std::string scorer_command_line(const SubprocessOptions& o) {
    return o.command + " --model " + shell_quote(o.model) + " --mode " + to_string(o.mode) + " --batch-size " +
           std::to_string(o.batch_size) + " --device " + shell_quote(o.device) +
           (o.lowercase ? " --lowercase" : " --no-lowercase");
}

/// Scorer running as a persistent child process, started on first use.
class SubprocessTransport : public ScorerTransport {
public:
    explicit SubprocessTransport(SubprocessOptions opt) : opt_(std::move(opt)) {}

    void resolve() override {
        if (proc_ && proc_->running()) return;
        proc_ = std::make_unique<LineProcess>(scorer_command_line(opt_));
        std::string line;
        try {
            line = proc_->read_line(opt_.startup_timeout);
        } catch (const PartialTransportError& e) {
            throw TransportError(std::string("scorer failed to start: ") + e.what());
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw ProtocolError("scorer handshake is not JSON: " + line.substr(0, 200));
        }
        if (!j.is_object() || !j.contains("ready")) throw ProtocolError("scorer handshake lacks 'ready': " + line);
        if (!j.at("ready").get<bool>()) {
            proc_->terminate();
            throw ConfigError("scorer cannot load model '" + opt_.model + "': " + j.value("error", std::string{"unknown error"}));
        }
        model_ = j.value("model", opt_.model);
    }

    std::vector<ScoreResponse> send(const std::vector<ScoreRequest>& batch) override {
        resolve();
        std::vector<std::string> lines;
        lines.reserve(batch.size());
        for (const auto& r : batch) lines.push_back(json(r).dump());
        try {
            return parse(proc_->exchange(lines, batch.size(), opt_.timeout));
        } catch (const PartialTransportError& e) {
            std::vector<ScoreResponse> partial;
            try {
                partial = parse(e.lines());
            } catch (const ProtocolError&) {
            }
            throw PartialScoreError(e.what(), std::move(partial));
        }
    }

    const std::string& resolved_model() const { return model_; }

private:
    static std::vector<ScoreResponse> parse(const std::vector<std::string>& lines) {
        std::vector<ScoreResponse> out;
        for (const auto& l : lines) {
            try {
                out.push_back(json::parse(l).get<ScoreResponse>());
            } catch (const json::exception& e) {
                throw ProtocolError("malformed response line (" + std::string(e.what()) + "): " + l.substr(0, 200));
            }
        }
        return out;
    }

    SubprocessOptions opt_;
    std::unique_ptr<LineProcess> proc_;
    std::string model_;
};

struct BridgeStats {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::size_t dispatched = 0;
    std::size_t batches = 0;
};

class ScorerBridge {
public:
    ScorerBridge(ScorerTransport& transport, ScoreCache& cache, std::string model, std::size_t batch_size = 64)
        : transport_(transport), cache_(cache), model_(std::move(model)), batch_size_(batch_size ? batch_size : 1) {}

    const std::string& model() const { return model_; }
    const BridgeStats& stats() const { return stats_; }

    /// Answers every request, consulting the cache first. Responses come back in request
    /// order with the caller's request ids.
    std::vector<ScoreResponse> dispatch(const std::vector<ScoreRequest>& requests) {
        std::vector<ScoreResponse> out(requests.size());
        std::vector<bool> have(requests.size(), false);
        std::vector<CacheKey> keys;
        keys.reserve(requests.size());
        std::unordered_map<std::string, std::vector<std::size_t>> waiting;
        std::vector<std::size_t> misses;
        stats_.requests += requests.size();

        for (std::size_t i = 0; i < requests.size(); ++i) {
            keys.push_back(cache_key(model_, requests[i]));
            if (auto hit = cache_.lookup(keys[i])) {
                out[i] = *hit;
                out[i].request_id = requests[i].request_id;
                have[i] = true;
                ++stats_.cache_hits;
                continue;
            }
            auto& w = waiting[keys[i].str()];
            if (w.empty()) misses.push_back(i);
            w.push_back(i);
        }
        if (!misses.empty()) transport_.resolve();

        std::size_t errors = 0;
        std::string first_error;
        for (std::size_t start = 0; start < misses.size(); start += batch_size_) {
            const std::size_t end = std::min(misses.size(), start + batch_size_);
            std::vector<ScoreRequest> batch;
            std::unordered_map<std::string, std::size_t> by_id;
            for (std::size_t k = start; k < end; ++k) {
                ScoreRequest r = requests[misses[k]];
                r.request_id = "q" + std::to_string(next_id_++);
                by_id.emplace(r.request_id, misses[k]);
                batch.push_back(std::move(r));
            }
            ++stats_.batches;
            stats_.dispatched += batch.size();

            std::vector<ScoreResponse> responses;
            try {
                responses = transport_.send(batch);
            } catch (const PartialScoreError& e) {
                std::size_t kept = 0;
                for (const auto& r : e.partial()) {
                    auto it = by_id.find(r.request_id);
                    if (it == by_id.end() || r.error || r.mode != requests[it->second].mode) continue;
                    kept += cache_.store(keys[it->second], r);
                }
                throw TransportError(std::string(e.what()) + "; " + std::to_string(kept) +
                                     " partial responses saved to the score cache");
            }

            std::map<std::string, bool> seen;
            for (auto& r : responses) {
                auto it = by_id.find(r.request_id);
                if (it == by_id.end())
                    throw ProtocolError("response id '" + r.request_id + "' does not match any request in the batch");
                if (seen[r.request_id]) throw ProtocolError("duplicate response for request id '" + r.request_id + "'");
                seen[r.request_id] = true;
                const std::size_t i = it->second;
                if (r.mode != requests[i].mode)
                    throw ProtocolError("response mode " + to_string(r.mode) + " for a " + to_string(requests[i].mode) +
                                        " request");
                if (r.error) {
                    if (errors++ == 0) first_error = *r.error;
                    continue;
                }
                cache_.store(keys[i], r);
                for (auto j : waiting[keys[i].str()]) {
                    out[j] = r;
                    out[j].request_id = requests[j].request_id;
                    have[j] = true;
                }
            }
            if (seen.size() != batch.size())
                throw ProtocolError(std::to_string(batch.size() - seen.size()) + " request(s) received no response");
        }
        if (errors) throw DataError("scorer rejected " + std::to_string(errors) + " request(s): " + first_error);
        return out;
    }

    /// Pseudo-perplexity for every candidate sentence, filled in place. With
    /// `causal_loss` the perplexity is exp(mean token loss).
    void score_candidates(std::vector<CandidateSet>& sets, ScoringMode mode = ScoringMode::pppl) {
        if (mode != ScoringMode::pppl && mode != ScoringMode::causal_loss)
            throw ConfigError("candidate scoring supports pppl and causal_loss modes");
        std::vector<ScoreRequest> reqs;
        for (const auto& s : sets) {
            for (const auto& c : s.candidates) {
                ScoreRequest r;
                r.request_id = "c" + std::to_string(reqs.size());
                r.mode = mode;
                r.text = c.text;
                reqs.push_back(std::move(r));
            }
        }
        const auto res = dispatch(reqs);
        std::size_t k = 0;
        for (auto& s : sets) {
            for (auto& c : s.candidates) {
                auto r = res[k++];
                if (!r.pppl && r.loss && std::isfinite(*r.loss)) r.pppl = std::exp(*r.loss);
                if (!r.pppl || !std::isfinite(*r.pppl) || *r.pppl <= 0.0)
                    throw ProtocolError("pppl response for '" + c.text + "' lacks a positive pppl");
                c.pppl = *r.pppl;
            }
        }
    }

    /// One ScoreRecord per probe. Masked mode needs probes with masked variants; causal
    /// mode needs unmasked probes. Attribute sub-token counts are written back to probes.
    std::vector<ScoreRecord> score_batch(std::vector<ProbeSentence>& probes, ScoringMode mode) {
        if (mode != ScoringMode::masked && mode != ScoringMode::causal_loss)
            throw ConfigError("probe scoring supports masked and causal_loss modes, not " + to_string(mode));
        std::vector<ScoreRequest> reqs;
        reqs.reserve(probes.size());
        for (const auto& p : probes) {
            ScoreRequest r;
            r.request_id = p.sentence_id;
            r.mode = mode;
            r.text = p.text;
            r.attribute = p.attribute_surface;
            if (mode == ScoringMode::masked) {
                if (!p.has_masks())
                    throw ConfigError("masked scoring needs probes with masked variants; '" + p.text + "' has none");
                r.masked_attribute_text = p.masked_attribute_text;
                r.masked_attribute_target_text = p.masked_attribute_target_text;
                r.mask_spans.push_back(p.attribute_span);
                for (const auto& s : p.pronoun_spans) r.mask_spans.push_back(s);
                r.mask_spans.push_back(p.target_span);
            } else if (p.has_masks()) {
                throw ConfigError("causal scoring takes unmasked probes; '" + p.text + "' carries mask variants");
            }
            reqs.push_back(std::move(r));
        }
        const auto res = dispatch(reqs);

        std::vector<ScoreRecord> out;
        out.reserve(probes.size());
        for (std::size_t i = 0; i < probes.size(); ++i) {
            const auto& r = res[i];
            ScoreRecord rec;
            rec.sentence_id = probes[i].sentence_id;
            rec.model_name = model_;
            rec.scoring_mode = mode;
            rec.n_tokens = r.n_tokens;
            auto bad = [&](const std::string& what) {
                return ProtocolError("response for '" + probes[i].text + "': " + what);
            };
            if (mode == ScoringMode::masked) {
                if (!r.log_p_attribute || !r.log_p_prior || !r.pppl) throw bad("missing log_p_attribute/log_p_prior/pppl");
                const double la = *r.log_p_attribute, lp = *r.log_p_prior;
                if (!std::isfinite(la) || !std::isfinite(lp) || la > 0.0 || lp > 0.0)
                    throw bad("log probabilities must be finite and <= 0");
                rec.log_p_attribute = la;
                rec.log_p_prior = lp;
                rec.p_attribute = std::exp(la);
                rec.p_prior = std::exp(lp);
                rec.association_score = la - lp;
                rec.pseudo_perplexity = *r.pppl;
                if (r.n_attribute_tokens) probes[i].attribute_subtokens = *r.n_attribute_tokens;
            } else {
                if (!r.loss || !std::isfinite(*r.loss)) throw bad("missing or non-finite loss");
                rec.association_score = *r.loss;
                rec.pseudo_perplexity = r.pppl ? *r.pppl : std::exp(*r.loss);
            }
            if (!std::isfinite(rec.pseudo_perplexity) || rec.pseudo_perplexity <= 0.0)
                throw bad("pseudo-perplexity must be finite and positive");
            rec.weight = 1.0 / rec.pseudo_perplexity;
            out.push_back(std::move(rec));
        }
        return out;
    }

private:
    ScorerTransport& transport_;
    ScoreCache& cache_;
    std::string model_;
    std::size_t batch_size_;
    std::size_t next_id_ = 0;
    BridgeStats stats_;
};

} // namespace biasaudit
