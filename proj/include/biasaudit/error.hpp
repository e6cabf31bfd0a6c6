#pragma once

#include <stdexcept>
#include <string>

namespace biasaudit {

/// Process exit codes surfaced by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    data = 3,
    transport = 4,
    numerical = 5,
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

/// Malformed template pattern (unknown slot, missing attribute/target slot).
class TemplateError : public ConfigError {
public:
    explicit TemplateError(const std::string& what) : ConfigError("template error: " + what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// Fixed-effects design is rank deficient (e.g. a contrast group is absent).
class DesignError : public DataError {
public:
    explicit DesignError(const std::string& what) : DataError("design error: " + what) {}
};

/// A candidate sentence has no pseudo-perplexity yet.
class IncompleteScoringError : public DataError {
public:
    explicit IncompleteScoringError(const std::string& what) : DataError("incomplete scoring: " + what) {}
};

/// Probe spans disagree with the surface text.
class ConsistencyError : public DataError {
public:
    explicit ConsistencyError(const std::string& what) : DataError("internal consistency error: " + what) {}
};

class TransportError : public Error {
public:
    explicit TransportError(const std::string& what) : Error(ExitCode::transport, what) {}
};

class ProtocolError : public TransportError {
public:
    explicit ProtocolError(const std::string& what) : TransportError("protocol error: " + what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

/// Effect size could not be computed because a model refit failed.
class EffectSizeUnavailable : public NumericalError {
public:
    explicit EffectSizeUnavailable(const std::string& what)
        : NumericalError("effect size unavailable: " + what) {}
};

} // namespace biasaudit
