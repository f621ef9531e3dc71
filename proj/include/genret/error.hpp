#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace genret {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file or record. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DuplicateIdError : public Error {
public:
    explicit DuplicateIdError(const std::string& id)
        : Error("duplicate id '" + id + "'"), id_(id) {}

    [[nodiscard]] const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(const std::string& phase, std::size_t step)
        : Error(phase + " diverged at step " + std::to_string(step)), step_(step) {}

    [[nodiscard]] std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// A scorer returned a probability that is negative or not finite.
class ScorerContractError : public Error {
public:
    using Error::Error;
};

class EmptyInventoryError : public Error {
public:
    EmptyInventoryError() : Error("trie holds no ads") {}
};

class BudgetError : public Error {
public:
    using Error::Error;
};

class CorpusError : public Error {
public:
    using Error::Error;
};

class MetricError : public Error {
public:
    using Error::Error;
};

}  // namespace genret
