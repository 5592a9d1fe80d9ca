#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace transcf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A line of an interaction file could not be parsed.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FileError : public Error {
public:
    explicit FileError(const std::string& path, const std::string& what = "cannot open file")
        : Error(what + ": " + path), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Nothing survived min-count filtering, or an input held no interactions.
class EmptyDatasetError : public Error {
public:
    using Error::Error;
};

/// A parameter or gradient became NaN or infinite.
class NumericStateError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite objective.
class DivergenceError : public NumericStateError {
public:
    DivergenceError(std::size_t epoch, std::size_t batch, const std::string& what)
        : NumericStateError("diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch) + ": " + what),
          epoch_(epoch), batch_(batch) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

class UnsupportedVariantError : public Error {
public:
    using Error::Error;
};

class UnsupportedDatasetError : public Error {
public:
    using Error::Error;
};

/// A checkpoint does not fit the dataset it is applied to.
class DimensionMismatchError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace transcf
