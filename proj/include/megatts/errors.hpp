#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace megatts {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class PreconditionError : public Error { public: using Error::Error; };
class AlignmentError : public Error { public: using Error::Error; };
class VocabularyError : public Error { public: using Error::Error; };
class ContextLengthError : public Error { public: using Error::Error; };
class InputTooShortError : public Error { public: using Error::Error; };
class RejectionError : public Error { public: using Error::Error; };
class DependencyError : public Error { public: using Error::Error; };
class ParameterError : public Error { public: using Error::Error; };
class VersionError : public Error { public: using Error::Error; };

// Malformed file content. Carries the 1-based line and the byte offset of
// the line start so callers can point at the problem.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line, std::size_t offset)
        : Error(what + " (line " + std::to_string(line) + ", offset " +
                std::to_string(offset) + ")"),
          line_(line),
          offset_(offset) {}

    std::size_t line() const { return line_; }
    std::size_t offset() const { return offset_; }

private:
    std::size_t line_;
    std::size_t offset_;
};

}  // namespace megatts
