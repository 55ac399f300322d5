#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sentinel {

// Base of every error the library raises. Callers that only want to report
// and exit can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::string reason, std::size_t byte_offset, std::size_t line = 0)
      : Error(format(reason, byte_offset, line)),
        reason_(std::move(reason)),
        byte_offset_(byte_offset),
        line_(line) {}

  const std::string& reason() const noexcept { return reason_; }
  std::size_t byte_offset() const noexcept { return byte_offset_; }
  // 1-based; 0 when the record was parsed outside of a file.
  std::size_t line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& reason, std::size_t offset, std::size_t line) {
    std::string out = "malformed record";
    if (line != 0) out += " at line " + std::to_string(line);
    out += " (byte " + std::to_string(offset) + "): " + reason;
    return out;
  }

  std::string reason_;
  std::size_t byte_offset_;
  std::size_t line_;
};

class DuplicateActionId : public Error {
 public:
  explicit DuplicateActionId(const std::string& id)
      : Error("duplicate action id: " + id) {}
};

class UnknownRoot : public Error {
 public:
  explicit UnknownRoot(const std::string& id) : Error("unknown root action: " + id) {}
};

class MissingRootEntity : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t a, std::size_t b)
      : Error("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class EmptyInterestingSet : public Error {
 public:
  EmptyInterestingSet() : Error("interesting set is empty") {}
};

class InapplicableMutation : public Error {
 public:
  using Error::Error;
};

class NoPositivePairs : public Error {
 public:
  NoPositivePairs() : Error("no (agent, day) group has two or more subgraphs") {}
};

class MissingGroundTruth : public Error {
 public:
  explicit MissingGroundTruth(const std::string& id)
      : Error("no ground truth for subgraph: " + id) {}
};

// A caller broke an operation's documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A service artifact is missing or unreadable at startup.
class StartupError : public Error {
 public:
  StartupError(const std::string& file, const std::string& reason)
      : Error("cannot start: " + file + ": " + reason), file_(file) {}
  const std::string& file() const noexcept { return file_; }

 private:
  std::string file_;
};

// A lookup named something that does not exist.
class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace sentinel
