#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace condseq {

/// Broad failure class. The CLI maps these onto exit codes 1, 2 and 3.
enum class ErrorCategory { Usage, Data, Numerical };

/// Base of every error thrown by the library. `code()` is a stable
/// machine-readable name such as "InvalidResidue".
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string code, const std::string& message)
      : std::runtime_error(message), category_(category), code_(std::move(code)) {}

  ErrorCategory category() const noexcept { return category_; }
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorCategory category_;
  std::string code_;
};

#define CONDSEQ_DEFINE_ERROR(Name, Category)                                \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& message)                               \
        : Error(ErrorCategory::Category, #Name, message) {}                 \
  };

// seqcore
CONDSEQ_DEFINE_ERROR(InvalidMotif, Data)
CONDSEQ_DEFINE_ERROR(SpanOutOfRange, Data)
CONDSEQ_DEFINE_ERROR(InvalidSequence, Data)
// diffusion
CONDSEQ_DEFINE_ERROR(InvalidSchedule, Usage)
CONDSEQ_DEFINE_ERROR(StepOutOfRange, Usage)
CONDSEQ_DEFINE_ERROR(AlreadyCorrupted, Data)
CONDSEQ_DEFINE_ERROR(InvalidDistribution, Numerical)
// denoiser
CONDSEQ_DEFINE_ERROR(InvalidConfig, Usage)
CONDSEQ_DEFINE_ERROR(UnknownLabel, Data)
CONDSEQ_DEFINE_ERROR(StructureTooShort, Data)
CONDSEQ_DEFINE_ERROR(CorruptCheckpoint, Data)
// training / generation
CONDSEQ_DEFINE_ERROR(ScorerError, Numerical)
// metrics
CONDSEQ_DEFINE_ERROR(SequenceTooShort, Data)
CONDSEQ_DEFINE_ERROR(EmptySet, Data)
CONDSEQ_DEFINE_ERROR(DegenerateBandwidth, Numerical)
CONDSEQ_DEFINE_ERROR(ClassMismatch, Data)
CONDSEQ_DEFINE_ERROR(NoPositives, Data)
CONDSEQ_DEFINE_ERROR(LengthMismatch, Data)
CONDSEQ_DEFINE_ERROR(InvalidPredictions, Data)
// data
CONDSEQ_DEFINE_ERROR(EmptyDataset, Data)
CONDSEQ_DEFINE_ERROR(InvalidSpec, Usage)
CONDSEQ_DEFINE_ERROR(IoError, Data)

#undef CONDSEQ_DEFINE_ERROR

/// Unknown amino-acid symbol at a 0-based position.
class InvalidResidue : public Error {
 public:
  InvalidResidue(std::size_t position, char symbol)
      : Error(ErrorCategory::Data, "InvalidResidue",
              "invalid residue '" + std::string(1, symbol) + "' at position " +
                  std::to_string(position)),
        position_(position),
        symbol_(symbol) {}

  std::size_t position() const noexcept { return position_; }
  char symbol() const noexcept { return symbol_; }

 private:
  std::size_t position_;
  char symbol_;
};

/// Malformed input file. `line` is 1-based; `column` is 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message, std::size_t column = 0)
      : Error(ErrorCategory::Data, "ParseError",
              "line " + std::to_string(line) +
                  (column ? ", column " + std::to_string(column) : std::string()) + ": " +
                  message),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// A backbone residue lacks one of N, CA, C, O.
class IncompleteResidue : public Error {
 public:
  explicit IncompleteResidue(std::size_t residue_index)
      : Error(ErrorCategory::Data, "IncompleteResidue",
              "residue " + std::to_string(residue_index) + " is missing a backbone atom"),
        residue_index_(residue_index) {}

  std::size_t residue_index() const noexcept { return residue_index_; }

 private:
  std::size_t residue_index_;
};

/// Training loss became NaN or infinite.
class DivergedAtStep : public Error {
 public:
  explicit DivergedAtStep(std::size_t step)
      : Error(ErrorCategory::Numerical, "DivergedAtStep",
              "training diverged at step " + std::to_string(step)),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace condseq
