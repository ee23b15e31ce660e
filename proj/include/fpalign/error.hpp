#pragma once

#include <stdexcept>
#include <string>

namespace fpalign {

enum class ErrorKind {
  Parameter,       // invalid argument or configuration value
  Shape,           // dimension mismatch
  Degenerate,      // zero-norm vector or zero-area box
  Underdetermined, // not enough distinct points for a fit
  Parse,           // malformed binary file
  Data,            // malformed CSV/JSON rows or missing truth entries
  Format,          // unsupported audio encoding
  Io,              // file cannot be opened or written
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Specific reasons a binary file (.afpe/.afpw/.afpi/.afph) failed to parse.
enum class ParseFailure { BadMagic, BadVersion, BadHeader, SizeMismatch, NonFinite, Truncated, TypeTag };

class ParseError : public Error {
 public:
  ParseError(ParseFailure failure, const std::string& what)
      : Error(ErrorKind::Parse, what), failure_(failure) {}
  ParseFailure failure() const noexcept { return failure_; }

 private:
  ParseFailure failure_;
};

}  // namespace fpalign
