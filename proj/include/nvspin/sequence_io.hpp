#pragma once

// Line-oriented pulse-sequence format (.seq).
//
//   # comment
//   laser 3us
//   mw freq=2.8847GHz rabi=(2.381MHz,0,0) [phase=<rad>] dur=210ns
//   rf freq=7.9MHz rabi=(0,0,200kHz) dur=1us
//   wait 500ns
//   readout
//
// Quantities take SI suffixes (s, ms, us, ns for time; Hz, kHz, MHz, GHz for
// frequency) or bare SI base values, with optional scientific notation.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace nvspin {

struct LaserSegment {
  double duration = 0.0;
  bool operator==(const LaserSegment&) const = default;
};

struct DrivePulse {
  double frequency = 0.0;
  std::array<double, 3> rabi{};
  double phase = 0.0;
  double duration = 0.0;
  bool operator==(const DrivePulse&) const = default;
};

struct MwSegment : DrivePulse {
  bool operator==(const MwSegment&) const = default;
};

struct RfSegment : DrivePulse {
  bool operator==(const RfSegment&) const = default;
};

struct WaitSegment {
  double duration = 0.0;
  bool operator==(const WaitSegment&) const = default;
};

struct ReadoutSegment {
  bool operator==(const ReadoutSegment&) const = default;
};

using Segment = std::variant<LaserSegment, MwSegment, RfSegment, WaitSegment, ReadoutSegment>;

struct PulseSequence {
  std::vector<Segment> segments;

  double total_duration() const;
  bool operator==(const PulseSequence&) const = default;
};

enum class Severity { Error, Warning };

struct ParseDiagnostic {
  std::size_t line = 1;
  std::size_t column = 1;
  std::string message;
  Severity severity = Severity::Error;

  // "line:column: error: message"
  std::string to_string() const;
  bool operator==(const ParseDiagnostic&) const = default;
};

// Either a valid sequence or a non-empty list of diagnostics.
class ParseResult {
 public:
  explicit ParseResult(PulseSequence sequence) : value_(std::move(sequence)) {}
  explicit ParseResult(std::vector<ParseDiagnostic> diagnostics) : value_(std::move(diagnostics)) {}

  bool ok() const { return std::holds_alternative<PulseSequence>(value_); }
  explicit operator bool() const { return ok(); }

  const PulseSequence& sequence() const { return std::get<PulseSequence>(value_); }
  const std::vector<ParseDiagnostic>& diagnostics() const { return std::get<std::vector<ParseDiagnostic>>(value_); }

 private:
  std::variant<PulseSequence, std::vector<ParseDiagnostic>> value_;
};

enum class Dimension { Time, Frequency, Dimensionless };

ParseResult parse_sequence(std::string_view text);

// Canonical LF-terminated text; parse_sequence(serialize_sequence(s)) == s.
std::string serialize_sequence(const PulseSequence& sequence);

// Invariant check shared by the parser: non-empty, positive durations,
// finite values, at most one readout and only as the last segment.
// Positions refer to segment indices (line = index + 1, column = 1).
std::vector<ParseDiagnostic> validate_sequence(const PulseSequence& sequence);

// Parses "<number>[suffix]" with the suffix table of `dimension`. The decimal
// value is rounded once, so "210ns" yields exactly the double nearest 2.1e-7.
std::optional<double> parse_quantity(std::string_view text, Dimension dimension, std::string* error = nullptr);

// Shortest text that parse_quantity maps back to exactly `value`, using the
// largest unit that keeps the mantissa >= 1 (e.g. 3e-6 s -> "3us").
std::string format_quantity(double value, Dimension dimension);

// Shortest round-trip decimal representation.
std::string format_number(double value);

}  // namespace nvspin
