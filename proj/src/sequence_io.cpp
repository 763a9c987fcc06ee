#include "nvspin/sequence_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <tuple>

namespace nvspin {

namespace {

struct Unit {
  std::string_view suffix;
  int exponent;
};

// Largest exponent first; format_quantity relies on this order.
constexpr Unit kTimeUnits[] = {{"s", 0}, {"ms", -3}, {"us", -6}, {"ns", -9}};
constexpr Unit kFrequencyUnits[] = {{"GHz", 9}, {"MHz", 6}, {"kHz", 3}, {"Hz", 0}};

std::span<const Unit> units_for(Dimension d) {
  switch (d) {
    case Dimension::Time:
      return kTimeUnits;
    case Dimension::Frequency:
      return kFrequencyUnits;
    case Dimension::Dimensionless:
      break;
  }
  return {};
}

std::string_view base_suffix(Dimension d) {
  switch (d) {
    case Dimension::Time:
      return "s";
    case Dimension::Frequency:
      return "Hz";
    case Dimension::Dimensionless:
      break;
  }
  return "";
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\v' || c == '\f'; }
bool is_word(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || is_digit(c); }

void set_error(std::string* error, std::string message) {
  if (error) *error = std::move(message);
}

}  // namespace

// ---------------------------------------------------------------------------
// Quantities
// ---------------------------------------------------------------------------

std::optional<double> parse_quantity(std::string_view text, Dimension dimension, std::string* error) {
  std::size_t pos = 0;
  std::string mantissa;
  if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    if (text[pos] == '-') mantissa.push_back('-');
    ++pos;
  }
  std::size_t digits = 0;
  while (pos < text.size() && is_digit(text[pos])) {
    mantissa.push_back(text[pos++]);
    ++digits;
  }
  if (pos < text.size() && text[pos] == '.') {
    mantissa.push_back(text[pos++]);
    while (pos < text.size() && is_digit(text[pos])) {
      mantissa.push_back(text[pos++]);
      ++digits;
    }
  }
  if (digits == 0) {
    set_error(error, "expected a number");
    return std::nullopt;
  }

  long long exponent = 0;
  if (pos < text.size() && (text[pos] == 'e' || text[pos] == 'E')) {
    std::size_t p = pos + 1;
    bool negative = false;
    if (p < text.size() && (text[p] == '+' || text[p] == '-')) negative = text[p++] == '-';
    if (p >= text.size() || !is_digit(text[p])) {
      set_error(error, "malformed exponent");
      return std::nullopt;
    }
    while (p < text.size() && is_digit(text[p])) {
      exponent = std::min<long long>(exponent * 10 + (text[p] - '0'), 1'000'000);
      ++p;
    }
    if (negative) exponent = -exponent;
    pos = p;
  }

  const std::string_view suffix = text.substr(pos);
  int unit_exponent = 0;
  if (!suffix.empty()) {
    bool found = false;
    for (const auto& u : units_for(dimension)) {
      if (u.suffix == suffix) {
        unit_exponent = u.exponent;
        found = true;
        break;
      }
    }
    if (!found) {
      set_error(error, dimension == Dimension::Dimensionless ? "unexpected unit suffix '" + std::string(suffix) + "'"
                                                             : "unknown unit suffix '" + std::string(suffix) + "'");
      return std::nullopt;
    }
  }

  const std::string literal = mantissa + "e" + std::to_string(exponent + unit_exponent);
  double value = 0.0;
  const auto [end, ec] = std::from_chars(literal.data(), literal.data() + literal.size(), value);
  if (ec == std::errc::result_out_of_range) {
    // Underflow to zero is harmless; overflow is not.
    if (exponent + unit_exponent > 0) {
      set_error(error, "value out of range");
      return std::nullopt;
    }
    value = 0.0;
  } else if (ec != std::errc() || end != literal.data() + literal.size()) {
    set_error(error, "malformed number");
    return std::nullopt;
  }
  if (!std::isfinite(value)) {
    set_error(error, "value out of range");
    return std::nullopt;
  }
  return value;
}

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string format_quantity(double value, Dimension dimension) {
  if (value == 0.0) return "0";
  if (dimension == Dimension::Dimensionless || !std::isfinite(value)) return format_number(value);

  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::scientific);
  const std::string sci(buf, res.ptr);

  // sci = [-]d[.ddd]e[+-]XX
  std::string sign;
  std::size_t p = 0;
  if (sci[p] == '-') {
    sign = "-";
    ++p;
  }
  const std::size_t e_pos = sci.find('e');
  std::string digits;
  for (std::size_t i = p; i < e_pos; ++i) {
    if (sci[i] != '.') digits.push_back(sci[i]);
  }
  const int sci_exponent = std::stoi(sci.substr(e_pos + 1));
  // value = digits * 10^place
  const int place = sci_exponent - static_cast<int>(digits.size() - 1);

  const auto units = units_for(dimension);
  const Unit* unit = &units.back();
  for (const auto& u : units) {
    if (sci_exponent >= u.exponent) {
      unit = &u;
      break;
    }
  }

  const int shift = place - unit->exponent;
  std::string mantissa;
  const int nd = static_cast<int>(digits.size());
  if (shift >= 0) {
    mantissa = digits + std::string(static_cast<std::size_t>(shift), '0');
  } else if (-shift < nd) {
    mantissa = digits.substr(0, static_cast<std::size_t>(nd + shift)) + "." +
               digits.substr(static_cast<std::size_t>(nd + shift));
  } else {
    mantissa = "0." + std::string(static_cast<std::size_t>(-shift - nd), '0') + digits;
  }
  if (mantissa.size() > 21) return sci + std::string(base_suffix(dimension));
  return sign + mantissa + std::string(unit->suffix);
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

double PulseSequence::total_duration() const {
  double total = 0.0;
  for (const auto& seg : segments) {
    std::visit(
        [&](const auto& s) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(s)>, ReadoutSegment>) total += s.duration;
        },
        seg);
  }
  return total;
}

std::string ParseDiagnostic::to_string() const {
  std::ostringstream out;
  out << line << ':' << column << ": " << (severity == Severity::Error ? "error" : "warning") << ": " << message;
  return out.str();
}

namespace {

class LineParser {
 public:
  LineParser(std::string_view line, std::size_t line_no, std::vector<ParseDiagnostic>& diags)
      : text_(line), line_no_(line_no), diags_(diags) {}

  // Returns the parsed segment, or nothing for blank lines and errors.
  std::optional<Segment> parse() {
    skip_space();
    if (at_end()) return std::nullopt;
    directive_col_ = col();
    if (!is_word(peek())) {
      error(col(), "expected a directive");
      return std::nullopt;
    }
    const std::string_view word = read_word();
    if (word == "laser") {
      auto d = positional_duration("laser");
      if (!d) return std::nullopt;
      return LaserSegment{*d};
    }
    if (word == "wait") {
      auto d = positional_duration("wait");
      if (!d) return std::nullopt;
      return WaitSegment{*d};
    }
    if (word == "readout") {
      if (!expect_end()) return std::nullopt;
      return ReadoutSegment{};
    }
    if (word == "mw" || word == "rf") {
      auto pulse = drive_pulse(word);
      if (!pulse) return std::nullopt;
      if (word == "mw") return MwSegment{*pulse};
      return RfSegment{*pulse};
    }
    error(directive_col_, "unknown directive '" + std::string(word) + "'");
    return std::nullopt;
  }

  std::size_t directive_column() const { return directive_col_; }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }
  std::size_t col() const { return pos_ + 1; }

  void skip_space() {
    while (!at_end() && is_space(peek())) ++pos_;
  }

  std::string_view read_word() {
    const std::size_t start = pos_;
    while (!at_end() && is_word(peek())) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  // Run of characters up to whitespace or one of `stops`.
  std::string_view read_token(std::string_view stops = "") {
    const std::size_t start = pos_;
    while (!at_end() && !is_space(peek()) && stops.find(peek()) == std::string_view::npos) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  void error(std::size_t column, std::string message) {
    diags_.push_back({line_no_, column, std::move(message), Severity::Error});
  }

  bool expect_end() {
    skip_space();
    if (!at_end()) {
      error(col(), "unexpected text '" + std::string(text_.substr(pos_)) + "'");
      return false;
    }
    return true;
  }

  std::optional<double> quantity(std::string_view token, std::size_t column, Dimension dim, std::string_view what) {
    std::string why;
    auto v = parse_quantity(token, dim, &why);
    if (!v) error(column, "malformed " + std::string(what) + " '" + std::string(token) + "': " + why);
    return v;
  }

  std::optional<double> positive_duration(std::string_view token, std::size_t column) {
    auto d = quantity(token, column, Dimension::Time, "duration");
    if (d && !(*d > 0.0)) {
      error(column, "duration must be positive");
      return std::nullopt;
    }
    return d;
  }

  std::optional<double> positional_duration(std::string_view directive) {
    skip_space();
    if (at_end()) {
      error(directive_col_, std::string(directive) + ": missing duration");
      return std::nullopt;
    }
    const std::size_t c = col();
    const auto token = read_token();
    auto d = positive_duration(token, c);
    if (!expect_end()) return std::nullopt;
    return d;
  }

  std::optional<std::array<double, 3>> rabi_vector() {
    if (at_end() || peek() != '(') {
      error(col(), "expected '(' to open the rabi vector");
      return std::nullopt;
    }
    ++pos_;
    std::array<double, 3> out{};
    bool ok = true;
    for (int k = 0; k < 3; ++k) {
      skip_space();
      const std::size_t c = col();
      const auto token = read_token(",)");
      if (token.empty()) {
        error(c, "expected a rabi component");
        return std::nullopt;
      }
      auto v = quantity(token, c, Dimension::Frequency, "rabi component");
      if (v) {
        out[static_cast<std::size_t>(k)] = *v;
      } else {
        ok = false;
      }
      skip_space();
      const char want = k < 2 ? ',' : ')';
      if (at_end() || peek() != want) {
        error(col(), std::string("expected '") + want + "' in rabi vector");
        return std::nullopt;
      }
      ++pos_;
    }
    if (!ok) return std::nullopt;
    return out;
  }

  std::optional<DrivePulse> drive_pulse(std::string_view directive) {
    DrivePulse pulse;
    bool have_freq = false, have_rabi = false, have_phase = false, have_dur = false;
    bool ok = true;
    while (true) {
      skip_space();
      if (at_end()) break;
      const std::size_t key_col = col();
      const auto key = read_word();
      if (key.empty() || at_end() || peek() != '=') {
        error(key_col, "expected key=value");
        return std::nullopt;
      }
      ++pos_;
      const std::size_t value_col = col();
      auto duplicate = [&](bool& seen) {
        if (seen) {
          error(key_col, "duplicate key '" + std::string(key) + "'");
          ok = false;
        }
        seen = true;
      };
      if (key == "rabi") {
        duplicate(have_rabi);
        auto r = rabi_vector();
        if (!r) return std::nullopt;
        pulse.rabi = *r;
        continue;
      }
      const auto token = read_token();
      if (token.empty()) {
        error(value_col, "missing value for '" + std::string(key) + "'");
        ok = false;
        continue;
      }
      if (key == "freq") {
        duplicate(have_freq);
        auto f = quantity(token, value_col, Dimension::Frequency, "frequency");
        if (f && *f < 0.0) {
          error(value_col, "frequency must be >= 0");
          f.reset();
        }
        if (f) pulse.frequency = *f; else ok = false;
      } else if (key == "phase") {
        duplicate(have_phase);
        auto ph = quantity(token, value_col, Dimension::Dimensionless, "phase");
        if (ph) pulse.phase = *ph; else ok = false;
      } else if (key == "dur") {
        duplicate(have_dur);
        auto d = positive_duration(token, value_col);
        if (d) pulse.duration = *d; else ok = false;
      } else {
        error(key_col, "unknown key '" + std::string(key) + "' for " + std::string(directive));
        ok = false;
      }
    }
    const std::string name(directive);
    if (!have_freq) error(directive_col_, name + ": missing `freq=`"), ok = false;
    if (!have_rabi) error(directive_col_, name + ": missing `rabi=`"), ok = false;
    if (!have_dur) error(directive_col_, name + ": missing `dur=`"), ok = false;
    if (!ok) return std::nullopt;
    return pulse;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_;
  std::size_t directive_col_ = 1;
  std::vector<ParseDiagnostic>& diags_;
};

}  // namespace

ParseResult parse_sequence(std::string_view text) {
  std::vector<ParseDiagnostic> diags;
  PulseSequence seq;
  std::optional<std::pair<std::size_t, std::size_t>> readout_at;
  bool readout_reported = false;
  bool any_directive = false;

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::string bom_blanked;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) {
      // Blank the BOM rather than dropping it so columns stay byte offsets.
      bom_blanked = "   " + std::string(line.substr(3));
      line = bom_blanked;
    }

    LineParser parser(line, line_no, diags);
    const std::size_t before = diags.size();
    auto segment = parser.parse();
    if (segment || diags.size() > before) any_directive = true;
    if (segment) {
      if (readout_at && !readout_reported) {
        diags.push_back({readout_at->first, readout_at->second, "readout must be the last segment", Severity::Error});
        readout_reported = true;
      }
      if (std::holds_alternative<ReadoutSegment>(*segment)) {
        if (readout_at) {
          diags.push_back({line_no, parser.directive_column(), "multiple readout directives", Severity::Error});
        } else {
          readout_at = std::pair{line_no, parser.directive_column()};
        }
      }
      seq.segments.push_back(std::move(*segment));
    }

    if (end == text.size()) break;
    start = end + 1;
  }

  if (!any_directive) diags.push_back({1, 1, "empty sequence", Severity::Error});
  if (!diags.empty()) {
    std::stable_sort(diags.begin(), diags.end(), [](const ParseDiagnostic& a, const ParseDiagnostic& b) {
      return std::tie(a.line, a.column) < std::tie(b.line, b.column);
    });
    return ParseResult(std::move(diags));
  }
  return ParseResult(std::move(seq));
}

std::vector<ParseDiagnostic> validate_sequence(const PulseSequence& sequence) {
  std::vector<ParseDiagnostic> diags;
  if (sequence.segments.empty()) {
    diags.push_back({1, 1, "empty sequence", Severity::Error});
    return diags;
  }
  bool seen_readout = false;
  for (std::size_t i = 0; i < sequence.segments.size(); ++i) {
    const std::size_t line = i + 1;
    auto report = [&](std::string m) { diags.push_back({line, 1, std::move(m), Severity::Error}); };
    if (seen_readout) report("readout must be the last segment");
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ReadoutSegment>) {
            seen_readout = true;
          } else {
            if (!(std::isfinite(s.duration) && s.duration > 0.0)) report("duration must be positive");
            if constexpr (std::is_base_of_v<DrivePulse, T>) {
              if (!(std::isfinite(s.frequency) && s.frequency >= 0.0)) report("frequency must be >= 0");
              if (!std::isfinite(s.phase)) report("phase must be finite");
              for (double r : s.rabi) {
                if (!std::isfinite(r)) report("rabi components must be finite");
              }
            }
          }
        },
        sequence.segments[i]);
  }
  return diags;
}

std::string serialize_sequence(const PulseSequence& sequence) {
  std::string out;
  auto pulse = [&](std::string_view name, const DrivePulse& p) {
    out += name;
    out += " freq=" + format_quantity(p.frequency, Dimension::Frequency);
    out += " rabi=(" + format_quantity(p.rabi[0], Dimension::Frequency) + "," +
           format_quantity(p.rabi[1], Dimension::Frequency) + "," +
           format_quantity(p.rabi[2], Dimension::Frequency) + ")";
    if (p.phase != 0.0) out += " phase=" + format_number(p.phase);
    out += " dur=" + format_quantity(p.duration, Dimension::Time);
  };
  for (const auto& seg : sequence.segments) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, LaserSegment>) {
            out += "laser " + format_quantity(s.duration, Dimension::Time);
          } else if constexpr (std::is_same_v<T, WaitSegment>) {
            out += "wait " + format_quantity(s.duration, Dimension::Time);
          } else if constexpr (std::is_same_v<T, ReadoutSegment>) {
            out += "readout";
          } else if constexpr (std::is_same_v<T, MwSegment>) {
            pulse("mw", s);
          } else {
            pulse("rf", s);
          }
        },
        seg);
    out += '\n';
  }
  return out;
}

}  // namespace nvspin
