#pragma once

// Minimal RFC 4180 reader/writer: quoted fields, doubled quotes, CRLF or LF
// line endings, embedded newlines inside quotes.

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bayeswork::csv {

struct Record {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line on which the record starts
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::optional<Record> next() {
    Record rec;
    rec.line = line_ + 1;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    int c;
    while ((c = in_.get()) != std::char_traits<char>::eof()) {
      any = true;
      const char ch = static_cast<char>(c);
      if (in_quotes) {
        if (ch == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          if (ch == '\n') ++line_;
          field.push_back(ch);
        }
        continue;
      }
      if (ch == '"') {
        if (!field.empty()) {
          throw std::runtime_error("stray quote in unquoted field at line " +
                                   std::to_string(line_ + 1));
        }
        in_quotes = true;
      } else if (ch == ',') {
        rec.fields.push_back(std::move(field));
        field.clear();
      } else if (ch == '\r') {
        if (in_.peek() == '\n') in_.get();
        ++line_;
        rec.fields.push_back(std::move(field));
        return rec;
      } else if (ch == '\n') {
        ++line_;
        rec.fields.push_back(std::move(field));
        return rec;
      } else {
        field.push_back(ch);
      }
    }
    if (in_quotes) {
      throw std::runtime_error("unterminated quoted field starting at line " +
                               std::to_string(rec.line));
    }
    if (!any) return std::nullopt;
    rec.fields.push_back(std::move(field));
    return rec;
  }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

inline std::string escape(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Shortest decimal that round-trips the double; keeps outputs stable and reloadable.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer a shorter representation when it round-trips exactly.
  for (int prec = 6; prec < 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

/// Fixed-precision formatting for human-facing tables.
inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  Writer& row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << escape(fields[i]);
    }
    out_ << '\n';
    return *this;
  }

 private:
  std::ostream& out_;
};

}  // namespace bayeswork::csv
