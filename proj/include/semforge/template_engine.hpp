#pragma once

// Minimal double-brace prompt templates:
//
//   literal text
//   {{ path.to.value }}
//   {% for item in path %} ... {% endfor %}      (at most two levels deep)
//
// No filters, conditionals or arithmetic.

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "semforge/errors.hpp"
#include "semforge/value.hpp"

namespace semforge::tmpl {

class SyntaxError : public Error {
 public:
  SyntaxError(int line, int col, std::string message)
      : Error("template syntax error at " + std::to_string(line) + ":" + std::to_string(col) +
              ": " + message),
        line_(line),
        col_(col),
        message_(std::move(message)) {}
  int line() const { return line_; }
  int col() const { return col_; }
  const std::string& message() const { return message_; }

 private:
  int line_, col_;
  std::string message_;
};

class RenderError : public Error {
 public:
  enum class Kind { MissingPath, NotIterable };
  RenderError(Kind kind, std::string path)
      : Error(kind == Kind::MissingPath ? "missing path '" + path + "'"
                                        : "'" + path + "' is not a list"),
        kind_(kind),
        path_(std::move(path)) {}
  Kind kind() const { return kind_; }
  const std::string& path() const { return path_; }

 private:
  Kind kind_;
  std::string path_;
};

struct Path {
  std::vector<std::string> segments;
  std::string str() const;
  bool operator==(const Path&) const = default;
};

struct Node;

struct Literal {
  std::string text;
  bool operator==(const Literal&) const = default;
};

struct Interp {
  Path path;
  bool operator==(const Interp& o) const { return path == o.path; }
};

struct ForLoop {
  std::string var;
  Path iterable;
  std::vector<Node> body;
  bool operator==(const ForLoop& o) const;
};

struct Node {
  std::variant<Literal, Interp, ForLoop> value;
  bool operator==(const Node& o) const { return value == o.value; }
};

inline bool ForLoop::operator==(const ForLoop& o) const {
  return var == o.var && iterable == o.iterable && body == o.body;
}

/// A statically discovered reference. `root` is a top-level binding name;
/// `segments` follow it, with "[]" standing for "an element of".
struct Reference {
  std::string root;
  std::vector<std::string> segments;
  std::string source;  // path as written
  bool operator==(const Reference&) const = default;
};

class Template {
 public:
  static Template parse(std::string_view source);

  const std::string& source() const { return source_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Renders against an object of bindings.
  std::string render(const Value& bindings) const;

  std::vector<Reference> references() const;

 private:
  std::string source_;
  std::vector<Node> nodes_;
};

inline Template parse_template(std::string_view source) { return Template::parse(source); }

}  // namespace semforge::tmpl
