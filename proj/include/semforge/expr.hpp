#pragma once

// Sandboxed expression language for code_map / code_filter / code_reduce.
//
//   literals     1  2.5  "text"  'text'  true  false  null  [a, b]  {key: expr}
//   access       input.attr   list[0]   map["key"]   inputs.attr (projects over lists)
//   operators    + - * / %   == != < <= > >=   and or not (&& || !)
//   conditional  cond ? a : b      if cond then a else b
//   builtins     length lower upper trim split contains starts_with ends_with
//                count distinct concat join str number sum min max

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "semforge/errors.hpp"
#include "semforge/template_engine.hpp"
#include "semforge/value.hpp"

namespace semforge::expr {

class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& msg)
      : Error("expression error at offset " + std::to_string(offset) + ": " + msg), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

struct Ast;

class Expression {
 public:
  static Expression parse(std::string_view source);

  Value evaluate(const Value& bindings) const;

  /// Dotted access paths rooted at an identifier, e.g. input.summary.
  std::vector<tmpl::Reference> references() const;

  /// Keys of the top-level map literal, or empty when the expression isn't one.
  std::vector<std::string> map_literal_keys() const;
  bool is_map_literal() const;

  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::shared_ptr<const Ast> root_;
};

bool truthy(const Value& v);

}  // namespace semforge::expr
