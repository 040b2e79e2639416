#include "semforge/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <variant>

#include "semforge/text.hpp"

namespace semforge::expr {

struct Ast {
  enum class Kind { Literal, Ident, Member, Index, Unary, Binary, Ternary, Call, List, Map };
  Kind kind;
  std::size_t offset = 0;
  Value literal;
  std::string name;  // identifier, member name, operator, function name
  std::vector<std::shared_ptr<const Ast>> children;
  std::vector<std::string> keys;  // Map
};

namespace {

using AstPtr = std::shared_ptr<const Ast>;

struct Token {
  enum class Type { Number, String, Ident, Op, End } type;
  std::string text;
  Value number;
  std::size_t offset;
};

std::vector<Token> tokenize(std::string_view s) {
  static const std::vector<std::string> kOps = {"==", "!=", "<=", ">=", "&&", "||", "+", "-", "*",
                                                "/",  "%",  "<",  ">",  "!",  "?",  ":", "(", ")",
                                                "[",  "]",  "{",  "}",  ",",  "."};
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      bool is_float = false;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      if (j + 1 < s.size() && s[j] == '.' && std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
        is_float = true;
        ++j;
        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      }
      auto text = std::string(s.substr(i, j - i));
      Value num = is_float ? Value(std::stod(text)) : Value(std::stoll(text));
      out.push_back({Token::Type::Number, text, num, i});
      i = j;
      continue;
    }
    if (c == '"' || c == '\'') {
      std::string str;
      std::size_t j = i + 1;
      bool closed = false;
      while (j < s.size()) {
        if (s[j] == '\\' && j + 1 < s.size()) {
          char e = s[j + 1];
          str.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
          j += 2;
        } else if (s[j] == c) {
          closed = true;
          ++j;
          break;
        } else {
          str.push_back(s[j++]);
        }
      }
      if (!closed) throw ParseError(i, "unterminated string literal");
      out.push_back({Token::Type::String, str, Value(), i});
      i = j;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      out.push_back({Token::Type::Ident, std::string(s.substr(i, j - i)), Value(), i});
      i = j;
      continue;
    }
    bool matched = false;
    for (const auto& op : kOps) {
      if (s.compare(i, op.size(), op) == 0) {
        out.push_back({Token::Type::Op, op, Value(), i});
        i += op.size();
        matched = true;
        break;
      }
    }
    if (!matched) throw ParseError(i, std::string("unexpected character '") + c + "'");
  }
  out.push_back({Token::Type::End, "", Value(), s.size()});
  return out;
}

AstPtr make(Ast::Kind kind, std::size_t offset, std::string name = {},
            std::vector<AstPtr> children = {}) {
  auto a = std::make_shared<Ast>();
  a->kind = kind;
  a->offset = offset;
  a->name = std::move(name);
  a->children = std::move(children);
  return a;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  AstPtr parse() {
    auto e = expression();
    if (peek().type != Token::Type::End) throw ParseError(peek().offset, "unexpected '" + peek().text + "'");
    return e;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }
  bool is_op(std::string_view op) const { return peek().type == Token::Type::Op && peek().text == op; }
  bool is_word(std::string_view w) const { return peek().type == Token::Type::Ident && peek().text == w; }
  void expect_op(std::string_view op) {
    if (!is_op(op)) throw ParseError(peek().offset, "expected '" + std::string(op) + "'");
    ++pos_;
  }

  AstPtr expression() {
    if (is_word("if")) {
      auto off = next().offset;
      auto cond = expression();
      if (!is_word("then")) throw ParseError(peek().offset, "expected 'then'");
      ++pos_;
      auto a = expression();
      if (!is_word("else")) throw ParseError(peek().offset, "expected 'else'");
      ++pos_;
      auto b = expression();
      return make(Ast::Kind::Ternary, off, "", {cond, a, b});
    }
    auto cond = logical_or();
    if (is_op("?")) {
      auto off = next().offset;
      auto a = expression();
      expect_op(":");
      auto b = expression();
      return make(Ast::Kind::Ternary, off, "", {cond, a, b});
    }
    return cond;
  }

  AstPtr logical_or() {
    auto lhs = logical_and();
    while (is_op("||") || is_word("or")) {
      auto off = next().offset;
      lhs = make(Ast::Kind::Binary, off, "or", {lhs, logical_and()});
    }
    return lhs;
  }

  AstPtr logical_and() {
    auto lhs = logical_not();
    while (is_op("&&") || is_word("and")) {
      auto off = next().offset;
      lhs = make(Ast::Kind::Binary, off, "and", {lhs, logical_not()});
    }
    return lhs;
  }

  AstPtr logical_not() {
    if (is_op("!") || is_word("not")) {
      auto off = next().offset;
      return make(Ast::Kind::Unary, off, "not", {logical_not()});
    }
    return comparison();
  }

  AstPtr comparison() {
    auto lhs = additive();
    for (const char* op : {"==", "!=", "<=", ">=", "<", ">"}) {
      if (is_op(op)) {
        auto off = next().offset;
        return make(Ast::Kind::Binary, off, op, {lhs, additive()});
      }
    }
    return lhs;
  }

  AstPtr additive() {
    auto lhs = multiplicative();
    while (is_op("+") || is_op("-")) {
      auto tok = next();
      lhs = make(Ast::Kind::Binary, tok.offset, tok.text, {lhs, multiplicative()});
    }
    return lhs;
  }

  AstPtr multiplicative() {
    auto lhs = unary();
    while (is_op("*") || is_op("/") || is_op("%")) {
      auto tok = next();
      lhs = make(Ast::Kind::Binary, tok.offset, tok.text, {lhs, unary()});
    }
    return lhs;
  }

  AstPtr unary() {
    if (is_op("-")) {
      auto off = next().offset;
      return make(Ast::Kind::Unary, off, "-", {unary()});
    }
    return postfix();
  }

  AstPtr postfix() {
    auto e = primary();
    while (true) {
      if (is_op(".")) {
        auto off = next().offset;
        if (peek().type != Token::Type::Ident) throw ParseError(peek().offset, "expected attribute name");
        e = make(Ast::Kind::Member, off, next().text, {e});
      } else if (is_op("[")) {
        auto off = next().offset;
        auto idx = expression();
        expect_op("]");
        e = make(Ast::Kind::Index, off, "", {e, idx});
      } else {
        return e;
      }
    }
  }

  AstPtr primary() {
    const auto& tok = peek();
    switch (tok.type) {
      case Token::Type::Number: {
        auto a = make(Ast::Kind::Literal, tok.offset);
        std::const_pointer_cast<Ast>(a)->literal = tok.number;
        ++pos_;
        return a;
      }
      case Token::Type::String: {
        auto a = make(Ast::Kind::Literal, tok.offset);
        std::const_pointer_cast<Ast>(a)->literal = tok.text;
        ++pos_;
        return a;
      }
      case Token::Type::Ident: {
        auto t = next();
        if (t.text == "true" || t.text == "false" || t.text == "null") {
          auto a = make(Ast::Kind::Literal, t.offset);
          std::const_pointer_cast<Ast>(a)->literal =
              t.text == "null" ? Value() : Value(t.text == "true");
          return a;
        }
        if (is_op("(")) {
          ++pos_;
          std::vector<AstPtr> args;
          if (!is_op(")")) {
            args.push_back(expression());
            while (is_op(",")) {
              ++pos_;
              args.push_back(expression());
            }
          }
          expect_op(")");
          return make(Ast::Kind::Call, t.offset, t.text, std::move(args));
        }
        return make(Ast::Kind::Ident, t.offset, t.text);
      }
      case Token::Type::Op: {
        if (tok.text == "(") {
          ++pos_;
          auto e = expression();
          expect_op(")");
          return e;
        }
        if (tok.text == "[") {
          auto off = next().offset;
          std::vector<AstPtr> items;
          if (!is_op("]")) {
            items.push_back(expression());
            while (is_op(",")) {
              ++pos_;
              items.push_back(expression());
            }
          }
          expect_op("]");
          return make(Ast::Kind::List, off, "", std::move(items));
        }
        if (tok.text == "{") {
          auto off = next().offset;
          auto node = std::make_shared<Ast>();
          node->kind = Ast::Kind::Map;
          node->offset = off;
          if (!is_op("}")) {
            while (true) {
              if (peek().type != Token::Type::Ident && peek().type != Token::Type::String)
                throw ParseError(peek().offset, "expected map key");
              auto key = next().text;
              if (std::find(node->keys.begin(), node->keys.end(), key) != node->keys.end())
                throw ParseError(peek().offset, "duplicate map key '" + key + "'");
              expect_op(":");
              node->keys.push_back(key);
              node->children.push_back(expression());
              if (!is_op(",")) break;
              ++pos_;
            }
          }
          expect_op("}");
          return node;
        }
        break;
      }
      case Token::Type::End:
        throw ParseError(tok.offset, "unexpected end of expression");
    }
    throw ParseError(tok.offset, "unexpected '" + tok.text + "'");
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

double as_number(const Value& v, const char* what) {
  if (!v.is_number()) throw EvalError(std::string(what) + " expects a number, got " + v.dump());
  return v.get<double>();
}

const std::string& as_string(const Value& v, const char* what) {
  if (!v.is_string()) throw EvalError(std::string(what) + " expects a string, got " + v.dump());
  return v.get_ref<const std::string&>();
}

const Value& as_list(const Value& v, const char* what) {
  if (!v.is_array()) throw EvalError(std::string(what) + " expects a list, got " + v.dump());
  return v;
}

Value numeric(double d) {
  if (std::isfinite(d) && std::floor(d) == d && std::fabs(d) < 9007199254740992.0)
    return Value(static_cast<std::int64_t>(d));
  return Value(d);
}

Value member(const Value& base, const std::string& name) {
  if (base.is_object()) {
    auto it = base.find(name);
    if (it == base.end()) throw EvalError("missing attribute '" + name + "'");
    return *it;
  }
  if (base.is_array()) {
    // Projection: inputs.attr collects attr from each element, null when absent.
    Value out = Value::array();
    for (const auto& e : base) {
      if (e.is_object()) {
        auto it = e.find(name);
        out.push_back(it == e.end() ? Value() : *it);
      } else {
        out.push_back(Value());
      }
    }
    return out;
  }
  throw EvalError("cannot access '" + name + "' on " + base.dump());
}

Value call(const std::string& fn, const std::vector<Value>& args) {
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (args.size() < lo || args.size() > hi)
      throw EvalError(fn + "() takes " + std::to_string(lo) +
                      (hi != lo ? ".." + std::to_string(hi) : "") + " arguments");
  };
  if (fn == "length") {
    arity(1, 1);
    const auto& v = args[0];
    if (v.is_string()) return text::codepoint_count(v.get_ref<const std::string&>());
    if (v.is_array() || v.is_object()) return v.size();
    if (v.is_null()) return 0;
    throw EvalError("length() expects a string, list or map");
  }
  if (fn == "count") {
    arity(1, 1);
    return as_list(args[0], "count()").size();
  }
  if (fn == "lower" || fn == "upper") {
    arity(1, 1);
    auto s = as_string(args[0], "lower()/upper()");
    for (auto& c : s)
      c = static_cast<char>(fn == "lower" ? std::tolower(static_cast<unsigned char>(c))
                                          : std::toupper(static_cast<unsigned char>(c)));
    return s;
  }
  if (fn == "trim") {
    arity(1, 1);
    return text::trim(as_string(args[0], "trim()"));
  }
  if (fn == "split") {
    arity(1, 2);
    const auto& s = as_string(args[0], "split()");
    Value out = Value::array();
    if (args.size() == 1) {
      for (auto w : text::split_whitespace(s)) out.push_back(std::string(w));
      return out;
    }
    const auto& sep = as_string(args[1], "split()");
    if (sep.empty()) throw EvalError("split() separator must be nonempty");
    std::size_t start = 0;
    while (true) {
      auto pos = s.find(sep, start);
      out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + sep.size();
    }
    return out;
  }
  if (fn == "contains") {
    arity(2, 2);
    if (args[0].is_string()) return as_string(args[0], "contains()").find(as_string(args[1], "contains()")) != std::string::npos;
    if (args[0].is_array())
      return std::any_of(args[0].begin(), args[0].end(), [&](const Value& e) { return e == args[1]; });
    if (args[0].is_null()) return false;
    throw EvalError("contains() expects a string or list");
  }
  if (fn == "starts_with" || fn == "ends_with") {
    arity(2, 2);
    const auto& s = as_string(args[0], "starts_with()/ends_with()");
    const auto& p = as_string(args[1], "starts_with()/ends_with()");
    if (p.size() > s.size()) return false;
    return fn == "starts_with" ? s.compare(0, p.size(), p) == 0
                               : s.compare(s.size() - p.size(), p.size(), p) == 0;
  }
  if (fn == "distinct") {
    arity(1, 1);
    Value out = Value::array();
    std::set<std::string> seen;
    for (const auto& e : as_list(args[0], "distinct()"))
      if (seen.insert(canonical_dump(e)).second) out.push_back(e);
    return out;
  }
  if (fn == "concat") {
    // concat(list_of_lists) flattens one level; concat(a, b, ...) joins lists or strings.
    if (args.empty()) throw EvalError("concat() needs at least one argument");
    const std::vector<Value>* parts = &args;
    std::vector<Value> nested;
    if (args.size() == 1 && args[0].is_array()) {
      nested.assign(args[0].begin(), args[0].end());
      parts = &nested;
    }
    bool strings = std::all_of(parts->begin(), parts->end(), [](const Value& v) { return v.is_string(); });
    if (strings && !parts->empty()) {
      std::string s;
      for (const auto& p : *parts) s += p.get_ref<const std::string&>();
      return s;
    }
    Value out = Value::array();
    for (const auto& p : *parts) {
      if (p.is_array()) {
        for (const auto& e : p) out.push_back(e);
      } else if (!p.is_null()) {
        out.push_back(p);
      }
    }
    return out;
  }
  if (fn == "join") {
    arity(1, 2);
    std::string sep = args.size() == 2 ? as_string(args[1], "join()") : std::string(", ");
    std::string s;
    bool first = true;
    for (const auto& e : as_list(args[0], "join()")) {
      if (!first) s += sep;
      s += stringify(e);
      first = false;
    }
    return s;
  }
  if (fn == "str") {
    arity(1, 1);
    return stringify(args[0]);
  }
  if (fn == "number") {
    arity(1, 1);
    if (args[0].is_number()) return args[0];
    try {
      std::size_t used = 0;
      const auto& s = as_string(args[0], "number()");
      double d = std::stod(s, &used);
      if (used != s.size()) throw EvalError("number(): not numeric: " + s);
      return numeric(d);
    } catch (const std::logic_error&) {
      throw EvalError("number(): not numeric: " + args[0].dump());
    }
  }
  if (fn == "sum" || fn == "min" || fn == "max") {
    arity(1, 1);
    const auto& list = as_list(args[0], "sum()/min()/max()");
    if (fn != "sum" && list.empty()) return Value();
    double acc = fn == "sum" ? 0.0 : as_number(list[0], "min()/max()");
    for (const auto& e : list) {
      double d = as_number(e, "sum()/min()/max()");
      acc = fn == "sum" ? acc + d : fn == "min" ? std::min(acc, d) : std::max(acc, d);
    }
    return numeric(acc);
  }
  throw EvalError("unknown function '" + fn + "'");
}

Value eval(const Ast& a, const Value& env) {
  switch (a.kind) {
    case Ast::Kind::Literal:
      return a.literal;
    case Ast::Kind::Ident: {
      auto it = env.find(a.name);
      if (it == env.end()) throw EvalError("unknown name '" + a.name + "'");
      return *it;
    }
    case Ast::Kind::Member:
      return member(eval(*a.children[0], env), a.name);
    case Ast::Kind::Index: {
      auto base = eval(*a.children[0], env);
      auto idx = eval(*a.children[1], env);
      if (base.is_array()) {
        if (!idx.is_number_integer()) throw EvalError("list index must be an integer");
        auto i = idx.get<std::int64_t>();
        auto n = static_cast<std::int64_t>(base.size());
        if (i < 0) i += n;
        if (i < 0 || i >= n) throw EvalError("list index out of range");
        return base[static_cast<std::size_t>(i)];
      }
      if (base.is_object()) return member(base, as_string(idx, "map index"));
      throw EvalError("cannot index " + base.dump());
    }
    case Ast::Kind::Unary: {
      auto v = eval(*a.children[0], env);
      if (a.name == "not") return !truthy(v);
      return numeric(-as_number(v, "unary '-'"));
    }
    case Ast::Kind::Binary: {
      if (a.name == "and") return truthy(eval(*a.children[0], env)) && truthy(eval(*a.children[1], env));
      if (a.name == "or") return truthy(eval(*a.children[0], env)) || truthy(eval(*a.children[1], env));
      auto l = eval(*a.children[0], env);
      auto r = eval(*a.children[1], env);
      const auto& op = a.name;
      if (op == "==") return l == r;
      if (op == "!=") return l != r;
      if (op == "<" || op == "<=" || op == ">" || op == ">=") {
        int c;
        if (l.is_number() && r.is_number()) {
          double x = l.get<double>(), y = r.get<double>();
          c = x < y ? -1 : (y < x ? 1 : 0);
        } else if (l.is_string() && r.is_string()) {
          c = l.get_ref<const std::string&>().compare(r.get_ref<const std::string&>());
        } else {
          throw EvalError("cannot compare " + l.dump() + " and " + r.dump());
        }
        if (op == "<") return c < 0;
        if (op == "<=") return c <= 0;
        if (op == ">") return c > 0;
        return c >= 0;
      }
      if (op == "+") {
        if (l.is_string() && r.is_string()) return l.get<std::string>() + r.get<std::string>();
        if (l.is_array() && r.is_array()) {
          Value out = l;
          for (const auto& e : r) out.push_back(e);
          return out;
        }
      }
      double x = as_number(l, ("'" + op + "'").c_str());
      double y = as_number(r, ("'" + op + "'").c_str());
      if (op == "+") return numeric(x + y);
      if (op == "-") return numeric(x - y);
      if (op == "*") return numeric(x * y);
      if (y == 0) throw EvalError("division by zero");
      if (op == "/") return numeric(x / y);
      return numeric(std::fmod(x, y));
    }
    case Ast::Kind::Ternary:
      return truthy(eval(*a.children[0], env)) ? eval(*a.children[1], env) : eval(*a.children[2], env);
    case Ast::Kind::Call: {
      std::vector<Value> args;
      for (const auto& c : a.children) args.push_back(eval(*c, env));
      return call(a.name, args);
    }
    case Ast::Kind::List: {
      Value out = Value::array();
      for (const auto& c : a.children) out.push_back(eval(*c, env));
      return out;
    }
    case Ast::Kind::Map: {
      Value out = Value::object();
      for (std::size_t i = 0; i < a.keys.size(); ++i) out[a.keys[i]] = eval(*a.children[i], env);
      return out;
    }
  }
  return Value();
}

// Collects maximal Ident(.Member)* chains.
void collect_refs(const Ast& a, std::vector<tmpl::Reference>& out) {
  if (a.kind == Ast::Kind::Member || a.kind == Ast::Kind::Ident) {
    std::vector<std::string> chain;
    const Ast* cur = &a;
    while (cur->kind == Ast::Kind::Member) {
      chain.push_back(cur->name);
      cur = cur->children[0].get();
    }
    if (cur->kind == Ast::Kind::Ident) {
      std::reverse(chain.begin(), chain.end());
      tmpl::Reference r{cur->name, chain, cur->name};
      for (const auto& s : chain) r.source += "." + s;
      out.push_back(std::move(r));
      return;
    }
    collect_refs(*cur, out);
    return;
  }
  for (const auto& c : a.children) collect_refs(*c, out);
}

}  // namespace

bool truthy(const Value& v) {
  if (v.is_null()) return false;
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>() != 0.0;
  if (v.is_string() || v.is_array() || v.is_object()) return !v.empty();
  return true;
}

Expression Expression::parse(std::string_view source) {
  Expression e;
  e.source_ = std::string(source);
  e.root_ = Parser(tokenize(e.source_)).parse();
  return e;
}

Value Expression::evaluate(const Value& bindings) const { return eval(*root_, bindings); }

std::vector<tmpl::Reference> Expression::references() const {
  std::vector<tmpl::Reference> out;
  collect_refs(*root_, out);
  return out;
}

bool Expression::is_map_literal() const { return root_->kind == Ast::Kind::Map; }

std::vector<std::string> Expression::map_literal_keys() const {
  return is_map_literal() ? root_->keys : std::vector<std::string>{};
}

}  // namespace semforge::expr
