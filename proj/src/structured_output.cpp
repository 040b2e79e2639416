#include <cmath>
#include <sstream>

#include "semforge/errors.hpp"
#include "semforge/llm_gateway.hpp"
#include "semforge/text.hpp"

namespace semforge::llm {

namespace {

constexpr const char* kReply = "<reply>";

std::string example_for(const ScalarType& t) {
  switch (t.kind) {
    case ScalarKind::String: return "\"...\"";
    case ScalarKind::Integer: return "0";
    case ScalarKind::Number: return "0.0";
    case ScalarKind::Boolean: return "true";
    case ScalarKind::Enum: return "\"" + (t.enum_values.empty() ? std::string() : t.enum_values.front()) + "\"";
  }
  return "null";
}

// Contents of the first ``` fenced block, if any.
std::optional<std::string> fenced_block(std::string_view s) {
  auto open = s.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  auto body = s.find('\n', open);
  if (body == std::string_view::npos) return std::nullopt;
  auto close = s.find("```", body);
  if (close == std::string_view::npos) return std::string(s.substr(body + 1));
  return std::string(s.substr(body + 1, close - body - 1));
}

// Outermost {...} or [...] region.
std::optional<std::string> bracketed(std::string_view s) {
  auto open = s.find_first_of("{[");
  if (open == std::string_view::npos) return std::nullopt;
  char close_ch = s[open] == '{' ? '}' : ']';
  auto close = s.rfind(close_ch);
  if (close == std::string_view::npos || close < open) return std::nullopt;
  return std::string(s.substr(open, close - open + 1));
}

// Single-quoted strings become double-quoted, Python literals become JSON,
// trailing commas are dropped. Content inside double-quoted strings is untouched.
std::string repair(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (c == '"') {
      out.push_back(c);
      ++i;
      while (i < s.size()) {
        out.push_back(s[i]);
        if (s[i] == '\\' && i + 1 < s.size()) {
          out.push_back(s[++i]);
        } else if (s[i] == '"') {
          ++i;
          break;
        }
        ++i;
      }
      continue;
    }
    if (c == '\'') {
      out.push_back('"');
      ++i;
      while (i < s.size() && s[i] != '\'') {
        if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == '\'') {
          out.push_back('\'');
          i += 2;
          continue;
        }
        if (s[i] == '"') out.push_back('\\');
        out.push_back(s[i++]);
      }
      out.push_back('"');
      ++i;
      continue;
    }
    if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size() && (s[j] == '}' || s[j] == ']')) {
        ++i;
        continue;
      }
    }
    auto word_at = [&](std::string_view w) {
      if (s.compare(i, w.size(), w) != 0) return false;
      bool left = i == 0 || !std::isalnum(static_cast<unsigned char>(s[i - 1]));
      bool right = i + w.size() >= s.size() || !std::isalnum(static_cast<unsigned char>(s[i + w.size()]));
      return left && right;
    };
    if (word_at("True")) { out += "true"; i += 4; continue; }
    if (word_at("False")) { out += "false"; i += 5; continue; }
    if (word_at("None")) { out += "null"; i += 4; continue; }
    out.push_back(c);
    ++i;
  }
  return out;
}

std::optional<Value> try_parse(const std::string& s) {
  auto v = Value::parse(s, nullptr, false);
  if (v.is_discarded()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_integer(const std::string& s) {
  auto t = text::trim(s);
  if (t.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    auto n = std::stoll(t, &used);
    if (used == t.size()) return n;
  } catch (const std::logic_error&) {
  }
  return std::nullopt;
}

std::optional<double> parse_number(const std::string& s) {
  auto t = text::trim(s);
  if (t.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    auto d = std::stod(t, &used);
    if (used == t.size() && std::isfinite(d)) return d;
  } catch (const std::logic_error&) {
  }
  return std::nullopt;
}

Value coerce_scalar(const Value& v, const ScalarType& t, const std::string& where) {
  switch (t.kind) {
    case ScalarKind::String:
      if (v.is_string()) return v;
      if (v.is_number() || v.is_boolean()) return stringify(v);
      throw SchemaViolation(where, "expected a string, got " + v.dump());
    case ScalarKind::Integer:
      if (v.is_number_integer()) return v;
      if (v.is_number_float()) {
        double d = v.get<double>();
        if (std::floor(d) == d && std::fabs(d) < 9007199254740992.0) return static_cast<std::int64_t>(d);
      }
      if (v.is_string())
        if (auto n = parse_integer(v.get<std::string>())) return *n;
      throw SchemaViolation(where, "expected an integer, got " + v.dump());
    case ScalarKind::Number:
      if (v.is_number()) return v;
      if (v.is_string()) {
        if (auto n = parse_integer(v.get<std::string>())) return *n;
        if (auto d = parse_number(v.get<std::string>())) return *d;
      }
      throw SchemaViolation(where, "expected a number, got " + v.dump());
    case ScalarKind::Boolean:
      if (v.is_boolean()) return v;
      if (v.is_string()) {
        auto s = text::to_lower(text::trim(v.get<std::string>()));
        if (s == "true") return true;
        if (s == "false") return false;
      }
      throw SchemaViolation(where, "expected a boolean, got " + v.dump());
    case ScalarKind::Enum:
      if (v.is_string()) {
        auto s = text::trim(v.get<std::string>());
        for (const auto& lit : t.enum_values)
          if (lit == s) return lit;
        for (const auto& lit : t.enum_values)
          if (text::iequals(lit, s)) return lit;
      }
      throw SchemaViolation(where, "expected one of the declared enum values, got " + v.dump());
  }
  return v;
}

Value coerce_type(const Value& v, const SchemaType& t, const std::string& where) {
  switch (t.shape) {
    case SchemaType::Shape::Scalar:
      return coerce_scalar(v, t.scalar, where);
    case SchemaType::Shape::List: {
      if (!v.is_array()) throw SchemaViolation(where, "expected a list, got " + v.dump());
      Value out = Value::array();
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(coerce_scalar(v[i], t.scalar, where + "[" + std::to_string(i) + "]"));
      return out;
    }
    case SchemaType::Shape::ObjectList: {
      if (!v.is_array()) throw SchemaViolation(where, "expected a list of objects, got " + v.dump());
      Value out = Value::array();
      for (std::size_t i = 0; i < v.size(); ++i) {
        auto item_where = where + "[" + std::to_string(i) + "]";
        if (!v[i].is_object()) throw SchemaViolation(item_where, "expected an object");
        Value obj = Value::object();
        for (const auto& [field, ft] : t.fields) {
          auto it = v[i].find(field);
          if (it == v[i].end()) throw SchemaViolation(item_where + "." + field, "missing field");
          obj[field] = coerce_scalar(*it, ft, item_where + "." + field);
        }
        out.push_back(std::move(obj));
      }
      return out;
    }
  }
  return v;
}

}  // namespace

std::string schema_instruction(const OutputSchema& schema) {
  std::ostringstream ss;
  ss << "Respond with exactly one JSON object inside a ```json fenced code block and nothing else. "
        "The object must have these attributes:\n";
  for (const auto& [name, type] : schema.attributes) ss << "- \"" << name << "\": " << type.str() << "\n";
  ss << "Example:\n```json\n{";
  bool first = true;
  for (const auto& [name, type] : schema.attributes) {
    if (!first) ss << ", ";
    first = false;
    ss << "\"" << name << "\": ";
    if (type.shape == SchemaType::Shape::Scalar) ss << example_for(type.scalar);
    else if (type.shape == SchemaType::Shape::List) ss << "[" << example_for(type.scalar) << "]";
    else {
      ss << "[{";
      for (std::size_t i = 0; i < type.fields.size(); ++i)
        ss << (i ? ", " : "") << "\"" << type.fields[i].first << "\": " << example_for(type.fields[i].second);
      ss << "}]";
    }
  }
  ss << "}\n```";
  return ss.str();
}

Value parse_reply_json(std::string_view reply) {
  std::vector<std::string> candidates;
  candidates.push_back(text::trim(reply));
  if (auto f = fenced_block(reply)) candidates.push_back(text::trim(*f));
  if (auto b = bracketed(candidates.back())) candidates.push_back(*b);
  for (const auto& c : candidates)
    if (auto v = try_parse(c)) return *v;
  for (const auto& c : candidates)
    if (auto v = try_parse(repair(c))) return *v;
  throw SchemaViolation(kReply, "reply is not valid JSON");
}

Value coerce_to_schema(const Value& parsed, const OutputSchema& schema) {
  if (!parsed.is_object()) throw SchemaViolation(kReply, "expected a JSON object");
  Value out = Value::object();
  for (const auto& [name, type] : schema.attributes) {
    auto it = parsed.find(name);
    if (it == parsed.end()) throw SchemaViolation(name, "missing attribute");
    out[name] = coerce_type(*it, type, name);
  }
  return out;
}

std::optional<bool> parse_leading_bool(std::string_view reply) {
  std::size_t i = 0;
  auto is_noise = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '*' || c == '`' || c == '"' || c == '\'' ||
           c == '#' || c == '>' || c == '_';
  };
  while (i < reply.size() && is_noise(reply[i])) ++i;
  std::size_t j = i;
  while (j < reply.size() && std::isalpha(static_cast<unsigned char>(reply[j]))) ++j;
  auto word = text::to_lower(reply.substr(i, j - i));
  if (word == "true") return true;
  if (word == "false") return false;
  return std::nullopt;
}

Value interpret_reply(std::string_view reply, const OutputSchema& schema) {
  const bool single = schema.attributes.size() == 1;
  std::optional<Value> parsed;
  try {
    parsed = parse_reply_json(reply);
  } catch (const SchemaViolation&) {
    if (!single) throw;
  }
  if (parsed) {
    if (!parsed->is_object() && single) {
      Value wrapped = Value::object();
      wrapped[schema.attributes[0].first] = *parsed;
      return coerce_to_schema(wrapped, schema);
    }
    if (parsed->is_object() && single && !parsed->contains(schema.attributes[0].first) && parsed->size() == 1) {
      Value wrapped = Value::object();
      wrapped[schema.attributes[0].first] = parsed->begin().value();
      return coerce_to_schema(wrapped, schema);
    }
    return coerce_to_schema(*parsed, schema);
  }
  // Bare-text reply for a single-attribute schema.
  const auto& [name, type] = schema.attributes[0];
  Value wrapped = Value::object();
  if (type == SchemaType::of(ScalarKind::Boolean)) {
    auto b = parse_leading_bool(reply);
    if (!b) throw SchemaViolation(name, "expected a boolean reply");
    wrapped[name] = *b;
  } else if (type.shape == SchemaType::Shape::Scalar) {
    wrapped[name] = text::trim(reply);
  } else {
    throw SchemaViolation(kReply, "reply is not valid JSON");
  }
  return coerce_to_schema(wrapped, schema);
}

}  // namespace semforge::llm
