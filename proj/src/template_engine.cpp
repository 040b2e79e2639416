#include "semforge/template_engine.hpp"

#include <cctype>
#include <utility>

#include "semforge/text.hpp"

namespace semforge::tmpl {

std::string Path::str() const {
  std::string out;
  for (const auto& s : segments) {
    if (!out.empty()) out.push_back('.');
    out += s;
  }
  return out;
}

namespace {

constexpr int kMaxLoopDepth = 2;

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

bool is_ident(std::string_view s) {
  if (s.empty() || !is_ident_start(s[0])) return false;
  for (char c : s)
    if (!is_ident_char(c)) return false;
  return true;
}

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  std::vector<Node> parse() { return parse_block(0).first; }

 private:
  [[noreturn]] void error_at(std::size_t offset, const std::string& msg) const {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < offset && i < src_.size(); ++i) {
      if (src_[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw SyntaxError(line, col, msg);
  }

  Path parse_path(std::string_view raw, std::size_t offset) const {
    auto trimmed = text::trim(raw);
    if (trimmed.empty()) error_at(offset, "empty expression");
    Path p;
    std::size_t start = 0;
    while (true) {
      auto dot = trimmed.find('.', start);
      auto seg = std::string_view(trimmed).substr(start, dot == std::string::npos ? std::string::npos
                                                                                   : dot - start);
      if (!is_ident(seg)) error_at(offset, "invalid path '" + trimmed + "'");
      p.segments.emplace_back(seg);
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    return p;
  }

  // Parses until EOF or a {% endfor %}; `second` reports which one ended the block.
  std::pair<std::vector<Node>, bool> parse_block(int depth) {
    std::vector<Node> nodes;
    std::string literal;
    auto flush = [&] {
      if (!literal.empty()) nodes.push_back(Node{Literal{std::move(literal)}});
      literal.clear();
    };
    while (pos_ < src_.size()) {
      if (src_.compare(pos_, 2, "{{") == 0) {
        flush();
        auto open = pos_;
        auto close = src_.find("}}", pos_ + 2);
        auto next_open = src_.find("{{", pos_ + 2);
        if (close == std::string_view::npos || (next_open != std::string_view::npos && next_open < close))
          error_at(open, "unclosed '{{'");
        nodes.push_back(Node{Interp{parse_path(src_.substr(pos_ + 2, close - pos_ - 2), open)}});
        pos_ = close + 2;
      } else if (src_.compare(pos_, 2, "{%") == 0) {
        flush();
        auto open = pos_;
        auto close = src_.find("%}", pos_ + 2);
        if (close == std::string_view::npos) error_at(open, "unclosed '{%'");
        auto words = text::split_whitespace(src_.substr(pos_ + 2, close - pos_ - 2));
        pos_ = close + 2;
        if (words.size() == 1 && words[0] == "endfor") {
          if (depth == 0) error_at(open, "'endfor' without matching 'for'");
          return {std::move(nodes), true};
        }
        if (words.size() != 4 || words[0] != "for" || words[2] != "in")
          error_at(open, "expected '{% for <name> in <path> %}' or '{% endfor %}'");
        if (!is_ident(words[1])) error_at(open, "invalid loop variable '" + std::string(words[1]) + "'");
        if (depth + 1 > kMaxLoopDepth) error_at(open, "for-loops may be nested at most once");
        ForLoop loop;
        loop.var = std::string(words[1]);
        loop.iterable = parse_path(words[3], open);
        auto [body, closed] = parse_block(depth + 1);
        if (!closed) error_at(open, "unclosed for-loop");
        loop.body = std::move(body);
        nodes.push_back(Node{std::move(loop)});
      } else {
        literal.push_back(src_[pos_++]);
      }
    }
    flush();
    return {std::move(nodes), false};
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

struct Scope {
  const Value& bindings;
  std::vector<std::pair<std::string, const Value*>> locals;

  const Value* lookup(const Path& path) const {
    const Value* cur = nullptr;
    const auto& root = path.segments.front();
    for (auto it = locals.rbegin(); it != locals.rend(); ++it) {
      if (it->first == root) {
        cur = it->second;
        break;
      }
    }
    if (!cur) {
      auto b = bindings.find(root);
      if (b == bindings.end()) return nullptr;
      cur = &*b;
    }
    for (std::size_t i = 1; i < path.segments.size(); ++i) {
      if (!cur->is_object()) return nullptr;
      auto next = cur->find(path.segments[i]);
      if (next == cur->end()) return nullptr;
      cur = &*next;
    }
    return cur;
  }
};

void render_nodes(const std::vector<Node>& nodes, Scope& scope, std::string& out) {
  for (const auto& node : nodes) {
    if (const auto* lit = std::get_if<Literal>(&node.value)) {
      out += lit->text;
    } else if (const auto* in = std::get_if<Interp>(&node.value)) {
      const Value* v = scope.lookup(in->path);
      if (!v) throw RenderError(RenderError::Kind::MissingPath, in->path.str());
      out += stringify(*v);
    } else {
      const auto& loop = std::get<ForLoop>(node.value);
      const Value* list = scope.lookup(loop.iterable);
      if (!list) throw RenderError(RenderError::Kind::MissingPath, loop.iterable.str());
      if (!list->is_array()) throw RenderError(RenderError::Kind::NotIterable, loop.iterable.str());
      for (const auto& element : *list) {
        scope.locals.emplace_back(loop.var, &element);
        render_nodes(loop.body, scope, out);
        scope.locals.pop_back();
      }
    }
  }
}

struct LoopVar {
  std::string name;
  Reference bound;  // reference to the element
};

Reference resolve(const Path& p, const std::vector<LoopVar>& loops) {
  for (auto it = loops.rbegin(); it != loops.rend(); ++it) {
    if (it->name == p.segments.front()) {
      Reference r = it->bound;
      r.segments.insert(r.segments.end(), p.segments.begin() + 1, p.segments.end());
      r.source = p.str();
      return r;
    }
  }
  return Reference{p.segments.front(), {p.segments.begin() + 1, p.segments.end()}, p.str()};
}

void collect(const std::vector<Node>& nodes, std::vector<LoopVar>& loops, std::vector<Reference>& out) {
  for (const auto& node : nodes) {
    if (const auto* in = std::get_if<Interp>(&node.value)) {
      out.push_back(resolve(in->path, loops));
    } else if (const auto* loop = std::get_if<ForLoop>(&node.value)) {
      auto iter = resolve(loop->iterable, loops);
      out.push_back(iter);
      auto element = iter;
      element.segments.push_back("[]");
      loops.push_back({loop->var, element});
      collect(loop->body, loops, out);
      loops.pop_back();
    }
  }
}

}  // namespace

Template Template::parse(std::string_view source) {
  Template t;
  t.source_ = std::string(source);
  Parser parser(t.source_);
  t.nodes_ = parser.parse();
  return t;
}

std::string Template::render(const Value& bindings) const {
  std::string out;
  Scope scope{bindings, {}};
  render_nodes(nodes_, scope, out);
  return out;
}

std::vector<Reference> Template::references() const {
  std::vector<Reference> out;
  std::vector<LoopVar> loops;
  collect(nodes_, loops, out);
  return out;
}

}  // namespace semforge::tmpl
