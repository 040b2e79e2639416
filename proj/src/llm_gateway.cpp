#include "semforge/llm_gateway.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <shared_mutex>
#include <sstream>

#include "semforge/errors.hpp"

namespace semforge::llm {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "assistant") return Role::Assistant;
  if (s == "user") return Role::User;
  throw ValidationError("unknown chat role '" + std::string(s) + "'");
}

Value to_json(const ChatMessage& m) {
  return Value{{"role", std::string(to_string(m.role))}, {"content", m.content}};
}

ChatMessage message_from_json(const Value& v) {
  return {role_from_string(v.at("role").get<std::string>()), v.at("content").get<std::string>()};
}

// ---------------------------------------------------------------------------

namespace {

struct TokenizerRegistry {
  std::shared_mutex mu;
  std::map<std::string, std::shared_ptr<const Tokenizer>> by_model;
};

TokenizerRegistry& registry() {
  static TokenizerRegistry r;
  return r;
}

const ByteQuarterTokenizer kByteQuarter;

}  // namespace

void register_tokenizer(const std::string& model_name, std::shared_ptr<const Tokenizer> tokenizer) {
  auto& r = registry();
  std::unique_lock lock(r.mu);
  r.by_model[model_name] = std::move(tokenizer);
}

std::int64_t count_tokens(std::string_view text, const ModelProfile& profile) {
  if (profile.provider == ProviderKind::Mock) return kByteQuarter.count(text);
  auto& r = registry();
  std::shared_lock lock(r.mu);
  auto it = r.by_model.find(profile.model_name);
  return it != r.by_model.end() ? it->second->count(text) : kByteQuarter.count(text);
}

std::int64_t count_tokens(const std::vector<ChatMessage>& messages, const ModelProfile& profile) {
  std::int64_t total = 0;
  for (const auto& m : messages) total += count_tokens(m.content, profile);
  return total;
}

// ---------------------------------------------------------------------------
// Mock provider

MockProvider::MockProvider(std::vector<MockRule> rules, std::int64_t context_limit)
    : rules_(std::move(rules)), context_limit_(context_limit) {
  compiled_.reserve(rules_.size());
  for (const auto& r : rules_) {
    try {
      compiled_.emplace_back(r.pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw ValidationError("invalid mock rule pattern '" + r.pattern + "': " + e.what());
    }
  }
}

std::shared_ptr<MockProvider> MockProvider::from_yaml(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("malformed mock fixture: ") + e.what());
  }
  std::int64_t limit = 128000;
  YAML::Node list = root;
  if (root.IsMap()) {
    if (root["context_limit"]) limit = root["context_limit"].as<std::int64_t>();
    list = root["rules"];
  }
  if (!list || !list.IsSequence()) throw ValidationError("mock fixture must contain a list of rules");
  std::vector<MockRule> rules;
  for (const auto& n : list) {
    if (!n["match"] || !n["response"]) throw ValidationError("mock rules need 'match' and 'response'");
    rules.push_back({n["match"].as<std::string>(), n["response"].as<std::string>()});
  }
  return std::make_shared<MockProvider>(std::move(rules), limit);
}

std::shared_ptr<MockProvider> MockProvider::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read mock fixture " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_yaml(ss.str());
}

std::string MockProvider::conversation_text(const std::vector<ChatMessage>& messages) {
  std::string text;
  for (const auto& m : messages) {
    if (!text.empty()) text.push_back('\n');
    text += m.content;
  }
  return text;
}

std::string MockProvider::complete(const std::vector<ChatMessage>& messages, const ModelProfile&) {
  auto text = conversation_text(messages);
  for (std::size_t i = 0; i < compiled_.size(); ++i) {
    std::smatch m;
    if (std::regex_search(text, m, compiled_[i])) return m.format(rules_[i].response_template);
  }
  throw ProviderError("mock provider: no rule matched the prompt");
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<Provider> provider) : provider_(std::move(provider)) {
  if (auto* mock = dynamic_cast<MockProvider*>(provider_.get())) default_limit_ = mock->context_limit();
}

std::string Gateway::chat(const std::vector<ChatMessage>& messages, const ModelProfile& profile) {
  ++calls_;
  return provider_->complete(messages, profile);
}

ModelProfile Gateway::profile_for(const std::string& model_name) const {
  ModelProfile p;
  p.model_name = model_name;
  p.provider = provider_->kind();
  std::lock_guard lock(mu_);
  auto it = limits_.find(model_name);
  p.context_limit_tokens = it != limits_.end() ? it->second : default_limit_;
  return p;
}

void Gateway::set_context_limit(const std::string& model_name, std::int64_t limit) {
  std::lock_guard lock(mu_);
  limits_[model_name] = limit;
}

Value Gateway::complete_structured(const std::vector<ChatMessage>& messages, const OutputSchema& schema,
                                   const ModelProfile& profile) {
  auto convo = messages;
  convo.push_back({Role::System, schema_instruction(schema)});
  auto reply = chat(convo, profile);
  try {
    return interpret_reply(reply, schema);
  } catch (const SchemaViolation& v) {
    convo.push_back({Role::Assistant, reply});
    convo.push_back({Role::User, "Your previous reply did not match the required schema (" +
                                     std::string(v.what()) +
                                     "). Reply again with exactly one fenced JSON object matching the schema."});
    return interpret_reply(chat(convo, profile), schema);
  }
}

}  // namespace semforge::llm
