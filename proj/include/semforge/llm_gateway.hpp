#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "semforge/pipeline_spec.hpp"
#include "semforge/value.hpp"

namespace semforge::llm {

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct ChatMessage {
  Role role = Role::User;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

Value to_json(const ChatMessage& m);
ChatMessage message_from_json(const Value& v);

enum class ProviderKind { HttpOpenAiCompatible, Mock };

struct ModelProfile {
  std::string model_name;
  std::int64_t context_limit_tokens = 128000;
  ProviderKind provider = ProviderKind::Mock;
};

// ---------------------------------------------------------------------------
// Token counting

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::int64_t count(std::string_view text) const = 0;
};

/// ceil(utf8_bytes / 4). The mock provider's tokenizer, and the fallback for
/// models without a registered tokenizer.
class ByteQuarterTokenizer final : public Tokenizer {
 public:
  std::int64_t count(std::string_view text) const override {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
  }
};

/// Registers a tokenizer for a model name (real providers only).
void register_tokenizer(const std::string& model_name, std::shared_ptr<const Tokenizer> tokenizer);

std::int64_t count_tokens(std::string_view text, const ModelProfile& profile);
std::int64_t count_tokens(const std::vector<ChatMessage>& messages, const ModelProfile& profile);

// ---------------------------------------------------------------------------
// Context fitting

/// Byte range [start, end) of an embedded sample document inside messages[0].
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

inline constexpr std::int64_t kSafetyMarginTokens = 64;
inline constexpr std::int64_t kMinEdgeTokens = 32;
inline constexpr std::string_view kEllipsis = " … ";

struct FitResult {
  std::vector<ChatMessage> messages;
  std::vector<Span> spans;                 // spans in the fitted first message
  std::vector<std::int64_t> reductions;    // tokens removed per span
  bool truncated = false;
};

/// Shrinks the sample-document spans of the first message so the whole
/// conversation fits in `limit` tokens. The overflow (plus a safety margin) is
/// split equally across spans; each span loses a centered middle range that is
/// replaced by an ellipsis. Later messages are never touched.
/// Throws BudgetInfeasible when even maximally reduced spans do not fit.
FitResult fit_to_context(const std::vector<ChatMessage>& messages, const std::vector<Span>& spans,
                         std::int64_t limit, const ModelProfile& profile);

/// Appends `text` to `content`, returning its span.
Span append_span(std::string& content, std::string_view text);

// ---------------------------------------------------------------------------
// Providers

class Provider {
 public:
  virtual ~Provider() = default;
  /// Returns the assistant reply text. Throws ProviderError / TimeoutError.
  virtual std::string complete(const std::vector<ChatMessage>& messages, const ModelProfile& profile) = 0;
  virtual ProviderKind kind() const = 0;
};

struct MockRule {
  std::string pattern;
  std::string response_template;  // may reference $1.. capture groups
};

/// Deterministic offline provider: the first rule whose regex matches the
/// conversation text (message contents joined by newlines) answers.
class MockProvider final : public Provider {
 public:
  explicit MockProvider(std::vector<MockRule> rules, std::int64_t context_limit = 128000);

  /// Either a YAML list of {match, response}, or a map with `rules:` and an
  /// optional `context_limit:`.
  static std::shared_ptr<MockProvider> from_yaml(std::string_view yaml_text);
  static std::shared_ptr<MockProvider> load(const std::filesystem::path& path);

  std::string complete(const std::vector<ChatMessage>& messages, const ModelProfile& profile) override;
  ProviderKind kind() const override { return ProviderKind::Mock; }

  std::int64_t context_limit() const { return context_limit_; }
  const std::vector<MockRule>& rules() const { return rules_; }

  static std::string conversation_text(const std::vector<ChatMessage>& messages);

 private:
  std::vector<MockRule> rules_;
  std::vector<std::regex> compiled_;
  std::int64_t context_limit_;
};

/// Any chat-completions endpoint speaking the OpenAI wire format.
class HttpProvider final : public Provider {
 public:
  HttpProvider(std::string base_url, std::string api_key,
               std::chrono::seconds timeout = std::chrono::seconds(120));

  /// Reads SEMFORGE_LLM_BASE_URL and SEMFORGE_LLM_API_KEY.
  static std::shared_ptr<HttpProvider> from_env();

  std::string complete(const std::vector<ChatMessage>& messages, const ModelProfile& profile) override;
  ProviderKind kind() const override { return ProviderKind::HttpOpenAiCompatible; }

 private:
  std::string base_url_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

// ---------------------------------------------------------------------------
// Structured output

/// System instruction asking for exactly one fenced JSON object matching `schema`.
std::string schema_instruction(const OutputSchema& schema);

/// Parses a model reply into JSON, repairing code fences, trailing commas,
/// single-quoted strings and Python literals. Throws SchemaViolation("<reply>").
Value parse_reply_json(std::string_view reply);

/// Validates and coerces a parsed reply. Throws SchemaViolation.
Value coerce_to_schema(const Value& parsed, const OutputSchema& schema);

/// parse_reply_json + coerce_to_schema, with the bare-scalar fallbacks for
/// single-attribute schemas (e.g. a reply of `TRUE` for a one-boolean schema).
Value interpret_reply(std::string_view reply, const OutputSchema& schema);

/// Leading token of a reply as a boolean, case-insensitive; nullopt otherwise.
std::optional<bool> parse_leading_bool(std::string_view reply);

// ---------------------------------------------------------------------------
// Gateway

class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Provider> provider);

  std::string chat(const std::vector<ChatMessage>& messages, const ModelProfile& profile);

  /// Sends `messages` plus a schema instruction and returns the validated
  /// attribute map. One automatic re-ask on schema violation.
  Value complete_structured(const std::vector<ChatMessage>& messages, const OutputSchema& schema,
                            const ModelProfile& profile);

  /// Profile for a model name; context limits come from set_context_limit or
  /// the default (128000, or the mock fixture's limit).
  ModelProfile profile_for(const std::string& model_name) const;
  void set_context_limit(const std::string& model_name, std::int64_t limit);
  void set_default_context_limit(std::int64_t limit) { default_limit_ = limit; }

  std::int64_t calls() const { return calls_.load(); }
  Provider& provider() { return *provider_; }

 private:
  std::shared_ptr<Provider> provider_;
  std::atomic<std::int64_t> calls_{0};
  std::int64_t default_limit_ = 128000;
  mutable std::mutex mu_;
  std::map<std::string, std::int64_t> limits_;
};

}  // namespace semforge::llm
