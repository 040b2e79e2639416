#include <httplib.h>

#include <cstdlib>

#include "semforge/errors.hpp"
#include "semforge/llm_gateway.hpp"

namespace semforge::llm {

namespace {

// Splits "https://host:port/v1" into ("https://host:port", "/v1").
std::pair<std::string, std::string> split_base(const std::string& url) {
  auto scheme = url.find("://");
  auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) return {url, ""};
  auto path = url.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, path_start), path};
}

}  // namespace

HttpProvider::HttpProvider(std::string base_url, std::string api_key, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)), timeout_(timeout) {}

std::shared_ptr<HttpProvider> HttpProvider::from_env() {
  const char* base = std::getenv("SEMFORGE_LLM_BASE_URL");
  const char* key = std::getenv("SEMFORGE_LLM_API_KEY");
  return std::make_shared<HttpProvider>(base ? base : "https://api.openai.com/v1", key ? key : "");
}

std::string HttpProvider::complete(const std::vector<ChatMessage>& messages, const ModelProfile& profile) {
  auto [host, prefix] = split_base(base_url_);
  httplib::Client client(host);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  if (!api_key_.empty()) client.set_bearer_token_auth(api_key_);

  Value body = Value::object();
  body["model"] = profile.model_name;
  body["temperature"] = 0;
  Value msgs = Value::array();
  for (const auto& m : messages) msgs.push_back(to_json(m));
  body["messages"] = msgs;

  auto res = client.Post(prefix + "/chat/completions", body.dump(), "application/json");
  if (!res) {
    auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
      throw TimeoutError("LLM request timed out or was cut off: " + httplib::to_string(err));
    throw ProviderError("LLM transport error: " + httplib::to_string(err));
  }
  if (res->status != 200)
    throw ProviderError("LLM provider returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));
  auto reply = Value::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw ProviderError("LLM provider returned malformed JSON");
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    return content.is_string() ? content.get<std::string>() : std::string();
  } catch (const nlohmann::json::exception&) {
    throw ProviderError("LLM provider response lacks choices[0].message.content");
  }
}

}  // namespace semforge::llm
