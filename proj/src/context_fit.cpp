#include <algorithm>

#include "semforge/errors.hpp"
#include "semforge/llm_gateway.hpp"
#include "semforge/text.hpp"

namespace semforge::llm {

namespace {

struct SpanPlan {
  std::string text;            // original span text
  std::int64_t tokens = 0;     // tokens of original text
  std::size_t min_prefix = 0;  // bytes that must survive at the front
  std::size_t min_suffix = 0;  // bytes that must survive at the back
  std::int64_t max_reduction = 0;
};

std::string splice(const std::string& s, std::size_t cut_begin, std::size_t cut_end) {
  std::string out;
  out.reserve(cut_begin + kEllipsis.size() + (s.size() - cut_end));
  out.append(s, 0, cut_begin);
  out.append(kEllipsis);
  out.append(s, cut_end, std::string::npos);
  return out;
}

// Removes `removed` bytes centered in the span, kept clear of the edge floors
// and aligned to code points.
std::pair<std::size_t, std::size_t> cut_range(const SpanPlan& p, std::size_t removed) {
  const std::size_t n = p.text.size();
  std::size_t begin = (n - removed) / 2;
  begin = std::clamp(begin, p.min_prefix, n - p.min_suffix - removed);
  begin = text::floor_boundary(p.text, begin);
  std::size_t end = text::ceil_boundary(p.text, begin + removed);
  end = std::min(end, n - p.min_suffix);
  return {begin, end};
}

std::int64_t reduction_for(const SpanPlan& p, std::size_t removed, const ModelProfile& profile) {
  auto [b, e] = cut_range(p, removed);
  return p.tokens - count_tokens(splice(p.text, b, e), profile);
}

SpanPlan plan_span(std::string text, const ModelProfile& profile) {
  SpanPlan p;
  p.text = std::move(text);
  p.tokens = count_tokens(p.text, profile);
  const auto n = p.text.size();
  if (n == 0) return p;
  if (p.tokens >= 2 * kMinEdgeTokens) {
    // Shortest prefix/suffix holding kMinEdgeTokens tokens.
    std::size_t pre = 0;
    while (pre < n && count_tokens(std::string_view(p.text).substr(0, pre), profile) < kMinEdgeTokens)
      pre += text::utf8_seq_len(p.text, pre);
    std::size_t suf = 0;
    while (suf < n && count_tokens(std::string_view(p.text).substr(n - suf), profile) < kMinEdgeTokens)
      suf = n - text::floor_boundary(p.text, n - suf - 1);
    p.min_prefix = pre;
    p.min_suffix = suf;
  } else {
    p.min_prefix = text::utf8_seq_len(p.text, 0);
    p.min_suffix = n - text::floor_boundary(p.text, n - 1);
  }
  if (p.min_prefix + p.min_suffix >= n) {
    p.min_prefix = std::min(p.min_prefix, n);
    p.min_suffix = n - p.min_prefix;
    return p;
  }
  std::size_t max_removed = n - p.min_prefix - p.min_suffix;
  p.max_reduction = std::max<std::int64_t>(0, reduction_for(p, max_removed, profile));
  return p;
}

// Equal split with the remainder going one token each to the first spans;
// spans that cannot absorb their share are capped and the rest re-split.
std::vector<std::int64_t> distribute(std::int64_t overflow, const std::vector<SpanPlan>& plans) {
  std::vector<std::int64_t> target(plans.size(), 0);
  std::vector<bool> capped(plans.size(), false);
  for (std::size_t i = 0; i < plans.size(); ++i) capped[i] = plans[i].max_reduction <= 0;
  std::int64_t remaining = overflow;
  while (remaining > 0) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < plans.size(); ++i)
      if (!capped[i]) active.push_back(i);
    if (active.empty()) break;
    auto k = static_cast<std::int64_t>(active.size());
    std::int64_t share = remaining / k, extra = remaining % k;
    bool any_capped = false;
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto i = active[a];
      auto want = target[i] + share + (static_cast<std::int64_t>(a) < extra ? 1 : 0);
      if (want > plans[i].max_reduction) any_capped = true;
    }
    if (!any_capped) {
      for (std::size_t a = 0; a < active.size(); ++a)
        target[active[a]] += share + (static_cast<std::int64_t>(a) < extra ? 1 : 0);
      remaining = 0;
      break;
    }
    for (auto i : active) {
      auto want = target[i] + share + 1;
      if (want > plans[i].max_reduction) {
        remaining -= plans[i].max_reduction - target[i];
        target[i] = plans[i].max_reduction;
        capped[i] = true;
      }
    }
  }
  return target;
}

}  // namespace

Span append_span(std::string& content, std::string_view text) {
  Span s{content.size(), content.size() + text.size()};
  content.append(text);
  return s;
}

FitResult fit_to_context(const std::vector<ChatMessage>& messages, const std::vector<Span>& spans,
                         std::int64_t limit, const ModelProfile& profile) {
  FitResult result{messages, spans, std::vector<std::int64_t>(spans.size(), 0), false};
  const auto total = count_tokens(messages, profile);
  if (total <= limit) return result;
  if (messages.empty() || spans.empty())
    throw BudgetInfeasible("conversation needs " + std::to_string(total) + " tokens but the limit is " +
                           std::to_string(limit) + " and there are no sample documents to shrink");

  const auto& first = messages.front().content;
  std::vector<Span> order = spans;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].start > spans[i].end || spans[i].end > first.size())
      throw ValidationError("sample document span out of range");
    if (i > 0 && spans[i].start < spans[i - 1].end) throw ValidationError("sample document spans overlap");
  }

  std::vector<SpanPlan> plans;
  plans.reserve(spans.size());
  for (const auto& s : spans) plans.push_back(plan_span(first.substr(s.start, s.end - s.start), profile));

  const std::int64_t overflow = total - limit + kSafetyMarginTokens;
  auto targets = distribute(overflow, plans);

  std::vector<std::string> replaced(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto& p = plans[i];
    if (targets[i] <= 0) {
      replaced[i] = p.text;
      continue;
    }
    // Smallest removal reaching the target reduction.
    std::size_t lo = 1, hi = p.text.size() - p.min_prefix - p.min_suffix;
    while (lo < hi) {
      auto mid = lo + (hi - lo) / 2;
      if (reduction_for(p, mid, profile) >= targets[i]) hi = mid;
      else lo = mid + 1;
    }
    auto [b, e] = cut_range(p, lo);
    replaced[i] = splice(p.text, b, e);
    result.reductions[i] = p.tokens - count_tokens(replaced[i], profile);
  }

  std::string rebuilt;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    rebuilt.append(first, cursor, spans[i].start - cursor);
    result.spans[i] = append_span(rebuilt, replaced[i]);
    cursor = spans[i].end;
  }
  rebuilt.append(first, cursor, std::string::npos);
  result.messages.front().content = std::move(rebuilt);
  result.truncated = true;

  auto fitted = count_tokens(result.messages, profile);
  if (fitted > limit)
    throw BudgetInfeasible("sample documents cannot be shrunk enough: " + std::to_string(fitted) +
                           " tokens remain against a limit of " + std::to_string(limit));
  return result;
}

}  // namespace semforge::llm
