#pragma once

// Dynamic values flowing through pipelines. Objects keep insertion order,
// which gives documents their "original keys first, added keys appended"
// attribute order.

#include <json.hpp>

#include <string>
#include <string_view>

namespace semforge {

using Value = nlohmann::ordered_json;

/// Compact JSON with object keys sorted recursively. Stable hash surface.
std::string canonical_dump(const Value& v);

/// Recursively sorts object keys (returns a copy).
Value canonicalize(const Value& v);

/// Text form used inside prompts: strings verbatim, numbers in shortest
/// round-trip form, booleans as true/false, containers as compact JSON.
std::string stringify(const Value& v);

/// Kind-aware ordering used by table sorting: null < bool < number < string < other.
int compare_values(const Value& a, const Value& b);

}  // namespace semforge
