#include "semforge/value.hpp"

#include <algorithm>
#include <vector>

namespace semforge {

Value canonicalize(const Value& v) {
  if (v.is_object()) {
    std::vector<std::string> keys;
    for (auto it = v.begin(); it != v.end(); ++it) keys.push_back(it.key());
    std::sort(keys.begin(), keys.end());
    Value out = Value::object();
    for (const auto& k : keys) out[k] = canonicalize(v.at(k));
    return out;
  }
  if (v.is_array()) {
    Value out = Value::array();
    for (const auto& e : v) out.push_back(canonicalize(e));
    return out;
  }
  return v;
}

std::string canonical_dump(const Value& v) { return canonicalize(v).dump(); }

std::string stringify(const Value& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

namespace {

int type_rank(const Value& v) {
  if (v.is_null()) return 0;
  if (v.is_boolean()) return 1;
  if (v.is_number()) return 2;
  if (v.is_string()) return 3;
  return 4;
}

}  // namespace

int compare_values(const Value& a, const Value& b) {
  int ra = type_rank(a), rb = type_rank(b);
  if (ra != rb) return ra < rb ? -1 : 1;
  switch (ra) {
    case 0:
      return 0;
    case 1:
      return static_cast<int>(a.get<bool>()) - static_cast<int>(b.get<bool>());
    case 2: {
      double x = a.get<double>(), y = b.get<double>();
      return x < y ? -1 : (y < x ? 1 : 0);
    }
    case 3:
    {
      int c = a.get_ref<const std::string&>().compare(b.get_ref<const std::string&>());
      return c < 0 ? -1 : (c > 0 ? 1 : 0);
    }
    default: {
      auto x = canonical_dump(a), y = canonical_dump(b);
      return x < y ? -1 : (y < x ? 1 : 0);
    }
  }
}

}  // namespace semforge
