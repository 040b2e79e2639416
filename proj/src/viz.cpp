#include "semforge/viz.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "semforge/text.hpp"

namespace semforge {

namespace {

std::string num_label(double x) { return Value(x).dump(); }

std::vector<double> to_doubles(const std::vector<Value>& values) {
  std::vector<double> out;
  for (const auto& v : values) {
    if (v.is_number()) out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

std::string_view to_string(ChartKind c) {
  switch (c) {
    case ChartKind::Histogram7: return "histogram7";
    case ChartKind::Bar2Boolean: return "bar2_boolean";
    case ChartKind::BarTop7Categories: return "bar_top7_categories";
    case ChartKind::Histogram7WordCounts: return "histogram7_word_counts";
    case ChartKind::Histogram7CharCounts: return "histogram7_char_counts";
    case ChartKind::None: return "none";
  }
  return "none";
}

std::size_t VizSpec::displayed_count() const {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  return n;
}

Value to_json(const VizSpec& v) {
  Value out = Value::object();
  out["column"] = v.column;
  out["kind"] = std::string(to_string(v.kind));
  out["chart"] = std::string(to_string(v.chart));
  Value bins = Value::array();
  const bool histogram = v.chart != ChartKind::Bar2Boolean && v.chart != ChartKind::BarTop7Categories;
  for (const auto& b : v.bins) {
    Value bin = {{"label", b.label}, {"count", b.count}};
    if (histogram) {
      bin["lo"] = b.lo;
      bin["hi"] = b.hi;
    }
    bins.push_back(std::move(bin));
  }
  out["bins"] = std::move(bins);
  out["overflow_count"] = v.overflow_count;
  return out;
}

std::vector<VizBin> histogram7(const std::vector<double>& values) {
  if (values.empty()) return {};
  auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mn == mx) return {VizBin{"[" + num_label(mn) + ", " + num_label(mx) + "]", values.size(), mn, mx}};

  std::vector<double> edges(kHistogramBins + 1);
  for (std::size_t k = 0; k <= kHistogramBins; ++k) {
    edges[k] = k == kHistogramBins ? mx : mn + (mx - mn) * static_cast<double>(k) / kHistogramBins;
  }
  std::vector<VizBin> bins(kHistogramBins);
  for (std::size_t k = 0; k < kHistogramBins; ++k) {
    bins[k].lo = edges[k];
    bins[k].hi = edges[k + 1];
    bins[k].label = "[" + num_label(edges[k]) + ", " + num_label(edges[k + 1]) + (k + 1 == kHistogramBins ? "]" : ")");
  }
  for (double v : values) {
    // Number of internal edges <= v: an edge value belongs to the bin it opens.
    auto k = static_cast<std::size_t>(std::upper_bound(edges.begin() + 1, edges.end() - 1, v) - (edges.begin() + 1));
    ++bins[k].count;
  }
  return bins;
}

VizSpec viz_spec_for_column(const std::vector<Value>& values, std::string column) {
  VizSpec spec;
  spec.column = std::move(column);
  std::vector<Value> present;
  for (const auto& v : values) {
    if (!v.is_null()) present.push_back(v);
  }
  spec.kind = infer_attribute_kind(present);
  switch (spec.kind) {
    case AttributeKind::Numerical:
      spec.chart = ChartKind::Histogram7;
      spec.bins = histogram7(to_doubles(present));
      break;
    case AttributeKind::Boolean: {
      spec.chart = ChartKind::Bar2Boolean;
      std::size_t t = 0;
      for (const auto& v : present) t += v.get<bool>() ? 1 : 0;
      spec.bins = {VizBin{"true", t}, VizBin{"false", present.size() - t}};
      break;
    }
    case AttributeKind::CategoricalString: {
      spec.chart = ChartKind::BarTop7Categories;
      std::map<std::string, std::size_t> counts;
      for (const auto& v : present) ++counts[v.get<std::string>()];
      std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
      std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i < kTopCategories) spec.bins.push_back(VizBin{sorted[i].first, sorted[i].second});
        else spec.overflow_count += sorted[i].second;
      }
      break;
    }
    case AttributeKind::FreeTextMultiWord: {
      spec.chart = ChartKind::Histogram7WordCounts;
      std::vector<double> counts;
      for (const auto& v : present) counts.push_back(static_cast<double>(text::word_count(v.get<std::string>())));
      spec.bins = histogram7(counts);
      break;
    }
    case AttributeKind::FreeTextSingleWord: {
      spec.chart = ChartKind::Histogram7CharCounts;
      std::vector<double> counts;
      for (const auto& v : present) counts.push_back(static_cast<double>(text::codepoint_count(v.get<std::string>())));
      spec.bins = histogram7(counts);
      break;
    }
    case AttributeKind::ListOfValues: {
      spec.chart = ChartKind::Histogram7;
      std::vector<double> lengths;
      for (const auto& v : present) lengths.push_back(static_cast<double>(v.size()));
      spec.bins = histogram7(lengths);
      break;
    }
    case AttributeKind::Other:
      spec.chart = ChartKind::None;
      break;
  }
  return spec;
}

std::vector<VizSpec> viz_specs_for_rows(const std::vector<Document>& rows) {
  std::vector<std::string> names;
  for (const auto& d : rows) {
    for (auto it = d.attrs.begin(); it != d.attrs.end(); ++it) {
      if (std::find(names.begin(), names.end(), it.key()) == names.end()) names.push_back(it.key());
    }
  }
  std::vector<VizSpec> out;
  for (const auto& n : names) out.push_back(viz_spec_for_column(column_values(rows, n), n));
  return out;
}

std::string render_viz_text(const VizSpec& v, std::size_t width) {
  std::string out = v.column + " (" + std::string(to_string(v.chart)) + ")\n";
  if (v.chart == ChartKind::None) return out + "  no chart\n";
  std::size_t label_w = 0, max_count = 0;
  for (const auto& b : v.bins) {
    label_w = std::max(label_w, text::codepoint_count(b.label));
    max_count = std::max(max_count, b.count);
  }
  for (const auto& b : v.bins) {
    std::size_t len = max_count == 0 ? 0 : (b.count * width + max_count - 1) / max_count;
    out += "  " + b.label + std::string(label_w - text::codepoint_count(b.label), ' ') + " │";
    for (std::size_t i = 0; i < len; ++i) out += "█";
    out += " " + std::to_string(b.count) + "\n";
  }
  if (v.overflow_count > 0) out += "  (+" + std::to_string(v.overflow_count) + " other values)\n";
  return out;
}

}  // namespace semforge
