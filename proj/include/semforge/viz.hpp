#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semforge/core_model.hpp"

namespace semforge {

inline constexpr std::size_t kHistogramBins = 7;
inline constexpr std::size_t kTopCategories = 7;

enum class ChartKind {
  Histogram7,
  Bar2Boolean,
  BarTop7Categories,
  Histogram7WordCounts,
  Histogram7CharCounts,
  None,
};
std::string_view to_string(ChartKind c);

struct VizBin {
  std::string label;
  std::size_t count = 0;
  double lo = 0.0;  // histogram bins only
  double hi = 0.0;
};

struct VizSpec {
  std::string column;
  AttributeKind kind = AttributeKind::Other;
  ChartKind chart = ChartKind::None;
  std::vector<VizBin> bins;  // bins or categories
  std::size_t overflow_count = 0;

  std::size_t displayed_count() const;
};

Value to_json(const VizSpec& v);

/// 7 equal-width bins over [min, max]; a single bin when min == max. A value on
/// an internal edge falls in the higher bin; max falls in the last bin.
std::vector<VizBin> histogram7(const std::vector<double>& values);

/// Nulls are ignored.
VizSpec viz_spec_for_column(const std::vector<Value>& values, std::string column = {});

/// One spec per attribute, in first-appearance order.
std::vector<VizSpec> viz_specs_for_rows(const std::vector<Document>& rows);

/// Plain-text bar table for terminals.
std::string render_viz_text(const VizSpec& v, std::size_t width = 30);

}  // namespace semforge
