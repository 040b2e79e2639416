#include <yaml-cpp/yaml.h>

#include <fstream>
#include <sstream>

#include "semforge/errors.hpp"
#include "semforge/pipeline_spec.hpp"

namespace semforge {

namespace {

std::string scalar(const YAML::Node& n, const char* key, std::string fallback = {}) {
  auto v = n[key];
  return v && !v.IsNull() ? v.as<std::string>() : fallback;
}

OperationSpec op_from_yaml(const YAML::Node& n) {
  OperationSpec op;
  op.name = scalar(n, "name");
  auto type = scalar(n, "type");
  auto kind = op_kind_from_string(type);
  if (!kind) throw ValidationError("operation '" + op.name + "': unknown type '" + type + "'");
  op.kind = *kind;
  op.prompt = scalar(n, "prompt");
  if (auto out = n["output"]; out && out["schema"]) {
    OutputSchema schema;
    for (const auto& kv : out["schema"])
      schema.attributes.emplace_back(kv.first.as<std::string>(), SchemaType::parse(kv.second.as<std::string>()));
    op.output_schema = std::move(schema);
  }
  if (n["reduce_key"]) op.reduce_key = n["reduce_key"].as<std::string>();
  if (n["comparison_prompt"] || n["resolution_prompt"] || n["target_attribute"]) {
    ResolveConfig r;
    r.compare_prompt = scalar(n, "comparison_prompt");
    r.resolution_prompt = scalar(n, "resolution_prompt");
    r.target_attribute = scalar(n, "target_attribute");
    if (n["blocking_threshold"]) r.blocking_threshold = n["blocking_threshold"].as<double>();
    op.resolve = std::move(r);
  }
  if (n["unnest_attribute"]) op.unnest_attribute = n["unnest_attribute"].as<std::string>();
  if (n["split_attribute"] || n["chunk_token_budget"]) {
    SplitConfig s;
    s.attribute = scalar(n, "split_attribute");
    if (n["chunk_token_budget"]) s.chunk_token_budget = n["chunk_token_budget"].as<std::int64_t>();
    op.split = std::move(s);
  }
  if (n["code"]) op.code_expr = n["code"].as<std::string>();
  op.model = scalar(n, "model");
  if (n["enabled"]) op.enabled = n["enabled"].as<bool>();
  if (n["sample_limit"]) op.sample_limit = n["sample_limit"].as<std::int64_t>();
  return op;
}

}  // namespace

PipelineSpec pipeline_from_yaml(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("malformed pipeline YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ValidationError("pipeline YAML must be a mapping");
  PipelineSpec p;
  try {
    p.name = scalar(root, "name");
    p.id = scalar(root, "id", p.name);
    p.dataset_id = scalar(root, "dataset");
    p.default_model = scalar(root, "default_model");
    if (auto ops = root["operations"]) {
      if (!ops.IsSequence()) throw ValidationError("'operations' must be a list");
      for (const auto& n : ops) p.ops.push_back(op_from_yaml(n));
    }
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("malformed pipeline YAML: ") + e.what());
  }
  return p;
}

PipelineSpec load_pipeline_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return pipeline_from_yaml(ss.str());
}

namespace {

// Literal block style for text ending in a single newline, double-quoted otherwise.
void emit_text(YAML::Emitter& out, const std::string& s) {
  bool block = s.size() >= 2 && s.back() == '\n' && s[s.size() - 2] != '\n' && s.front() != ' ' &&
               s.front() != '\n';
  if (block)
    out << YAML::Literal << s;
  else
    out << YAML::DoubleQuoted << s;
}

}  // namespace

std::string pipeline_to_yaml(const PipelineSpec& p) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << p.name;
  if (p.id != p.name) out << YAML::Key << "id" << YAML::Value << p.id;
  out << YAML::Key << "dataset" << YAML::Value << p.dataset_id;
  out << YAML::Key << "default_model" << YAML::Value << p.default_model;
  out << YAML::Key << "operations" << YAML::Value << YAML::BeginSeq;
  for (const auto& op : p.ops) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << op.name;
    out << YAML::Key << "type" << YAML::Value << std::string(to_string(op.kind));
    if (!op.prompt.empty()) {
      out << YAML::Key << "prompt" << YAML::Value;
      emit_text(out, op.prompt);
    }
    if (op.output_schema) {
      out << YAML::Key << "output" << YAML::Value << YAML::BeginMap << YAML::Key << "schema" << YAML::Value
          << YAML::BeginMap;
      for (const auto& [name, type] : op.output_schema->attributes)
        out << YAML::Key << name << YAML::Value << type.str();
      out << YAML::EndMap << YAML::EndMap;
    }
    if (op.reduce_key) out << YAML::Key << "reduce_key" << YAML::Value << *op.reduce_key;
    if (op.resolve) {
      out << YAML::Key << "comparison_prompt" << YAML::Value;
      emit_text(out, op.resolve->compare_prompt);
      out << YAML::Key << "resolution_prompt" << YAML::Value;
      emit_text(out, op.resolve->resolution_prompt);
      out << YAML::Key << "target_attribute" << YAML::Value << op.resolve->target_attribute;
      out << YAML::Key << "blocking_threshold" << YAML::Value << op.resolve->blocking_threshold;
    }
    if (op.unnest_attribute) out << YAML::Key << "unnest_attribute" << YAML::Value << *op.unnest_attribute;
    if (op.split) {
      out << YAML::Key << "split_attribute" << YAML::Value << op.split->attribute;
      out << YAML::Key << "chunk_token_budget" << YAML::Value << op.split->chunk_token_budget;
    }
    if (op.code_expr) out << YAML::Key << "code" << YAML::Value << *op.code_expr;
    if (!op.model.empty()) out << YAML::Key << "model" << YAML::Value << op.model;
    if (!op.enabled) out << YAML::Key << "enabled" << YAML::Value << false;
    if (op.sample_limit) out << YAML::Key << "sample_limit" << YAML::Value << *op.sample_limit;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace semforge
