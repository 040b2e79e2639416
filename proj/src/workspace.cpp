#include "semforge/workspace.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "semforge/hash.hpp"
#include "semforge/text.hpp"
#include "semforge/viz.hpp"

namespace fs = std::filesystem;

namespace semforge {

namespace {

void write_file(const fs::path& path, const std::string& data) {
  fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << data;
  }
  fs::rename(tmp, path);
}

Value read_json(const fs::path& path) {
  std::ifstream in(path);
  return Value::parse(in);
}

DatasetFormat sniff_format(std::string_view payload) {
  auto t = text::trim(payload);
  if (!t.empty() && t.front() == '[') return DatasetFormat::JsonArray;
  bool all_objects = !t.empty();
  for (const auto& line : text::split_lines(t)) {
    auto l = text::trim(line);
    if (!l.empty() && l.front() != '{') all_objects = false;
  }
  return all_objects ? DatasetFormat::JsonLines : DatasetFormat::PlainText;
}

bool string_contains_ci(const Value& v, const std::string& needle) {
  return v.is_string() && text::icontains(v.get<std::string>(), needle);
}

bool matches_filter(const Document& d, const QueryParams& q) {
  auto it = d.attrs.find(*q.filter_attribute);
  if (it == d.attrs.end()) return false;
  if (q.filter_op == "contains") {
    if (it->is_array()) {
      for (const auto& e : *it) {
        if (text::icontains(stringify(e), q.filter_value)) return true;
      }
      return false;
    }
    return text::icontains(stringify(*it), q.filter_value);
  }
  if (stringify(*it) == q.filter_value) return true;
  try {
    return Value::parse(q.filter_value) == *it;
  } catch (const nlohmann::json::exception&) {
    return false;
  }
}

std::int64_t suffix_number(const std::string& id) {
  auto dash = id.rfind('-');
  if (dash == std::string::npos) return 0;
  try {
    return std::stoll(id.substr(dash + 1));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

std::vector<Document> select_rows(const std::vector<Document>& rows, const QueryParams& q) {
  if (q.sort) {
    bool known = false;
    for (const auto& d : rows) known = known || d.attrs.contains(*q.sort);
    if (!known && *q.sort != "id") throw ValidationError("unknown sort column: " + *q.sort);
  }
  if (q.filter_op != "equals" && q.filter_op != "contains") throw ValidationError("unknown filter op: " + q.filter_op);
  std::vector<Document> out;
  for (const auto& d : rows) {
    if (q.filter_attribute && !matches_filter(d, q)) continue;
    if (q.search) {
      bool hit = false;
      for (const auto& v : d.attrs) hit = hit || string_contains_ci(v, *q.search);
      if (!hit) continue;
    }
    out.push_back(d);
  }
  if (q.sort) {
    const auto& col = *q.sort;
    auto key = [&](const Document& d) -> Value {
      if (col == "id" && !d.attrs.contains("id")) return d.id;
      auto it = d.attrs.find(col);
      return it == d.attrs.end() ? Value() : *it;
    };
    std::stable_sort(out.begin(), out.end(), [&](const Document& a, const Document& b) {
      int c = compare_values(key(a), key(b));
      return q.descending ? c > 0 : c < 0;
    });
  }
  return out;
}

Workspace::Workspace(fs::path root, std::shared_ptr<llm::Provider> provider, WorkspaceOptions options)
    : root_(std::move(root)),
      options_(std::move(options)),
      gateway_(std::move(provider)),
      notes_(root_ / "notes.jsonl") {
  fs::create_directories(root_);
  fs::path cache_dir = options_.cache_dir ? *options_.cache_dir : root_ / "cache";
  if (!options_.cache_dir) {
    if (const char* env = std::getenv("SEMFORGE_CACHE_DIR"); env != nullptr && *env != '\0') cache_dir = env;
  }
  cache_ = std::make_unique<OutputCache>(cache_dir);
  load();
}

Workspace::~Workspace() {
  std::vector<std::shared_ptr<RunState>> runs;
  std::vector<std::shared_ptr<DecompositionState>> decs;
  {
    std::lock_guard lock(mu_);
    for (auto& [id, r] : runs_) runs.push_back(r);
    for (auto& [id, d] : decompositions_) decs.push_back(d);
  }
  for (auto& r : runs) {
    r->cancel = true;
    if (r->worker.joinable()) r->worker.join();
  }
  for (auto& d : decs) {
    if (d->worker.joinable()) d->worker.join();
  }
}

void Workspace::load() {
  if (fs::exists(root_ / "datasets")) {
    for (const auto& entry : fs::directory_iterator(root_ / "datasets")) {
      if (entry.path().extension() != ".json") continue;
      auto v = read_json(entry.path());
      Dataset d;
      d.id = v.at("id").get<std::string>();
      d.source_name = v.value("source_name", std::string{});
      for (const auto& doc : v.at("docs")) d.docs.push_back(document_from_json(doc));
      datasets_[d.id] = std::move(d);
    }
  }
  if (fs::exists(root_ / "pipelines")) {
    for (const auto& entry : fs::directory_iterator(root_ / "pipelines")) {
      if (entry.path().extension() != ".json") continue;
      auto p = pipeline_from_json(read_json(entry.path()));
      pipelines_[p.id] = std::move(p);
    }
  }
  if (fs::exists(root_ / "sessions")) {
    for (const auto& entry : fs::directory_iterator(root_ / "sessions")) {
      if (entry.path().extension() != ".json") continue;
      auto s = session_from_json(read_json(entry.path()));
      auto n = static_cast<std::uint64_t>(std::max<std::int64_t>(0, suffix_number(s.id)));
      counters_["session"] = std::max(counters_["session"], n);
      sessions_[s.id] = std::move(s);
    }
  }
}

std::string Workspace::next_id(const std::string& prefix) {
  std::lock_guard lock(mu_);
  return prefix + "-" + std::to_string(++counters_[prefix]);
}

// ---------------------------------------------------------------------------
// Datasets

Dataset Workspace::ingest_dataset(std::string_view payload, std::optional<DatasetFormat> format,
                                  std::string source_name) {
  auto fmt = format.value_or(sniff_format(payload));
  Dataset d = parse_dataset(payload, fmt, source_name);
  if (d.docs.empty()) throw DatasetError("dataset must contain at least one document");
  d.id = "ds-" + dataset_fingerprint(d.docs).substr(0, 12);
  Value v = Value::object();
  v["id"] = d.id;
  v["source_name"] = d.source_name;
  Value docs = Value::array();
  for (const auto& doc : d.docs) docs.push_back(document_to_json(doc));
  v["docs"] = std::move(docs);
  write_file(root_ / "datasets" / (d.id + ".json"), v.dump());
  std::lock_guard lock(mu_);
  datasets_[d.id] = d;
  return d;
}

std::optional<Dataset> Workspace::dataset(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = datasets_.find(id);
  if (it == datasets_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Workspace::dataset_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, d] : datasets_) out.push_back(id);
  return out;
}

// ---------------------------------------------------------------------------
// Pipelines

std::vector<Diagnostic> Workspace::validate(const PipelineSpec& p) const {
  auto d = dataset(p.dataset_id);
  if (!d) return {Diagnostic{"", "dataset", "unknown dataset: " + p.dataset_id}};
  return validate_pipeline(p, d->attribute_names());
}

Workspace::SaveResult Workspace::save_pipeline(PipelineSpec p) {
  if (p.id.empty()) throw ValidationError("pipeline id is required");
  SaveResult r;
  r.diagnostics = validate(p);
  write_file(root_ / "pipelines" / (p.id + ".json"), to_json(p).dump(2));
  std::lock_guard lock(mu_);
  auto it = pipelines_.find(p.id);
  if (it != pipelines_.end()) r.first_dirty = plan_recompute(it->second, p);
  pipelines_[p.id] = p;
  r.pipeline = std::move(p);
  return r;
}

std::optional<PipelineSpec> Workspace::pipeline(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = pipelines_.find(id);
  if (it == pipelines_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Workspace::pipeline_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, p] : pipelines_) out.push_back(id);
  return out;
}

// ---------------------------------------------------------------------------
// Runs

std::shared_ptr<RunState> Workspace::start_run(const std::string& pipeline_id, RunRequest req, bool judge) {
  auto p = pipeline(pipeline_id);
  if (!p) throw NotFound("unknown pipeline: " + pipeline_id);
  auto d = dataset(p->dataset_id);
  if (!d) throw NotFound("unknown dataset: " + p->dataset_id);
  if (auto diags = validate_pipeline(*p, d->attribute_names()); !diags.empty()) {
    throw ValidationError("pipeline has " + std::to_string(diags.size()) + " diagnostic(s): " + diags.front().op +
                          "." + diags.front().field + ": " + diags.front().message);
  }

  auto state = std::make_shared<RunState>();
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, r] : runs_) {
      if (r->pipeline_id == pipeline_id && !r->finished) throw Conflict("pipeline already has a running run: " + id);
    }
    state->id = req.run_id.empty() ? "run-" + std::to_string(++counters_["run"]) : req.run_id;
    if (runs_.contains(state->id) || decompositions_.contains(state->id)) throw Conflict("duplicate run id");
    state->pipeline_id = pipeline_id;
    state->pipeline = *p;
    state->events = std::make_shared<EventLog>(state->id);
    runs_[state->id] = state;
    run_order_.push_back(state->id);
  }
  req.run_id = state->id;

  RunState* raw = state.get();
  state->worker = std::jthread([this, raw, req, dataset = std::move(*d), judge] {
    Executor exec(gateway_, cache_.get(), ExecutorOptions{options_.max_parallel, false, false});
    auto result = exec.execute(raw->pipeline, dataset, req, *raw->events, &raw->cancel);
    {
      std::lock_guard lock(raw->mu);
      raw->result = result;
    }
    if (judge && result.status == "completed") {
      auto verdicts = judge_run(gateway_, gateway_.profile_for(raw->pipeline.default_model), raw->pipeline, result,
                                *raw->events);
      std::lock_guard lock(raw->mu);
      raw->verdicts = std::move(verdicts);
    }
    raw->events->emit(EventKind::RunDone, {}, result.ops.size(), raw->pipeline.ops.size(),
                      Value{{"status", result.status}, {"provider_calls", result.provider_calls}});
    raw->finished = true;
    raw->events->close();
  });
  return state;
}

std::shared_ptr<RunState> Workspace::run(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = runs_.find(id);
  return it == runs_.end() ? nullptr : it->second;
}

std::shared_ptr<RunState> Workspace::latest_run(const std::string& pipeline_id) const {
  std::lock_guard lock(mu_);
  for (auto it = run_order_.rbegin(); it != run_order_.rend(); ++it) {
    const auto& r = runs_.at(*it);
    if (r->pipeline_id == pipeline_id && r->finished) return r;
  }
  return nullptr;
}

void Workspace::wait(const RunState& r) const {
  while (!r.finished) r.events->wait(r.events->size(), std::chrono::milliseconds(50));
}

namespace {

const OpResult& op_result_or_throw(const RunResult& result, const std::string& op_name) {
  const auto* op = result.find(op_name);
  if (op == nullptr) throw NotFound("operation produced no outputs in this run: " + op_name);
  return *op;
}

}  // namespace

Value Workspace::query_outputs(const std::string& run_id, const std::string& op_name, const QueryParams& q) const {
  auto r = run(run_id);
  if (!r) throw NotFound("unknown run: " + run_id);
  std::lock_guard lock(r->mu);
  if (!r->result) throw NotFound("run has not produced outputs yet: " + run_id);
  const auto& op = op_result_or_throw(*r->result, op_name);
  auto rows = select_rows(op.rows, q);

  Value out = Value::object();
  out["run_id"] = run_id;
  out["op_name"] = op_name;
  out["total"] = rows.size();
  out["page"] = q.page;
  out["page_size"] = q.page_size;
  out["input_count"] = op.input_count;
  out["output_count"] = op.rows.size();
  out["selectivity"] = ops::format_selectivity(op.input_count, op.rows.size());
  Value page_rows = Value::array();
  const std::size_t begin = std::min(rows.size(), q.page * q.page_size);
  const std::size_t end = std::min(rows.size(), begin + q.page_size);
  auto index = r->pipeline.index_of(op_name);
  for (std::size_t i = begin; i < end; ++i) {
    Value row = {{"id", rows[i].id}, {"attrs", rows[i].attrs}};
    if (q.include_prompts) {
      row["prompt"] = Value();
      if (index && (r->pipeline.ops[*index].kind == OpKind::Map || r->pipeline.ops[*index].kind == OpKind::Filter)) {
        for (const auto& in : r->result->inputs_of(*index)) {
          if (in.id != rows[i].id) continue;
          try {
            row["prompt"] = ops::render_document_prompt(r->pipeline.ops[*index], in);
          } catch (const std::exception&) {
          }
          break;
        }
      }
    }
    page_rows.push_back(std::move(row));
  }
  out["rows"] = std::move(page_rows);
  Value viz = Value::array();
  for (const auto& spec : viz_specs_for_rows(rows)) viz.push_back(to_json(spec));
  out["viz"] = std::move(viz);
  return out;
}

std::optional<std::string> Workspace::row_prompt(const std::string& run_id, const std::string& op_name,
                                                 const std::string& row_id) const {
  auto r = run(run_id);
  if (!r) throw NotFound("unknown run: " + run_id);
  std::lock_guard lock(r->mu);
  if (!r->result) throw NotFound("run has not produced outputs yet: " + run_id);
  op_result_or_throw(*r->result, op_name);
  auto index = r->pipeline.index_of(op_name);
  const auto& op = r->pipeline.ops[*index];
  if (op.kind != OpKind::Map && op.kind != OpKind::Filter) return std::nullopt;
  for (const auto& in : r->result->inputs_of(*index)) {
    if (in.id == row_id) return ops::render_document_prompt(op, in);
  }
  throw NotFound("unknown row: " + row_id);
}

// ---------------------------------------------------------------------------
// Notes

std::vector<Note> Workspace::query_notes(const NoteFilter& f, const std::optional<std::string>& pipeline_id) const {
  if (!pipeline_id) return notes_.query(f);
  auto p = pipeline(*pipeline_id);
  if (!p) throw NotFound("unknown pipeline: " + *pipeline_id);
  std::set<std::string> live;
  for (const auto& op : p->ops) live.insert(op.name);
  return notes_.query(f, &live);
}

// ---------------------------------------------------------------------------
// Refinement

void Workspace::persist_session(const RefinementSession& s) const {
  write_file(root_ / "sessions" / (s.id + ".json"), to_json(s).dump());
}

std::vector<Document> Workspace::op_sample_inputs(const PipelineSpec& p, std::size_t op_index, std::size_t n) {
  if (auto r = latest_run(p.id)) {
    std::lock_guard lock(r->mu);
    if (r->result && r->pipeline == p && op_index < r->result->ops.size()) {
      const auto& in = r->result->inputs_of(op_index);
      return {in.begin(), in.begin() + static_cast<std::ptrdiff_t>(std::min(n, in.size()))};
    }
  }
  auto d = dataset(p.dataset_id);
  if (!d) throw NotFound("unknown dataset: " + p.dataset_id);
  std::vector<Document> docs(d->docs.begin(), d->docs.begin() + static_cast<std::ptrdiff_t>(std::min(n, d->docs.size())));
  Executor sandbox(gateway_, nullptr, ExecutorOptions{options_.max_parallel, false, false});
  std::vector<OperationSpec> upstream(p.ops.begin(), p.ops.begin() + static_cast<std::ptrdiff_t>(op_index));
  return sandbox.run_ops(p, upstream, docs);
}

std::vector<Document> Workspace::refinement_pool(const PipelineSpec& p, const std::string& op_name) {
  std::vector<Document> pool;
  if (auto r = latest_run(p.id)) {
    std::lock_guard lock(r->mu);
    if (r->result) {
      if (const auto* op = r->result->find(op_name)) pool = op->rows;
      if (auto idx = r->pipeline.index_of(op_name); idx && *idx < r->result->ops.size()) {
        for (const auto& d : r->result->inputs_of(*idx)) {
          bool seen = std::any_of(pool.begin(), pool.end(), [&](const Document& x) { return x.id == d.id; });
          if (!seen) pool.push_back(d);
        }
      }
    }
  }
  if (pool.empty()) {
    if (auto d = dataset(p.dataset_id)) pool = d->docs;
  }
  return pool;
}

RefinementSession Workspace::start_refinement(const std::string& pipeline_id, const std::string& op_name,
                                              std::optional<std::string> extra_instructions) {
  auto p = pipeline(pipeline_id);
  if (!p) throw NotFound("unknown pipeline: " + pipeline_id);
  if (p->find(op_name) == nullptr) throw NotFound("unknown operation: " + op_name);
  SeedInputs in;
  in.documents = refinement_pool(*p, op_name);
  in.notes = notes_.query({});
  in.extra_instructions = std::move(extra_instructions);
  Refiner refiner(gateway_, gateway_.profile_for(options_.assistant_model));
  auto s = refiner.start_session(*p, op_name, in, next_id("session"));
  persist_session(s);
  std::lock_guard lock(mu_);
  sessions_[s.id] = s;
  return s;
}

RefinementSession Workspace::session(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown refinement session: " + id);
  return it->second;
}

RefinementSession Workspace::refine(const std::string& session_id, const std::string& feedback) {
  auto s = session(session_id);
  Refiner refiner(gateway_, gateway_.profile_for(options_.assistant_model));
  refiner.refine(s, feedback);
  persist_session(s);
  std::lock_guard lock(mu_);
  sessions_[s.id] = s;
  return s;
}

RefinementSession Workspace::manual_edit(const std::string& session_id, const std::string& prompt,
                                         std::optional<OutputSchema> schema) {
  auto s = session(session_id);
  apply_manual_edit(s, prompt, std::move(schema));
  persist_session(s);
  std::lock_guard lock(mu_);
  sessions_[s.id] = s;
  return s;
}

RefinementSession Workspace::checkout_node(const std::string& session_id, const std::string& node_id) {
  auto s = session(session_id);
  checkout(s, node_id);
  persist_session(s);
  std::lock_guard lock(mu_);
  sessions_[s.id] = s;
  return s;
}

Workspace::SaveResult Workspace::accept_revision(const std::string& session_id, const std::string& node_id) {
  auto s = session(session_id);
  auto p = pipeline(s.pipeline_id);
  if (!p) throw NotFound("unknown pipeline: " + s.pipeline_id);
  return save_pipeline(semforge::accept_revision(*p, s, node_id));
}

// ---------------------------------------------------------------------------
// Decomposition

std::shared_ptr<DecompositionState> Workspace::start_decomposition(const std::string& pipeline_id,
                                                                   const std::string& op_name) {
  auto p = pipeline(pipeline_id);
  if (!p) throw NotFound("unknown pipeline: " + pipeline_id);
  auto idx = p->index_of(op_name);
  if (!idx) throw NotFound("unknown operation: " + op_name);
  auto d = dataset(p->dataset_id);
  if (!d) throw NotFound("unknown dataset: " + p->dataset_id);

  auto state = std::make_shared<DecompositionState>();
  state->id = next_id("decompose");
  state->pipeline_id = pipeline_id;
  state->op_name = op_name;
  state->events = std::make_shared<EventLog>(state->id);
  {
    std::lock_guard lock(mu_);
    decompositions_[state->id] = state;
  }
  DecompositionState* raw = state.get();
  state->worker = std::jthread([this, raw, p = *p, idx = *idx, attrs = d->attribute_names()] {
    auto log = [raw](const std::string& line) {
      raw->events->emit(EventKind::OptimizeLog, raw->op_name, 0, 0, Value{{"message", line}});
    };
    std::string status = "completed";
    try {
      auto sample = op_sample_inputs(p, idx, kJudgeSampleSize);
      Decomposer dec(gateway_, gateway_.profile_for(options_.assistant_model), options_.max_parallel);
      log("Generating candidate plans for " + raw->op_name);
      auto candidates = dec.generate_candidates(p, raw->op_name, attrs);
      auto result = dec.select_plan(p, raw->op_name, std::move(candidates), sample, log);
      std::lock_guard lock(raw->mu);
      raw->result = std::move(result);
    } catch (const std::exception& e) {
      status = "failed";
      std::lock_guard lock(raw->mu);
      raw->error = e.what();
    }
    raw->events->emit(EventKind::RunDone, raw->op_name, 0, 0, Value{{"status", status}});
    raw->finished = true;
    raw->events->close();
  });
  return state;
}

std::shared_ptr<DecompositionState> Workspace::decomposition(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = decompositions_.find(id);
  return it == decompositions_.end() ? nullptr : it->second;
}

void Workspace::wait(const DecompositionState& d) const {
  while (!d.finished) d.events->wait(d.events->size(), std::chrono::milliseconds(50));
}

Workspace::SaveResult Workspace::accept_plan(const std::string& pipeline_id, const std::string& decomposition_id) {
  auto d = decomposition(decomposition_id);
  if (!d) throw NotFound("unknown decomposition: " + decomposition_id);
  if (d->pipeline_id != pipeline_id) throw ValidationError("decomposition belongs to another pipeline");
  wait(*d);
  CandidatePlan winner;
  {
    std::lock_guard lock(d->mu);
    if (!d->result) throw Conflict("decomposition produced no plan: " + d->error);
    winner = d->result->winner;
  }
  auto current = pipeline(pipeline_id);
  if (!current) throw NotFound("unknown pipeline: " + pipeline_id);
  return save_pipeline(apply_plan(*current, d->op_name, winner));
}

std::shared_ptr<EventLog> Workspace::events(const std::string& id) const {
  if (auto r = run(id)) return r->events;
  if (auto d = decomposition(id)) return d->events;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Assistant

std::string Workspace::assistant_chat(const std::vector<llm::ChatMessage>& messages,
                                      const std::optional<std::string>& pipeline_id) {
  if (messages.empty()) throw ValidationError("messages must be nonempty");
  std::string seed = "You are an assistant for a document-processing pipeline workbench. You help users write "
                     "operation prompts, output schemas, and template syntax ({{ input.attr }}, "
                     "{% for x in inputs %}...{% endfor %}).\n";
  if (pipeline_id) {
    auto p = pipeline(*pipeline_id);
    if (!p) throw NotFound("unknown pipeline: " + *pipeline_id);
    seed += "\nCurrent pipeline:\n" + pipeline_to_yaml(*p);
    if (auto d = dataset(p->dataset_id)) seed += "\nDataset statistics:\n" + stats_to_json(dataset_stats(*d)).dump() + "\n";
  }
  std::vector<llm::ChatMessage> convo{{llm::Role::System, seed}};
  convo.insert(convo.end(), messages.begin(), messages.end());
  auto profile = gateway_.profile_for(options_.assistant_model);
  auto fitted = llm::fit_to_context(convo, {}, profile.context_limit_tokens, profile);
  return gateway_.chat(fitted.messages, profile);
}

}  // namespace semforge
