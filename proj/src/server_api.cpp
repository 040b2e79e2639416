#include "semforge/server_api.hpp"

#include "semforge/template_engine.hpp"
#include "semforge/text.hpp"
#include "semforge/viz.hpp"

namespace semforge {

namespace {

using httplib::Request;
using httplib::Response;

void send_json(Response& res, const Value& v, int status = 200) {
  res.status = status;
  res.set_content(v.dump(), "application/json");
}

void send_error(Response& res, int status, const std::string& message, Value extra = Value::object()) {
  extra["error"] = message;
  send_json(res, extra, status);
}

Value parse_body(const Request& req) {
  if (text::trim(req.body).empty()) return Value::object();
  try {
    return Value::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what());
  }
}

std::optional<std::string> param(const Request& req, const std::string& key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

std::size_t size_param(const Request& req, const std::string& key, std::size_t fallback) {
  auto v = param(req, key);
  if (!v) return fallback;
  try {
    auto n = std::stoll(*v);
    if (n < 0) throw ValidationError(key + " must be non-negative");
    return static_cast<std::size_t>(n);
  } catch (const std::invalid_argument&) {
    throw ValidationError(key + " must be an integer");
  }
}

bool bool_param(const Request& req, const std::string& key, bool fallback) {
  auto v = param(req, key);
  if (!v) return fallback;
  auto l = text::to_lower(*v);
  return l == "1" || l == "true" || l == "yes";
}

/// Wraps a handler so library exceptions map to HTTP status codes.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const Request& req, Response& res) {
    try {
      fn(req, res);
    } catch (const NotFound& e) {
      send_error(res, 404, e.what());
    } catch (const Conflict& e) {
      send_error(res, 409, e.what());
    } catch (const DatasetError& e) {
      Value extra = Value::object();
      if (e.line() > 0) extra["line"] = e.line();
      send_error(res, 400, e.what(), extra);
    } catch (const tmpl::SyntaxError& e) {
      send_error(res, 400, e.what());
    } catch (const TagParseError& e) {
      send_error(res, 502, e.what(), Value{{"tag", e.which_tag()}});
    } catch (const UnknownNode& e) {
      send_error(res, 404, e.what());
    } catch (const NoSemanticOp& e) {
      send_error(res, 400, e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what());
    } catch (const ProviderError& e) {
      send_error(res, 502, e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

Value save_result_json(const Workspace::SaveResult& r) {
  Value v = Value::object();
  v["pipeline"] = to_json(r.pipeline);
  Value diags = Value::array();
  for (const auto& d : r.diagnostics) diags.push_back(to_json(d));
  v["diagnostics"] = std::move(diags);
  v["first_dirty"] = r.first_dirty ? Value(*r.first_dirty) : Value();
  return v;
}

Value dataset_summary(const Dataset& d, bool include_docs) {
  Value v = Value::object();
  v["id"] = d.id;
  v["source_name"] = d.source_name;
  v["stats"] = stats_to_json(dataset_stats(d));
  v["doc_count"] = d.docs.size();
  if (include_docs) {
    Value docs = Value::array();
    for (const auto& doc : d.docs) docs.push_back(document_to_json(doc));
    v["docs"] = std::move(docs);
  }
  return v;
}

Value run_json(const RunState& r) {
  Value v = Value::object();
  v["id"] = r.id;
  v["pipeline_id"] = r.pipeline_id;
  v["finished"] = r.finished.load();
  std::lock_guard lock(r.mu);
  if (r.result) {
    v["status"] = r.result->status;
    v["error"] = r.result->error;
    v["provider_calls"] = r.result->provider_calls;
    v["cache_reads"] = r.result->cache_reads;
    v["cache_writes"] = r.result->cache_writes;
    Value ops = Value::array();
    for (const auto& op : r.result->ops) {
      ops.push_back({{"name", op.name},
                     {"kind", std::string(to_string(op.kind))},
                     {"enabled", op.enabled},
                     {"cached", op.cached},
                     {"input_count", op.input_count},
                     {"output_count", op.rows.size()},
                     {"selectivity", ops::format_selectivity(op.input_count, op.rows.size())},
                     {"provider_calls", op.provider_calls},
                     {"errors", op.errors.size()}});
    }
    v["ops"] = std::move(ops);
  } else {
    v["status"] = "running";
  }
  Value verdicts = Value::array();
  for (const auto& vd : r.verdicts) verdicts.push_back(to_json(vd));
  v["verdicts"] = std::move(verdicts);
  return v;
}

Value tree_json(const RefinementSession& s) {
  Value v = Value::object();
  v["session_id"] = s.id;
  v["pipeline_id"] = s.pipeline_id;
  v["operation_id"] = s.operation_id;
  v["active_node"] = s.active_node;
  Value nodes = Value::array();
  for (const auto& n : s.tree) {
    Value node = to_json(n);
    if (n.parent) node["diff"] = to_json(line_diff(s.node(*n.parent).prompt, n.prompt));
    nodes.push_back(std::move(node));
  }
  v["nodes"] = std::move(nodes);
  return v;
}

Value session_json(const RefinementSession& s) {
  Value v = tree_json(s);
  v["active_prompt"] = s.active().prompt;
  v["active_schema"] = s.active().schema_change ? schema_to_json(*s.active().schema_change) : Value();
  v["conversation_length"] = s.conversation.size();
  return v;
}

NoteFilter note_filter(const Request& req) {
  NoteFilter f;
  f.operation_id = param(req, "operation_id");
  f.attribute = param(req, "attribute");
  if (auto tag = param(req, "tag")) {
    f.tag = note_tag_from_string(*tag);
    if (!f.tag) throw ValidationError("unknown tag: " + *tag);
  }
  f.text_query = param(req, "q");
  if (!f.text_query) f.text_query = param(req, "text");
  return f;
}

QueryParams query_params(const Request& req) {
  QueryParams q;
  q.page = size_param(req, "page", 0);
  q.page_size = size_param(req, "page_size", 50);
  if (q.page_size == 0) throw ValidationError("page_size must be >= 1");
  q.sort = param(req, "sort");
  q.descending = text::to_lower(param(req, "order").value_or("asc")) == "desc";
  q.filter_attribute = param(req, "filter");
  q.filter_op = param(req, "filter_op").value_or("equals");
  q.filter_value = param(req, "filter_value").value_or("");
  q.search = param(req, "search");
  q.include_prompts = bool_param(req, "prompts", false);
  return q;
}

std::optional<DatasetFormat> format_param(const Request& req) {
  auto f = param(req, "format");
  if (!f) {
    auto ct = req.get_header_value("Content-Type");
    if (ct.find("ndjson") != std::string::npos || ct.find("jsonl") != std::string::npos) return DatasetFormat::JsonLines;
    if (ct.find("text/plain") != std::string::npos) return DatasetFormat::PlainText;
    return std::nullopt;
  }
  if (*f == "json") return DatasetFormat::JsonArray;
  if (*f == "jsonl") return DatasetFormat::JsonLines;
  if (*f == "text") return DatasetFormat::PlainText;
  throw ValidationError("unknown format: " + *f);
}

PipelineSpec pipeline_body(const Request& req) {
  auto ct = req.get_header_value("Content-Type");
  if (ct.find("yaml") != std::string::npos) return pipeline_from_yaml(req.body);
  auto body = parse_body(req);
  if (body.contains("yaml")) return pipeline_from_yaml(body["yaml"].get<std::string>());
  return pipeline_from_json(body);
}

void stream_events(const Request& req, Response& res, std::shared_ptr<EventLog> log) {
  auto cursor = static_cast<std::uint64_t>(size_param(req, "cursor", 0));
  if (!bool_param(req, "follow", true)) {
    std::string body;
    for (const auto& e : log->since(cursor)) body += to_json(e).dump() + "\n";
    res.set_content(body, "application/x-ndjson");
    return;
  }
  auto pos = std::make_shared<std::uint64_t>(cursor);
  res.set_chunked_content_provider("application/x-ndjson", [log, pos](std::size_t, httplib::DataSink& sink) {
    auto batch = log->wait(*pos, std::chrono::milliseconds(200));
    for (const auto& e : batch) {
      auto line = to_json(e).dump() + "\n";
      if (!sink.write(line.data(), line.size())) return false;
      *pos = e.seq;
    }
    if (batch.empty() && log->closed() && *pos >= log->size()) sink.done();
    return true;
  });
}

}  // namespace

void register_routes(httplib::Server& s, Workspace& ws) {
  s.Get("/health", [](const Request&, Response& res) { send_json(res, {{"ok", true}}); });

  // Datasets
  s.Post("/datasets", guarded([&ws](const Request& req, Response& res) {
    auto d = ws.ingest_dataset(req.body, format_param(req), param(req, "name").value_or("upload"));
    send_json(res, dataset_summary(d, false), 201);
  }));
  s.Get("/datasets", guarded([&ws](const Request&, Response& res) {
    Value out = Value::array();
    for (const auto& id : ws.dataset_ids()) out.push_back(dataset_summary(*ws.dataset(id), false));
    send_json(res, out);
  }));
  s.Get(R"(/datasets/([^/]+))", guarded([&ws](const Request& req, Response& res) {
    auto d = ws.dataset(req.matches[1]);
    if (!d) throw NotFound("unknown dataset: " + std::string(req.matches[1]));
    send_json(res, dataset_summary(*d, bool_param(req, "docs", false)));
  }));

  // Pipelines
  s.Post("/pipelines/validate", guarded([&ws](const Request& req, Response& res) {
    auto p = pipeline_body(req);
    Value diags = Value::array();
    for (const auto& d : ws.validate(p)) diags.push_back(to_json(d));
    send_json(res, {{"diagnostics", diags}, {"valid", diags.empty()}});
  }));
  s.Get("/pipelines", guarded([&ws](const Request&, Response& res) { send_json(res, ws.pipeline_ids()); }));
  s.Put(R"(/pipelines/([^/]+))", guarded([&ws](const Request& req, Response& res) {
    auto p = pipeline_body(req);
    p.id = req.matches[1];
    send_json(res, save_result_json(ws.save_pipeline(std::move(p))));
  }));
  s.Get(R"(/pipelines/([^/]+))", guarded([&ws](const Request& req, Response& res) {
    auto p = ws.pipeline(req.matches[1]);
    if (!p) throw NotFound("unknown pipeline: " + std::string(req.matches[1]));
    Value v = to_json(*p);
    if (bool_param(req, "yaml", false)) v = {{"yaml", pipeline_to_yaml(*p)}};
    send_json(res, v);
  }));

  // Runs
  s.Post(R"(/pipelines/([^/]+)/runs)", guarded([&ws](const Request& req, Response& res) {
    auto body = parse_body(req);
    auto run = ws.start_run(req.matches[1], run_request_from_json(body), body.value("judge", true));
    if (bool_param(req, "wait", false)) {
      ws.wait(*run);
      send_json(res, run_json(*run), 200);
      return;
    }
    send_json(res, {{"run_id", run->id}, {"events", "/runs/" + run->id + "/events"}}, 202);
  }));
  s.Get(R"(/runs/([^/]+))", guarded([&ws](const Request& req, Response& res) {
    auto r = ws.run(req.matches[1]);
    if (!r) throw NotFound("unknown run: " + std::string(req.matches[1]));
    send_json(res, run_json(*r));
  }));
  s.Post(R"(/runs/([^/]+)/cancel)", guarded([&ws](const Request& req, Response& res) {
    auto r = ws.run(req.matches[1]);
    if (!r) throw NotFound("unknown run: " + std::string(req.matches[1]));
    r->cancel = true;
    send_json(res, {{"run_id", r->id}, {"cancelled", true}});
  }));
  s.Get(R"(/runs/([^/]+)/events)", guarded([&ws](const Request& req, Response& res) {
    auto log = ws.events(req.matches[1]);
    if (!log) throw NotFound("unknown run: " + std::string(req.matches[1]));
    stream_events(req, res, log);
  }));
  s.Get(R"(/runs/([^/]+)/ops/([^/]+)/outputs)", guarded([&ws](const Request& req, Response& res) {
    send_json(res, ws.query_outputs(req.matches[1], req.matches[2], query_params(req)));
  }));
  s.Get(R"(/runs/([^/]+)/ops/([^/]+)/rows/([^/]+)/prompt)", guarded([&ws](const Request& req, Response& res) {
    auto prompt = ws.row_prompt(req.matches[1], req.matches[2], req.matches[3]);
    send_json(res, {{"prompt", prompt ? Value(*prompt) : Value()}});
  }));
  s.Get(R"(/runs/([^/]+)/ops/([^/]+)/judge)", guarded([&ws](const Request& req, Response& res) {
    auto r = ws.run(req.matches[1]);
    if (!r) throw NotFound("unknown run: " + std::string(req.matches[1]));
    std::lock_guard lock(r->mu);
    for (const auto& v : r->verdicts) {
      if (v.op_name == req.matches[2]) return send_json(res, to_json(v));
    }
    throw NotFound("no verdict for operation: " + std::string(req.matches[2]));
  }));

  // Notes
  s.Post("/notes", guarded([&ws](const Request& req, Response& res) {
    auto n = ws.notes().add(note_from_json(parse_body(req)));
    send_json(res, to_json(n), 201);
  }));
  s.Get("/notes", guarded([&ws](const Request& req, Response& res) {
    Value out = Value::array();
    for (const auto& n : ws.query_notes(note_filter(req), param(req, "pipeline_id"))) out.push_back(to_json(n));
    send_json(res, out);
  }));
  s.Get(R"(/notes/([^/]+))", guarded([&ws](const Request& req, Response& res) {
    auto n = ws.notes().get(req.matches[1]);
    if (!n) throw NotFound("unknown note: " + std::string(req.matches[1]));
    send_json(res, to_json(*n));
  }));
  auto update_note = guarded([&ws](const Request& req, Response& res) {
    auto n = ws.notes().update(req.matches[1], parse_body(req));
    if (!n) throw NotFound("unknown note: " + std::string(req.matches[1]));
    send_json(res, to_json(*n));
  });
  s.Put(R"(/notes/([^/]+))", update_note);
  s.Patch(R"(/notes/([^/]+))", update_note);
  s.Delete(R"(/notes/([^/]+))", guarded([&ws](const Request& req, Response& res) {
    if (!ws.notes().remove(req.matches[1])) throw NotFound("unknown note: " + std::string(req.matches[1]));
    send_json(res, {{"deleted", true}});
  }));

  // Refinement
  s.Post(R"(/pipelines/([^/]+)/ops/([^/]+)/refine)", guarded([&ws](const Request& req, Response& res) {
    auto body = parse_body(req);
    std::optional<std::string> extra;
    if (body.contains("extra_instructions") && !body["extra_instructions"].is_null()) {
      extra = body["extra_instructions"].get<std::string>();
    }
    send_json(res, session_json(ws.start_refinement(req.matches[1], req.matches[2], extra)), 201);
  }));
  s.Post(R"(/refine/([^/]+)/feedback)", guarded([&ws](const Request& req, Response& res) {
    auto body = parse_body(req);
    auto feedback = body.value("feedback", std::string{});
    if (text::trim(feedback).empty()) throw ValidationError("feedback must be nonempty");
    send_json(res, session_json(ws.refine(req.matches[1], feedback)));
  }));
  s.Post(R"(/refine/([^/]+)/edit)", guarded([&ws](const Request& req, Response& res) {
    auto body = parse_body(req);
    std::optional<OutputSchema> schema;
    if (body.contains("schema") && !body["schema"].is_null()) schema = schema_from_json(body["schema"]);
    send_json(res, session_json(ws.manual_edit(req.matches[1], body.at("prompt").get<std::string>(), schema)));
  }));
  s.Post(R"(/refine/([^/]+)/checkout)", guarded([&ws](const Request& req, Response& res) {
    auto body = parse_body(req);
    send_json(res, session_json(ws.checkout_node(req.matches[1], body.at("node_id").get<std::string>())));
  }));
  s.Get(R"(/refine/([^/]+)/tree)", guarded([&ws](const Request& req, Response& res) {
    send_json(res, tree_json(ws.session(req.matches[1])));
  }));
  s.Post(R"(/refine/([^/]+)/accept)", guarded([&ws](const Request& req, Response& res) {
    auto body = parse_body(req);
    auto s = ws.session(req.matches[1]);
    auto node = body.value("node_id", s.active_node);
    send_json(res, save_result_json(ws.accept_revision(s.id, node)));
  }));

  // Decomposition
  s.Post(R"(/pipelines/([^/]+)/ops/([^/]+)/decompose)", guarded([&ws](const Request& req, Response& res) {
    auto d = ws.start_decomposition(req.matches[1], req.matches[2]);
    if (bool_param(req, "wait", false)) ws.wait(*d);
    Value v = {{"decomposition_id", d->id}, {"events", "/runs/" + d->id + "/events"}, {"finished", d->finished.load()}};
    std::lock_guard lock(d->mu);
    if (d->result) v["result"] = to_json(*d->result);
    if (!d->error.empty()) v["error"] = d->error;
    send_json(res, v, d->finished ? 200 : 202);
  }));
  s.Get(R"(/decompositions/([^/]+))", guarded([&ws](const Request& req, Response& res) {
    auto d = ws.decomposition(req.matches[1]);
    if (!d) throw NotFound("unknown decomposition: " + std::string(req.matches[1]));
    Value v = {{"decomposition_id", d->id}, {"finished", d->finished.load()}};
    std::lock_guard lock(d->mu);
    if (d->result) v["result"] = to_json(*d->result);
    if (!d->error.empty()) v["error"] = d->error;
    send_json(res, v);
  }));
  s.Post(R"(/pipelines/([^/]+)/accept-plan)", guarded([&ws](const Request& req, Response& res) {
    auto body = parse_body(req);
    send_json(res, save_result_json(ws.accept_plan(req.matches[1], body.at("decomposition_id").get<std::string>())));
  }));

  // Assistant
  s.Post("/assistant/chat", guarded([&ws](const Request& req, Response& res) {
    auto body = parse_body(req);
    std::vector<llm::ChatMessage> messages;
    for (const auto& m : body.value("messages", Value::array())) messages.push_back(llm::message_from_json(m));
    if (body.contains("message")) messages.push_back({llm::Role::User, body["message"].get<std::string>()});
    std::optional<std::string> pid;
    if (body.contains("pipeline_id") && !body["pipeline_id"].is_null()) pid = body["pipeline_id"].get<std::string>();
    send_json(res, {{"reply", ws.assistant_chat(messages, pid)}});
  }));
}

ApiServer::ApiServer(Workspace& ws) { register_routes(server_, ws); }

bool ApiServer::listen(const std::string& host, int port) { return server_.listen(host, port); }

int ApiServer::bind_any(const std::string& host) { return server_.bind_to_any_port(host); }

bool ApiServer::serve_bound() { return server_.listen_after_bind(); }

void ApiServer::stop() { server_.stop(); }

}  // namespace semforge
