#pragma once

// HTTP facade over a Workspace. Bodies are JSON; run event streams are
// newline-delimited JSON over chunked HTTP. See docs/api.md.

#include <httplib.h>

#include <memory>
#include <string>

#include "semforge/workspace.hpp"

namespace semforge {

void register_routes(httplib::Server& server, Workspace& ws);

class ApiServer {
 public:
  explicit ApiServer(Workspace& ws);

  /// Binds and serves until stop(). Returns false if the port cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port for serve_bound().
  int bind_any(const std::string& host);
  bool serve_bound();
  void stop();
  bool running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  httplib::Server server_;
};

}  // namespace semforge
