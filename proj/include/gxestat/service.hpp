#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>

namespace gxe {

// In-memory HTTP/JSON back end for the interactive UI. Request handling is
// transport-free (see Service::handle) so it can be tested without sockets.

struct ServiceOptions {
  std::chrono::seconds session_ttl{3600};
  std::string cors_origin = "*";
  int max_boot = 10000;
  std::size_t max_body_bytes = 64u << 20;
  std::chrono::seconds request_timeout{120};
};

struct Request {
  std::string method;  // "GET", "POST", "OPTIONS"
  std::string path;
  std::string body;
  std::string content_type;
  std::multimap<std::string, std::string> query;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class Service {
 public:
  explicit Service(ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes:
  ///   POST /datasets                   CSV (raw body + mapping in the query, or
  ///                                    JSON {"csv", "mapping"}) -> {session_id, summary}
  ///   POST /sessions/{id}/significance {case, boundary_correction}
  ///   POST /sessions/{id}/stability    {grouping}
  ///   POST /sessions/{id}/ammi         {n_components, alpha, n_boot, seed, grouping}
  ///   POST /sessions/{id}/gge          {mode, centering, svp, grouping}
  ///   GET  /sessions/{id}/bundle       same parameters as query strings
  ///   GET  /healthz
  Response handle(const Request& request);

  const ServiceOptions& options() const;
  std::size_t session_count() const;

  /// Clock used for expiry; replaceable for tests.
  void set_clock(std::function<std::chrono::steady_clock::time_point()> now);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking HTTP/1.1 server around a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  /// Binds (port 0 picks a free port) and returns the bound port; throws
  /// IoError when the address is unavailable.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gxe
