#pragma once

// HTTP + WebSocket front end of the live service.
//
//   POST /v1/sessions                              register (session JSON line)
//   GET  /v1/sessions                              registered session ids
//   POST /v1/sessions/{id}/events                  JSONL or a JSON array
//   GET  /v1/sessions/{id}/ranking?top=N
//   POST /v1/sessions/{id}/viewers/{uid}/pin       body {"on": bool}, default true
//   POST /v1/sessions/{id}/viewers/{uid}/dismiss
//   GET  /v1/viewers/{uid}/features?session={id}
//   GET  /healthz
//   WS   /v1/sessions/{id}/stream                  RankingPush JSON per push
//   GET  /ui/...                                   static files from uiDir

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fanranker/service.hpp"

namespace fanranker {

struct ApiRequest {
  std::string method;  // upper case
  std::string target;  // path plus optional query
  std::string authorization;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string contentType = "application/json";
  std::string body;
};

struct ParsedTarget {
  std::vector<std::string> segments;  // percent-decoded path segments
  std::map<std::string, std::string> query;
  std::string path;
};

ParsedTarget parse_target(std::string_view target);
std::string percent_decode(std::string_view s);
int http_status(ErrorCode code);

class ApiRouter {
 public:
  ApiRouter(LiveService& service, std::string bearer_token, std::filesystem::path ui_dir);

  ApiResponse handle(const ApiRequest& request) const;

  // Session id when `target` names a stream endpoint of a registered session.
  std::optional<SessionId> stream_session(const ParsedTarget& target) const;
  // Header "Bearer <token>", or for WebSocket upgrades also ?token=.
  bool authorized(std::string_view authorization, const ParsedTarget& target, bool allow_query) const;

  LiveService& service() const { return service_; }

 private:
  ApiResponse route(const ApiRequest& request, const ParsedTarget& target) const;
  ApiResponse serve_static(const ParsedTarget& target) const;
  ApiResponse health() const;

  LiveService& service_;
  std::string token_;
  std::filesystem::path ui_dir_;
};

struct ServerOptions {
  std::string bindAddress = "0.0.0.0";
  int port = 8080;  // 0 picks a free port
  std::string bearerToken;
  std::filesystem::path uiDir;
  int threads = 2;
  std::chrono::milliseconds drainTimeout{5000};
  bool handleSignals = false;  // stop on SIGINT / SIGTERM
};

class HttpServer {
 public:
  // Binds immediately; throws PortInUse or IoError.
  HttpServer(LiveService& service, ServerOptions options);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  std::uint16_t port() const;
  // Blocks until stop() (or a signal when handleSignals) and the drain finish.
  void run();
  // Stops accepting, closes streams, lets in-flight requests finish.
  void stop();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace fanranker
