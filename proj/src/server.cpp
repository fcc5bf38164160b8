#include "fanranker/server.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <deque>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/asio/bind_executor.hpp>
#include <boost/asio/dispatch.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/signal_set.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "fanranker/features.hpp"
#include "fanranker/models.hpp"

namespace fanranker {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::ordered_json;

// ---------------------------------------------------------------- routing

std::string percent_decode(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      int v = 0;
      auto [ptr, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
      if (ec == std::errc() && ptr == s.data() + i + 3) {
        out.push_back(static_cast<char>(v));
        i += 2;
        continue;
      }
    }
    out.push_back(s[i]);
  }
  return out;
}

ParsedTarget parse_target(std::string_view target) {
  ParsedTarget t;
  const auto q = target.find('?');
  std::string_view path = target.substr(0, q);
  t.path = percent_decode(path);
  std::size_t begin = 0;
  while (begin < path.size()) {
    auto slash = path.find('/', begin);
    if (slash == std::string_view::npos) slash = path.size();
    if (slash > begin) t.segments.push_back(percent_decode(path.substr(begin, slash - begin)));
    begin = slash + 1;
  }
  if (q != std::string_view::npos) {
    std::string_view query = target.substr(q + 1);
    while (!query.empty()) {
      auto amp = query.find('&');
      std::string_view kv = query.substr(0, amp);
      query = amp == std::string_view::npos ? std::string_view{} : query.substr(amp + 1);
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      t.query[percent_decode(kv.substr(0, eq))] =
          eq == std::string_view::npos ? std::string() : percent_decode(kv.substr(eq + 1));
    }
  }
  return t;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownSession: return 404;
    case ErrorCode::DuplicateSession: return 409;
    case ErrorCode::NotFitted:
    case ErrorCode::ManifestMismatch:
    case ErrorCode::IoError:
    case ErrorCode::ProviderFailure:
    case ErrorCode::PortInUse:
    case ErrorCode::InvalidConfig: return 500;
    default: return 400;
  }
}

namespace {

ApiResponse json_response(int status, std::string body) { return {status, "application/json", std::move(body)}; }

ApiResponse error_response(int status, std::string_view code, std::string_view message) {
  ordered_json j;
  j["error"] = code;
  j["message"] = message;
  return json_response(status, j.dump());
}

ApiResponse error_response(const Error& e) { return error_response(http_status(e.code()), to_string(e.code()), e.what()); }

ViewerId parse_viewer(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v == 0) {
    throw Error(ErrorCode::InvalidArgument, "bad viewer id '" + s + "'");
  }
  return ViewerId(v);
}

std::string_view mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json" || ext == ".map") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".woff2") return "font/woff2";
  if (ext == ".txt") return "text/plain; charset=utf-8";
  return "application/octet-stream";
}

bool constant_time_equal(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

}  // namespace

ApiRouter::ApiRouter(LiveService& service, std::string bearer_token, std::filesystem::path ui_dir)
    : service_(service), token_(std::move(bearer_token)), ui_dir_(std::move(ui_dir)) {}

bool ApiRouter::authorized(std::string_view authorization, const ParsedTarget& target, bool allow_query) const {
  if (token_.empty()) return true;
  constexpr std::string_view kBearer = "Bearer ";
  if (authorization.substr(0, kBearer.size()) == kBearer &&
      constant_time_equal(authorization.substr(kBearer.size()), token_)) {
    return true;
  }
  if (allow_query) {
    auto it = target.query.find("token");
    if (it != target.query.end() && constant_time_equal(it->second, token_)) return true;
  }
  return false;
}

std::optional<SessionId> ApiRouter::stream_session(const ParsedTarget& t) const {
  const auto& s = t.segments;
  if (s.size() == 4 && s[0] == "v1" && s[1] == "sessions" && s[3] == "stream" && service_.has_session(s[2])) {
    return s[2];
  }
  return std::nullopt;
}

ApiResponse ApiRouter::health() const {
  ordered_json j;
  j["status"] = "ok";
  j["version"] = kServiceVersion;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(service_.model_hash()));
  j["modelHash"] = hex;
  j["modelKind"] = to_string(service_.model().kind());
  j["sessions"] = service_.sessions().size();
  return json_response(200, j.dump());
}

ApiResponse ApiRouter::serve_static(const ParsedTarget& t) const {
  if (ui_dir_.empty()) return error_response(404, "NotFound", "no ui directory configured");
  std::filesystem::path rel;
  for (std::size_t i = 1; i < t.segments.size(); ++i) {
    const auto& seg = t.segments[i];
    if (seg == ".." || seg == "." || seg.find('\\') != std::string::npos || seg.find('\0') != std::string::npos) {
      return error_response(404, "NotFound", t.path);
    }
    rel /= seg;
  }
  if (rel.empty()) rel = "index.html";
  std::error_code ec;
  const auto root = std::filesystem::weakly_canonical(ui_dir_, ec);
  auto file = std::filesystem::weakly_canonical(root / rel, ec);
  if (ec) return error_response(404, "NotFound", t.path);
  if (std::filesystem::is_directory(file, ec)) file /= "index.html";
  const auto [root_end, _] = std::mismatch(root.begin(), root.end(), file.begin(), file.end());
  if (root_end != root.end() || !std::filesystem::is_regular_file(file, ec)) {
    return error_response(404, "NotFound", t.path);
  }
  std::ifstream in(file, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return {200, std::string(mime_type(file)), buf.str()};
}

ApiResponse ApiRouter::handle(const ApiRequest& request) const {
  const ParsedTarget t = parse_target(request.target);
  try {
    return route(request, t);
  } catch (const Error& e) {
    return error_response(e);
  } catch (const std::exception& e) {
    return error_response(500, "InternalError", e.what());
  }
}

ApiResponse ApiRouter::route(const ApiRequest& req, const ParsedTarget& t) const {
  const auto& s = t.segments;
  const bool get = req.method == "GET";
  const bool post = req.method == "POST";
  auto method_not_allowed = [] { return error_response(405, "MethodNotAllowed", "method not allowed"); };

  if (s.size() == 1 && s[0] == "healthz") return get ? health() : method_not_allowed();
  if (!s.empty() && s[0] == "ui") return get ? serve_static(t) : method_not_allowed();
  if (s.empty() || s[0] != "v1") return error_response(404, "NotFound", t.path);
  if (!authorized(req.authorization, t, false)) return error_response(401, "Unauthorized", "missing or bad token");

  if (s.size() == 2 && s[1] == "sessions") {
    if (get) {
      ordered_json j = ordered_json::array();
      for (const auto& id : service_.sessions()) j.push_back(id);
      return json_response(200, j.dump());
    }
    if (!post) return method_not_allowed();
    const LiveSession session = parse_session_line(req.body);
    service_.register_session(session);
    ordered_json j;
    j["sessionId"] = session.liveId;
    return json_response(201, j.dump());
  }
  if (s.size() >= 3 && s[1] == "sessions") {
    const SessionId& id = s[2];
    if (s.size() == 4 && s[3] == "events") {
      if (!post) return method_not_allowed();
      return json_response(200, service_.ingest_payload(id, req.body).to_json());
    }
    if (s.size() == 4 && s[3] == "ranking") {
      if (!get) return method_not_allowed();
      std::optional<std::size_t> top;
      if (auto it = t.query.find("top"); it != t.query.end()) {
        std::size_t n = 0;
        const auto& v = it->second;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
        if (ec != std::errc() || ptr != v.data() + v.size() || n == 0) {
          return error_response(400, "InvalidArgument", "top must be a positive integer");
        }
        top = n;
      }
      return json_response(200, service_.current_ranking(id, top).to_json());
    }
    if (s.size() == 6 && s[3] == "viewers" && (s[5] == "pin" || s[5] == "dismiss")) {
      if (!post) return method_not_allowed();
      const ViewerId viewer = parse_viewer(s[4]);
      bool on = true;
      if (!req.body.empty()) {
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object() || (body.contains("on") && !body["on"].is_boolean())) {
          return error_response(400, "MalformedRecord", "body must be {\"on\": bool}");
        }
        on = body.value("on", true);
      }
      if (s[5] == "pin") {
        service_.pin(id, viewer, on);
      } else {
        service_.dismiss(id, viewer, on);
      }
      ordered_json j;
      j["sessionId"] = id;
      j["viewerId"] = viewer.value;
      j[s[5] == "pin" ? "pinned" : "dismissed"] = on;
      return json_response(200, j.dump());
    }
    if (s.size() == 4 && s[3] == "stream") {
      return error_response(426, "UpgradeRequired", "connect with a WebSocket client");
    }
  }
  if (s.size() == 4 && s[1] == "viewers" && s[3] == "features") {
    if (!get) return method_not_allowed();
    const ViewerId viewer = parse_viewer(s[2]);
    auto it = t.query.find("session");
    if (it == t.query.end() || it->second.empty()) {
      return error_response(400, "InvalidArgument", "session query parameter is required");
    }
    try {
      return json_response(200, service_.viewer_features_json(viewer, it->second));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidArgument) return error_response(404, "NotYetSeen", e.what());
      throw;
    }
  }
  return error_response(404, "NotFound", t.path);
}

// ---------------------------------------------------------------- network

namespace {

class WsSession;
class HttpSession;

}  // namespace

struct HttpServer::Impl {
  LiveService& service;
  ServerOptions options;
  ApiRouter router;
  net::io_context ioc;
  tcp::acceptor acceptor;
  std::optional<net::signal_set> signals;
  net::steady_timer drain_timer;
  std::atomic<bool> stopping{false};

  std::mutex sessions_mutex;
  std::vector<std::weak_ptr<WsSession>> ws_sessions;
  std::vector<std::weak_ptr<HttpSession>> http_sessions;

  Impl(LiveService& s, ServerOptions o)
      : service(s),
        options(std::move(o)),
        router(s, options.bearerToken, options.uiDir),
        ioc(std::max(1, options.threads)),
        acceptor(net::make_strand(ioc)),
        drain_timer(ioc) {}

  std::chrono::steady_clock::time_point drain_deadline;

  void do_accept();
  void begin_stop();
  void poll_drain();
  void abort_remaining();
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, HttpServer::Impl& server, SessionId session)
      : ws_(std::move(socket)), server_(server), session_(std::move(session)) {}

  ~WsSession() {
    if (token_) server_.service.unsubscribe(token_);
  }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.set_option(websocket::stream_base::decorator([](websocket::response_type& res) {
      res.set(http::field::server, "fanranker");
    }));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

  void close() {
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] {
      if (self->closing_ || !self->ws_.is_open()) return;
      self->closing_ = true;
      self->ws_.async_close(websocket::close_code::going_away, [self](beast::error_code) {});
    });
  }

  // Only once the io_context has stopped: drops a peer that never answered the close.
  void abort() {
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    std::weak_ptr<WsSession> weak = shared_from_this();
    token_ = server_.service.subscribe(session_, [weak](const std::string& payload) {
      if (auto self = weak.lock()) {
        net::post(self->ws_.get_executor(), [self, payload] { self->send(payload); });
      }
    });
    try {
      send(server_.service.current_ranking(session_).to_json());
    } catch (const std::exception&) {
    }
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      if (token_) server_.service.unsubscribe(token_);
      token_ = 0;
      return;
    }
    buffer_.consume(buffer_.size());  // client messages are ignored
    do_read();
  }

  void send(std::string payload) {
    if (closing_) return;
    queue_.push_back(std::move(payload));
    if (queue_.size() > 1) return;
    do_write();
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      queue_.clear();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty()) do_write();
  }

  websocket::stream<beast::tcp_stream> ws_;
  HttpServer::Impl& server_;
  SessionId session_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  std::size_t token_ = 0;
  bool closing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, HttpServer::Impl& server) : stream_(std::move(socket)), server_(server) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
  }

  // Closes an idle keep-alive connection; a busy one closes after its response.
  void close_if_idle() {
    net::dispatch(stream_.get_executor(), [self = shared_from_this()] {
      if (self->reading_) {
        beast::error_code ec;
        self->stream_.socket().shutdown(tcp::socket::shutdown_both, ec);
        self->stream_.close();
      }
    });
  }

  void abort() {
    beast::error_code ec;
    stream_.socket().close(ec);
  }

 private:
  void do_read() {
    parser_.emplace();
    parser_->body_limit(64 * 1024 * 1024);
    stream_.expires_after(std::chrono::seconds(60));
    reading_ = true;
    http::async_read(stream_, buffer_, *parser_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    reading_ = false;
    if (ec == http::error::end_of_stream) return shutdown();
    if (ec == http::error::body_limit) return write(simple(413, R"({"error":"PayloadTooLarge"})"), true);
    if (ec) return;
    auto req = parser_->release();

    if (websocket::is_upgrade(req)) {
      const ParsedTarget t = parse_target(std::string_view(req.target().data(), req.target().size()));
      const std::string auth(req[http::field::authorization]);
      if (!server_.router.authorized(auth, t, true)) {
        return write(simple(401, R"({"error":"Unauthorized"})"), true);
      }
      auto id = server_.router.stream_session(t);
      if (!id) return write(simple(404, R"({"error":"UnknownSession"})"), true);
      if (server_.stopping) return write(simple(503, R"({"error":"ShuttingDown"})"), true);
      stream_.expires_never();
      auto ws = std::make_shared<WsSession>(stream_.release_socket(), server_, *id);
      {
        std::lock_guard lock(server_.sessions_mutex);
        server_.ws_sessions.push_back(ws);
      }
      ws->run(std::move(req));
      return;
    }

    ApiRequest api;
    api.method = std::string(req.method_string());
    api.target = std::string(req.target());
    api.authorization = std::string(req[http::field::authorization]);
    api.body = std::move(req.body());
    const ApiResponse r = server_.router.handle(api);

    http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
    res.set(http::field::server, "fanranker");
    res.set(http::field::content_type, r.contentType);
    res.body() = r.body;
    res.prepare_payload();
    const bool close = !req.keep_alive() || server_.stopping;
    res.keep_alive(!close);
    write(std::move(res), close);
  }

  static http::response<http::string_body> simple(int status, std::string body) {
    http::response<http::string_body> res{static_cast<http::status>(status), 11};
    res.set(http::field::content_type, "application/json");
    res.body() = std::move(body);
    res.prepare_payload();
    res.keep_alive(false);
    return res;
  }

  void write(http::response<http::string_body> res, bool close) {
    auto sp = std::make_shared<http::response<http::string_body>>(std::move(res));
    http::async_write(stream_, *sp, [self = shared_from_this(), sp, close](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (close) return self->shutdown();
      self->do_read();
    });
  }

  void shutdown() {
    beast::error_code ec;
    stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
  }

  beast::tcp_stream stream_;
  HttpServer::Impl& server_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  bool reading_ = false;
};

}  // namespace

void HttpServer::Impl::do_accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    if (stopping) return;
    auto session = std::make_shared<HttpSession>(std::move(socket), *this);
    {
      std::lock_guard lock(sessions_mutex);
      std::erase_if(http_sessions, [](const auto& w) { return w.expired(); });
      std::erase_if(ws_sessions, [](const auto& w) { return w.expired(); });
      http_sessions.push_back(session);
    }
    session->run();
    do_accept();
  });
}

void HttpServer::Impl::begin_stop() {
  if (stopping.exchange(true)) return;
  net::post(acceptor.get_executor(), [this] {
    beast::error_code ec;
    acceptor.close(ec);
  });
  if (signals) signals->cancel();
  std::vector<std::shared_ptr<WsSession>> ws;
  std::vector<std::shared_ptr<HttpSession>> hs;
  {
    std::lock_guard lock(sessions_mutex);
    for (auto& w : ws_sessions) {
      if (auto s = w.lock()) ws.push_back(std::move(s));
    }
    for (auto& w : http_sessions) {
      if (auto s = w.lock()) hs.push_back(std::move(s));
    }
  }
  for (auto& s : ws) s->close();
  for (auto& s : hs) s->close_if_idle();
  drain_deadline = std::chrono::steady_clock::now() + options.drainTimeout;
  poll_drain();
}

void HttpServer::Impl::poll_drain() {
  bool idle = false;
  {
    std::lock_guard lock(sessions_mutex);
    idle = std::all_of(ws_sessions.begin(), ws_sessions.end(), [](const auto& w) { return w.expired(); }) &&
           std::all_of(http_sessions.begin(), http_sessions.end(), [](const auto& w) { return w.expired(); });
  }
  if (idle || std::chrono::steady_clock::now() >= drain_deadline) {
    ioc.stop();
    return;
  }
  drain_timer.expires_after(std::chrono::milliseconds(20));
  drain_timer.async_wait([this](beast::error_code ec) {
    if (!ec) poll_drain();
  });
}

void HttpServer::Impl::abort_remaining() {
  std::lock_guard lock(sessions_mutex);
  for (auto& w : ws_sessions) {
    if (auto s = w.lock()) s->abort();
  }
  for (auto& w : http_sessions) {
    if (auto s = w.lock()) s->abort();
  }
}

HttpServer::HttpServer(LiveService& service, ServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {
  auto& a = impl_->acceptor;
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->options.bindAddress, ec);
  if (ec) throw Error(ErrorCode::InvalidConfig, "bad bind address " + impl_->options.bindAddress);
  const tcp::endpoint endpoint(address, static_cast<unsigned short>(impl_->options.port));
  a.open(endpoint.protocol(), ec);
  if (!ec) a.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) a.bind(endpoint, ec);
  if (ec == net::error::address_in_use) {
    throw Error(ErrorCode::PortInUse, "port " + std::to_string(impl_->options.port) + " is already in use");
  }
  if (!ec) a.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot listen on " + impl_->options.bindAddress + ": " + ec.message());
}

HttpServer::~HttpServer() {
  stop();
  impl_->ioc.stop();
}

std::uint16_t HttpServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void HttpServer::run() {
  auto& impl = *impl_;
  if (impl.options.handleSignals) {
    impl.signals.emplace(impl.ioc, SIGINT, SIGTERM);
    impl.signals->async_wait([&impl](beast::error_code ec, int) {
      if (!ec) impl.begin_stop();
    });
  }
  impl.do_accept();
  impl.service.start_scheduler();
  std::vector<std::thread> pool;
  for (int i = 1; i < impl.options.threads; ++i) pool.emplace_back([&impl] { impl.ioc.run(); });
  impl.ioc.run();
  for (auto& t : pool) t.join();
  impl.abort_remaining();
  impl.service.stop();
}

void HttpServer::stop() {
  net::post(impl_->ioc, [impl = impl_.get()] { impl->begin_stop(); });
}

}  // namespace fanranker
