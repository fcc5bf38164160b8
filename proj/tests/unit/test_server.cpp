#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fanranker/cli.hpp"
#include "fanranker/server.hpp"
#include "fixtures.hpp"

using namespace fanranker;
using namespace fanranker::testing;
using nlohmann::json;

namespace {

LogStore history_store() {
  LogStore s;
  const EpochSeconds h = kT0 - 5 * kDay;
  s.add_session(make_session(1, "h1", h, h + 3600));
  s.append_event(membership(7, h + 5, "h1"));
  s.append_event(chat(3, h + 10, "h1", "old words"));
  s.finalize();
  return s;
}

std::shared_ptr<const RankingModel> chat_model() {
  std::vector<double> w(kFeatureWidth, 0.0);
  w[column_w2(BaseFeature::ChatSent)] = 0.01;
  return std::make_shared<LinearRegressionModel>(LinearRegressionModel::from_coefficients(w, 0.0));
}

struct Harness {
  Harness() : history(history_store()) {
    pipeline = make_pipeline(history, {});
    LiveServiceOptions o;
    o.nowMs = [this] { return now.load(); };
    service = std::make_unique<LiveService>(history, chat_model(), feature_columns(), pipeline.extractor,
                                            CodeMap::defaults(), o);
  }

  LogStore history;
  Pipeline pipeline;
  std::atomic<std::int64_t> now{1000};
  std::unique_ptr<LiveService> service;
};

const LiveSession kLive = make_session(1, "live", kT0, kT0);

std::string chat_lines(std::uint64_t viewer, int n) {
  std::string body;
  for (int i = 0; i < n; ++i) {
    body += serialize_event_line(chat(viewer, kT0 + 100 + i, "live", "m" + std::to_string(i)), CodeMap::defaults());
    body += '\n';
  }
  return body;
}

ApiRequest req(std::string method, std::string target, std::string body = {}, std::string auth = "Bearer tok") {
  return {std::move(method), std::move(target), std::move(auth), std::move(body)};
}

json body_of(const ApiResponse& r) { return json::parse(r.body); }

}  // namespace

TEST(ParseTarget, SegmentsAndQuery) {
  const auto t = parse_target("/v1/sessions/a%2Fb/ranking?top=5&x=%20y&flag");
  ASSERT_EQ(t.segments.size(), 4u);
  EXPECT_EQ(t.segments[2], "a/b");
  EXPECT_EQ(t.query.at("top"), "5");
  EXPECT_EQ(t.query.at("x"), " y");
  EXPECT_EQ(t.path, "/v1/sessions/a/b/ranking");
  EXPECT_TRUE(parse_target("/").segments.empty());
  EXPECT_EQ(parse_target("//healthz/").segments, std::vector<std::string>{"healthz"});
}

TEST(ParseTarget, PercentDecode) {
  EXPECT_EQ(percent_decode("a%41%7a"), "aAz");
  EXPECT_EQ(percent_decode("100%"), "100%");
  EXPECT_EQ(percent_decode("%zz"), "%zz");
  EXPECT_EQ(percent_decode("a+b"), "a+b");
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status(ErrorCode::UnknownSession), 404);
  EXPECT_EQ(http_status(ErrorCode::DuplicateSession), 409);
  EXPECT_EQ(http_status(ErrorCode::MalformedRecord), 400);
  EXPECT_EQ(http_status(ErrorCode::InvalidArgument), 400);
}

TEST(Router, HealthAndAuth) {
  Harness h;
  ApiRouter r(*h.service, "tok", {});
  const auto health = r.handle(req("GET", "/healthz", {}, ""));
  EXPECT_EQ(health.status, 200);
  EXPECT_EQ(body_of(health)["status"], "ok");
  EXPECT_EQ(body_of(health)["modelKind"], "LIR");
  EXPECT_EQ(body_of(health)["modelHash"].get<std::string>().size(), 16u);
  EXPECT_EQ(r.handle(req("POST", "/healthz")).status, 405);

  EXPECT_EQ(r.handle(req("GET", "/v1/sessions", {}, "")).status, 401);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions", {}, "Bearer nope")).status, 401);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions?token=tok", {}, "")).status, 401);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions")).status, 200);
  EXPECT_TRUE(r.authorized("", parse_target("/v1/sessions/x/stream?token=tok"), true));
  EXPECT_FALSE(r.authorized("", parse_target("/v1/sessions/x/stream?token=bad"), true));

  ApiRouter open(*h.service, "", {});
  EXPECT_EQ(open.handle(req("GET", "/v1/sessions", {}, "")).status, 200);
  EXPECT_EQ(open.handle(req("GET", "/nowhere")).status, 404);
  EXPECT_EQ(open.handle(req("GET", "/v1/unknown")).status, 404);
}

TEST(Router, SessionLifecycle) {
  Harness h;
  ApiRouter r(*h.service, "tok", {});
  const auto created = r.handle(req("POST", "/v1/sessions", serialize_session_line(kLive)));
  ASSERT_EQ(created.status, 201) << created.body;
  EXPECT_EQ(body_of(created)["sessionId"], "live");
  EXPECT_EQ(r.handle(req("POST", "/v1/sessions", serialize_session_line(kLive))).status, 201);  // same record
  LiveSession renamed = kLive;
  renamed.title = "other";
  EXPECT_EQ(r.handle(req("POST", "/v1/sessions", serialize_session_line(renamed))).status, 409);
  LiveSession historical = make_session(1, "h1", kT0, kT0);
  EXPECT_EQ(r.handle(req("POST", "/v1/sessions", serialize_session_line(historical))).status, 409);
  EXPECT_EQ(r.handle(req("POST", "/v1/sessions", "{not json")).status, 400);
  EXPECT_EQ(r.handle(req("DELETE", "/v1/sessions")).status, 405);
  EXPECT_EQ(body_of(r.handle(req("GET", "/v1/sessions"))), json::array({"live"}));

  const auto ack = r.handle(req("POST", "/v1/sessions/live/events", chat_lines(21, 3) + chat_lines(22, 1)));
  ASSERT_EQ(ack.status, 200);
  EXPECT_EQ(body_of(ack)["accepted"], 4);
  EXPECT_EQ(body_of(ack)["rejected"], 0);
  EXPECT_EQ(r.handle(req("POST", "/v1/sessions/ghost/events", chat_lines(21, 1))).status, 404);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions/live/events")).status, 405);

  const auto ranking = r.handle(req("GET", "/v1/sessions/live/ranking?top=1"));
  ASSERT_EQ(ranking.status, 200);
  const auto rows = body_of(ranking)["rows"];
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0]["viewerId"], 21);
  EXPECT_EQ(body_of(r.handle(req("GET", "/v1/sessions/live/ranking")))["rows"].size(), 2u);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions/live/ranking?top=0")).status, 400);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions/live/ranking?top=x")).status, 400);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions/ghost/ranking")).status, 404);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions/live/stream")).status, 426);
}

TEST(Router, PinDismissAndFeatures) {
  Harness h;
  ApiRouter r(*h.service, "", {});
  ASSERT_EQ(r.handle(req("POST", "/v1/sessions", serialize_session_line(kLive))).status, 201);
  r.handle(req("POST", "/v1/sessions/live/events", chat_lines(21, 3) + chat_lines(22, 1)));

  const auto pin = r.handle(req("POST", "/v1/sessions/live/viewers/22/pin"));
  ASSERT_EQ(pin.status, 200);
  EXPECT_EQ(body_of(pin)["pinned"], true);
  const auto top = body_of(r.handle(req("GET", "/v1/sessions/live/ranking?top=1")))["rows"];
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[1]["viewerId"], 22);
  EXPECT_EQ(top[1]["pinned"], true);

  h.now += 60'000;
  const auto dismiss = r.handle(req("POST", "/v1/sessions/live/viewers/21/dismiss", R"({"on":true})"));
  EXPECT_EQ(body_of(dismiss)["dismissed"], true);
  auto rows = body_of(r.handle(req("GET", "/v1/sessions/live/ranking")))["rows"];
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0]["viewerId"], 22);
  r.handle(req("POST", "/v1/sessions/live/viewers/21/dismiss", R"({"on":false})"));
  h.now += 60'000;
  EXPECT_EQ(body_of(r.handle(req("GET", "/v1/sessions/live/ranking")))["rows"].size(), 2u);

  EXPECT_EQ(r.handle(req("POST", "/v1/sessions/live/viewers/21/pin", R"({"on":1})")).status, 400);
  EXPECT_EQ(r.handle(req("POST", "/v1/sessions/live/viewers/0/pin")).status, 400);
  EXPECT_EQ(r.handle(req("POST", "/v1/sessions/live/viewers/abc/pin")).status, 400);
  EXPECT_EQ(r.handle(req("GET", "/v1/sessions/live/viewers/21/pin")).status, 405);

  const auto features = r.handle(req("GET", "/v1/viewers/21/features?session=live"));
  ASSERT_EQ(features.status, 200) << features.body;
  EXPECT_TRUE(body_of(features).is_object());
  const auto unseen = r.handle(req("GET", "/v1/viewers/99/features?session=live"));
  EXPECT_EQ(unseen.status, 404);
  EXPECT_EQ(body_of(unseen)["error"], "NotYetSeen");
  EXPECT_EQ(r.handle(req("GET", "/v1/viewers/21/features")).status, 400);
  EXPECT_EQ(r.handle(req("GET", "/v1/viewers/21/features?session=ghost")).status, 404);
}

TEST(Router, StaticFiles) {
  Harness h;
  TempDir dir("ui");
  std::filesystem::create_directories(dir / "ui" / "js");
  std::ofstream(dir / "ui" / "index.html") << "<html>hi</html>";
  std::ofstream(dir / "ui" / "js" / "app.js") << "let x;";
  std::ofstream(dir / "secret.txt") << "nope";
  ApiRouter r(*h.service, "tok", dir / "ui");

  const auto index = r.handle(req("GET", "/ui/", {}, ""));
  EXPECT_EQ(index.status, 200);
  EXPECT_EQ(index.body, "<html>hi</html>");
  EXPECT_EQ(index.contentType.rfind("text/html", 0), 0u);
  const auto js = r.handle(req("GET", "/ui/js/app.js", {}, ""));
  EXPECT_EQ(js.status, 200);
  EXPECT_EQ(js.contentType, "text/javascript");
  EXPECT_EQ(r.handle(req("GET", "/ui/../secret.txt", {}, "")).status, 404);
  EXPECT_EQ(r.handle(req("GET", "/ui/%2e%2e/secret.txt", {}, "")).status, 404);
  EXPECT_EQ(r.handle(req("GET", "/ui/missing.css", {}, "")).status, 404);
  EXPECT_EQ(r.handle(req("POST", "/ui/index.html", {}, "")).status, 405);

  ApiRouter none(*h.service, "", {});
  EXPECT_EQ(none.handle(req("GET", "/ui/index.html")).status, 404);
}

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;

struct RunningServer {
  RunningServer(LiveService& service, std::string token) {
    ServerOptions o;
    o.bindAddress = "127.0.0.1";
    o.port = 0;
    o.bearerToken = std::move(token);
    o.threads = 2;
    o.drainTimeout = std::chrono::milliseconds(2000);
    server = std::make_unique<HttpServer>(service, o);
    thread = std::thread([this] { server->run(); });
  }
  ~RunningServer() { shutdown(); }
  void shutdown() {
    if (thread.joinable()) {
      server->stop();
      thread.join();
    }
  }

  std::unique_ptr<HttpServer> server;
  std::thread thread;
};

class WsClient {
 public:
  WsClient(std::uint16_t port, const std::string& target) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    boost::asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", target);
  }

  json read() {
    beast::flat_buffer buffer;
    ws_.read(buffer);
    return json::parse(beast::buffers_to_string(buffer.data()));
  }

  websocket::stream<tcp::socket>& stream() { return ws_; }

 private:
  boost::asio::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

}  // namespace

TEST(HttpServer, ServesRestOverTcp) {
  Harness h;
  RunningServer rs(*h.service, "tok");
  const auto port = rs.server->port();
  ASSERT_NE(port, 0);

  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ok");

  auto denied = cli.Get("/v1/sessions");
  ASSERT_TRUE(denied);
  EXPECT_EQ(denied->status, 401);

  httplib::Headers auth{{"Authorization", "Bearer tok"}};
  auto created = cli.Post("/v1/sessions", auth, serialize_session_line(kLive), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  auto ack = cli.Post("/v1/sessions/live/events", auth, chat_lines(31, 2), "application/x-ndjson");
  ASSERT_TRUE(ack);
  EXPECT_EQ(json::parse(ack->body)["accepted"], 2);
  auto ranking = cli.Get("/v1/sessions/live/ranking?top=5", auth);
  ASSERT_TRUE(ranking);
  EXPECT_EQ(ranking->status, 200);
  EXPECT_EQ(ranking->get_header_value("Content-Type").rfind("application/json", 0), 0u);
  const auto rows = json::parse(ranking->body)["rows"];
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0]["viewerId"], 31);
}

TEST(HttpServer, WebSocketStreamsPushes) {
  Harness h;
  h.service->register_session(kLive);
  RunningServer rs(*h.service, "tok");
  const auto port = rs.server->port();

  // Upgrade without a token is refused.
  {
    WsClient* bad = nullptr;
    EXPECT_ANY_THROW(bad = new WsClient(port, "/v1/sessions/live/stream"));
    delete bad;
    EXPECT_ANY_THROW(bad = new WsClient(port, "/v1/sessions/ghost/stream?token=tok"));
    delete bad;
  }

  WsClient ws(port, "/v1/sessions/live/stream?token=tok");
  const json initial = ws.read();
  EXPECT_EQ(initial["sessionId"], "live");
  EXPECT_TRUE(initial["rows"].empty());

  httplib::Client cli("127.0.0.1", port);
  httplib::Headers auth{{"Authorization", "Bearer tok"}};
  ASSERT_TRUE(cli.Post("/v1/sessions/live/events", auth, chat_lines(41, 3) + chat_lines(42, 1), "text/plain"));
  h.now += 60'000;
  h.service->tick();
  const json push = ws.read();
  ASSERT_EQ(push["rows"].size(), 2u);
  EXPECT_EQ(push["rows"][0]["viewerId"], 41);
  EXPECT_EQ(push["rows"][1]["viewerId"], 42);
  EXPECT_GT(push["generatedAt"].get<std::int64_t>(), initial["generatedAt"].get<std::int64_t>());

  // stop() sends a close frame; answering it lets the drain finish early.
  const auto t0 = std::chrono::steady_clock::now();
  rs.server->stop();
  beast::flat_buffer buffer;
  beast::error_code ec;
  ws.stream().read(buffer, ec);
  EXPECT_EQ(ec, websocket::error::closed) << ec.message();
  rs.shutdown();
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(1500));
}

TEST(HttpServer, DrainTimeoutDropsSilentClients) {
  Harness h;
  h.service->register_session(kLive);
  ServerOptions o;
  o.bindAddress = "127.0.0.1";
  o.port = 0;
  o.drainTimeout = std::chrono::milliseconds(200);
  HttpServer server(*h.service, o);
  std::thread t([&] { server.run(); });
  WsClient ws(server.port(), "/v1/sessions/live/stream");
  ws.read();

  // Never answers the close frame; run() still returns and the socket is dropped.
  server.stop();
  t.join();
  boost::system::error_code ec;
  char byte;
  for (int i = 0; i < 16 && !ec; ++i) ws.stream().next_layer().read_some(boost::asio::buffer(&byte, 1), ec);
  EXPECT_TRUE(ec == boost::asio::error::eof || ec == boost::asio::error::connection_reset) << ec.message();
}

TEST(HttpServer, PortInUse) {
  Harness h;
  RunningServer first(*h.service, "");
  ServerOptions o;
  o.bindAddress = "127.0.0.1";
  o.port = first.server->port();
  try {
    HttpServer second(*h.service, o);
    FAIL() << "second bind succeeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PortInUse);
  }
}

TEST(HttpServer, StopWithoutRun) {
  Harness h;
  ServerOptions o;
  o.bindAddress = "127.0.0.1";
  o.port = 0;
  HttpServer s(*h.service, o);
  EXPECT_NE(s.port(), 0);
  s.stop();
}
