#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "latentdrag/drag/records.hpp"
#include "latentdrag/error.hpp"
#include "latentdrag/generator/raster_io.hpp"
#include "latentdrag/service/service.hpp"

using namespace latentdrag;
using namespace latentdrag::service;
using nlohmann::json;

namespace {

struct SseEvent {
  std::size_t id = 0;
  std::string type;
  json data;
};

std::vector<SseEvent> parse_sse(const std::string& text) {
  std::vector<SseEvent> out;
  std::istringstream in(text);
  std::string line;
  SseEvent cur;
  bool any = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      if (any) out.push_back(cur);
      cur = {};
      any = false;
    } else if (line.rfind("id: ", 0) == 0) {
      cur.id = std::stoull(line.substr(4));
      any = true;
    } else if (line.rfind("event: ", 0) == 0) {
      cur.type = line.substr(7);
    } else if (line.rfind("data: ", 0) == 0) {
      cur.data = json::parse(line.substr(6));
    }
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& in) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::vector<unsigned char> out;
  unsigned buf = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    buf = (buf << 6) | static_cast<unsigned>(alphabet.find(c));
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xFF));
    }
  }
  return out;
}

class ServiceTest : public ::testing::Test {
 protected:
  void start(ServiceConfig cfg = {}) {
    cfg.port = 0;
    service_ = std::make_unique<Service>(cfg);
    port_ = service_->bind();
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { service_->listen_after_bind(); });
    service_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(60, 0);
  }

  void SetUp() override { start(); }

  void TearDown() override {
    if (service_) service_->stop();
    if (thread_.joinable()) thread_.join();
  }

  void restart(ServiceConfig cfg) {
    TearDown();
    start(cfg);
  }

  std::pair<int, json> post(const std::string& path, const json& body = json::object()) {
    auto r = client_->Post(path, body.dump(), "application/json");
    if (!r) return {0, json()};
    return {r->status, json::parse(r->body)};
  }

  std::pair<int, json> get(const std::string& path) {
    auto r = client_->Get(path);
    if (!r) return {0, json()};
    return {r->status, json::parse(r->body)};
  }

  std::string create(std::uint64_t seed = 13) {
    const auto [status, body] = post("/sessions", {{"seed", seed}});
    EXPECT_EQ(status, 200);
    return body.at("session_id").get<std::string>();
  }

  std::vector<SseEvent> stream(const std::string& id, const std::string& last_id = "") {
    httplib::Headers headers;
    if (!last_id.empty()) headers.emplace("Last-Event-ID", last_id);
    auto r = client_->Get("/sessions/" + id + "/events", headers);
    EXPECT_TRUE(r);
    if (!r) return {};
    EXPECT_EQ(r->status, 200);
    return parse_sse(r->body);
  }

  std::unique_ptr<Service> service_;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

json slow_config() {
  return {{"learning_rate", 0.0}, {"n_pca", "Regular"}, {"w_plus_layers", 3}};
}

}  // namespace

TEST_F(ServiceTest, CreateReturnsImageAndMetadata) {
  const auto [status, body] = post("/sessions", {{"seed", 7}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body.at("state"), "configuring");
  EXPECT_EQ(body.at("shape"), json({3, 128, 128}));
  EXPECT_EQ(body.at("generator").at("feature_resolution"), 64);
  EXPECT_EQ(body.at("canonical_points").size(), 1u);
  const auto img = generator::decode_png(base64_decode(body.at("image").get<std::string>()));
  EXPECT_EQ(img.channels, 3u);
  EXPECT_EQ(img.height, 128u);
  EXPECT_EQ(img.width, 128u);
  EXPECT_EQ(service_->session_count(), 1u);
}

TEST_F(ServiceTest, UnknownSessionIs404) {
  EXPECT_EQ(get("/sessions/nope").first, 404);
  EXPECT_EQ(get("/sessions/nope/image").first, 404);
  EXPECT_EQ(post("/sessions/nope/config").first, 404);
  EXPECT_EQ(post("/sessions/nope/run").first, 404);
  EXPECT_EQ(post("/sessions/nope/step").first, 404);
  EXPECT_EQ(post("/sessions/nope/pause").first, 404);
  EXPECT_EQ(client_->Delete("/sessions/nope")->status, 404);
  EXPECT_EQ(client_->Get("/sessions/nope/events")->status, 404);
}

TEST_F(ServiceTest, ConfigureValidatesAndEchoes) {
  const auto id = create();
  auto [bad_status, bad] = post("/sessions/" + id + "/config",
                                {{"points", {{{"handle", {-5, 0}}, {"target", {10, 10}}}}}});
  EXPECT_EQ(bad_status, 422);
  EXPECT_NE(bad.at("error").get<std::string>().find("OutOfBounds"), std::string::npos);
  EXPECT_EQ(post("/sessions/" + id + "/config", {{"learning_rate", -1.0}}).first, 422);
  EXPECT_EQ(post("/sessions/" + id + "/config", {{"n_pca", "lots"}}).first, 422);
  auto r = client_->Post("/sessions/" + id + "/config", "{not json", "application/json");
  EXPECT_EQ(r->status, 400);

  auto [status, body] = post("/sessions/" + id + "/config",
                             {{"learning_rate", 0.05},
                              {"n_pca", 64},
                              {"w_plus_layers", 3},
                              {"points", {{{"handle", {20, 30}}, {"target", {40, 30}}}}}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body.at("state"), "configuring");
  EXPECT_EQ(body.at("config").at("learning_rate"), 0.05);
  EXPECT_EQ(body.at("config").at("n_pca"), 64);
  EXPECT_EQ(body.at("config").at("w_plus_layers"), 3);
  EXPECT_EQ(body.at("points"), json::parse(R"([{"handle":[20.0,30.0],"target":[40.0,30.0]}])"));
}

TEST_F(ServiceTest, ImageCoordinatesMapToFeatureGrid) {
  const auto id = create();
  // Image pixel 63.5 on a 128 px canvas is feature texel 31.5 on a 64 grid.
  auto [status, body] = post("/sessions/" + id + "/config",
                             {{"coordinates", "image"}, {"points", {{{"handle", {63.5, 1.5}}, {"target", {1.0, 126.0}}}}}});
  ASSERT_EQ(status, 200);
  const auto& p = body.at("points").at(0);
  EXPECT_DOUBLE_EQ(p.at("handle")[0].get<double>(), 31.5);
  EXPECT_DOUBLE_EQ(p.at("handle")[1].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(p.at("target")[0].get<double>(), 0.25);
  EXPECT_DOUBLE_EQ(p.at("target")[1].get<double>(), 62.75);
}

TEST_F(ServiceTest, RunAndStepRequireConfiguration) {
  const auto id = create();
  EXPECT_EQ(post("/sessions/" + id + "/run").first, 409);
  EXPECT_EQ(post("/sessions/" + id + "/step").first, 409);
  EXPECT_EQ(post("/sessions/" + id + "/pause").first, 409);
}

TEST_F(ServiceTest, BornConvergedStepIsTerminal) {
  const auto id = create();
  ASSERT_EQ(post("/sessions/" + id + "/config", {{"points", {{{"handle", {30, 30}}, {"target", {30, 30}}}}}}).first,
            200);
  auto [status, body] = post("/sessions/" + id + "/step");
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body.at("state"), "converged");
  ASSERT_EQ(body.at("events").size(), 1u);
  const auto& ev = body.at("events").at(0);
  EXPECT_EQ(ev.at("event"), "terminal");
  EXPECT_EQ(ev.at("id"), 0);
  const auto& summary = ev.at("data").at("summary");
  EXPECT_EQ(summary.at("iterations"), 0);
  EXPECT_EQ(summary.at("converged"), true);
  EXPECT_EQ(summary.at("ssim"), 1.0);
  EXPECT_EQ(post("/sessions/" + id + "/step").first, 409);
  EXPECT_EQ(post("/sessions/" + id + "/run").first, 409);

  const auto events = stream(id);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].type, "terminal");
}

TEST_F(ServiceTest, SingleStepAdvancesOneIteration) {
  const auto id = create();
  ASSERT_EQ(post("/sessions/" + id + "/config").first, 200);
  for (int i = 0; i < 2; ++i) {
    auto [status, body] = post("/sessions/" + id + "/step");
    ASSERT_EQ(status, 200);
    EXPECT_EQ(body.at("state"), "paused");
    EXPECT_EQ(body.at("iteration"), i + 1);
    ASSERT_EQ(body.at("events").size(), 1u);
    EXPECT_EQ(body.at("events")[0].at("event"), "step");
    EXPECT_EQ(body.at("events")[0].at("data").at("step").at("iteration"), i);
  }
}

TEST_F(ServiceTest, CanonicalRunStreamsMatchingTrace) {
  const auto id = create(13);
  ASSERT_EQ(post("/sessions/" + id + "/config", {{"learning_rate", 0.05}, {"n_pca", "Regular"}, {"w_plus_layers", 3}})
                .first,
            200);
  auto [status, body] = post("/sessions/" + id + "/run");
  ASSERT_EQ(status, 202);
  EXPECT_EQ(body.at("state"), "running");

  const auto events = stream(id);
  ASSERT_GE(events.size(), 2u);
  ASSERT_LE(events.size(), 151u);
  const auto& last = events.back();
  ASSERT_EQ(last.type, "terminal");
  EXPECT_EQ(last.data.at("summary").at("converged"), true);
  EXPECT_EQ(last.data.at("state"), "converged");
  EXPECT_LE(last.data.at("summary").at("final_max_distance").get<double>(), 10.0);
  EXPECT_EQ(last.id, events.size() - 1);

  auto trace = client_->Get("/sessions/" + id + "/trace");
  ASSERT_EQ(trace->status, 200);
  std::istringstream lines(trace->body);
  std::string line;
  std::size_t i = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    if (j.contains("summary")) {
      EXPECT_EQ(j.at("summary"), last.data.at("summary"));
      break;
    }
    ASSERT_LT(i, events.size() - 1);
    EXPECT_EQ(events[i].type, "step");
    EXPECT_EQ(events[i].id, i);
    EXPECT_EQ(events[i].data.at("step"), j);
    EXPECT_EQ(events[i].data.contains("frame"), (i + 1) % 5 == 0);
    ++i;
  }
  EXPECT_EQ(i, events.size() - 1);
  EXPECT_EQ(get("/sessions/" + id).second.at("state"), "converged");
}

TEST_F(ServiceTest, PauseKeepsTraceAndResumes) {
  const auto id = create();
  ASSERT_EQ(post("/sessions/" + id + "/config", slow_config()).first, 200);
  ASSERT_EQ(post("/sessions/" + id + "/run").first, 202);
  EXPECT_EQ(post("/sessions/" + id + "/run").first, 409);
  EXPECT_EQ(post("/sessions/" + id + "/step").first, 409);
  EXPECT_EQ(post("/sessions/" + id + "/config", slow_config()).first, 409);
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  auto [status, paused] = post("/sessions/" + id + "/cancel");
  ASSERT_EQ(status, 200);
  ASSERT_EQ(paused.at("state"), "paused");
  const auto done = paused.at("iteration").get<std::size_t>();
  ASSERT_LT(done, 150u);
  EXPECT_EQ(paused.at("event_count"), done);

  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_EQ(get("/sessions/" + id).second.at("iteration"), done);

  auto trace = client_->Get("/sessions/" + id + "/trace");
  EXPECT_EQ(static_cast<std::size_t>(std::count(trace->body.begin(), trace->body.end(), '\n')), done + 1);

  ASSERT_EQ(post("/sessions/" + id + "/run").first, 202);
  const auto rest = done == 0 ? stream(id) : stream(id, std::to_string(done - 1));
  ASSERT_FALSE(rest.empty());
  EXPECT_EQ(rest.front().id, done);
  for (std::size_t k = 0; k < rest.size(); ++k) EXPECT_EQ(rest[k].id, done + k);
  EXPECT_EQ(rest.back().type, "terminal");
  EXPECT_EQ(rest.back().data.at("state"), "capped");
  EXPECT_EQ(rest.back().data.at("summary").at("iterations"), 150);
  EXPECT_EQ(rest.back().id, 150u);
}

TEST_F(ServiceTest, ReconfigureAfterTerminalStartsFresh) {
  const auto id = create();
  ASSERT_EQ(post("/sessions/" + id + "/config", {{"points", {{{"handle", {30, 30}}, {"target", {30, 30}}}}}}).first,
            200);
  ASSERT_EQ(post("/sessions/" + id + "/step").second.at("state"), "converged");
  auto [status, body] = post("/sessions/" + id + "/config", {{"max_iterations", 1}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body.at("state"), "configuring");
  EXPECT_EQ(body.at("event_count"), 0);
  EXPECT_EQ(body.at("config").at("max_iterations"), 1);
  // Points carry over from the previous configuration.
  EXPECT_EQ(body.at("points").at(0).at("handle"), json({30.0, 30.0}));
}

TEST_F(ServiceTest, ImageEndpointReportsOverlay) {
  const auto id = create();
  ASSERT_EQ(post("/sessions/" + id + "/config").first, 200);
  auto [status, body] = get("/sessions/" + id + "/image?annotated=1");
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body.at("iteration"), 0);
  EXPECT_EQ(body.at("points").size(), 1u);
  const auto plain = get("/sessions/" + id + "/image").second;
  EXPECT_NE(plain.at("image"), body.at("image"));
}

TEST_F(ServiceTest, DeleteEndsSessionAndStream) {
  const auto id = create();
  ASSERT_EQ(post("/sessions/" + id + "/config", slow_config()).first, 200);
  ASSERT_EQ(post("/sessions/" + id + "/run").first, 202);
  std::thread del([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    httplib::Client c("127.0.0.1", port_);
    EXPECT_EQ(c.Delete("/sessions/" + id)->status, 200);
  });
  const auto events = stream(id);
  del.join();
  ASSERT_FALSE(events.empty());
  EXPECT_NE(events.back().type, "terminal");
  EXPECT_EQ(get("/sessions/" + id).first, 404);
  EXPECT_EQ(service_->session_count(), 0u);
}

TEST_F(ServiceTest, StoreEvictsTerminalSessionsOnly) {
  ServiceConfig cfg;
  cfg.session_cap = 2;
  restart(cfg);
  const auto a = create();
  const auto b = create();
  EXPECT_EQ(post("/sessions", {{"seed", 1}}).first, 503);
  ASSERT_EQ(post("/sessions/" + a + "/config", {{"points", {{{"handle", {30, 30}}, {"target", {30, 30}}}}}}).first,
            200);
  ASSERT_EQ(post("/sessions/" + a + "/step").second.at("state"), "converged");
  const auto c = create();
  EXPECT_EQ(get("/sessions/" + a).first, 404);
  EXPECT_EQ(get("/sessions/" + b).first, 200);
  EXPECT_EQ(get("/sessions/" + c).first, 200);
}

TEST_F(ServiceTest, RestartInvalidatesSessions) {
  const auto id = create();
  restart({});
  EXPECT_EQ(get("/sessions/" + id).first, 404);
  EXPECT_EQ(get("/health").second.at("sessions"), 0);
}

TEST(ServiceConfigTest, ReadsEnvironment) {
  ::setenv("LATENTDRAG_BIND", "0.0.0.0:9123", 1);
  ::setenv("LATENTDRAG_SESSION_CAP", "4", 1);
  ::setenv("LATENTDRAG_FRAME_STRIDE", "3", 1);
  const auto cfg = ServiceConfig::from_env({});
  EXPECT_EQ(cfg.host, "0.0.0.0");
  EXPECT_EQ(cfg.port, 9123);
  EXPECT_EQ(cfg.session_cap, 4u);
  EXPECT_EQ(cfg.frame_stride, 3u);
  ::setenv("LATENTDRAG_FRAME_STRIDE", "0", 1);
  EXPECT_THROW(ServiceConfig::from_env({}), Error);
  ::setenv("LATENTDRAG_FRAME_STRIDE", "x", 1);
  EXPECT_THROW(ServiceConfig::from_env({}), Error);
  ::unsetenv("LATENTDRAG_BIND");
  ::unsetenv("LATENTDRAG_SESSION_CAP");
  ::unsetenv("LATENTDRAG_FRAME_STRIDE");
}
