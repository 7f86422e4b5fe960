#include "latentdrag/service/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "httplib.h"

#include "latentdrag/drag/records.hpp"
#include "latentdrag/drag/scenario.hpp"
#include "latentdrag/error.hpp"
#include "latentdrag/generator/raster_io.hpp"
#include "latentdrag/harness/harness.hpp"

namespace latentdrag::service {

using drag::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr auto kKeepAlive = std::chrono::seconds(10);

std::size_t parse_size(const char* name, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n <= 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw Error(ErrorCode::BadConfig, std::string(name) + " must be a positive integer, got '" + v + "'");
  }
}

std::optional<std::size_t> parse_event_id(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string png_base64(const generator::Image& img) {
  const auto bytes = generator::encode_png(img);
  return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

std::string random_id() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

double unix_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

json points_json(std::span<const drag::PointPair> pairs) {
  json a = json::array();
  for (const auto& p : pairs)
    a.push_back({{"handle", {p.handle.x, p.handle.y}}, {"target", {p.target.x, p.target.y}}});
  return a;
}

drag::Point point_from_json(const json& j, double scale_to_feature, bool image_coords) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw Error(ErrorCode::BadConfig, "point must be [x, y]");
  drag::Point p{j[0].get<double>(), j[1].get<double>()};
  if (image_coords) {
    p.x = (p.x + 0.5) * scale_to_feature - 0.5;
    p.y = (p.y + 0.5) * scale_to_feature - 0.5;
  }
  return p;
}

enum class State { Configuring, Running, Paused, Converged, Capped, Failed };

const char* to_string(State s) {
  switch (s) {
    case State::Configuring: return "configuring";
    case State::Running: return "running";
    case State::Paused: return "paused";
    case State::Converged: return "converged";
    case State::Capped: return "capped";
    case State::Failed: return "failed";
  }
  return "unknown";
}

bool terminal(State s) { return s == State::Converged || s == State::Capped || s == State::Failed; }

struct Event {
  std::size_t id = 0;
  std::string type;  // "step" or "terminal"
  json data;
};

std::string sse_frame(const Event& e) {
  return "id: " + std::to_string(e.id) + "\nevent: " + e.type + "\ndata: " + e.data.dump() + "\n\n";
}

struct Session {
  std::string id;
  std::shared_ptr<const generator::Generator> gen;
  std::uint64_t seed = 0;
  generator::LayeredLatent latent;
  std::vector<drag::PointPair> canonical;
  double created_at = 0.0;

  // Serializes mutating requests; never held by the run loop.
  std::mutex control;

  mutable std::mutex m;
  std::condition_variable cv;
  State state = State::Configuring;
  drag::DragConfig config;
  std::vector<drag::PointPair> pairs;
  std::optional<drag::DragState> drag;
  std::optional<std::string> failure;
  std::size_t frame_stride = 5;
  std::vector<Event> events;
  std::uint64_t epoch = 0;  // bumped on reconfigure; open streams end
  bool closed = false;
  double updated_at = 0.0;
  Clock::time_point last_used = Clock::now();

  std::atomic<bool> stop_requested{false};
  std::thread runner;

  ~Session() { join_runner(); }

  void join_runner() {
    if (runner.joinable()) runner.join();
  }
};

// Caller holds s.m.
json status_json(const Session& s) {
  json j{{"session_id", s.id},
         {"state", to_string(s.state)},
         {"seed", s.seed},
         {"iteration", s.drag ? s.drag->iteration : 0},
         {"points", points_json(s.drag ? drag::current_points(*s.drag) : s.pairs)},
         {"targets_configured", !s.pairs.empty()},
         {"config", drag::config_to_json(s.config)},
         {"frame_stride", s.frame_stride},
         {"event_count", s.events.size()},
         {"created_at", s.created_at},
         {"updated_at", s.updated_at}};
  if (s.failure) j["failure"] = *s.failure;
  return j;
}

// Caller holds s.m. Appends the event for the step just taken and, when the
// session has ended, the terminal event.
void record_step(Session& s, const drag::StepRecord& rec) {
  const auto& d = *s.drag;
  json data{{"step", drag::to_json(rec)}, {"points", points_json(drag::current_points(d))}};
  if ((rec.iteration + 1) % s.frame_stride == 0) data["frame"] = png_base64(s.gen->render(d.latent));
  s.events.push_back({rec.iteration, "step", std::move(data)});
}

void record_terminal(Session& s) {
  const auto& d = *s.drag;
  auto run = drag::summarize_session(d);
  if (s.failure) {
    run.converged = false;
    run.failure = s.failure;
    s.state = State::Failed;
  } else {
    s.state = run.converged ? State::Converged : State::Capped;
  }
  json data{{"summary", drag::summary_json(run)},
            {"state", to_string(s.state)},
            {"points", points_json(drag::current_points(d))},
            {"frame", png_base64(s.gen->render(d.latent))}};
  s.events.push_back({d.iteration, "terminal", std::move(data)});
}

// One iteration under s.m. Returns false once the session has ended.
bool advance(Session& s) {
  auto& d = *s.drag;
  if (d.terminated()) {
    record_terminal(s);
    return false;
  }
  try {
    record_step(s, drag::drag_step(d));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteGradient && e.code() != ErrorCode::NonFiniteLatent) throw;
    s.failure = e.what();
    record_terminal(s);
    return false;
  }
  if (d.terminated()) {
    record_terminal(s);
    return false;
  }
  return true;
}

void respond(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void respond_error(httplib::Response& res, int status, const std::string& message) {
  respond(res, status, json{{"error", message}});
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfBounds:
    case ErrorCode::BadConfig:
    case ErrorCode::BadShape: return 422;
    case ErrorCode::AllConverged: return 409;
    default: return 500;
  }
}

}  // namespace

ServiceConfig ServiceConfig::from_env(ServiceConfig base) {
  if (const char* bind = std::getenv("LATENTDRAG_BIND"); bind && *bind) {
    const std::string v = bind;
    const auto colon = v.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::BadConfig, "LATENTDRAG_BIND must be host:port");
    base.host = v.substr(0, colon);
    const auto port = parse_size("LATENTDRAG_BIND port", v.substr(colon + 1));
    if (port > 65535) throw Error(ErrorCode::BadConfig, "LATENTDRAG_BIND port out of range");
    base.port = static_cast<int>(port);
  }
  if (const char* cap = std::getenv("LATENTDRAG_SESSION_CAP"); cap && *cap)
    base.session_cap = parse_size("LATENTDRAG_SESSION_CAP", cap);
  if (const char* stride = std::getenv("LATENTDRAG_FRAME_STRIDE"); stride && *stride)
    base.frame_stride = parse_size("LATENTDRAG_FRAME_STRIDE", stride);
  return base;
}

struct Service::Impl {
  ServiceConfig cfg;
  httplib::Server server;
  std::atomic<bool> stopping{false};

  mutable std::mutex store_m;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::map<std::string, std::shared_ptr<const generator::Generator>> generators;

  explicit Impl(ServiceConfig c) : cfg(std::move(c)) {
    if (cfg.session_cap == 0) throw Error(ErrorCode::BadConfig, "session_cap must be positive");
    if (cfg.frame_stride == 0) throw Error(ErrorCode::BadConfig, "frame_stride must be positive");
    generator::validate(cfg.generator);
    routes();
  }

  std::shared_ptr<const generator::Generator> generator_for(const generator::GeneratorConfig& g) {
    const auto key = harness::generator_config_to_json(g).dump();
    std::lock_guard lock(store_m);
    auto& slot = generators[key];
    if (!slot) slot = std::make_shared<const generator::Generator>(g);
    return slot;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(store_m);
    const auto it = sessions.find(id);
    if (it == sessions.end()) return nullptr;
    return it->second;
  }

  // Caller holds store_m. Drops the least recently used terminal session.
  bool evict_one() {
    std::shared_ptr<Session> victim;
    Clock::time_point oldest = Clock::time_point::max();
    for (const auto& [id, s] : sessions) {
      std::lock_guard lock(s->m);
      if (terminal(s->state) && s->last_used < oldest) {
        oldest = s->last_used;
        victim = s;
      }
    }
    if (!victim) return false;
    close(*victim);
    sessions.erase(victim->id);
    return true;
  }

  static void close(Session& s) {
    s.stop_requested = true;
    {
      std::lock_guard lock(s.m);
      s.closed = true;
    }
    s.cv.notify_all();
  }

  static void stop_runner(Session& s) {
    s.stop_requested = true;
    s.join_runner();
    s.stop_requested = false;
  }

  static void touch(Session& s) {
    s.last_used = Clock::now();
    s.updated_at = unix_seconds();
  }

  void routes() {
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const Error& e) {
        respond_error(res, status_for(e.code()), e.what());
      } catch (const json::exception& e) {
        respond_error(res, 400, std::string("malformed request: ") + e.what());
      } catch (const std::exception& e) {
        respond_error(res, 500, e.what());
      }
    });

    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(store_m);
      respond(res, 200, json{{"status", "ok"}, {"sessions", sessions.size()}, {"session_cap", cfg.session_cap}});
    });

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) { create(req, res); });

    auto with_session = [this](auto fn) {
      return [this, fn](const httplib::Request& req, httplib::Response& res) {
        auto s = find(req.path_params.at("id"));
        if (!s) return respond_error(res, 404, "unknown session");
        fn(*s, req, res);
      };
    };

    server.Get("/sessions/:id", with_session([](Session& s, const httplib::Request&, httplib::Response& res) {
                 std::lock_guard lock(s.m);
                 touch(s);
                 respond(res, 200, status_json(s));
               }));
    server.Post("/sessions/:id/config", with_session([this](Session& s, const httplib::Request& req,
                                                             httplib::Response& res) { configure(s, req, res); }));
    server.Get("/sessions/:id/image", with_session([](Session& s, const httplib::Request& req, httplib::Response& res) {
                 image(s, req, res);
               }));
    server.Post("/sessions/:id/run", with_session([this](Session& s, const httplib::Request&, httplib::Response& res) {
                  run(s, res);
                }));
    server.Post("/sessions/:id/step", with_session([](Session& s, const httplib::Request&, httplib::Response& res) {
                  step(s, res);
                }));
    auto pause_handler = with_session([](Session& s, const httplib::Request&, httplib::Response& res) { pause(s, res); });
    server.Post("/sessions/:id/pause", pause_handler);
    server.Post("/sessions/:id/cancel", pause_handler);
    server.Get("/sessions/:id/trace", with_session([](Session& s, const httplib::Request&, httplib::Response& res) {
                 std::lock_guard lock(s.m);
                 if (!s.drag) return respond_error(res, 409, "session is not configured");
                 auto run = drag::summarize_session(*s.drag);
                 if (s.failure) {
                   run.converged = false;
                   run.failure = s.failure;
                 }
                 res.set_content(drag::trace_jsonl(run), "application/x-ndjson");
               }));
    server.Get("/sessions/:id/events", with_session([this](Session& s, const httplib::Request& req,
                                                            httplib::Response& res) { events(s, req, res); }));
    server.Delete("/sessions/:id", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_ptr<Session> s;
      {
        std::lock_guard lock(store_m);
        const auto it = sessions.find(req.path_params.at("id"));
        if (it == sessions.end()) return respond_error(res, 404, "unknown session");
        s = it->second;
        sessions.erase(it);
      }
      std::lock_guard control(s->control);
      close(*s);
      s->join_runner();
      respond(res, 200, json{{"session_id", s->id}, {"deleted", true}});
    });
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    const json body = req.body.empty() ? json::object() : json::parse(req.body);
    if (!body.is_object()) return respond_error(res, 400, "body must be a JSON object");
    const std::uint64_t seed = body.value("seed", std::uint64_t{42});
    auto gcfg = cfg.generator;
    if (body.contains("generator")) gcfg = harness::generator_config_from_json(body.at("generator"), gcfg);
    generator::validate(gcfg);

    auto s = std::make_shared<Session>();
    s->gen = generator_for(gcfg);
    s->seed = seed;
    auto scenario = drag::canonical_scenario(*s->gen, seed);
    s->latent = std::move(scenario.latent);
    s->canonical = std::move(scenario.pairs);
    s->frame_stride = cfg.frame_stride;
    s->config.seed = seed;
    s->created_at = s->updated_at = unix_seconds();
    {
      std::lock_guard lock(store_m);
      if (sessions.size() >= cfg.session_cap && !evict_one())
        return respond_error(res, 503, "session store is full");
      do s->id = random_id();
      while (sessions.count(s->id));
      sessions.emplace(s->id, s);
    }
    const auto& g = s->gen->config();
    respond(res, 200,
            json{{"session_id", s->id},
                 {"state", to_string(State::Configuring)},
                 {"seed", seed},
                 {"image", png_base64(s->gen->render(s->latent))},
                 {"shape", {g.channels, g.height, g.width}},
                 {"generator",
                  {{"config", harness::generator_config_to_json(g)},
                   {"feature_resolution", g.feature_resolution},
                   {"n_layers", g.n_layers},
                   {"latent_dim", g.latent_dim}}},
                 {"canonical_points", points_json(s->canonical)},
                 {"config", drag::config_to_json(s->config)},
                 {"frame_stride", s->frame_stride}});
  }

  void configure(Session& s, const httplib::Request& req, httplib::Response& res) {
    const json body = req.body.empty() ? json::object() : json::parse(req.body);
    if (!body.is_object()) return respond_error(res, 400, "body must be a JSON object");
    std::lock_guard control(s.control);
    {
      std::lock_guard lock(s.m);
      if (s.state == State::Running) return respond_error(res, 409, "session is running");
    }
    s.join_runner();

    drag::DragConfig dc;
    {
      std::lock_guard lock(s.m);
      dc = s.config;
    }
    json cfg_fields = body;
    for (const char* k : {"points", "coordinates", "frame_stride"}) cfg_fields.erase(k);
    dc = drag::config_from_json(cfg_fields, dc);
    dc.seed = s.seed;  // the latent is fixed at creation
    drag::validate(dc, s.gen->config());

    const auto& g = s.gen->config();
    const std::string coords = body.value("coordinates", std::string("feature"));
    if (coords != "feature" && coords != "image")
      throw Error(ErrorCode::BadConfig, "coordinates must be 'feature' or 'image'");
    const double scale = static_cast<double>(g.feature_resolution) / static_cast<double>(g.width);
    std::vector<drag::PointPair> pairs;
    if (body.contains("points")) {
      const auto& pts = body.at("points");
      if (!pts.is_array()) throw Error(ErrorCode::BadConfig, "points must be an array");
      for (const auto& p : pts) {
        if (!p.is_object() || !p.contains("handle") || !p.contains("target"))
          throw Error(ErrorCode::BadConfig, "each point needs handle and target");
        pairs.push_back({point_from_json(p.at("handle"), scale, coords == "image"),
                         point_from_json(p.at("target"), scale, coords == "image")});
      }
    } else {
      std::lock_guard lock(s.m);
      pairs = s.pairs.empty() ? s.canonical : s.pairs;
    }
    if (pairs.empty()) throw Error(ErrorCode::BadConfig, "at least one point pair is required");
    std::size_t stride = s.frame_stride;
    if (body.contains("frame_stride")) {
      const auto& v = body.at("frame_stride");
      if (!v.is_number_integer() || v.get<long long>() <= 0)
        throw Error(ErrorCode::BadConfig, "frame_stride must be a positive integer");
      stride = v.get<std::size_t>();
    }

    auto state = drag::init_session(s.gen, s.latent, pairs, dc);

    {
      std::lock_guard lock(s.m);
      s.config = dc;
      s.pairs = std::move(pairs);
      s.frame_stride = stride;
      s.drag = std::move(state);
      s.failure.reset();
      s.events.clear();
      s.epoch += 1;
      s.state = State::Configuring;
      touch(s);
      respond(res, 200, status_json(s));
    }
    s.cv.notify_all();
  }

  static void image(Session& s, const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(s.m);
    touch(s);
    const auto latent = s.drag ? s.drag->latent : s.latent;
    auto pts = s.drag ? drag::current_points(*s.drag) : s.pairs;
    auto img = s.gen->render(latent);
    if (req.has_param("annotated") && req.get_param_value("annotated") != "0")
      img = drag::annotate(img, pts, s.gen->config().feature_resolution);
    respond(res, 200,
            json{{"session_id", s.id},
                 {"state", to_string(s.state)},
                 {"iteration", s.drag ? s.drag->iteration : 0},
                 {"image", png_base64(img)},
                 {"shape", {img.channels, img.height, img.width}},
                 {"points", points_json(pts)},
                 {"feature_resolution", s.gen->config().feature_resolution}});
  }

  void run(Session& s, httplib::Response& res) {
    std::lock_guard control(s.control);
    {
      std::lock_guard lock(s.m);
      if (s.state == State::Running) return respond_error(res, 409, "session is already running");
      if (!s.drag) return respond_error(res, 409, "session is not configured");
      if (terminal(s.state)) return respond_error(res, 409, std::string("session is ") + to_string(s.state));
    }
    s.join_runner();
    {
      std::lock_guard lock(s.m);
      s.state = State::Running;
      touch(s);
    }
    s.stop_requested = false;
    s.runner = std::thread([&s] {
      for (;;) {
        bool more = false;
        {
          std::lock_guard lock(s.m);
          if (s.stop_requested || s.closed) break;
          try {
            more = advance(s);
          } catch (const std::exception& e) {
            s.failure = e.what();
            record_terminal(s);
          }
          touch(s);
        }
        s.cv.notify_all();
        if (!more) break;
        std::this_thread::yield();
      }
    });
    std::lock_guard lock(s.m);
    respond(res, 202, status_json(s));
  }

  static void step(Session& s, httplib::Response& res) {
    std::lock_guard control(s.control);
    {
      std::lock_guard lock(s.m);
      if (s.state == State::Running) return respond_error(res, 409, "session is running");
      if (!s.drag) return respond_error(res, 409, "session is not configured");
      if (terminal(s.state)) return respond_error(res, 409, std::string("session is ") + to_string(s.state));
    }
    s.join_runner();
    json out;
    {
      std::lock_guard lock(s.m);
      const std::size_t before = s.events.size();
      if (advance(s)) s.state = State::Paused;
      touch(s);
      json evs = json::array();
      for (std::size_t i = before; i < s.events.size(); ++i)
        evs.push_back({{"id", s.events[i].id}, {"event", s.events[i].type}, {"data", s.events[i].data}});
      out = status_json(s);
      out["events"] = std::move(evs);
    }
    s.cv.notify_all();
    respond(res, 200, out);
  }

  static void pause(Session& s, httplib::Response& res) {
    std::lock_guard control(s.control);
    {
      std::lock_guard lock(s.m);
      if (s.state != State::Running) return respond_error(res, 409, "session is not running");
    }
    stop_runner(s);
    std::lock_guard lock(s.m);
    if (s.state == State::Running) s.state = State::Paused;
    touch(s);
    respond(res, 200, status_json(s));
  }

  void events(Session& s, const httplib::Request& req, httplib::Response& res) {
    std::optional<std::size_t> last;
    std::string raw = req.get_header_value("Last-Event-ID");
    if (raw.empty() && req.has_param("last_event_id")) raw = req.get_param_value("last_event_id");
    if (!raw.empty()) {
      const auto id = parse_event_id(raw);
      if (!id) return respond_error(res, 400, "Last-Event-ID must be a non-negative integer");
      last = *id;
    }

    std::uint64_t epoch;
    std::size_t cursor = 0;
    {
      std::lock_guard lock(s.m);
      touch(s);
      epoch = s.epoch;
      if (last)
        while (cursor < s.events.size() && s.events[cursor].id <= *last) ++cursor;
    }
    struct Stream {
      std::shared_ptr<Session> session;
      std::uint64_t epoch;
      std::size_t cursor;
      bool done = false;
    };
    auto st = std::make_shared<Stream>(Stream{find(s.id), epoch, cursor});
    if (!st->session) return respond_error(res, 404, "unknown session");

    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [this, st](std::size_t, httplib::DataSink& sink) {
      auto& sess = *st->session;
      if (st->done) {
        sink.done();
        return true;
      }
      std::vector<Event> batch;
      bool finished = false;
      {
        std::unique_lock lock(sess.m);
        sess.cv.wait_for(lock, kKeepAlive, [&] {
          return stopping || sess.closed || sess.epoch != st->epoch || st->cursor < sess.events.size();
        });
        if (sess.epoch == st->epoch)
          while (st->cursor < sess.events.size()) batch.push_back(sess.events[st->cursor++]);
        finished = stopping || sess.closed || sess.epoch != st->epoch ||
                   (!batch.empty() && batch.back().type == "terminal");
      }
      std::string out;
      for (const auto& e : batch) out += sse_frame(e);
      if (out.empty() && !finished) out = ": keep-alive\n\n";
      if (!out.empty() && !sink.write(out.data(), out.size())) return false;
      if (finished) {
        st->done = true;
        sink.done();
      }
      return true;
    });
  }

  void shutdown() {
    stopping = true;
    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(store_m);
      for (auto& [id, s] : sessions) all.push_back(s);
    }
    for (auto& s : all) s->cv.notify_all();
    server.stop();
    for (auto& s : all) {
      s->stop_requested = true;
      s->cv.notify_all();
      std::lock_guard control(s->control);
      s->join_runner();
    }
  }
};

Service::Service(ServiceConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}

Service::~Service() { stop(); }

bool Service::listen() { return impl_->server.listen(impl_->cfg.host, impl_->cfg.port); }

int Service::bind() {
  if (impl_->cfg.port == 0) return impl_->server.bind_to_any_port(impl_->cfg.host);
  return impl_->server.bind_to_port(impl_->cfg.host, impl_->cfg.port) ? impl_->cfg.port : -1;
}

bool Service::listen_after_bind() { return impl_->server.listen_after_bind(); }

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

void Service::stop() {
  if (impl_ && !impl_->stopping.exchange(true)) impl_->shutdown();
}

const ServiceConfig& Service::config() const noexcept { return impl_->cfg; }

std::size_t Service::session_count() const {
  std::lock_guard lock(impl_->store_m);
  return impl_->sessions.size();
}

}  // namespace latentdrag::service
