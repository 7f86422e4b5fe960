#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "latentdrag/generator/generator.hpp"

namespace latentdrag::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0: pick a free port
  std::size_t session_cap = 32;
  std::size_t frame_stride = 5;  // inline frame every k steps
  generator::GeneratorConfig generator;

  // Overrides from LATENTDRAG_BIND (host:port), LATENTDRAG_SESSION_CAP and
  // LATENTDRAG_FRAME_STRIDE. Throws BadConfig on malformed values.
  static ServiceConfig from_env(ServiceConfig base);
};

// HTTP front end over an in-memory session store.
//
//   POST   /sessions                 create; returns id, image, generator metadata
//   GET    /sessions/{id}            state and config
//   POST   /sessions/{id}/config     drag config and point pairs
//   GET    /sessions/{id}/image      current render and point overlay
//   POST   /sessions/{id}/run        start the loop in the background
//   POST   /sessions/{id}/step       advance one iteration
//   POST   /sessions/{id}/pause      stop at the next step boundary (also /cancel)
//   GET    /sessions/{id}/events     server-sent events, honours Last-Event-ID
//   GET    /sessions/{id}/trace      persisted trace as JSON lines
//   DELETE /sessions/{id}
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and serves until stop(). Returns false if the address is unusable.
  bool listen();
  // Binds now and returns the port; serve with listen_after_bind().
  int bind();
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

  const ServiceConfig& config() const noexcept;
  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace latentdrag::service
