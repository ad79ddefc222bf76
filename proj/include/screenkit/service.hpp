#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "screenkit/pipeline.hpp"

namespace screenkit {

// Replaces credential material with "[redacted]": values of environment
// variables whose names look like secrets, bearer tokens and sk- style keys.
std::string scrub_credentials(std::string_view line);

struct ServiceOptions {
  std::filesystem::path runs_root = "runs";
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  ProviderFactory make_provider;                      // defaults to screenkit::make_provider
  std::function<void(const std::string&)> log_sink;  // defaults to stderr
};

// HTTP+JSON API under /v1:
//   POST /runs, GET /runs/{id}, POST /runs/{id}/labels,
//   GET /runs/{id}/results, GET /runs/{id}/metrics,
//   GET /runs/{id}/artifacts/{file}, GET /healthz
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Blocks serving on the calling thread until stop() is called elsewhere.
  void run();
  void stop();
  // Waits for every background run to finish.
  void wait_for_runs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace screenkit
