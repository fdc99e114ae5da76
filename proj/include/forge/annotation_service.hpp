#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "forge/annotation.hpp"

namespace httplib {
class Server;
}

namespace forge::annotation {

/// HTTP JSON front end over an AnnotationStore.
///
///   GET  /api/batch?task=plausibility|typicality&n=N&worker=ID
///   POST /api/vote      {assertion_id, worker_id, task, value}
///   GET  /api/progress
///   GET  /api/labels    labels.jsonl rows as a JSON array
///
/// When a static directory is given it is mounted at "/" for the browser UI.
class AnnotationServer {
  public:
    explicit AnnotationServer(AnnotationStore& store,
                              std::optional<std::filesystem::path> static_dir = std::nullopt);
    ~AnnotationServer();

    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Binds to host:port (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void listen();
    void stop();

  private:
    AnnotationStore& store_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace forge::annotation
