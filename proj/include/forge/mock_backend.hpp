#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "forge/generation.hpp"
#include "forge/population.hpp"

namespace httplib {
class Server;
}

namespace forge::mock {

/// Canned tails per relation: "relation \t sentence" rows.
struct TailPool {
    std::map<generation::Relation, std::vector<std::string>> tails;
};

TailPool load_tail_pool(const std::filesystem::path& path);

/// Relation whose continuation ends the prompt (Open when none does).
generation::Relation relation_of_prompt(std::string_view prompt);

/// n completions for a prompt: pool tails picked by a hash of the prompt,
/// each followed by a second sentence that post-processing drops.
std::vector<std::string> complete(const TailPool& pool, const std::string& prompt, std::size_t n);

/// Scores that depend only on the text, spread over [0, 1].
population::Scores score(std::string_view text);

/// Offline stand-in for the generation and scoring services.
///
///   POST /v1/generate {prompt, n} -> {texts}
///   POST /v1/score    {texts}     -> {plausibility, typicality}
class MockServer {
  public:
    explicit MockServer(TailPool pool);
    ~MockServer();

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    int bind(const std::string& host, int port);
    void listen();
    void stop();

  private:
    TailPool pool_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace forge::mock
