#include "forge/mock_backend.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <fstream>

namespace forge::mock {

TailPool load_tail_pool(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FatalInputError("cannot read " + path.string());
    TailPool pool;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw FatalInputError(path.string() + ": expected relation<TAB>sentence");
        pool.tails[generation::relation_from_name(trim(line.substr(0, tab)))].push_back(trim(line.substr(tab + 1)));
    }
    return pool;
}

generation::Relation relation_of_prompt(std::string_view prompt) {
    const std::string p = normalize_ws(prompt);
    std::size_t best = 0;
    auto rel = generation::Relation::Open;
    for (const auto& info : generation::relation_table()) {
        const auto& c = info.continuation;
        if (c.empty() || c.size() <= best || p.size() < c.size()) continue;
        if (p.compare(p.size() - c.size(), c.size(), c) == 0) {
            best = c.size();
            rel = info.relation;
        }
    }
    return rel;
}

std::vector<std::string> complete(const TailPool& pool, const std::string& prompt, std::size_t n) {
    auto it = pool.tails.find(relation_of_prompt(prompt));
    std::vector<std::string> out;
    if (it == pool.tails.end() || it->second.empty()) {
        out.assign(n, "...");
        return out;
    }
    const auto& tails = it->second;
    const auto h = fnv1a64(prompt);
    for (std::size_t i = 0; i < n; ++i) out.push_back(tails[(h + i * 7) % tails.size()] + " It was a good choice.");
    return out;
}

population::Scores score(std::string_view text) {
    const auto a = fnv1a64(std::string(text) + "#plausibility");
    const auto b = fnv1a64(std::string(text) + "#typicality");
    return {static_cast<double>(a % 1001) / 1000.0, static_cast<double>(b % 1001) / 1000.0};
}

namespace {
void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}
}  // namespace

MockServer::MockServer(TailPool pool) : pool_(std::move(pool)), server_(std::make_unique<httplib::Server>()) {
    server_->Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.contains("prompt")) return reply(res, 400, {{"error", "bad request"}});
        const auto n = body.value("n", 1);
        reply(res, 200, {{"texts", complete(pool_, body["prompt"].get<std::string>(), static_cast<std::size_t>(n))}});
    });
    server_->Post("/v1/score", [](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.contains("texts")) return reply(res, 400, {{"error", "bad request"}});
        json plau = json::array(), typ = json::array();
        for (const auto& t : body["texts"]) {
            const auto s = score(t.get<std::string>());
            plau.push_back(s.plausibility);
            typ.push_back(s.typicality);
        }
        reply(res, 200, {{"plausibility", plau}, {"typicality", typ}});
    });
}

MockServer::~MockServer() { stop(); }

int MockServer::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
}

void MockServer::listen() { server_->listen_after_bind(); }

void MockServer::stop() {
    if (server_ && server_->is_running()) server_->stop();
}

}  // namespace forge::mock
