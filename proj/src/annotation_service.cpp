#include "forge/annotation_service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace forge::annotation {

namespace {
void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}
}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, std::optional<std::filesystem::path> static_dir)
    : store_(store), server_(std::make_unique<httplib::Server>()) {
    auto& srv = *server_;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Get("/api/batch", [this](const httplib::Request& req, httplib::Response& res) {
        auto task = task_from_name(req.get_param_value("task"));
        if (!task) return reply(res, 400, {{"error", "unknown task"}});
        const std::string worker = req.get_param_value("worker");
        std::size_t n = 1;
        if (req.has_param("n")) {
            try {
                n = std::stoul(req.get_param_value("n"));
            } catch (const std::exception&) {
                return reply(res, 400, {{"error", "bad n"}});
            }
        }
        auto cards = store_.batch(*task, n, worker);
        reply(res, 200, {{"cards", cards}});
    });

    srv.Post("/api/vote", [this](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body, nullptr, false);
        Vote v;
        try {
            if (body.is_discarded()) throw DomainError("malformed JSON");
            v = vote_from_json(body);
        } catch (const std::exception& e) {
            return reply(res, 400, {{"accepted", false}, {"reason", "malformed submission"}});
        }
        auto result = store_.vote(v);
        if (result.accepted) return reply(res, 200, {{"accepted", true}});
        const int status = result.reason == "duplicate" ? 409 : result.reason == "storage failure" ? 500 : 422;
        reply(res, status, {{"accepted", false}, {"reason", result.reason}});
    });

    srv.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
        json out = json::object();
        for (Task t : {Task::Plausibility, Task::Typicality}) {
            auto p = store_.progress(t);
            out[std::string(task_name(t))] = {
                {"votes", p.votes}, {"items", p.items}, {"complete_items", p.complete_items}};
        }
        auto agreement = store_.plausibility_agreement();
        out["agreement"] = {{"pairwise", agreement.pairwise_agreement},
                            {"fleiss_kappa", agreement.fleiss_kappa},
                            {"n_items", agreement.n_items}};
        reply(res, 200, out);
    });

    srv.Get("/api/labels", [this](const httplib::Request&, httplib::Response& res) {
        json rows = json::array();
        for (const auto& l : store_.labels()) rows.push_back(to_json(l));
        reply(res, 200, rows);
    });

    if (static_dir && !srv.set_mount_point("/", static_dir->string()))
        spdlog::warn("static directory {} not mounted", static_dir->string());
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
}

void AnnotationServer::listen() { server_->listen_after_bind(); }

void AnnotationServer::stop() {
    if (server_ && server_->is_running()) server_->stop();
}

}  // namespace forge::annotation
