#include <httplib.h>

#include "crimelink/service.hpp"

namespace crimelink {

struct HttpServer::Impl {
    explicit Impl(Service& s) : service(s) {}
    Service& service;
    httplib::Server server;
    std::thread thread;
};

namespace {

void send(httplib::Response& res, const Response& r) {
    res.status = r.status;
    if (r.content_type.rfind("text/plain", 0) == 0)
        res.set_content(r.text, r.content_type);
    else
        res.set_content(r.body.dump(), "application/json");
}

} // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
    auto& s = impl_->server;
    Service& svc = service;
    for (const std::string prefix : {"/api/v1", "/api"}) {
        s.Get(prefix + "/schema", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.get_schema()); });
        s.Post(prefix + "/records", [&svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc.register_record(req.body));
        });
        s.Get(prefix + R"(/records/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc.get_record(req.matches[1]));
        });
        s.Post(prefix + "/search", [&svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc.search(req.body));
        });
        s.Get(prefix + "/analyses", [&svc](const httplib::Request&, httplib::Response& res) {
            send(res, svc.list_analyses());
        });
        s.Post(prefix + R"(/analyses/([A-Za-z0-9_\-]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc.analyze(req.matches[1], req.body));
        });
        s.Get(prefix + "/alerts", [&svc](const httplib::Request& req, httplib::Response& res) {
            std::optional<std::string> since;
            if (req.has_param("since"))
                since = req.get_param_value("since");
            send(res, svc.alerts(since));
        });
        s.Get(prefix + R"(/reports/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc.report(req.matches[1]));
        });
    }
    s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string message = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            message = e.what();
        } catch (...) {
        }
        res.status = 500;
        res.set_content(nlohmann::json{{"error", "internal"}, {"message", message}}.dump(), "application/json");
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
    auto& s = impl_->server;
    int bound = port;
    if (port == 0) {
        bound = s.bind_to_any_port(host);
    } else if (!s.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0)
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([&s] { s.listen_after_bind(); });
    s.wait_until_ready();
    return bound;
}

void HttpServer::stop() {
    if (!impl_)
        return;
    impl_->server.stop();
    if (impl_->thread.joinable())
        impl_->thread.join();
}

} // namespace crimelink
