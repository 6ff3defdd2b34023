#include "hfkit/http.hpp"

#include <cstdlib>

#include <httplib.h>

namespace hfkit {

ListenAddress ListenAddress::parse(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw ConfigError("listen address must be host:port");
    ListenAddress a;
    if (colon > 0) a.host = text.substr(0, colon);
    try {
        std::size_t used = 0;
        a.port = std::stoi(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw ConfigError("invalid port in listen address '" + text + "'");
    }
    if (a.port < 0 || a.port > 65535) throw ConfigError("port out of range in '" + text + "'");
    return a;
}

ListenAddress ListenAddress::from_env() {
    const char* v = std::getenv("HFKIT_LISTEN");
    return v != nullptr && *v != '\0' ? parse(v) : ListenAddress{};
}

HttpServer::HttpServer(const ApiRouter& router, std::optional<std::filesystem::path> static_dir)
    : router_(router), server_(std::make_unique<httplib::Server>()) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        QueryParams query;
        for (const auto& [k, v] : req.params) query[k] = v;
        const auto out = router_.handle(req.method, req.path, query, req.body);
        res.status = out.status;
        res.set_content(out.body, out.content_type);
    };
    server_->Get(R"(/api/.*)", handler);
    server_->Post(R"(/api/.*)", handler);
    if (static_dir && std::filesystem::is_directory(*static_dir)) server_->set_mount_point("/", static_dir->string());
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const ListenAddress& address) {
    int port = address.port;
    if (port == 0) {
        port = server_->bind_to_any_port(address.host);
    } else if (!server_->bind_to_port(address.host, port)) {
        port = -1;
    }
    if (port < 0) throw InvalidState("cannot listen on " + address.host + ":" + std::to_string(address.port));
    return port;
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() {
    if (server_) server_->stop();
}

HttpClient::HttpClient(const std::string& host, int port) : client_(std::make_unique<httplib::Client>(host, port)) {
    client_->set_read_timeout(300, 0);
}

HttpClient::~HttpClient() = default;

ApiResponse HttpClient::call(const std::string& method, const std::string& path, const QueryParams& query,
                             const std::string& body) {
    std::string target = path;
    if (!query.empty()) {
        httplib::Params params(query.begin(), query.end());
        target = httplib::append_query_params(path, params);
    }
    httplib::Result res = method == "POST" ? client_->Post(target, body, "application/json") : client_->Get(target);
    if (!res) throw InvalidState("request " + method + " " + path + " failed: " + httplib::to_string(res.error()));
    ApiResponse out;
    out.status = res->status;
    out.body = res->body;
    out.content_type = res->get_header_value("Content-Type");
    return out;
}

}  // namespace hfkit
