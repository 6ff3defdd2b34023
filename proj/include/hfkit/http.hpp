#pragma once

// Web transport for the API router, plus a matching client.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "hfkit/api.hpp"

namespace httplib {
class Server;
class Client;
}  // namespace httplib

namespace hfkit {

struct ListenAddress {
    std::string host = "127.0.0.1";
    int port = 8080;

    /// "host:port" or ":port". Throws ConfigError.
    static ListenAddress parse(const std::string& text);
    /// HFKIT_LISTEN, default 127.0.0.1:8080.
    static ListenAddress from_env();
};

class HttpServer {
public:
    /// Serves /api/* through `router`; when given, `static_dir` is mounted at /.
    HttpServer(const ApiRouter& router, std::optional<std::filesystem::path> static_dir = std::nullopt);
    ~HttpServer();

    /// Binds (port 0 picks a free port) and returns the bound port. Throws
    /// InvalidState when binding fails.
    int bind(const ListenAddress& address);
    /// Blocks until stop().
    void run();
    void stop();

private:
    const ApiRouter& router_;
    std::unique_ptr<httplib::Server> server_;
};

class HttpClient : public ApiClient {
public:
    HttpClient(const std::string& host, int port);
    ~HttpClient() override;

    ApiResponse call(const std::string& method, const std::string& path, const QueryParams& query,
                     const std::string& body) override;

private:
    std::unique_ptr<httplib::Client> client_;
};

}  // namespace hfkit
