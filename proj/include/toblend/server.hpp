#pragma once

// Mounts any in-process Backend behind the wire protocol routes.

#include <httplib.h>

#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include "toblend/backend.hpp"
#include "toblend/wire.hpp"

namespace toblend {

class BackendServer {
public:
    explicit BackendServer(BackendPtr backend) : backend_(std::move(backend)) { mount(); }

    BackendServer(const BackendServer&) = delete;
    BackendServer& operator=(const BackendServer&) = delete;

    ~BackendServer() { stop(); }

    /// Binds to host:port (port 0 picks a free port) and returns the port.
    int bind(const std::string& host, int port) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
        return bound;
    }

    /// Serves until stop() is called. Requires a prior bind().
    void listen() { server_.listen_after_bind(); }

    /// Binds and serves on a background thread; returns once accepting.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        const int bound = bind(host, port);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return bound;
    }

    void stop() {
        if (server_.is_running()) server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    httplib::Server& http() noexcept { return server_; }

private:
    static void send_error(httplib::Response& res, int status, const std::string& code,
                           const std::string& message, int max_context = -1) {
        json e{{"code", code}, {"message", message}};
        if (max_context >= 0) e["max_context"] = max_context;
        res.status = status;
        res.set_content(json{{"error", e}}.dump(), "application/json");
    }

    template <class F>
    void route(const std::string& path, F&& handler) {
        server_.Post(path, [this, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                auto body = wire::parse(req.body);
                res.set_content(handler(body).dump(), "application/json");
            } catch (const ContextOverflowError& e) {
                send_error(res, 413, "context_overflow", e.what(), e.max_context());
            } catch (const PreconditionError& e) {
                const bool unsupported = std::string(e.what()).find("lacks the") != std::string::npos;
                send_error(res, unsupported ? 501 : 400, unsupported ? "unsupported" : "bad_request",
                           e.what());
            } catch (const ProtocolError& e) {
                send_error(res, 400, "bad_request", e.what());
            } catch (const BackendError& e) {
                send_error(res, 422, "backend_error", e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, "internal", e.what());
            }
        });
    }

    void mount() {
        server_.Get("/v1/info", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(json(backend_->describe()).dump(), "application/json");
        });
        route("/v1/complete", [this](const json& body) {
            return json(toblend::complete(*backend_, body.get<CompleteRequest>()));
        });
        route("/v1/score", [this](const json& body) {
            ScoreRequest req{wire::field<std::string>(body, "text")};
            const auto st = toblend::score(*backend_, req);
            return json(ScoreResponse{st.tokenizer_id, st.tokens});
        });
        route("/v1/tokenize", [this](const json& body) {
            return json{{"tokens", toblend::tokenize(*backend_, wire::field<std::string>(body, "text"))}};
        });
        route("/v1/chat", [this](const json& body) {
            return json{{"reply", toblend::chat(*backend_, wire::field<std::string>(body, "prompt"))}};
        });
    }

    BackendPtr backend_;
    httplib::Server server_;
    std::thread thread_;
};

}  // namespace toblend
