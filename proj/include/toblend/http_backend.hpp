#pragma once

// HTTP client for the backend wire protocol:
//
//   GET  /v1/info      -> BackendDescriptor fields
//   POST /v1/complete  {text, n_tokens, mode, temperature, top_k, seed}
//                      -> {continuation_text, continuation_tokens}
//   POST /v1/score     {text} -> {tokenizer_id, tokens: [TokenStat...]}
//   POST /v1/tokenize  {text} -> {tokens: [string...]}
//   POST /v1/chat      {prompt} -> {reply}
//
// Application errors come back as a non-2xx status with a body of the form
// {"error": {"code": "...", "message": "...", "max_context": N}} and are never
// retried. Transport failures are retried with exponential backoff.

#include <httplib.h>

#include <chrono>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>

#include "toblend/backend.hpp"
#include "toblend/wire.hpp"

namespace toblend {

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{250};
};

struct HttpOptions {
    RetryPolicy retry{};
    int max_in_flight = 4;
    std::chrono::seconds timeout{120};
    std::string bearer_token;  // forwarded as "Authorization: Bearer ..." when set
};

struct Url {
    std::string scheme_host_port;  // e.g. http://127.0.0.1:8080
    std::string base_path;         // prefix prepended to every route, no trailing '/'
};

inline Url split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw PreconditionError("endpoint is not a URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    Url u;
    u.scheme_host_port = url.substr(0, path_start);
    if (path_start != std::string::npos) {
        u.base_path = url.substr(path_start);
        while (!u.base_path.empty() && u.base_path.back() == '/') u.base_path.pop_back();
    }
    return u;
}

/// Posts JSON to an endpoint under the retry policy. Returns the parsed body of
/// a 2xx response; throws BackendError / ContextOverflowError otherwise.
class HttpJsonClient {
public:
    HttpJsonClient(std::string endpoint, HttpOptions opts = {})
        : endpoint_(std::move(endpoint)), url_(split_url(endpoint_)), opts_(std::move(opts)),
          slots_(std::max(1, opts_.max_in_flight)) {}

    const std::string& endpoint() const noexcept { return endpoint_; }

    json get(const std::string& route) const { return request("GET", route, nullptr); }
    json post(const std::string& route, const json& body) const {
        return request("POST", route, &body);
    }

private:
    struct Slot {
        std::counting_semaphore<>& s;
        explicit Slot(std::counting_semaphore<>& sem) : s(sem) { s.acquire(); }
        ~Slot() { s.release(); }
    };

    json request(const char* method, const std::string& route, const json* body) const {
        Slot slot(slots_);
        const std::string path = url_.base_path + route;
        const std::string payload = body ? body->dump() : std::string{};
        auto backoff = opts_.retry.initial_backoff;
        const int attempts = std::max(1, opts_.retry.attempts);
        std::string last_error;
        for (int attempt = 1; attempt <= attempts; ++attempt) {
            httplib::Client cli(url_.scheme_host_port);
            cli.set_connection_timeout(opts_.timeout);
            cli.set_read_timeout(opts_.timeout);
            cli.set_write_timeout(opts_.timeout);
            httplib::Headers headers;
            if (!opts_.bearer_token.empty())
                headers.emplace("Authorization", "Bearer " + opts_.bearer_token);
            auto res = std::string_view(method) == "GET"
                           ? cli.Get(path, headers)
                           : cli.Post(path, headers, payload, "application/json");
            if (res) return handle(*res, route);
            last_error = httplib::to_string(res.error());
            if (attempt < attempts) {
                std::this_thread::sleep_for(backoff);
                backoff *= 2;
            }
        }
        throw BackendError(endpoint_ + route + ": transport failure after " +
                               std::to_string(attempts) + " attempts (" + last_error + ")",
                           true, attempts);
    }

    json handle(const httplib::Response& res, const std::string& route) const {
        if (res.status >= 200 && res.status < 300) return wire::parse(res.body);
        std::string code = "http_" + std::to_string(res.status);
        std::string message = res.body;
        std::optional<int> max_context;
        try {
            auto j = json::parse(res.body);
            if (j.contains("error") && j["error"].is_object()) {
                const auto& e = j["error"];
                code = e.value("code", code);
                message = e.value("message", message);
                if (e.contains("max_context") && e["max_context"].is_number_integer())
                    max_context = e["max_context"].get<int>();
            }
        } catch (const json::exception&) {
        }
        const std::string what = endpoint_ + route + ": " + code + ": " + message;
        if (code == "context_overflow") throw ContextOverflowError(what, max_context.value_or(-1));
        throw BackendError(what, false);
    }

    std::string endpoint_;
    Url url_;
    HttpOptions opts_;
    mutable std::counting_semaphore<> slots_;
};

/// Backend reached over the wire protocol. The descriptor is fetched from
/// GET /v1/info on first use and cached.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(std::string endpoint, HttpOptions opts = {})
        : client_(std::move(endpoint), std::move(opts)) {}

    /// Overrides the backend_id reported by the server (pool configs name
    /// their members independently of the server's own id).
    HttpBackend& with_backend_id(std::string id) {
        id_override_ = std::move(id);
        return *this;
    }

    BackendDescriptor describe() const override {
        std::lock_guard lock(mu_);
        if (!desc_) {
            auto d = client_.get("/v1/info").get<BackendDescriptor>();
            d.endpoint = client_.endpoint();
            if (id_override_) d.backend_id = *id_override_;
            desc_ = std::move(d);
        }
        return *desc_;
    }

    CompleteResponse complete(const CompleteRequest& req) const override {
        return client_.post("/v1/complete", json(req)).get<CompleteResponse>();
    }

    ScoreResponse score(const ScoreRequest& req) const override {
        return client_.post("/v1/score", json{{"text", req.text}}).get<ScoreResponse>();
    }

    std::vector<std::string> tokenize(std::string_view text) const override {
        auto j = client_.post("/v1/tokenize", json{{"text", text}});
        return wire::field<std::vector<std::string>>(j, "tokens");
    }

    std::string chat(std::string_view prompt) const override {
        auto j = client_.post("/v1/chat", json{{"prompt", prompt}});
        return wire::field<std::string>(j, "reply");
    }

private:
    HttpJsonClient client_;
    std::optional<std::string> id_override_;
    mutable std::mutex mu_;
    mutable std::optional<BackendDescriptor> desc_;
};

}  // namespace toblend
