#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace attnprompt {

using PngBytes = std::vector<std::uint8_t>;

/// An LVLM endpoint reachable over the chat wire protocol.
struct BackendSpec {
    std::string endpoint;  // e.g. http://127.0.0.1:8080 or https://host/prefix
    std::string model;
    double timeout_seconds = 60.0;
    std::string api_key_env;  // empty: no Authorization header
};

struct Endpoint {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string base_path;  // without trailing slash

    std::string origin() const;
};

/// Throws ErrorKind::usage for anything that is not http(s)://host[:port][/path].
Endpoint parse_endpoint(const std::string& url);

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// {"model": ..., "prompt": ..., "images": [base64 PNG, ...]}
nlohmann::json chat_request_body(const std::string& model, const std::string& prompt, std::span<const PngBytes> images);

struct Attempt {
    bool ok = false;
    std::string text;
    std::string error;
};

/// One request/response exchange, no retries. Implementations must be safe to
/// call from several threads at once.
class Backend {
public:
    virtual ~Backend() = default;
    virtual Attempt send(const std::string& prompt, std::span<const PngBytes> images) = 0;
};

/// POST {endpoint}/v1/chat; success is HTTP 200 with a JSON body {"text": string}.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(BackendSpec spec);
    Attempt send(const std::string& prompt, std::span<const PngBytes> images) override;

private:
    BackendSpec spec_;
    Endpoint endpoint_;
};

struct RetryPolicy {
    std::chrono::milliseconds backoff{2000};
};

struct QueryOutcome {
    std::string text;  // empty when both attempts failed
    bool retry_used = false;
    int attempts = 0;
    std::vector<std::string> errors;
};

/// At most two attempts: on failure wait `backoff`, retry once, then give up
/// with an empty response. Transport errors are logged to stderr.
QueryOutcome query_backend(Backend& backend, const std::string& prompt, std::span<const PngBytes> images,
                           const RetryPolicy& policy = {});

QueryOutcome query_backend(const BackendSpec& spec, const std::string& prompt, std::span<const PngBytes> images,
                           const RetryPolicy& policy = {});

}  // namespace attnprompt
