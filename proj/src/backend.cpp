#include "attnprompt/backend.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <regex>
#include <thread>

#include <httplib.h>

#include "attnprompt/error.hpp"

namespace attnprompt {

std::string Endpoint::origin() const { return scheme + "://" + host + ":" + std::to_string(port); }

Endpoint parse_endpoint(const std::string& url) {
    static const std::regex re(R"(^(https?)://([A-Za-z0-9._~\-]+|\[[0-9A-Fa-f:.]+\])(?::(\d{1,5}))?(/[^\s?#]*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) fail(ErrorKind::usage, "malformed backend URL '" + url + "'");
    Endpoint e;
    e.scheme = m[1].str();
    e.host = m[2].str();
    e.port = m[3].matched ? std::stoi(m[3].str()) : (e.scheme == "https" ? 443 : 80);
    if (e.port < 1 || e.port > 65535) fail(ErrorKind::usage, "backend URL port out of range");
    e.base_path = m[4].matched ? m[4].str() : "";
    while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
    return e;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t v = bytes[i] << 16;
        if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? table[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

nlohmann::json chat_request_body(const std::string& model, const std::string& prompt,
                                  std::span<const PngBytes> images) {
    nlohmann::json encoded = nlohmann::json::array();
    for (const auto& png : images) encoded.push_back(base64_encode(png));
    return {{"model", model}, {"prompt", prompt}, {"images", std::move(encoded)}};
}

HttpBackend::HttpBackend(BackendSpec spec) : spec_(std::move(spec)), endpoint_(parse_endpoint(spec_.endpoint)) {}

Attempt HttpBackend::send(const std::string& prompt, std::span<const PngBytes> images) {
    Attempt a;
    httplib::Client client(endpoint_.origin());
    const auto secs = static_cast<time_t>(spec_.timeout_seconds);
    const auto usecs = static_cast<time_t>((spec_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (!spec_.api_key_env.empty()) {
        if (const char* key = std::getenv(spec_.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }
    const std::string body = chat_request_body(spec_.model, prompt, images).dump();
    auto res = client.Post(endpoint_.base_path + "/v1/chat", headers, body, "application/json");
    if (!res) {
        a.error = "transport error: " + httplib::to_string(res.error());
        return a;
    }
    if (res->status != 200) {
        a.error = "HTTP status " + std::to_string(res->status);
        return a;
    }
    try {
        const auto j = nlohmann::json::parse(res->body);
        a.text = j.at("text").get<std::string>();
        a.ok = true;
    } catch (const nlohmann::json::exception& e) {
        a.error = std::string("malformed response body: ") + e.what();
    }
    return a;
}

namespace {
std::mutex log_mutex;
}

QueryOutcome query_backend(Backend& backend, const std::string& prompt, std::span<const PngBytes> images,
                           const RetryPolicy& policy) {
    QueryOutcome out;
    constexpr int kMaxAttempts = 2;
    for (int attempt = 1; attempt <= kMaxAttempts; ++attempt) {
        if (attempt > 1) {
            out.retry_used = true;
            std::this_thread::sleep_for(policy.backoff);
        }
        ++out.attempts;
        Attempt a = backend.send(prompt, images);
        if (a.ok) {
            out.text = std::move(a.text);
            return out;
        }
        {
            std::lock_guard lock(log_mutex);
            std::cerr << "[backend] attempt " << attempt << " failed: " << a.error << '\n';
        }
        out.errors.push_back(std::move(a.error));
    }
    out.text.clear();
    return out;
}

QueryOutcome query_backend(const BackendSpec& spec, const std::string& prompt, std::span<const PngBytes> images,
                           const RetryPolicy& policy) {
    HttpBackend backend(spec);
    return query_backend(backend, prompt, images, policy);
}

}  // namespace attnprompt
