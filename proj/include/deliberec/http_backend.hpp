#pragma once

#if defined(DELIBEREC_WITH_OPENSSL) && !defined(CPPHTTPLIB_OPENSSL_SUPPORT)
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include <httplib.h>

#include "deliberec/backend.hpp"
#include "deliberec/error.hpp"
#include "deliberec/io.hpp"

namespace deliberec {

struct HttpBackendConfig {
    std::string base_url;               ///< e.g. "https://api.openai.com/v1" or "http://127.0.0.1:8000/v1"
    std::string model;
    std::string api_key_env = "DELIBEREC_API_KEY";
    int max_attempts = 3;
    double initial_backoff_seconds = 1.0;  ///< doubled after each failed attempt
    double timeout_seconds = 120.0;
    std::size_t max_in_flight = 4;
    bool supports_logprobs = true;
    bool debug = false;  ///< log request/response bodies to stderr (credentials never logged)
    /// Send vLLM-style continue_final_message when the last message is a
    /// partial assistant reply. Disable for servers that reject unknown fields.
    bool continue_final_message = true;

    static HttpBackendConfig from_json(const json& j) {
        HttpBackendConfig c;
        c.base_url = j.at("base_url").get<std::string>();
        c.model = j.at("model").get<std::string>();
        c.api_key_env = j.value("api_key_env", c.api_key_env);
        c.max_attempts = j.value("max_attempts", c.max_attempts);
        c.initial_backoff_seconds = j.value("initial_backoff_s", c.initial_backoff_seconds);
        c.timeout_seconds = j.value("timeout_s", c.timeout_seconds);
        c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
        c.supports_logprobs = j.value("supports_logprobs", c.supports_logprobs);
        c.debug = j.value("debug", c.debug);
        c.continue_final_message = j.value("continue_final_message", c.continue_final_message);
        return c;
    }
};

/// Request body for an OpenAI-style /chat/completions endpoint.
inline json chat_request_body(const std::string& model, const CompletionRequest& r,
                              bool continue_final_message = true) {
    json body{{"model", model},
              {"messages", messages_to_json(r.prompt.messages)},
              {"temperature", r.temperature},
              {"max_tokens", r.max_tokens}};
    if (r.want_logprobs) {
        body["logprobs"] = true;
        body["top_logprobs"] = r.logprob_top_k;
    }
    if (continue_final_message && !r.prompt.messages.empty() && r.prompt.messages.back().role == Role::assistant) {
        body["continue_final_message"] = true;
        body["add_generation_prompt"] = false;
    }
    return body;
}

/// Parses a /chat/completions reply. Anything structurally unexpected is a
/// protocol error; nothing partial is returned.
inline CompletionResponse parse_chat_response(const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorKind::protocol, "endpoint reply is not a JSON object");
    try {
        const auto& choices = j.at("choices");
        if (!choices.is_array() || choices.empty()) fail(ErrorKind::protocol, "endpoint reply has no choices");
        const auto& choice = choices.at(0);
        CompletionResponse out;
        const auto& content = choice.at("message").at("content");
        out.text = content.is_null() ? std::string{} : content.get<std::string>();
        if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
            if (auto c = lp->find("content"); c != lp->end() && c->is_array() && !c->empty()) {
                std::map<std::string, double> alts;
                for (const auto& alt : c->at(0).at("top_logprobs"))
                    alts[alt.at("token").get<std::string>()] = alt.at("logprob").get<double>();
                const auto& first = c->at(0);
                alts.try_emplace(first.at("token").get<std::string>(), first.at("logprob").get<double>());
                out.first_token_alternatives = std::move(alts);
            }
        }
        if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
            out.usage.prompt_tokens = u->value("prompt_tokens", std::size_t{0});
            out.usage.generated_tokens = u->value("completion_tokens", std::size_t{0});
        } else {
            out.usage.generated_tokens = count_words(out.text);
        }
        return out;
    } catch (const json::exception& e) {
        fail(ErrorKind::protocol, std::string("malformed endpoint reply: ") + e.what());
    }
}

class HttpBackend final : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)), limiter_(config_.max_in_flight) {
        require(config_.max_attempts >= 1, "max_attempts must be >= 1");
        auto scheme_end = config_.base_url.find("://");
        require(scheme_end != std::string::npos, "base_url needs a scheme: " + config_.base_url);
        auto path_start = config_.base_url.find('/', scheme_end + 3);
        origin_ = config_.base_url.substr(0, path_start);
        path_ = path_start == std::string::npos ? std::string{} : config_.base_url.substr(path_start);
        while (!path_.empty() && path_.back() == '/') path_.pop_back();
        path_ += "/chat/completions";
        if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
    }

    [[nodiscard]] bool supports_logprobs() const override { return config_.supports_logprobs; }
    [[nodiscard]] std::string model_tag() const override { return config_.model; }
    [[nodiscard]] const std::string& endpoint_path() const { return path_; }

private:
    CompletionResponse do_complete(const CompletionRequest& request) override {
        InFlightLimiter::Slot slot(limiter_);
        const auto body = chat_request_body(config_.model, request, config_.continue_final_message).dump();
        if (config_.debug) std::cerr << "[http] POST " << origin_ << path_ << " " << body << "\n";
        double backoff = config_.initial_backoff_seconds;
        std::string last_error;
        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            httplib::Client client(origin_);
            const auto to = std::chrono::duration<double>(config_.timeout_seconds);
            client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
            client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
            const auto start = std::chrono::steady_clock::now();
            auto res = client.Post(path_, headers, body, "application/json");
            const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (res && res->status == 200) {
                if (config_.debug) std::cerr << "[http] 200 " << res->body << "\n";
                auto out = parse_chat_response(res->body);
                out.latency_seconds = elapsed;
                return out;
            }
            if (res && res->status != 429 && res->status < 500)
                fail(ErrorKind::protocol, "endpoint returned HTTP " + std::to_string(res->status) + ": " +
                                              res->body.substr(0, 200));
            last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
            if (config_.debug) std::cerr << "[http] attempt " << attempt << " failed: " << last_error << "\n";
            if (attempt < config_.max_attempts && backoff > 0) {
                std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
                backoff *= 2;
            }
        }
        fail(ErrorKind::transport, "request failed after " + std::to_string(config_.max_attempts) +
                                       " attempts: " + last_error);
    }

    HttpBackendConfig config_;
    InFlightLimiter limiter_;
    std::string origin_;
    std::string path_;
    std::string api_key_;
};

} // namespace deliberec
