#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "deliberec/http_backend.hpp"
#include "deliberec/mock_backend.hpp"

using namespace deliberec;

namespace {

RenderedPrompt prompt(PromptFamily f, const std::string& text, const std::string& user = "u",
                      const std::string& item = "i") {
    RenderedPrompt p;
    p.family = f;
    p.messages = {{Role::user, text}};
    p.metadata = {{"user_id", user}, {"item_id", item}};
    return p;
}

CompletionRequest request(PromptFamily f, const std::string& text = "hello") {
    CompletionRequest r;
    r.prompt = prompt(f, text);
    return r;
}

MockBackend mock(const std::string& script) { return MockBackend(MockScript::from_json(json::parse(script))); }

} // namespace

TEST(Mock, PassthroughByFamily) {
    auto m = mock(R"({"rules":[{"match":{"family":"summarizer"},"responses":[{"text":"Positive Aspects: X"}]}]})");
    EXPECT_EQ(m.complete(request(PromptFamily::summarizer)).text, "Positive Aspects: X");
    EXPECT_EQ(m.call_count(), 1u);
}

TEST(Mock, ScriptedAlternativesReturnedExactly) {
    auto m = mock(R"({"rules":[{"responses":[{"text":"4","alternatives":{"4":-0.2,"5":-1.7}}]}]})");
    auto r = request(PromptFamily::predictor);
    r.want_logprobs = true;
    auto resp = m.complete(r);
    ASSERT_TRUE(resp.first_token_alternatives);
    EXPECT_EQ(*resp.first_token_alternatives, (std::map<std::string, double>{{"4", -0.2}, {"5", -1.7}}));
}

TEST(Mock, AlternativesOnlyWhenRequested) {
    auto m = mock(R"({"rules":[{"repeat":true,"responses":[{"text":"4","alternatives":{"4":-0.2}}]}]})");
    EXPECT_FALSE(m.complete(request(PromptFamily::predictor)).first_token_alternatives);
}

TEST(Mock, CursorsArePerPair) {
    auto m = mock(R"({"rules":[{"responses":[{"text":"a"},{"text":"b"}]}]})");
    auto r1 = request(PromptFamily::reasoner);
    auto r2 = r1;
    r2.prompt.metadata["user_id"] = "other";
    EXPECT_EQ(m.complete(r1).text, "a");
    EXPECT_EQ(m.complete(r2).text, "a");
    EXPECT_EQ(m.complete(r1).text, "b");
    try {
        m.complete(r1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::script);
    }
}

TEST(Mock, NoMatchingRuleIsScriptError) {
    auto m = mock(R"({"rules":[{"match":{"family":"judge"},"responses":[{"text":"1"}]}]})");
    try {
        m.complete(request(PromptFamily::reasoner));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::script);
    }
}

TEST(Mock, ScriptedErrorsAndMatchers) {
    auto m = mock(R"({"rules":[
        {"match":{"hinted":true},"responses":[{"text":"hinted"}],"repeat":true},
        {"match":{"contains":"boom"},"responses":[{"error":"transport"}]},
        {"responses":[{"text":"plain"}],"repeat":true}]})");
    EXPECT_EQ(m.complete(request(PromptFamily::reasoner, "ok")).text, "plain");
    auto hinted = request(PromptFamily::reasoner, "ok");
    hinted.prompt = append_hint(hinted.prompt, 4);
    EXPECT_EQ(m.complete(hinted).text, "hinted");
    try {
        m.complete(request(PromptFamily::reasoner, "boom"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::transport);
    }
}

TEST(Mock, SyntheticOutputIsDeterministic) {
    const std::string script = R"({"seed":3,"rules":[{"synthetic":"reason"}]})";
    auto a = mock(script), b = mock(script);
    auto r = request(PromptFamily::reasoner, "some history");
    EXPECT_EQ(a.complete(r).text, b.complete(r).text);
    EXPECT_FALSE(a.complete(r).text.empty());
}

TEST(Mock, RequestValidation) {
    auto m = mock(R"({"rules":[{"responses":[{"text":"x"}],"repeat":true}]})");
    auto r = request(PromptFamily::reasoner);
    r.temperature = -1;
    EXPECT_THROW(m.complete(r), Error);
    r = request(PromptFamily::reasoner);
    r.prompt.messages.clear();
    EXPECT_THROW(m.complete(r), Error);
}

TEST(RatingLogits, FloorFillsMissingTokens) {
    // Floor = min(-0.1, -2.4, -3.0) - 10 = -13.0.
    auto out = rating_logits_from_alternatives({{"4", -0.1}, {"5", -2.4}, {".", -3.0}});
    EXPECT_DOUBLE_EQ(out.at("1"), -13.0);
    EXPECT_DOUBLE_EQ(out.at("2"), -13.0);
    EXPECT_DOUBLE_EQ(out.at("3"), -13.0);
    EXPECT_DOUBLE_EQ(out.at("4"), -0.1);
    EXPECT_DOUBLE_EQ(out.at("5"), -2.4);
}

TEST(RatingLogits, CompleteSetUnchanged) {
    std::map<std::string, double> all{{"1", -5}, {"2", -4}, {"3", -3}, {"4", -2}, {"5", -1}};
    EXPECT_EQ(rating_logits_from_alternatives(all), all);
}

TEST(RatingLogits, WhitespaceVariantsMerge) {
    auto out = rating_logits_from_alternatives({{"4", std::log(0.25)}, {" 4", std::log(0.25)}, {"5", -1}});
    EXPECT_NEAR(out.at("4"), std::log(0.5), 1e-12);
}

TEST(RatingLogits, EmptyIsCapabilityError) {
    try {
        rating_logits_from_alternatives({});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::capability);
    }
}

TEST(RatingLogits, SingleTokenRequestWithPrefill) {
    auto m = mock(R"({"rules":[{"responses":[{"text":"4","alternatives":{"4":-0.2,"5":-1.7}}]}]})");
    auto rl = rating_token_logits(m, request(PromptFamily::predictor));
    EXPECT_TRUE(rl.first_token_is_rating);
    EXPECT_EQ(rl.logits.size(), 5u);
    EXPECT_EQ(rl.response.usage.generated_tokens, 1u);
}

TEST(RatingLogits, NoLogprobSupportIsCapabilityError) {
    auto m = mock(R"({"supports_logprobs":false,"rules":[{"responses":[{"text":"4"}]}]})");
    try {
        rating_token_logits(m, request(PromptFamily::predictor));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::capability);
    }
}

TEST(Cost, AveragesAndEmpty) {
    std::vector<CallCost> c{{1.0, 0, 100, 1}, {2.0, 0, 200, 1}};
    auto r = cost_report(std::span<const CallCost>(c));
    EXPECT_DOUBLE_EQ(r.avg_generated_tokens, 150);
    EXPECT_DOUBLE_EQ(r.avg_latency_seconds, 1.5);
    EXPECT_FALSE(r.empty);
    auto e = cost_report(std::span<const CallCost>{});
    EXPECT_TRUE(e.empty);
    EXPECT_EQ(e.avg_generated_tokens, 0);
    EXPECT_EQ(e.avg_latency_seconds, 0);
}

TEST(Cost, MockLatencyAndTokensRecorded) {
    auto m = mock(R"({"rules":[{"responses":[{"text":"three word reply","latency_ms":250}]}]})");
    auto r = m.complete(request(PromptFamily::reasoner));
    EXPECT_EQ(r.usage.generated_tokens, 3u);
    EXPECT_DOUBLE_EQ(r.latency_seconds, 0.25);
    EXPECT_EQ(r.cost().calls, 1u);
}

// ---------------------------------------------------------------------------
// HTTP client against a local server

namespace {

class LocalServer {
public:
    explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server_.Post("/v1/chat/completions", std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    [[nodiscard]] std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

HttpBackendConfig config_for(const LocalServer& s) {
    HttpBackendConfig c;
    c.base_url = s.base_url();
    c.model = "local-model";
    c.initial_backoff_seconds = 0.01;
    c.timeout_seconds = 5;
    c.api_key_env = "DELIBEREC_TEST_UNSET_KEY";
    return c;
}

const char* kGoodReply = R"({"choices":[{"message":{"content":"4"},
  "logprobs":{"content":[{"token":"4","logprob":-0.3,
     "top_logprobs":[{"token":"4","logprob":-0.3},{"token":"5","logprob":-1.5},{"token":"3","logprob":-2.5}]}]}}],
  "usage":{"prompt_tokens":120,"completion_tokens":1}})";

} // namespace

TEST(Http, ParsesLogprobsAndUsage) {
    json seen;
    LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        res.set_content(kGoodReply, "application/json");
    });
    HttpBackend backend(config_for(server));
    auto rl = rating_token_logits(backend, request(PromptFamily::predictor));
    EXPECT_DOUBLE_EQ(rl.logits.at("4"), -0.3);
    EXPECT_DOUBLE_EQ(rl.logits.at("1"), -12.5);
    EXPECT_EQ(rl.response.usage.prompt_tokens, 120u);
    EXPECT_EQ(seen.at("model"), "local-model");
    EXPECT_EQ(seen.at("max_tokens"), 1);
    EXPECT_EQ(seen.at("logprobs"), true);
    EXPECT_EQ(seen.at("messages").back().at("role"), "assistant");
    EXPECT_EQ(seen.at("messages").back().at("content"), "Predicted Rating:");
    EXPECT_EQ(seen.at("continue_final_message"), true);
}

TEST(Http, MalformedBodyIsProtocolError) {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"choices":[{"nope":1}]})", "application/json");
    });
    HttpBackend backend(config_for(server));
    try {
        backend.complete(request(PromptFamily::reasoner));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::protocol);
    }
}

TEST(Http, RetriesServerErrorsThenSucceeds) {
    std::atomic<int> calls{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        if (++calls < 3) {
            res.status = calls == 1 ? 429 : 503;
            return;
        }
        res.set_content(R"({"choices":[{"message":{"content":"fine"}}]})", "application/json");
    });
    HttpBackend backend(config_for(server));
    EXPECT_EQ(backend.complete(request(PromptFamily::reasoner)).text, "fine");
    EXPECT_EQ(calls, 3);
}

TEST(Http, ExhaustedRetriesAreTransportErrors) {
    std::atomic<int> calls{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 500;
    });
    auto cfg = config_for(server);
    cfg.max_attempts = 2;
    HttpBackend backend(cfg);
    try {
        backend.complete(request(PromptFamily::reasoner));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::transport);
    }
    EXPECT_EQ(calls, 2);
}

TEST(Http, ClientErrorsAreNotRetried) {
    std::atomic<int> calls{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 400;
    });
    HttpBackend backend(config_for(server));
    EXPECT_THROW(backend.complete(request(PromptFamily::reasoner)), Error);
    EXPECT_EQ(calls, 1);
}

TEST(Http, BearerKeyFromEnvironment) {
    std::string auth;
    LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
        auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
    });
    auto cfg = config_for(server);
    cfg.api_key_env = "DELIBEREC_TEST_KEY";
    ::setenv("DELIBEREC_TEST_KEY", "sk-test", 1);
    HttpBackend backend(cfg);
    backend.complete(request(PromptFamily::reasoner));
    EXPECT_EQ(auth, "Bearer sk-test");
}

TEST(Http, RequestBodyOmitsLogprobsByDefault) {
    auto body = chat_request_body("m", request(PromptFamily::reasoner));
    EXPECT_FALSE(body.contains("logprobs"));
    EXPECT_FALSE(body.contains("continue_final_message"));
    EXPECT_EQ(body.at("temperature"), 0.0);
}
