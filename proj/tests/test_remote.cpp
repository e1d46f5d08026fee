#include <doctest.h>

#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "textveil/remote.hpp"

using namespace textveil;

namespace {

// One local endpoint whose behaviour is selected by the request payload.
class ScoreServer {
public:
    ScoreServer() {
        server_.Post("/v1/score", [](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
            std::string text = body.is_object() ? body.value("text", std::string()) : "";
            if (body.is_object() && body.contains("token_ids")) {
                nlohmann::json lp = nlohmann::json::array();
                for (size_t i = 0; i < body["token_ids"].size(); ++i)
                    lp.push_back(-1.5 - (double)i);
                res.set_content(nlohmann::json{{"logprobs", lp}}.dump(), "application/json");
                return;
            }
            if (text == "boom") {
                res.status = 500;
                res.set_content("oops", "text/plain");
                return;
            }
            if (text == "notjson") {
                res.set_content("}{", "application/json");
                return;
            }
            if (text == "noarray") {
                res.set_content(nlohmann::json{{"logprobs", 7}}.dump(), "application/json");
                return;
            }
            if (text == "positive") {
                res.set_content(nlohmann::json{{"logprobs", {0.5}}}.dump(), "application/json");
                return;
            }
            if (text == "empty") {
                res.set_content(nlohmann::json{{"logprobs", nlohmann::json::array()}}.dump(),
                                "application/json");
                return;
            }
            if (text == "slow") {
                std::this_thread::sleep_for(std::chrono::milliseconds(600));
                res.set_content(nlohmann::json{{"logprobs", {-1.0}}}.dump(), "application/json");
                return;
            }
            res.set_content(nlohmann::json{{"logprobs", {-1.0, -2.0}}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this]() { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~ScoreServer() {
        server_.stop();
        thread_.join();
    }
    RemoteScorerConfig config() const {
        RemoteScorerConfig cfg;
        cfg.endpoint = "http://127.0.0.1:" + std::to_string(port_);
        cfg.timeout_seconds = 5.0;
        return cfg;
    }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

} // namespace

TEST_CASE("remote_score maps the response schema into a ScoreVector") {
    ScoreServer server;
    ScoreVector sv = remote_score(server.config(), std::string("hello"));
    REQUIRE(sv.size() == 2);
    CHECK(sv.logprobs[0] == doctest::Approx(-1.0));
    CHECK(sv.logprobs[1] == doctest::Approx(-2.0));
}

TEST_CASE("remote_score supports token id payloads when enabled") {
    ScoreServer server;
    RemoteScorerConfig cfg = server.config();
    CHECK_THROWS_AS(remote_score(cfg, std::vector<int32_t>{1, 2, 3}), ConfigError);
    cfg.supports_token_ids = true;
    ScoreVector sv = remote_score(cfg, std::vector<int32_t>{1, 2, 3});
    REQUIRE(sv.size() == 3);
    CHECK(sv.logprobs[2] == doctest::Approx(-3.5));
}

TEST_CASE("protocol violations raise RemoteProtocolError") {
    ScoreServer server;
    RemoteScorerConfig cfg = server.config();
    CHECK_THROWS_AS(remote_score(cfg, std::string("positive")), RemoteProtocolError);
    CHECK_THROWS_AS(remote_score(cfg, std::string("empty")), RemoteProtocolError);
    CHECK_THROWS_AS(remote_score(cfg, std::string("notjson")), RemoteProtocolError);
    CHECK_THROWS_AS(remote_score(cfg, std::string("noarray")), RemoteProtocolError);
    CHECK_THROWS_AS(remote_score(cfg, std::string("boom")), RemoteProtocolError);
}

TEST_CASE("transport failures raise distinct error classes") {
    RemoteScorerConfig nobody;
    nobody.endpoint = "http://127.0.0.1:1"; // reserved port, nothing listens
    nobody.timeout_seconds = 2.0;
    CHECK_THROWS_AS(remote_score(nobody, std::string("x")), RemoteConnectError);

    ScoreServer server;
    RemoteScorerConfig slow = server.config();
    slow.timeout_seconds = 0.2;
    CHECK_THROWS_AS(remote_score(slow, std::string("slow")), RemoteTimeoutError);

    RemoteScorerConfig invalid;
    CHECK_THROWS_AS(remote_score(invalid, std::string("x")), ConfigError);
}
