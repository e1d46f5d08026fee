#pragma once

// Bridge to an external scoring endpoint. POST /v1/score with either
// {"text": "..."} or {"token_ids": [...]}; the endpoint answers
// {"logprobs": [...]} with one natural-log conditional probability per
// token. Transport failures, timeouts and schema violations raise distinct
// error classes.

#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "textveil/error.hpp"
#include "textveil/scorer.hpp"

namespace textveil {

struct RemoteScorerConfig {
    std::string endpoint; // e.g. "http://127.0.0.1:8391"
    double timeout_seconds = 10.0;
    std::string auth_token;     // optional bearer token
    bool supports_token_ids = false;

    void validate() const {
        if (endpoint.empty()) throw ConfigError("remote scorer: endpoint must be non-empty");
    }
};

namespace detail {

inline ScoreVector remote_score_body(const RemoteScorerConfig& cfg, const nlohmann::json& body,
                                     size_t payload_len) {
    cfg.validate();
    httplib::Client client(cfg.endpoint);
    auto secs = (time_t)cfg.timeout_seconds;
    auto usecs = (time_t)((cfg.timeout_seconds - (double)secs) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!cfg.auth_token.empty()) headers.emplace("Authorization", "Bearer " + cfg.auth_token);

    auto res = client.Post("/v1/score", headers, body.dump(), "application/json");
    if (!res) {
        switch (res.error()) {
            case httplib::Error::ConnectionTimeout:
            case httplib::Error::Read:
            case httplib::Error::Write:
                throw RemoteTimeoutError("remote scorer timed out: " + cfg.endpoint);
            default:
                throw RemoteConnectError("cannot reach remote scorer: " + cfg.endpoint);
        }
    }
    if (res->status < 200 || res->status >= 300)
        throw RemoteProtocolError("remote scorer returned HTTP " + std::to_string(res->status));

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
        throw RemoteProtocolError("remote scorer response is not valid JSON");
    }
    if (!j.is_object() || !j.contains("logprobs") || !j["logprobs"].is_array())
        throw RemoteProtocolError("remote scorer response lacks a logprobs array");

    ScoreVector sv;
    for (const auto& v : j["logprobs"]) {
        if (!v.is_number())
            throw RemoteProtocolError("remote scorer logprobs contain a non-number");
        double lp = v.get<double>();
        if (lp > 0.0)
            throw RemoteProtocolError("remote scorer returned a positive log-probability");
        sv.logprobs.push_back(lp);
    }
    if (sv.logprobs.empty() && payload_len > 0)
        throw RemoteProtocolError("remote scorer returned empty logprobs for non-empty input");
    return sv;
}

} // namespace detail

inline ScoreVector remote_score(const RemoteScorerConfig& cfg, const std::string& text) {
    return detail::remote_score_body(cfg, {{"text", text}}, text.size());
}

inline ScoreVector remote_score(const RemoteScorerConfig& cfg, const std::vector<int32_t>& ids) {
    if (!cfg.supports_token_ids)
        throw ConfigError("remote scorer: endpoint not configured for token id payloads");
    return detail::remote_score_body(cfg, {{"token_ids", ids}}, ids.size());
}

} // namespace textveil
