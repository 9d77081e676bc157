#include "emo/errors.h"
#include "emo/instruct_gen.h"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's headers.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <thread>

namespace emo {

namespace {

std::string base64(const std::vector<std::uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<size_t>(n));
    return out;
}

}  // namespace

HttpClient::HttpClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {
    const auto scheme_end = cfg_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be http(s)://host[:port]/path");
    const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
    scheme_host_ = cfg_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
    if (cfg_.max_requests_per_second <= 0) throw ConfigError("max_requests_per_second must be positive");
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
}

void HttpClient::wait_for_slot() {
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mu_);
        const auto now = std::chrono::steady_clock::now();
        slot = std::max(now, next_slot_);
        next_slot_ = slot + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                std::chrono::duration<double>(1.0 / cfg_.max_requests_per_second));
    }
    std::this_thread::sleep_until(slot);
}

std::string HttpClient::complete(const GenerationRequest& req) {
    nlohmann::json body{{"prompt", req.prompt()}, {"template", req.template_id}, {"images", nlohmann::json::array()}};
    if (!req.image_png.empty()) body["images"].push_back(base64(req.image_png));
    const std::string payload = body.dump();

    httplib::Client cli(scheme_host_);
    cli.set_connection_timeout(cfg_.timeout_seconds);
    cli.set_read_timeout(cfg_.timeout_seconds);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    double backoff = cfg_.backoff_seconds;
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
            backoff *= 2;
        }
        wait_for_slot();
        auto res = cli.Post(path_, headers, payload, "application/json");
        if (!res) {
            last_error = "connection failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) throw ClientError("generator returned HTTP " + std::to_string(res->status));
        try {
            return nlohmann::json::parse(res->body).at("text").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ClientError(std::string("generator response is not {\"text\": ...}: ") + e.what());
        }
    }
    spdlog::warn("generator request for {} failed: {}", req.media_id, last_error);
    throw ClientError(last_error);
}

}  // namespace emo
