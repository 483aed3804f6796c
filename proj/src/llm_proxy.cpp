#include "pd/llm_proxy.hpp"

#include "pd/errors.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace pd {

namespace {

using nlohmann::json;

constexpr const char* kSystemMessage =
    "You are an expert assistant for structured neural-network pruning. "
    "You pick the least important hidden channels to remove, respecting a FLOPs limit, "
    "and you answer with machine-readable JSON only.";

std::string format_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string remove_map_text(const PruningScheme& scheme) {
    std::ostringstream out;
    out << "{";
    bool first = true;
    for (std::size_t l = 0; l < scheme.remove.size(); ++l) {
        if (scheme.remove[l].empty()) continue;
        if (!first) out << ",";
        first = false;
        out << "\"" << l << "\":[";
        for (std::size_t i = 0; i < scheme.remove[l].size(); ++i) {
            if (i) out << ",";
            out << scheme.remove[l][i];
        }
        out << "]";
    }
    out << "}";
    return out.str();
}

// scheme://host[:port] and path split for httplib.
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error("PD_LLM_URL must include a scheme, got '" + url + "'");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

LlmEndpoint LlmEndpoint::from_env() {
    LlmEndpoint e;
    const char* url = std::getenv("PD_LLM_URL");
    const char* model = std::getenv("PD_LLM_MODEL");
    const char* key = std::getenv("PD_LLM_KEY");
    if (!url || !*url) throw Error("llm proxy needs PD_LLM_URL in the environment");
    if (!model || !*model) throw Error("llm proxy needs PD_LLM_MODEL in the environment");
    e.url = url;
    e.model = model;
    e.api_key = key ? key : "";
    return e;
}

std::string llm_proxy_build_prompt(const ProxyRequest& req) {
    if (req.layer_flops.size() != req.layer_widths.size()) {
        throw Error("proxy request lists " + std::to_string(req.layer_widths.size()) +
                    " widths but " + std::to_string(req.layer_flops.size()) + " FLOPs figures");
    }
    std::ostringstream out;
    out << "ROLE\n"
        << "Select hidden channels to remove from a multilayer denoising network. "
        << "Removing channel j of hidden layer l deletes weight row j of layer l and "
        << "the matching input column of layer l+1.\n\n";

    out << "ARCHITECTURE\n";
    out << "layer width flops share\n";
    for (std::size_t l = 0; l < req.layer_widths.size(); ++l) {
        const double share =
            req.total_flops > 0 ? static_cast<double>(req.layer_flops[l]) / req.total_flops : 0.0;
        out << l << " " << req.layer_widths[l] << " " << req.layer_flops[l] << " "
            << format_g(share) << "\n";
    }
    out << "settings " << req.settings_digest << "\n\n";

    out << "CONSTRAINT\n"
        << "current_flops " << req.total_flops << "\n"
        << "flops_limit " << req.flops_limit << "\n\n";

    out << "GROUP\n"
        << "index " << req.group.index << "\n"
        << "timesteps " << req.group.t_min << "-" << req.group.t_max << "\n"
        << "snr_db " << format_g(req.group.snr_max_db) << " to " << format_g(req.group.snr_min_db)
        << "\n\n";

    out << "HISTORY\n";
    if (req.history.empty()) {
        out << "none\n";
    } else {
        const std::size_t shown = std::min<std::size_t>(req.history.size(), 20);
        for (std::size_t i = 0; i < shown; ++i) {
            const auto& e = req.history[i];
            out << "remove " << remove_map_text(e.scheme) << " loss " << format_g(e.loss)
                << " flops " << e.flops << "\n";
        }
    }
    out << "\n";

    out << "OUTPUT FORMAT\n"
        << "Reply with exactly one JSON object and nothing else:\n"
        << "{\"remove\": {\"<hidden layer index>\": [channel indices to remove]}}\n"
        << "Layers may be omitted or mapped to empty lists. Keep at least one channel per "
        << "layer and make the pruned model satisfy flops_limit.\n";
    return out.str();
}

std::string llm_proxy_call(const LlmEndpoint& endpoint, const std::string& prompt) {
    const auto [base, path] = split_url(endpoint.url);

    const json body = {
        {"model", endpoint.model},
        {"messages",
         {{{"role", "system"}, {"content", kSystemMessage}},
          {{"role", "user"}, {"content", prompt}}}},
        {"temperature", endpoint.temperature},
    };
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!endpoint.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + endpoint.api_key);
    }

    std::string last_failure;
    const int attempts = 1 + std::max(0, endpoint.max_retries);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            const double sleep_s = endpoint.backoff_base_s * static_cast<double>(1 << (attempt - 1));
            std::this_thread::sleep_for(std::chrono::duration<double>(sleep_s));
        }
        httplib::Client client(base);
        client.set_connection_timeout(endpoint.timeout_s, 0);
        client.set_read_timeout(endpoint.timeout_s, 0);
        client.set_write_timeout(endpoint.timeout_s, 0);

        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_failure = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_failure = "status " + std::to_string(res->status) + ": " +
                           res->body.substr(0, 200);
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            throw Error("llm endpoint returned status " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 200));
        }
        return res->body;
    }
    throw ProxyUnavailable("llm endpoint unreachable after " + std::to_string(attempts) +
                           " attempts; last failure: " + last_failure);
}

std::string llm_extract_content(const std::string& body) {
    json envelope;
    try {
        envelope = json::parse(body);
    } catch (const json::exception&) {
        return body;
    }
    if (envelope.contains("choices") && envelope["choices"].is_array() &&
        !envelope["choices"].empty()) {
        const auto& first = envelope["choices"][0];
        if (first.contains("message") && first["message"].contains("content")) {
            return first["message"]["content"].get<std::string>();
        }
        if (first.contains("text")) return first["text"].get<std::string>();
    }
    return body;
}

PruningScheme llm_proxy_parse(const std::string& response, const std::vector<int>& layer_widths) {
    // First balanced JSON object in the text, string-aware.
    const auto start = response.find('{');
    if (start == std::string::npos) {
        throw ProxyParseError("proxy response contains no JSON object", response);
    }
    std::size_t end = std::string::npos;
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < response.size(); ++i) {
        const char c = response[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') depth++;
        else if (c == '}') {
            depth--;
            if (depth == 0) {
                end = i;
                break;
            }
        }
    }
    if (end == std::string::npos) {
        throw ProxyParseError("proxy response has an unterminated JSON object", response);
    }

    json obj;
    try {
        obj = json::parse(response.substr(start, end - start + 1));
    } catch (const json::exception& e) {
        throw ProxyParseError(std::string("proxy JSON does not parse: ") + e.what(), response);
    }
    if (!obj.contains("remove") || !obj["remove"].is_object()) {
        throw ProxyParseError("proxy JSON lacks a \"remove\" object", response);
    }

    PruningScheme scheme;
    scheme.remove.assign(layer_widths.size(), {});
    for (auto it = obj["remove"].begin(); it != obj["remove"].end(); ++it) {
        int layer = -1;
        try {
            layer = std::stoi(it.key());
        } catch (...) {
            throw ProxyParseError("remove map key '" + it.key() + "' is not a layer index",
                                  response);
        }
        if (layer < 0 || layer >= static_cast<int>(layer_widths.size())) {
            throw ProxyParseError("remove map names layer " + std::to_string(layer) +
                                      " but the network has " +
                                      std::to_string(layer_widths.size()) + " hidden layers",
                                  response);
        }
        if (!it.value().is_array()) {
            throw ProxyParseError("remove list for layer " + std::to_string(layer) +
                                      " is not an array",
                                  response);
        }
        std::vector<int> indices;
        for (const auto& v : it.value()) {
            if (!v.is_number_integer()) {
                throw ProxyParseError("non-integer channel index for layer " +
                                          std::to_string(layer),
                                      response);
            }
            const int idx = v.get<int>();
            if (idx < 0 || idx >= layer_widths[layer]) {
                throw ProxyParseError("layer " + std::to_string(layer) + " index " +
                                          std::to_string(idx) + " out of range (width " +
                                          std::to_string(layer_widths[layer]) + ")",
                                      response);
            }
            indices.push_back(idx);
        }
        std::sort(indices.begin(), indices.end());
        indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
        scheme.remove[layer] = std::move(indices);
    }
    return scheme;
}

namespace {

class LlmProxy final : public Proxy {
public:
    LlmProxy(LlmEndpoint endpoint, std::filesystem::path archive_dir)
        : endpoint_(std::move(endpoint)), archive_dir_(std::move(archive_dir)) {}

    std::string name() const override { return "llm"; }

    std::vector<PruningScheme> propose(const ProxyRequest& req) override {
        const std::string prompt = llm_proxy_build_prompt(req);
        std::vector<PruningScheme> out;
        for (int j = 0; j < req.num_candidates; ++j) {
            archive(req.round, j, "prompt", prompt);
            const std::string body = llm_proxy_call(endpoint_, prompt);
            archive(req.round, j, "response", body);
            auto scheme = llm_proxy_parse(llm_extract_content(body), req.layer_widths);
            scheme.provenance = name();
            out.push_back(std::move(scheme));
        }
        return out;
    }

private:
    void archive(int round, int candidate, const char* kind, const std::string& text) const {
        if (archive_dir_.empty()) return;
        std::filesystem::create_directories(archive_dir_);
        const auto file = archive_dir_ / ("round" + std::to_string(round) + "_cand" +
                                          std::to_string(candidate) + "." + kind + ".txt");
        std::ofstream fout(file, std::ios::trunc);
        fout << text;
    }

    LlmEndpoint endpoint_;
    std::filesystem::path archive_dir_;
};

} // namespace

std::unique_ptr<Proxy> make_llm_proxy(LlmEndpoint endpoint,
                                      std::filesystem::path archive_dir) {
    return std::make_unique<LlmProxy>(std::move(endpoint), std::move(archive_dir));
}

} // namespace pd
