#pragma once

#include "pd/pruning.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace pd {

/// Remote chat-completion endpoint. URL, model name and credential come
/// from the environment (PD_LLM_URL, PD_LLM_MODEL, PD_LLM_KEY); everything
/// else from config.
struct LlmEndpoint {
    std::string url;
    std::string model;
    std::string api_key;
    double temperature = 0.7;
    int timeout_s = 60;
    int max_retries = 3;        // attempts = 1 + max_retries
    double backoff_base_s = 1.0; // sleeps base, 2*base, 4*base between attempts

    static LlmEndpoint from_env();
};

/// Deterministic structured prompt: ROLE, ARCHITECTURE, CONSTRAINT, GROUP,
/// HISTORY (best 20 entries by loss), OUTPUT FORMAT.
std::string llm_proxy_build_prompt(const ProxyRequest& req);

/// One chat-completion POST (system + user message). Retries transport
/// failures and 5xx with exponential backoff; returns the raw response body.
/// Throws ProxyUnavailable after exhausted retries, Error on other
/// non-success statuses.
std::string llm_proxy_call(const LlmEndpoint& endpoint, const std::string& prompt);

/// Pull the assistant text out of a chat-completion envelope; bodies that
/// are not an envelope pass through unchanged.
std::string llm_extract_content(const std::string& body);

/// First JSON object in the text -> removal scheme. Duplicate indices are
/// deduplicated; out-of-range indices raise ProxyParseError naming the
/// layer and index.
PruningScheme llm_proxy_parse(const std::string& response, const std::vector<int>& layer_widths);

/// Proxy that prompts the endpoint once per candidate. Prompts and raw
/// responses are archived under archive_dir when set.
std::unique_ptr<Proxy> make_llm_proxy(LlmEndpoint endpoint,
                                      std::filesystem::path archive_dir = {});

} // namespace pd
