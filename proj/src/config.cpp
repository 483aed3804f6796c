#include "pd/config.hpp"

#include "pd/errors.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pd {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        else if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

[[noreturn]] void bad_value(const std::string& origin, const std::string& key,
                            const std::string& why) {
    throw UsageError(origin + ": key '" + key + "': " + why);
}

long long parse_int(const std::string& origin, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (...) {
        bad_value(origin, key, "expected an integer, got '" + v + "'");
    }
}

double parse_real(const std::string& origin, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (...) {
        bad_value(origin, key, "expected a number, got '" + v + "'");
    }
}

std::string parse_string(const std::string& origin, const std::string& key, const std::string& v) {
    if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
        bad_value(origin, key, "expected a quoted string, got '" + v + "'");
    }
    return v.substr(1, v.size() - 2);
}

std::vector<int> parse_int_array(const std::string& origin, const std::string& key,
                                 const std::string& v) {
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
        bad_value(origin, key, "expected an array like [64, 64], got '" + v + "'");
    }
    std::vector<int> out;
    std::string inner = v.substr(1, v.size() - 2);
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) bad_value(origin, key, "empty array element");
        out.push_back(static_cast<int>(parse_int(origin, key, item)));
    }
    if (out.empty()) bad_value(origin, key, "array must not be empty");
    return out;
}

std::string format_real(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw UsageError("config: " + key + " " + why);
    };
    if (dataset_name.empty()) fail("dataset.name", "is required");
    dataset_from_string(dataset_name);
    if (dataset_size < 2) fail("dataset.size", "must be at least 2");

    if (schedule_kind != "cosine" && schedule_kind != "linear") {
        fail("schedule.kind", "must be cosine or linear");
    }
    if (timesteps < 1) fail("schedule.timesteps", "must be positive");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        fail("schedule.beta_start/beta_end", "must satisfy 0 < start <= end < 1");
    }
    if (!(cosine_offset > 0.0)) fail("schedule.offset", "must be positive");

    if (input_dim < 1) fail("model.input_dim", "must be positive");
    if (hidden_widths.empty()) fail("model.hidden_widths", "must name at least one layer");
    for (int w : hidden_widths) {
        if (w < 1) fail("model.hidden_widths", "entries must be positive");
    }
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        fail("model.time_embed_dim", "must be even and >= 2");
    }

    if (groups < 1) fail("allocation.groups", "must be at least 1");
    if (!(k > 0.0) || k > 1.0) fail("allocation.k", "must lie in (0, 1]");
    target_shape_from_string(flops_shape);

    if (proxy != "random" && proxy != "magnitude" && proxy != "taylor" && proxy != "llm") {
        fail("pruning.proxy", "must be random|magnitude|taylor|llm");
    }
    if (rounds < 1) fail("pruning.rounds", "must be at least 1");
    if (candidates < 1) fail("pruning.candidates", "must be at least 1");

    if (stage1_steps < 0) fail("training.stage1_steps", "must be non-negative");
    if (stage2_steps < 0) fail("training.stage2_steps", "must be non-negative");
    if (single_stage_steps < 0) fail("training.single_stage_steps", "must be non-negative");
    if (batch_size < 1) fail("training.batch_size", "must be positive");
    if (!(lr > 0.0)) fail("training.lr", "must be positive");
    if (!(finetune_lr > 0.0)) fail("training.finetune_lr", "must be positive");
    if (checkpoint_every < 1) fail("training.checkpoint_every", "must be positive");

    if (sample_steps < 1 || sample_steps > timesteps) {
        fail("sampling.steps", "must lie in [1, schedule.timesteps]");
    }

    if (!(llm_temperature >= 0.0)) fail("llm.temperature", "must be non-negative");
    if (llm_timeout_s < 1) fail("llm.timeout_s", "must be positive");
    if (llm_max_retries < 0) fail("llm.max_retries", "must be non-negative");
    if (!(llm_backoff_s >= 0.0)) fail("llm.backoff_s", "must be non-negative");
}

NoiseSchedule ExperimentConfig::build_schedule() const {
    if (schedule_kind == "linear") return build_linear_schedule(timesteps, beta_start, beta_end);
    return build_cosine_schedule(timesteps, cosine_offset);
}

DenoiserSpec ExperimentConfig::model_spec() const {
    DenoiserSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_widths = hidden_widths;
    spec.time_embed_dim = time_embed_dim;
    return spec;
}

ToyDataset ExperimentConfig::dataset() const { return dataset_from_string(dataset_name); }

std::string ExperimentConfig::settings_digest() const {
    std::ostringstream out;
    out << "dataset=" << dataset_name << " schedule=" << schedule_kind << " T=" << timesteps
        << " N=" << groups << " k=" << k << " proxy=" << proxy << " seed=" << seed;
    return out.str();
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);

        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError(where + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            const bool known = section == "dataset" || section == "schedule" ||
                               section == "model" || section == "allocation" ||
                               section == "pruning" || section == "training" ||
                               section == "sampling" || section == "llm";
            if (!known) throw UsageError(where + ": unknown section '" + section + "'");
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(where + ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw UsageError(where + ": expected 'key = value', got '" + line + "'");
        }
        const std::string full = section + "." + key;

        if (full == "dataset.name") cfg.dataset_name = parse_string(where, full, value);
        else if (full == "dataset.size") cfg.dataset_size = (int)parse_int(where, full, value);
        else if (full == "schedule.kind") cfg.schedule_kind = parse_string(where, full, value);
        else if (full == "schedule.timesteps") cfg.timesteps = (int)parse_int(where, full, value);
        else if (full == "schedule.beta_start") cfg.beta_start = parse_real(where, full, value);
        else if (full == "schedule.beta_end") cfg.beta_end = parse_real(where, full, value);
        else if (full == "schedule.offset") cfg.cosine_offset = parse_real(where, full, value);
        else if (full == "model.input_dim") cfg.input_dim = (int)parse_int(where, full, value);
        else if (full == "model.hidden_widths") cfg.hidden_widths = parse_int_array(where, full, value);
        else if (full == "model.time_embed_dim") cfg.time_embed_dim = (int)parse_int(where, full, value);
        else if (full == "allocation.groups") cfg.groups = (int)parse_int(where, full, value);
        else if (full == "allocation.k") cfg.k = parse_real(where, full, value);
        else if (full == "allocation.shape") cfg.flops_shape = parse_string(where, full, value);
        else if (full == "pruning.proxy") cfg.proxy = parse_string(where, full, value);
        else if (full == "pruning.rounds") cfg.rounds = (int)parse_int(where, full, value);
        else if (full == "pruning.candidates") cfg.candidates = (int)parse_int(where, full, value);
        else if (full == "training.stage1_steps") cfg.stage1_steps = (int)parse_int(where, full, value);
        else if (full == "training.stage2_steps") cfg.stage2_steps = (int)parse_int(where, full, value);
        else if (full == "training.single_stage_steps") cfg.single_stage_steps = (int)parse_int(where, full, value);
        else if (full == "training.batch_size") cfg.batch_size = (int)parse_int(where, full, value);
        else if (full == "training.lr") cfg.lr = parse_real(where, full, value);
        else if (full == "training.finetune_lr") cfg.finetune_lr = parse_real(where, full, value);
        else if (full == "training.seed") cfg.seed = (std::uint64_t)parse_int(where, full, value);
        else if (full == "training.checkpoint_every") cfg.checkpoint_every = (int)parse_int(where, full, value);
        else if (full == "sampling.steps") cfg.sample_steps = (int)parse_int(where, full, value);
        else if (full == "llm.temperature") cfg.llm_temperature = parse_real(where, full, value);
        else if (full == "llm.timeout_s") cfg.llm_timeout_s = (int)parse_int(where, full, value);
        else if (full == "llm.max_retries") cfg.llm_max_retries = (int)parse_int(where, full, value);
        else if (full == "llm.backoff_s") cfg.llm_backoff_s = parse_real(where, full, value);
        else throw UsageError(where + ": unknown key '" + full + "'");
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.filename().string());
}

std::string write_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "[dataset]\n"
        << "name = \"" << cfg.dataset_name << "\"\n"
        << "size = " << cfg.dataset_size << "\n\n"
        << "[schedule]\n"
        << "kind = \"" << cfg.schedule_kind << "\"\n"
        << "timesteps = " << cfg.timesteps << "\n"
        << "beta_start = " << format_real(cfg.beta_start) << "\n"
        << "beta_end = " << format_real(cfg.beta_end) << "\n"
        << "offset = " << format_real(cfg.cosine_offset) << "\n\n"
        << "[model]\n"
        << "input_dim = " << cfg.input_dim << "\n"
        << "hidden_widths = [";
    for (std::size_t i = 0; i < cfg.hidden_widths.size(); ++i) {
        if (i) out << ", ";
        out << cfg.hidden_widths[i];
    }
    out << "]\n"
        << "time_embed_dim = " << cfg.time_embed_dim << "\n\n"
        << "[allocation]\n"
        << "groups = " << cfg.groups << "\n"
        << "k = " << format_real(cfg.k) << "\n"
        << "shape = \"" << cfg.flops_shape << "\"\n\n"
        << "[pruning]\n"
        << "proxy = \"" << cfg.proxy << "\"\n"
        << "rounds = " << cfg.rounds << "\n"
        << "candidates = " << cfg.candidates << "\n\n"
        << "[training]\n"
        << "stage1_steps = " << cfg.stage1_steps << "\n"
        << "stage2_steps = " << cfg.stage2_steps << "\n"
        << "single_stage_steps = " << cfg.single_stage_steps << "\n"
        << "batch_size = " << cfg.batch_size << "\n"
        << "lr = " << format_real(cfg.lr) << "\n"
        << "finetune_lr = " << format_real(cfg.finetune_lr) << "\n"
        << "seed = " << cfg.seed << "\n"
        << "checkpoint_every = " << cfg.checkpoint_every << "\n\n"
        << "[sampling]\n"
        << "steps = " << cfg.sample_steps << "\n\n"
        << "[llm]\n"
        << "temperature = " << format_real(cfg.llm_temperature) << "\n"
        << "timeout_s = " << cfg.llm_timeout_s << "\n"
        << "max_retries = " << cfg.llm_max_retries << "\n"
        << "backoff_s = " << format_real(cfg.llm_backoff_s) << "\n";
    return out.str();
}

} // namespace pd
