#include "pd/denoiser.hpp"
#include "pd/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace pd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace {

constexpr char kMagic[8] = {'P', 'D', 'I', 'F', 'F', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

using nlohmann::json;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const char* field) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw Error(std::string("checkpoint: truncated while reading ") + field);
    return v;
}

} // namespace

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
    json manifest;
    manifest["spec"] = {
        {"input_dim", m.spec.input_dim},
        {"hidden_widths", m.spec.hidden_widths},
        {"time_embed_dim", m.spec.time_embed_dim},
    };
    json tensors = json::array();
    std::uint64_t offset = 0;
    auto add = [&](const std::string& name, const Tensor& t) {
        tensors.push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
        offset += t.size() * sizeof(float);
    };
    for (std::size_t l = 0; l < m.params.weights.size(); ++l) {
        add("w" + std::to_string(l), m.params.weights[l]);
        add("b" + std::to_string(l), m.params.biases[l]);
    }
    manifest["tensors"] = std::move(tensors);
    const std::string text = manifest.dump();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("checkpoint: cannot open " + tmp + " for writing");
        out.write(kMagic, sizeof(kMagic));
        write_u32(out, kVersion);
        write_u32(out, static_cast<std::uint32_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (std::size_t l = 0; l < m.params.weights.size(); ++l) {
            const auto& w = m.params.weights[l].data;
            const auto& b = m.params.biases[l].data;
            out.write(reinterpret_cast<const char*>(w.data()),
                      static_cast<std::streamsize>(w.size() * sizeof(float)));
            out.write(reinterpret_cast<const char*>(b.data()),
                      static_cast<std::streamsize>(b.size() * sizeof(float)));
        }
        if (!out) throw Error("checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open " + path.string());

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error("checkpoint: bad magic in " + path.string());
    }
    const std::uint32_t version = read_u32(in, "version");
    if (version != kVersion) {
        throw Error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t manifest_len = read_u32(in, "manifest length");
    std::string text(manifest_len, '\0');
    in.read(text.data(), manifest_len);
    if (!in) throw Error("checkpoint: truncated manifest");

    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("checkpoint: manifest parse failure: ") + e.what());
    }

    Model m;
    try {
        const auto& spec = manifest.at("spec");
        m.spec.input_dim = spec.at("input_dim").get<int>();
        m.spec.hidden_widths = spec.at("hidden_widths").get<std::vector<int>>();
        m.spec.time_embed_dim = spec.at("time_embed_dim").get<int>();
    } catch (const json::exception& e) {
        throw Error(std::string("checkpoint: bad spec in manifest: ") + e.what());
    }
    m.spec.validate();

    const auto data_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto file_end = in.tellg();
    const std::uint64_t data_bytes = static_cast<std::uint64_t>(file_end - data_start);

    const int expected = m.spec.layer_count();
    if (!manifest.contains("tensors") ||
        static_cast<int>(manifest["tensors"].size()) != 2 * expected) {
        throw Error("checkpoint: manifest lists " +
                    std::to_string(manifest.value("tensors", json::array()).size()) +
                    " tensors, spec needs " + std::to_string(2 * expected));
    }

    m.params.weights.resize(expected);
    m.params.biases.resize(expected);
    for (const auto& entry : manifest["tensors"]) {
        std::string name;
        int rows = 0, cols = 0;
        std::uint64_t offset = 0;
        try {
            name = entry.at("name").get<std::string>();
            rows = entry.at("rows").get<int>();
            cols = entry.at("cols").get<int>();
            offset = entry.at("offset").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw Error(std::string("checkpoint: bad tensor entry: ") + e.what());
        }
        if (name.size() < 2 || (name[0] != 'w' && name[0] != 'b')) {
            throw Error("checkpoint: unknown tensor name '" + name + "'");
        }
        const int l = std::stoi(name.substr(1));
        if (l < 0 || l >= expected) {
            throw Error("checkpoint: tensor '" + name + "' outside spec layers");
        }
        const bool is_weight = name[0] == 'w';
        const int want_rows = m.spec.layer_out(l);
        const int want_cols = is_weight ? m.spec.layer_in(l) : 1;
        if (rows != want_rows || cols != want_cols) {
            throw Error("checkpoint: tensor '" + name + "' has shape " + std::to_string(rows) +
                        "x" + std::to_string(cols) + ", spec requires " +
                        std::to_string(want_rows) + "x" + std::to_string(want_cols));
        }
        const std::uint64_t bytes = static_cast<std::uint64_t>(rows) * cols * sizeof(float);
        if (offset + bytes > data_bytes) {
            throw Error("checkpoint: tensor '" + name + "' extends past end of file");
        }
        Tensor t(rows, cols);
        in.seekg(data_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(bytes));
        if (!in) throw Error("checkpoint: read failure on tensor '" + name + "'");
        if (is_weight) m.params.weights[l] = std::move(t);
        else m.params.biases[l] = std::move(t);
    }
    for (int l = 0; l < expected; ++l) {
        if (m.params.weights[l].size() == 0 || m.params.biases[l].size() == 0) {
            throw Error("checkpoint: layer " + std::to_string(l) + " missing tensors");
        }
    }
    return m;
}

} // namespace pd
