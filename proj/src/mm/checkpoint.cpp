#include "mm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mm {

namespace {

void write_u16_le(std::ostream& os, std::uint16_t v) {
    char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    os.write(b, 2);
}

void write_u64_le(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = char((v >> (8 * i)) & 0xff);
    }
    os.write(b, 8);
}

void write_f32_le(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    char b[4] = {char(u & 0xff), char((u >> 8) & 0xff), char((u >> 16) & 0xff), char((u >> 24) & 0xff)};
    os.write(b, 4);
}

bool read_exact(std::istream& is, char* dst, std::size_t n) {
    is.read(dst, std::streamsize(n));
    return std::size_t(is.gcount()) == n;
}

std::uint16_t read_u16_le(std::istream& is, const std::string& path) {
    unsigned char b[2];
    if (!read_exact(is, reinterpret_cast<char*>(b), 2)) {
        fail(ErrCode::format, path + ": truncated checkpoint record");
    }
    return std::uint16_t(b[0] | (std::uint16_t(b[1]) << 8));
}

std::uint64_t read_u64_le(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!read_exact(is, reinterpret_cast<char*>(b), 8)) {
        fail(ErrCode::format, path + ": truncated checkpoint record");
    }
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

} // namespace

void save_checkpoint_raw(const std::string& path, const nlohmann::json& config,
                         const std::map<std::string, std::vector<float>>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        fail(ErrCode::io, "checkpoint: cannot open " + path);
    }
    nlohmann::ordered_json header;
    header["magic"] = "MMCK1";
    header["config"] = config;
    os << header.dump() << '\n';
    for (const auto& [key, values] : params) {
        if (key.size() > 0xffff) {
            fail(ErrCode::internal, "checkpoint: parameter key too long");
        }
        write_u16_le(os, std::uint16_t(key.size()));
        os.write(key.data(), std::streamsize(key.size()));
        write_u64_le(os, values.size());
        for (float v : values) {
            write_f32_le(os, v);
        }
    }
    if (!os) {
        fail(ErrCode::io, "checkpoint: write failed for " + path);
    }
}

RawCheckpoint load_checkpoint_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        fail(ErrCode::io, "checkpoint: cannot open " + path);
    }
    std::string line;
    if (!std::getline(is, line)) {
        fail(ErrCode::format, path + ": missing checkpoint header");
    }
    nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object()) {
        fail(ErrCode::format, path + ": checkpoint header is not a JSON object");
    }
    if (header.value("magic", "") != "MMCK1") {
        fail(ErrCode::format, path + ": bad magic, expected MMCK1");
    }
    if (!header.contains("config") || !header["config"].is_object()) {
        fail(ErrCode::format, path + ": checkpoint header lacks a config object");
    }
    RawCheckpoint ck;
    ck.config = header["config"];
    while (true) {
        is.peek();
        if (is.eof()) {
            break;
        }
        const std::uint16_t klen = read_u16_le(is, path);
        std::string key(klen, '\0');
        if (!read_exact(is, key.data(), klen)) {
            fail(ErrCode::format, path + ": truncated parameter key");
        }
        const std::uint64_t count = read_u64_le(is, path);
        std::vector<float> values(count);
        std::vector<unsigned char> bytes(count * 4);
        if (!read_exact(is, reinterpret_cast<char*>(bytes.data()), bytes.size())) {
            fail(ErrCode::format, path + ": truncated parameter payload for " + key);
        }
        for (std::uint64_t i = 0; i < count; ++i) {
            std::uint32_t u = std::uint32_t(bytes[i * 4]) | std::uint32_t(bytes[i * 4 + 1]) << 8 |
                              std::uint32_t(bytes[i * 4 + 2]) << 16 |
                              std::uint32_t(bytes[i * 4 + 3]) << 24;
            float f;
            std::memcpy(&f, &u, 4);
            values[i] = f;
        }
        if (!ck.params.emplace(key, std::move(values)).second) {
            fail(ErrCode::format, path + ": duplicate parameter " + key);
        }
    }
    return ck;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    RawCheckpoint raw = load_checkpoint_raw(path);
    LoadedCheckpoint out;
    out.run = run_context_from_json(raw.config);
    out.model = to_model_config(out.run, std::size_t(out.run.classes), std::size_t(out.run.bands));
    out.params = params_from_raw<float>(out.model, raw.params);
    return out;
}

} // namespace mm
