#include "sccf/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

namespace sccf {

static void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

static void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

static uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("container: truncated read");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

static uint64_t get_u64(std::istream& in) {
    const uint64_t lo = get_u32(in);
    const uint64_t hi = get_u32(in);
    return lo | (hi << 32);
}

void write_container(std::ostream& out, const std::map<std::string, Tensor>& tensors, uint64_t step) {
    out.write("SCCF", 4);
    put_u32(out, kContainerVersion);
    for (const auto& [name, t] : tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (size_t d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    }
    put_u64(out, step);
}

void read_container(std::istream& in, uint64_t section_bytes, std::map<std::string, Tensor>& tensors,
                    uint64_t& step) {
    if (section_bytes < 16) throw std::runtime_error("container: too small");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SCCF", 4) != 0) throw std::runtime_error("container: bad magic");
    const uint32_t version = get_u32(in);
    if (version != kContainerVersion) throw std::runtime_error("container: unsupported version");
    uint64_t remaining = section_bytes - 8;
    while (remaining > 8) {
        const uint32_t name_len = get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t rank = get_u32(in);
        std::vector<size_t> shape(rank);
        size_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            shape[i] = get_u32(in);
            numel *= shape[i];
        }
        Tensor t(std::move(shape));
        for (size_t i = 0; i < numel; ++i) {
            const uint32_t bits = get_u32(in);
            std::memcpy(&t.data[i], &bits, 4);
        }
        if (!in) throw std::runtime_error("container: truncated tensor " + name);
        const uint64_t consumed = 4 + name_len + 4 + 4ull * rank + 4ull * numel;
        if (consumed > remaining - 8) throw std::runtime_error("container: tensor overruns section");
        remaining -= consumed;
        tensors.emplace(std::move(name), std::move(t));
    }
    if (remaining != 8) throw std::runtime_error("container: malformed section");
    step = get_u64(in);
}

void save_checkpoint(const std::string& path, const ParameterStore& store) {
    std::map<std::string, Tensor> all = store.entries();
    for (const auto& [name, t] : store.adam_m()) all.emplace(name + ".m", t);
    for (const auto& [name, t] : store.adam_v()) all.emplace(name + ".v", t);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    write_container(out, all, store.step());
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

ParameterStore load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::map<std::string, Tensor> all;
    uint64_t step = 0;
    read_container(in, file_size_bytes(path), all, step);

    ParameterStore store;
    auto ends_with = [](const std::string& s, const char* suffix) {
        const size_t n = std::strlen(suffix);
        return s.size() > n && s.compare(s.size() - n, n, suffix) == 0;
    };
    for (auto& [name, t] : all) {
        if (ends_with(name, ".m") || ends_with(name, ".v")) continue;
        store.add(name, std::move(t));
    }
    for (auto& [name, t] : all) {
        if (ends_with(name, ".m")) {
            const std::string base = name.substr(0, name.size() - 2);
            if (store.has(base)) store.adam_m()[base] = std::move(t);
        } else if (ends_with(name, ".v")) {
            const std::string base = name.substr(0, name.size() - 2);
            if (store.has(base)) store.adam_v()[base] = std::move(t);
        }
    }
    store.set_step(step);
    return store;
}

uint64_t file_size_bytes(const std::string& path) {
    std::error_code ec;
    const auto n = std::filesystem::file_size(path, ec);
    if (ec) throw std::runtime_error("cannot stat file: " + path);
    return static_cast<uint64_t>(n);
}

}  // namespace sccf
