#include "snag/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace snag {

namespace {

constexpr uint32_t kFormatVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i)
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, Scalar d) {
    uint64_t v = std::bit_cast<uint64_t>(d);
    for (int i = 0; i < 8; ++i)
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) {
        if (pos + n > buf.size())
            throw std::runtime_error(path + ": truncated checkpoint");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(
                     buf[pos + i]))
                 << (8 * i);
        pos += 4;
        return v;
    }
    Scalar f64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(
                     buf[pos + i]))
                 << (8 * i);
        pos += 8;
        return std::bit_cast<Scalar>(v);
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_echo) {
    std::string buf;
    buf += "SNCK";
    put_u32(buf, kFormatVersion);
    put_u32(buf, static_cast<uint32_t>(config_echo.size()));
    buf += config_echo;
    put_u32(buf, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params.items()) {
        put_u32(buf, static_cast<uint32_t>(name.size()));
        buf += name;
        put_u32(buf, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i)
            put_u32(buf, static_cast<uint32_t>(t.dim(i)));
        for (Scalar v : t.data()) put_f64(buf, v);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    Reader r{buf, 0, path};
    if (r.bytes(4) != "SNCK")
        throw std::runtime_error(path + ": not a checkpoint file");
    uint32_t ver = r.u32();
    if (ver != kFormatVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(ver));
    Checkpoint ck;
    ck.config_echo = r.bytes(r.u32());
    uint32_t count = r.u32();
    ck.entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = r.bytes(r.u32());
        uint32_t rank = r.u32();
        int64_t n = 1;
        for (uint32_t k = 0; k < rank; ++k) {
            e.shape.push_back(static_cast<int>(r.u32()));
            n *= e.shape.back();
        }
        e.values.resize(static_cast<size_t>(n));
        for (auto& v : e.values) v = r.f64();
        ck.entries.push_back(std::move(e));
    }
    if (r.pos != buf.size())
        throw std::runtime_error(path + ": trailing bytes after checkpoint");
    return ck;
}

void restore_checkpoint(ParamStore& params, const Checkpoint& ck) {
    if (ck.entries.size() != params.size())
        throw std::invalid_argument(
            "restore_checkpoint: parameter count mismatch: store has " +
            std::to_string(params.size()) + ", checkpoint has " +
            std::to_string(ck.entries.size()));
    for (const CheckpointEntry& e : ck.entries) {
        if (!params.has(e.name))
            throw std::invalid_argument(
                "restore_checkpoint: store lacks parameter " + e.name);
        Tensor& t = params.get(e.name);
        if (t.shape() != e.shape)
            throw std::invalid_argument(
                "restore_checkpoint: shape mismatch for " + e.name);
        t.mutable_data() = e.values;
    }
}

}  // namespace snag
