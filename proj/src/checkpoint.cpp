#include "capsforge/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace capsforge {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'S', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

void put_u16(std::ofstream& out, std::uint16_t v) {
    const char b[2] = {char(v & 0xff), char(v >> 8)};
    out.write(b, 2);
}

void put_u32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
    out.write(b, 4);
}

struct Reader {
    std::vector<std::uint8_t> data;
    std::size_t pos = 0;
    std::string path;

    void need(std::size_t n, const char* what) {
        if (pos + n > data.size())
            throw FormatError(path + ": truncated reading " + what + " at offset " + std::to_string(pos));
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return data[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const std::uint16_t v = std::uint16_t(data[pos]) | (std::uint16_t(data[pos + 1]) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const std::uint32_t v = std::uint32_t(data[pos]) | (std::uint32_t(data[pos + 1]) << 8) |
                                (std::uint32_t(data[pos + 2]) << 16) | (std::uint32_t(data[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, TensorF>>& tensors) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(kMagic, 4);
        put_u32(out, kVersion);
        put_u32(out, static_cast<std::uint32_t>(config_json.size()));
        out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
        put_u32(out, static_cast<std::uint32_t>(tensors.size()));
        for (const auto& [name, t] : tensors) {
            if (name.size() > 0xffff) throw ContractError("checkpoint: tensor name too long: " + name);
            put_u16(out, static_cast<std::uint16_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            if (t.ndim() > 0xff) throw ContractError("checkpoint: too many axes on " + name);
            out.put(static_cast<char>(t.ndim()));
            for (std::size_t d = 0; d < t.ndim(); ++d) put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
            out.put(static_cast<char>(kDtypeF32));
            static_assert(sizeof(float) == 4);
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(t.size() * sizeof(float)));
        }
        if (!out) throw IoError("short write to " + tmp);
    }
    fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    Reader r;
    r.path = path;
    in.seekg(0, std::ios::end);
    r.data.resize(static_cast<std::size_t>(in.tellg()));
    in.seekg(0, std::ios::beg);
    in.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
    if (!in) throw IoError("short read from " + path);

    r.need(4, "magic");
    if (std::memcmp(r.data.data(), kMagic, 4) != 0)
        throw FormatError(path + ": bad magic, not a checkpoint");
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    LoadedCheckpoint ck;
    const std::uint32_t cfg_len = r.u32("config length");
    ck.config_json = r.bytes(cfg_len, "config json");
    const std::uint32_t count = r.u32("tensor count");
    ck.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16("name length");
        const std::string name = r.bytes(name_len, "name");
        const std::uint8_t ndim = r.u8("ndim");
        Shape shape(ndim);
        for (std::uint8_t d = 0; d < ndim; ++d) shape[d] = r.u32("dim");
        const std::uint8_t dtype = r.u8("dtype");
        if (dtype != kDtypeF32)
            throw FormatError(path + ": tensor " + name + " has unsupported dtype " + std::to_string(dtype));
        const std::size_t n = shape_size(shape);
        std::vector<float> values(n);
        r.need(n * sizeof(float), "tensor data");
        std::memcpy(values.data(), r.data.data() + r.pos, n * sizeof(float));
        r.pos += n * sizeof(float);
        auto t = TensorF::from_data(std::move(shape), std::move(values), false);
        t.set_name(name);
        ck.tensors.emplace_back(name, std::move(t));
    }
    if (r.pos != r.data.size())
        throw FormatError(path + ": " + std::to_string(r.data.size() - r.pos) + " trailing bytes");
    return ck;
}

const TensorF* LoadedCheckpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void fill_named(const LoadedCheckpoint& ck, const std::vector<std::pair<std::string, TensorF>>& dst) {
    for (const auto& [name, target] : dst) {
        const TensorF* src = ck.find(name);
        if (!src) throw IncompatibilityError("checkpoint does not contain tensor " + name);
        if (src->shape() != target.shape())
            throw IncompatibilityError("checkpoint tensor " + name + " has shape " + shape_str(src->shape()) +
                                       ", model expects " + shape_str(target.shape()));
        std::copy(src->values().begin(), src->values().end(), target.mutable_data());
    }
}

}  // namespace capsforge
