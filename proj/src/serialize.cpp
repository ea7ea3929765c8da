#include "rpt/serialize.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

namespace rpt {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) {
            throw ContractError("checkpoint truncated at offset " + std::to_string(pos));
        }
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

std::size_t tensor_record_size(const std::string& name, const Shape& shape) {
    return 8 + name.size() + 8 + 8 * shape.size() + 8 * shape_numel(shape);
}

std::size_t checkpoint_size(const Checkpoint& ckpt) {
    std::size_t n = 4 + 4 + 8 + ckpt.meta_json.size() + 8;
    for (const auto& t : ckpt.tensors) n += tensor_record_size(t.name, t.tensor.shape());
    return n;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out;
    out.reserve(checkpoint_size(ckpt));
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, ckpt.meta_json.size());
    out.insert(out.end(), ckpt.meta_json.begin(), ckpt.meta_json.end());
    put_u64(out, ckpt.tensors.size());
    for (const auto& t : ckpt.tensors) {
        put_u64(out, t.name.size());
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_u64(out, t.tensor.rank());
        for (std::size_t e : t.tensor.shape()) put_u64(out, e);
        for (double v : t.tensor.data()) put_f64(out, v);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw ContractError("not a checkpoint file: bad magic");
    }
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw ContractError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.meta_json = r.str(r.u64());
    const std::uint64_t count = r.u64();
    ckpt.tensors.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = r.str(r.u64());
        const std::uint64_t rank = r.u64();
        Shape shape(rank);
        for (auto& e : shape) e = r.u64();
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = r.f64();
        nt.tensor = Tensor::from_data(std::move(shape), std::move(data));
        ckpt.tensors.push_back(std::move(nt));
    }
    if (r.pos != bytes.size()) {
        throw ContractError("checkpoint has trailing bytes");
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContractError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ContractError("cannot open: " + path.string());
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint8_t> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw ContractError("read failed: " + path.string());
    return decode_checkpoint(bytes);
}

std::vector<std::uint8_t> encode_parameters(const std::vector<Parameter>& params) {
    Checkpoint ckpt;
    ckpt.meta_json = "{}";
    for (const auto& p : params) ckpt.tensors.push_back({p.name, p.tensor});
    return encode_checkpoint(ckpt);
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericError("sha256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(const std::string& text) {
    return sha256_hex(std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace rpt
