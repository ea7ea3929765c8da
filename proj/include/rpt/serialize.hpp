#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rpt/params.hpp"
#include "rpt/tensor.hpp"

namespace rpt {

// Checkpoint container: magic "RPTL", u32 format version, one JSON metadata
// blob, then named tensor records. Per record: u64 name length + UTF-8 name,
// u64 rank, u64 extents, then IEEE-754 f64 data, row-major. All integers and
// floats little-endian.

inline constexpr char kCheckpointMagic[4] = {'R', 'P', 'T', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Checkpoint {
    std::string meta_json;  // "{}" when a file carries no metadata
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Exact on-disk size of a record/file; used by tests that pin the format.
std::size_t tensor_record_size(const std::string& name, const Shape& shape);
std::size_t checkpoint_size(const Checkpoint& ckpt);

// Canonical byte serialization of a parameter set (registration order),
// used for the frozen-backbone fingerprint.
std::vector<std::uint8_t> encode_parameters(const std::vector<Parameter>& params);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_hex(const std::string& text);

}  // namespace rpt
