#include <doctest.h>

#include "rpt/serialize.hpp"
#include "test_helpers.hpp"

using namespace rpt;

TEST_SUITE_BEGIN("serialize");

TEST_CASE("checkpoint round trip preserves bytes exactly") {
    Rng rng(31);
    Checkpoint ckpt;
    ckpt.meta_json = R"({"purpose":"round-trip"})";
    ckpt.tensors.push_back({"alpha.w", test::random_tensor({3, 5}, rng, -10, 10, false)});
    ckpt.tensors.push_back({"beta.b", test::random_tensor({7}, rng, -1e300, 1e300, false)});
    ckpt.tensors.push_back({"gamma", Tensor::scalar(-0.0)});

    auto dir = test::fresh_dir("serialize-roundtrip");
    save_checkpoint(dir / "x.ckpt", ckpt);
    Checkpoint loaded = load_checkpoint(dir / "x.ckpt");

    CHECK(loaded.meta_json == ckpt.meta_json);
    REQUIRE(loaded.tensors.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(loaded.tensors[i].name == ckpt.tensors[i].name);
        CHECK(loaded.tensors[i].tensor.shape() == ckpt.tensors[i].tensor.shape());
        CHECK(test::bitwise_equal(loaded.tensors[i].tensor.data(),
                                  ckpt.tensors[i].tensor.data()));
    }
}

TEST_CASE("on-disk layout: header magic, version, sizes") {
    Checkpoint ckpt;
    ckpt.meta_json = "{}";
    ckpt.tensors.push_back({"prompt.baked", Tensor::zeros({10, 64})});
    auto bytes = encode_checkpoint(ckpt);

    CHECK(bytes[0] == 'R');
    CHECK(bytes[1] == 'P');
    CHECK(bytes[2] == 'T');
    CHECK(bytes[3] == 'L');
    CHECK(bytes[4] == 1);  // version 1, little-endian u32

    // magic + version + meta length + meta + record count + one record:
    // name length + name + rank + 2 extents + 10*64 doubles
    const std::size_t expected = 4 + 4 + 8 + 2 + 8 +
                                 (8 + 12 + 8 + 16 + 10 * 64 * 8);
    CHECK(bytes.size() == expected);
    CHECK(checkpoint_size(ckpt) == expected);
    CHECK(tensor_record_size("prompt.baked", {10, 64}) == 8 + 12 + 8 + 16 + 10 * 64 * 8);
}

TEST_CASE("corrupt files are rejected") {
    Checkpoint ckpt;
    ckpt.meta_json = "{}";
    ckpt.tensors.push_back({"t", Tensor::zeros({2})});
    auto bytes = encode_checkpoint(ckpt);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 4);
    CHECK_THROWS_AS(decode_checkpoint(truncated), ContractError);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), ContractError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(trailing), ContractError);
}

TEST_CASE("sha256 known vector") {
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("parameter fingerprint is order- and value-sensitive") {
    Rng rng(32);
    std::vector<Parameter> a;
    a.push_back({"x", test::random_tensor({4}, rng, -1, 1, false), true});
    a.push_back({"y", test::random_tensor({4}, rng, -1, 1, false), true});
    std::vector<Parameter> b;
    for (const auto& p : a) b.push_back({p.name, p.tensor.detached_copy(), p.trainable});
    CHECK(sha256_hex(encode_parameters(a)) == sha256_hex(encode_parameters(b)));
    b[0].tensor.data_mut()[0] += 1e-15;
    CHECK(sha256_hex(encode_parameters(a)) != sha256_hex(encode_parameters(b)));
}

TEST_SUITE_END();
