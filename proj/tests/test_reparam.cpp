#include <doctest.h>

#include <cmath>

#include "rpt/reparam.hpp"
#include "rpt/serialize.hpp"
#include "test_helpers.hpp"

using namespace rpt;

namespace {

// Brute-force oracle: materialize the network and count elements.
std::size_t enumerate_trainable(const ReparamSpec& spec, std::size_t d, std::size_t n) {
    std::size_t total = n * d;  // the prompt matrix itself
    if (spec.kind != ReparamKind::identity) {
        ReparamNet net = ReparamNet::init(spec, d, n, 1);
        total += net.params().total_elements();
    }
    return total;
}

Tensor fill_named(ReparamNet& net, const std::string& name, std::vector<double> values) {
    Parameter& p = net.params().at(name);
    REQUIRE(p.tensor.size() == values.size());
    std::copy(values.begin(), values.end(), p.tensor.data_mut().begin());
    return p.tensor;
}

}  // namespace

TEST_SUITE_BEGIN("reparam");

TEST_CASE("init_prompt strategies") {
    Rng rng(41);
    Tensor emb = test::random_tensor({16, 8}, rng, -0.7, 0.7, false);

    SUBCASE("random-uniform entries stay inside [-0.5, 0.5]") {
        PromptBank bank = init_prompt(PromptInit::random_uniform, 20, emb, 5);
        CHECK(bank.P.shape() == Shape{20, 8});
        for (double v : bank.P.data()) {
            CHECK(v >= -0.5);
            CHECK(v <= 0.5);
        }
    }
    SUBCASE("sampled-vocab rows copy embedding rows") {
        PromptBank bank = init_prompt(PromptInit::sampled_vocab, 12, emb, 5);
        for (std::size_t i = 0; i < 12; ++i) {
            bool matched = false;
            for (std::size_t r = 0; r < 16 && !matched; ++r) {
                bool same = true;
                for (std::size_t j = 0; j < 8; ++j) {
                    if (bank.P.at(i, j) != emb.at(r, j)) {
                        same = false;
                        break;
                    }
                }
                matched = same;
            }
            CHECK(matched);
        }
    }
    SUBCASE("same seed gives bitwise-identical prompts") {
        PromptBank a = init_prompt(PromptInit::random_uniform, 6, emb, 9);
        PromptBank b = init_prompt(PromptInit::random_uniform, 6, emb, 9);
        CHECK(test::bitwise_equal(a.P.data(), b.P.data()));
        PromptBank c = init_prompt(PromptInit::random_uniform, 6, emb, 10);
        CHECK(!test::bitwise_equal(a.P.data(), c.P.data()));
    }
    SUBCASE("n = 0 is a contract error") {
        CHECK_THROWS_AS(init_prompt(PromptInit::random_uniform, 0, emb, 1), ContractError);
    }
}

TEST_CASE("apply_reparam hand example, d=2 m=1") {
    ReparamSpec spec;
    spec.kind = ReparamKind::residual_mlp;
    spec.m = 1;
    ReparamNet net = ReparamNet::init(spec, 2, 1, 3);
    fill_named(net, "reparam.shared.w_down", {1.0, 1.0});
    fill_named(net, "reparam.shared.w_up", {1.0, -1.0});
    fill_named(net, "reparam.shared.ln.g", {1.0, 1.0});
    fill_named(net, "reparam.shared.ln.b", {0.0, 0.0});

    Tensor prompt = Tensor::from_data({1, 2}, {1.0, 2.0});
    Tensor out = net.apply(prompt);
    // down: 3, relu: 3, up: (3,-3), layer norm ~ (1,-1), plus skip (1,2)
    CHECK(std::fabs(out.at(0, 0) - 2.0) < 1e-4);
    CHECK(std::fabs(out.at(0, 1) - 1.0) < 1e-4);

    spec.kind = ReparamKind::mlp_no_skip;
    ReparamNet bare = ReparamNet::init(spec, 2, 1, 3);
    fill_named(bare, "reparam.shared.w_down", {1.0, 1.0});
    fill_named(bare, "reparam.shared.w_up", {1.0, -1.0});
    Tensor phi = bare.apply(prompt);
    CHECK(std::fabs(phi.at(0, 0) - 1.0) < 1e-4);
    CHECK(std::fabs(phi.at(0, 1) + 1.0) < 1e-4);
}

TEST_CASE("residual identity: zeroed up path is the exact identity") {
    ReparamSpec spec;
    spec.kind = ReparamKind::residual_mlp;
    spec.m = 5;
    ReparamNet net = ReparamNet::init(spec, 8, 4, 7);
    auto& w_up = net.params().at("reparam.shared.w_up").tensor;
    std::fill(w_up.data_mut().begin(), w_up.data_mut().end(), 0.0);
    // beta starts at zero, gamma at one; w_down arbitrary

    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor prompt = test::random_tensor({4, 8}, rng, -3.0, 3.0, false);
        Tensor out = net.apply(prompt);
        CHECK(test::bitwise_equal(out.data(), prompt.data()));
    }
}

TEST_CASE("identity kind returns the prompt unchanged") {
    ReparamSpec spec;
    spec.kind = ReparamKind::identity;
    ReparamNet net = ReparamNet::init(spec, 4, 3, 1);
    CHECK(net.params().all().empty());
    Rng rng(43);
    Tensor prompt = test::random_tensor({3, 4}, rng);
    Tensor out = net.apply(prompt);
    CHECK(test::bitwise_equal(out.data(), prompt.data()));
}

TEST_CASE("per-token independence for MLP kinds") {
    ReparamSpec spec;
    spec.kind = ReparamKind::residual_mlp;
    spec.m = 6;
    ReparamNet net = ReparamNet::init(spec, 8, 5, 11);
    Rng rng(44);
    Tensor prompt = test::random_tensor({5, 8}, rng, -1.0, 1.0, false);

    SUBCASE("permuting rows permutes outputs the same way") {
        Tensor out = net.apply(prompt);
        std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
        std::vector<double> permuted(prompt.size());
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 8; ++j) {
                permuted[i * 8 + j] = prompt.at(perm[i], j);
            }
        }
        Tensor out_perm = net.apply(Tensor::from_data({5, 8}, std::move(permuted)));
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 8; ++j) {
                CHECK(out_perm.at(i, j) == out.at(perm[i], j));
            }
        }
    }
    SUBCASE("changing row i changes only row i") {
        Tensor base = net.apply(prompt);
        Tensor bumped_prompt = prompt.detached_copy();
        bumped_prompt.data_mut()[2 * 8 + 3] += 0.25;
        Tensor bumped = net.apply(bumped_prompt);
        for (std::size_t i = 0; i < 5; ++i) {
            bool row_equal = true;
            for (std::size_t j = 0; j < 8; ++j) {
                if (bumped.at(i, j) != base.at(i, j)) row_equal = false;
            }
            CHECK(row_equal == (i != 2));
        }
    }
    SUBCASE("identical rows map to identical outputs under a shared net") {
        std::vector<double> data(2 * 8);
        Rng r2(45);
        for (std::size_t j = 0; j < 8; ++j) data[j] = r2.uniform(-1, 1);
        for (std::size_t j = 0; j < 8; ++j) data[8 + j] = data[j];
        ReparamNet net2 = ReparamNet::init(spec, 8, 2, 11);
        Tensor out = net2.apply(Tensor::from_data({2, 8}, std::move(data)));
        for (std::size_t j = 0; j < 8; ++j) CHECK(out.at(0, j) == out.at(1, j));
    }
}

TEST_CASE("lstm kind is sequence dependent") {
    ReparamSpec spec;
    spec.kind = ReparamKind::lstm;
    spec.lstm_hidden = 12;
    ReparamNet net = ReparamNet::init(spec, 8, 4, 13);
    Rng rng(46);
    Tensor prompt = test::random_tensor({4, 8}, rng, -1.0, 1.0, false);

    Tensor base = net.apply(prompt);
    Tensor bumped_prompt = prompt.detached_copy();
    bumped_prompt.data_mut()[0] += 0.5;  // perturb row 0
    Tensor bumped = net.apply(bumped_prompt);

    bool some_other_row_changed = false;
    for (std::size_t i = 1; i < 4; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            if (bumped.at(i, j) != base.at(i, j)) some_other_row_changed = true;
        }
    }
    CHECK(some_other_row_changed);
}

TEST_CASE("lstm gradients flow to every weight") {
    ReparamSpec spec;
    spec.kind = ReparamKind::lstm;
    spec.lstm_hidden = 6;
    ReparamNet net = ReparamNet::init(spec, 4, 3, 14);
    Rng rng(47);
    Tensor prompt = test::random_tensor({3, 4}, rng, -1.0, 1.0, true);

    Parameter p_prompt{"prompt.P", prompt, true};
    std::vector<Parameter*> params = {&p_prompt};
    for (auto& p : net.params().all()) params.push_back(&p);

    Rng wrng(48);
    Tensor weights = test::random_tensor({3, 4}, wrng, -1, 1, false);
    auto loss_fn = [&]() { return ops::sum(ops::mul(net.apply(prompt), weights)); };
    GradCheckReport report = grad_check(loss_fn, params, 1e-5, 1e-5);
    CHECK(report.passed);
}

TEST_CASE("separate networks") {
    ReparamSpec spec;
    spec.kind = ReparamKind::residual_mlp;
    spec.m = 3;
    spec.shared = false;
    ReparamNet net = ReparamNet::init(spec, 6, 4, 15);
    CHECK(net.params().find("reparam.0.w_down") != nullptr);
    CHECK(net.params().find("reparam.3.ln.g") != nullptr);
    CHECK(net.params().find("reparam.shared.w_down") == nullptr);

    // identical rows now go through different networks
    std::vector<double> data(2 * 6, 0.3);
    ReparamNet net2 = ReparamNet::init(spec, 6, 2, 15);
    Tensor out = net2.apply(Tensor::from_data({2, 6}, std::move(data)));
    bool all_equal = true;
    for (std::size_t j = 0; j < 6; ++j) {
        if (out.at(0, j) != out.at(1, j)) all_equal = false;
    }
    CHECK(!all_equal);

    SUBCASE("separate lstm is rejected") {
        ReparamSpec bad;
        bad.kind = ReparamKind::lstm;
        bad.shared = false;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
}

TEST_CASE("bake") {
    Rng rng(49);
    Tensor emb = test::random_tensor({16, 8}, rng, -0.5, 0.5, false);
    PromptBank bank = init_prompt(PromptInit::sampled_vocab, 5, emb, 21);

    SUBCASE("identity bake is bitwise P") {
        ReparamSpec spec;
        spec.kind = ReparamKind::identity;
        ReparamNet net = ReparamNet::init(spec, 8, 5, 1);
        PromptBank baked = bake(spec, net, bank);
        CHECK(baked.baked);
        CHECK(test::bitwise_equal(baked.P.data(), bank.P.data()));
        CHECK(!baked.P.requires_grad());
    }
    SUBCASE("residual bake equals a live apply") {
        ReparamSpec spec;
        spec.kind = ReparamKind::residual_mlp;
        spec.m = 4;
        ReparamNet net = ReparamNet::init(spec, 8, 5, 22);
        PromptBank baked = bake(spec, net, bank);
        Tensor live = net.apply(bank.P);
        CHECK(test::bitwise_equal(baked.P.data(), live.data()));
    }
}

TEST_CASE("prompt checkpoint files") {
    Rng rng(50);
    Tensor emb = test::random_tensor({16, 8}, rng, -0.5, 0.5, false);
    PromptBank bank = init_prompt(PromptInit::random_uniform, 10, emb, 23);
    ReparamSpec spec;
    spec.kind = ReparamKind::residual_mlp;
    spec.m = 4;
    ReparamNet net = ReparamNet::init(spec, 8, 10, 24);
    auto dir = test::fresh_dir("prompt-ckpt");

    SUBCASE("live checkpoint round trip") {
        save_prompt_checkpoint(dir / "live.prompt", bank, &net);
        LoadedPrompt loaded = load_prompt_checkpoint(dir / "live.prompt");
        CHECK(!loaded.bank.baked);
        CHECK(loaded.spec == spec);
        CHECK(test::bitwise_equal(loaded.bank.P.data(), bank.P.data()));
        REQUIRE(loaded.net.has_value());
        Tensor a = net.apply(bank.P);
        Tensor b = loaded.net->apply(loaded.bank.P);
        CHECK(test::bitwise_equal(a.data(), b.data()));
    }
    SUBCASE("baked checkpoint holds exactly n*d prompt values and nothing else") {
        PromptBank baked = bake(spec, net, bank);
        save_prompt_checkpoint(dir / "baked.prompt", baked, nullptr);
        Checkpoint raw = load_checkpoint(dir / "baked.prompt");
        REQUIRE(raw.tensors.size() == 1);
        CHECK(raw.tensors[0].name == "prompt.baked");
        CHECK(raw.tensors[0].tensor.size() == 10 * 8);

        // exact file size: header + meta + one record of n*d doubles
        const std::size_t expected =
            4 + 4 + 8 + raw.meta_json.size() + 8 + tensor_record_size("prompt.baked", {10, 8});
        CHECK(std::filesystem::file_size(dir / "baked.prompt") == expected);

        LoadedPrompt loaded = load_prompt_checkpoint(dir / "baked.prompt");
        CHECK(loaded.bank.baked);
        CHECK(!loaded.net.has_value());
        CHECK(test::bitwise_equal(loaded.bank.P.data(), baked.P.data()));
    }
}

TEST_CASE("count_params") {
    SUBCASE("table anchors: 77K and 462K") {
        ReparamSpec identity;
        identity.kind = ReparamKind::identity;
        ParamCounts pt = count_params(identity, 768, 100);
        CHECK(pt.trainable == 76800);
        CHECK(pt.task_specific_at_inference == 76800);

        ReparamSpec res;
        res.kind = ReparamKind::residual_mlp;
        res.m = 250;
        ParamCounts rpt_counts = count_params(res, 768, 100);
        CHECK(rpt_counts.trainable == 462336);
        CHECK(rpt_counts.task_specific_at_inference == 76800);
    }
    SUBCASE("tiny derived case d=4 m=2 n=3") {
        ReparamSpec res;
        res.kind = ReparamKind::residual_mlp;
        res.m = 2;
        CHECK(count_params(res, 4, 3).trainable == 36);
        CHECK(count_params(res, 4, 3).trainable == enumerate_trainable(res, 4, 3));
    }
    SUBCASE("enumeration oracle across the grid") {
        for (ReparamKind kind : {ReparamKind::identity, ReparamKind::residual_mlp,
                                 ReparamKind::mlp_no_skip, ReparamKind::lstm}) {
            for (bool shared : {true, false}) {
                for (bool biases : {false, true}) {
                    if (!shared && kind != ReparamKind::residual_mlp &&
                        kind != ReparamKind::mlp_no_skip) {
                        continue;
                    }
                    for (auto [d, m, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{
                                               4, 2, 3},
                                           {8, 5, 10},
                                           {16, 3, 2}}) {
                        ReparamSpec spec;
                        spec.kind = kind;
                        spec.m = m;
                        spec.shared = shared;
                        spec.biases = biases;
                        spec.lstm_hidden = 7;
                        ParamCounts counts = count_params(spec, d, n);
                        CHECK(counts.trainable == enumerate_trainable(spec, d, n));
                        CHECK(counts.task_specific_at_inference == d * n);
                    }
                }
            }
        }
    }
    SUBCASE("residual overhead is exactly 2dm + 2d") {
        ReparamSpec identity;
        identity.kind = ReparamKind::identity;
        for (std::size_t d : {8u, 64u, 768u}) {
            for (std::size_t m : {2u, 50u, 400u}) {
                for (std::size_t n : {1u, 10u, 100u}) {
                    ReparamSpec res;
                    res.kind = ReparamKind::residual_mlp;
                    res.m = m;
                    CHECK(count_params(res, d, n).trainable -
                              count_params(identity, d, n).trainable ==
                          2 * d * m + 2 * d);
                }
            }
        }
    }
    SUBCASE("bias mode adds m + d per network") {
        ReparamSpec res;
        res.kind = ReparamKind::residual_mlp;
        res.m = 9;
        ReparamSpec with_bias = res;
        with_bias.biases = true;
        CHECK(count_params(with_bias, 32, 4).trainable -
                  count_params(res, 32, 4).trainable ==
              9 + 32);
    }
}

TEST_SUITE_END();
