#include <doctest.h>

#include <cmath>

#include "test_helpers.hpp"

using namespace rpt;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and hand products") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor c = ops::matmul(a, eye);
    CHECK(c.data()[0] == 1.0);
    CHECK(c.data()[1] == 2.0);
    CHECK(c.data()[2] == 3.0);
    CHECK(c.data()[3] == 4.0);

    Tensor row = Tensor::from_data({1, 2}, {1, 2});
    Tensor col = Tensor::from_data({2, 1}, {3, 4});
    CHECK(ops::matmul(row, col).value() == doctest::Approx(11.0).epsilon(1e-15));

    Tensor bad = Tensor::from_data({3, 1}, {1, 2, 3});
    CHECK_THROWS_AS(ops::matmul(row, bad), DimensionError);
    CHECK_THROWS_WITH_AS(ops::matmul(row, bad),
                         "matmul: inner extents differ, [1x2] x [3x1]", DimensionError);
}

TEST_CASE("matmul gradients match central differences") {
    Rng rng(11);
    Tensor a = test::random_tensor({3, 4}, rng);
    Tensor b = test::random_tensor({4, 2}, rng);
    double err = test::op_fd_max_rel_err([&]() { return ops::matmul(a, b); }, {a, b}, 101);
    CHECK(err < 1e-6);
}

TEST_CASE("matmul_bt gradients match central differences") {
    Rng rng(12);
    Tensor a = test::random_tensor({3, 4}, rng);
    Tensor b = test::random_tensor({5, 4}, rng);
    double err = test::op_fd_max_rel_err([&]() { return ops::matmul_bt(a, b); }, {a, b}, 102);
    CHECK(err < 1e-6);
}

TEST_CASE("layer_norm examples") {
    Tensor gamma = Tensor::filled({4}, 1.0);
    Tensor beta = Tensor::zeros({4});

    SUBCASE("constant row maps to zero") {
        Tensor x = Tensor::filled({4}, 3.7);
        Tensor y = ops::layer_norm(x, gamma, beta);
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SUBCASE("hand computation on (1,3)") {
        Tensor g2 = Tensor::filled({2}, 1.0);
        Tensor b2 = Tensor::zeros({2});
        Tensor x = Tensor::from_data({2}, {1.0, 3.0});
        Tensor y = ops::layer_norm(x, g2, b2, 1e-5);
        const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
        CHECK(y.data()[0] == doctest::Approx(-expected).epsilon(1e-12));
        CHECK(y.data()[1] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(std::fabs(y.data()[1] - 1.0) < 1e-4);
    }
    SUBCASE("zero vector maps to zero") {
        Tensor x = Tensor::zeros({4});
        Tensor y = ops::layer_norm(x, gamma, beta);
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SUBCASE("zero-width rows rejected") {
        Tensor x = Tensor::zeros({2, 0});
        Tensor g0 = Tensor::zeros({0});
        CHECK_THROWS_AS(ops::layer_norm(x, g0, g0), DimensionError);
    }
}

TEST_CASE("layer_norm standardizes rows before the affine") {
    Rng rng(13);
    Tensor x = test::random_tensor({5, 8}, rng, -2.0, 2.0, false);
    Tensor gamma = Tensor::filled({8}, 1.0);
    Tensor beta = Tensor::zeros({8});
    Tensor y = ops::layer_norm(x, gamma, beta, 1e-8);
    for (std::size_t r = 0; r < 5; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 8; ++j) mean += y.at(r, j);
        mean /= 8.0;
        for (std::size_t j = 0; j < 8; ++j) var += (y.at(r, j) - mean) * (y.at(r, j) - mean);
        var /= 8.0;
        CHECK(std::fabs(mean) < 1e-10);
        CHECK(std::fabs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("layer_norm gradients match central differences") {
    Rng rng(14);
    Tensor x = test::random_tensor({3, 6}, rng);
    Tensor gamma = test::random_tensor({6}, rng, 0.5, 1.5);
    Tensor beta = test::random_tensor({6}, rng, -0.2, 0.2);
    double err = test::op_fd_max_rel_err(
        [&]() { return ops::layer_norm(x, gamma, beta, 1e-5); }, {x, gamma, beta}, 103);
    CHECK(err < 1e-6);
}

TEST_CASE("softmax examples and properties") {
    SUBCASE("equal logits give the uniform distribution") {
        Tensor x = Tensor::filled({5}, 2.0);
        Tensor y = ops::softmax(x, 0);
        for (double v : y.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
    }
    SUBCASE("hand computation (0, ln 3)") {
        Tensor x = Tensor::from_data({2}, {0.0, std::log(3.0)});
        Tensor y = ops::softmax(x, 0);
        CHECK(y.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(y.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("rows sum to one and stay positive") {
        Rng rng(15);
        Tensor x = test::random_tensor({7, 9}, rng, -30.0, 30.0, false);
        Tensor y = ops::softmax(x, 1);
        for (std::size_t r = 0; r < 7; ++r) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 9; ++j) {
                CHECK(y.at(r, j) > 0.0);
                sum += y.at(r, j);
            }
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
    SUBCASE("axis out of range") {
        Tensor x = Tensor::zeros({2, 2});
        CHECK_THROWS_AS(ops::softmax(x, 2), DimensionError);
    }
    SUBCASE("gradients on both axes") {
        Rng rng(16);
        Tensor x = test::random_tensor({4, 3}, rng);
        CHECK(test::op_fd_max_rel_err([&]() { return ops::softmax(x, 0); }, {x}, 104) < 1e-6);
        CHECK(test::op_fd_max_rel_err([&]() { return ops::softmax(x, 1); }, {x}, 105) < 1e-6);
    }
}

TEST_CASE("cross_entropy examples") {
    SUBCASE("uniform logits cost ln V") {
        Tensor logits = Tensor::zeros({64});
        Tensor loss = ops::cross_entropy(logits, 17);
        CHECK(loss.value() == doctest::Approx(std::log(64.0)).epsilon(1e-14));
    }
    SUBCASE("out-of-range target") {
        Tensor logits = Tensor::zeros({4});
        CHECK_THROWS_AS(ops::cross_entropy(logits, 4), IndexError);
    }
    SUBCASE("gradients match central differences") {
        Rng rng(17);
        Tensor logits = test::random_tensor({6}, rng);
        CHECK(test::op_fd_max_rel_err([&]() { return ops::cross_entropy(logits, 2); },
                                      {logits}, 106) < 1e-6);
    }
}

TEST_CASE("embedding_lookup, concat, slices") {
    Rng rng(18);
    Tensor table = test::random_tensor({10, 4}, rng);
    std::vector<std::size_t> ids = {3, 3, 7, 0};
    Tensor rows = ops::embedding_lookup(table, ids);
    CHECK(rows.shape() == Shape{4, 4});
    CHECK(rows.at(0, 2) == table.at(3, 2));
    CHECK_THROWS_AS(ops::embedding_lookup(table, {10}), IndexError);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::embedding_lookup(table, ids); },
                                  {table}, 107) < 1e-6);

    Tensor a = test::random_tensor({2, 3}, rng);
    Tensor b = test::random_tensor({4, 3}, rng);
    Tensor cat = ops::concat_seq(a, b);
    CHECK(cat.shape() == Shape{6, 3});
    CHECK(test::op_fd_max_rel_err([&]() { return ops::concat_seq(a, b); }, {a, b}, 108) <
          1e-6);

    Tensor empty = Tensor::zeros({0, 3});
    Tensor same = ops::concat_seq(empty, b);
    CHECK(test::bitwise_equal(same.data(), b.data()));

    CHECK(test::op_fd_max_rel_err([&]() { return ops::slice_rows(cat, 1, 3); }, {cat}, 109) <
          1e-6);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::slice_cols(cat, 1, 2); }, {cat}, 110) <
          1e-6);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::concat_cols(a, a); }, {a}, 111) < 1e-6);
}

TEST_CASE("elementwise ops match central differences") {
    Rng rng(19);
    Tensor x = test::random_tensor({3, 5}, rng, -2.0, 2.0);
    Tensor y = test::random_tensor({3, 5}, rng, -2.0, 2.0);
    Tensor bias = test::random_tensor({5}, rng);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::add(x, y); }, {x, y}, 112) < 1e-6);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::mul(x, y); }, {x, y}, 113) < 1e-6);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::scale(x, -1.7); }, {x}, 114) < 1e-6);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::add_rowwise(x, bias); }, {x, bias},
                                  115) < 1e-6);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::tanh(x); }, {x}, 116) < 1e-6);
    CHECK(test::op_fd_max_rel_err([&]() { return ops::sigmoid(x); }, {x}, 117) < 1e-6);
    // relu is kinked at 0; the random values stay clear of it
    CHECK(test::op_fd_max_rel_err([&]() { return ops::relu(x); }, {x}, 118) < 1e-6);
}

TEST_CASE("masked softmax zeroes dropped entries") {
    Rng rng(20);
    Tensor x = test::random_tensor({3, 4}, rng);
    std::vector<std::uint8_t> keep = {1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 0, 1};
    Tensor y = ops::masked_rows_softmax(x, keep);
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) CHECK(y.data()[i] == 0.0);
    }
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 4; ++c) sum += y.at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(test::op_fd_max_rel_err([&]() { return ops::masked_rows_softmax(x, keep); }, {x},
                                  119) < 1e-6);

    std::vector<std::uint8_t> dead_row = {0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
    CHECK_THROWS_AS(ops::masked_rows_softmax(x, dead_row), ContractError);
}

TEST_CASE("dropout") {
    Rng rng(21);
    Tensor x = test::random_tensor({4, 8}, rng);

    SUBCASE("training=false is the identity, bitwise") {
        Rng drng(5);
        Tensor y = ops::dropout(x, 0.3, false, drng);
        CHECK(test::bitwise_equal(x.data(), y.data()));
    }
    SUBCASE("survivors are scaled by 1/(1-p)") {
        Rng drng(5);
        Tensor y = ops::dropout(x, 0.5, true, drng);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = y.data()[i];
            CHECK((v == 0.0 || v == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-15)));
        }
    }
    SUBCASE("gradients with a replayed mask") {
        double err = test::op_fd_max_rel_err(
            [&]() {
                Rng drng(40);
                return ops::dropout(x, 0.4, true, drng);
            },
            {x}, 120);
        CHECK(err < 1e-6);
    }
    SUBCASE("rate validation") {
        Rng drng(5);
        CHECK_THROWS_AS(ops::dropout(x, 1.0, true, drng), ContractError);
        CHECK_THROWS_AS(ops::dropout(x, -0.1, true, drng), ContractError);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("loss = sum(x) gives all-ones gradient") {
        Tensor x = Tensor::filled({3, 2}, 0.5, true);
        ops::sum(x).backward();
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    SUBCASE("constant loss leaves gradients absent") {
        Tensor x = Tensor::filled({3}, 1.0, true);
        Tensor c = Tensor::scalar(2.0);
        c.backward();
        CHECK(!x.has_grad());
    }
    SUBCASE("non-scalar loss is rejected") {
        Tensor x = Tensor::filled({3}, 1.0, true);
        CHECK_THROWS_AS(x.backward(), ContractError);
    }
    SUBCASE("repeated backward accumulates") {
        Tensor x = Tensor::filled({2}, 1.0, true);
        Tensor loss = ops::sum(x);
        loss.backward();
        loss.backward();
        for (double g : x.grad()) CHECK(g == 2.0);
        x.zero_grad();
        CHECK(!x.has_grad());
    }
    SUBCASE("no gradient lands on requires_grad=false tensors") {
        Tensor x = Tensor::filled({2}, 1.0, true);
        Tensor y = Tensor::filled({2}, 3.0, false);
        ops::sum(ops::mul(x, y)).backward();
        CHECK(x.has_grad());
        CHECK(!y.has_grad());
    }
}

TEST_CASE("two-layer MLP gradients match central differences") {
    Rng rng(22);
    Tensor x = test::random_tensor({1, 6}, rng, -1.0, 1.0, false);
    Tensor w1 = test::random_tensor({6, 5}, rng);
    Tensor b1 = test::random_tensor({5}, rng);
    Tensor w2 = test::random_tensor({5, 3}, rng);
    Tensor b2 = test::random_tensor({3}, rng);

    auto loss_fn = [&]() {
        Tensor h = ops::relu(ops::add_rowwise(ops::matmul(x, w1), b1));
        Tensor logits = ops::reshape(ops::add_rowwise(ops::matmul(h, w2), b2), {3});
        return ops::cross_entropy(logits, 1);
    };
    std::vector<Parameter> params;
    params.push_back({"w1", w1, true});
    params.push_back({"b1", b1, true});
    params.push_back({"w2", w2, true});
    params.push_back({"b2", b2, true});
    std::vector<Parameter*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);

    GradCheckReport report = grad_check(loss_fn, ptrs, 1e-5, 1e-6);
    CHECK(report.passed);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("backward is bitwise deterministic") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = test::random_tensor({4, 4}, rng);
        Tensor w = test::random_tensor({4, 4}, rng);
        Tensor g = test::random_tensor({4}, rng, 0.5, 1.5);
        Tensor b = test::random_tensor({4}, rng);
        Tensor h = ops::layer_norm(ops::matmul(x, w), g, b, 1e-5);
        ops::sum(ops::mul(h, h)).backward();
        auto grad = w.grad();
        return std::vector<double>(grad.begin(), grad.end());
    };
    auto a = run(77);
    auto b = run(77);
    CHECK(test::bitwise_equal(a, b));
}

TEST_CASE("grad_check contract") {
    SUBCASE("linear function agrees almost exactly") {
        Rng rng(23);
        Tensor theta = test::random_tensor({4}, rng);
        Tensor weights = test::random_tensor({4}, rng, 0.5, 2.0, false);
        Parameter p{"theta", theta, true};
        std::vector<Parameter*> params = {&p};
        auto report = grad_check([&]() { return ops::sum(ops::mul(theta, weights)); },
                                 params, 1e-5, 1e-10);
        CHECK(report.passed);
        CHECK(report.max_rel_err < 1e-10);
    }
    SUBCASE("constant function passes with zero error") {
        Tensor theta = Tensor::filled({3}, 1.0, true);
        Parameter p{"theta", theta, true};
        std::vector<Parameter*> params = {&p};
        auto report = grad_check([]() { return Tensor::scalar(4.0); }, params, 1e-5, 1e-10);
        CHECK(report.passed);
        CHECK(report.max_rel_err == 0.0);
    }
    SUBCASE("non-finite values are flagged with the parameter name") {
        Tensor theta = Tensor::filled({1}, 2.0, true);
        Parameter p{"theta.bad", theta, true};
        std::vector<Parameter*> params = {&p};
        auto evil = [&]() {
            Tensor shifted = ops::scale(theta, 1e200);
            return ops::sum(ops::mul(shifted, shifted));  // overflows to inf
        };
        CHECK_THROWS_AS(grad_check(evil, params, 1e-5, 1e-6), NumericError);
    }
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0}), DimensionError);
    Tensor x = Tensor::zeros({2, 3});
    CHECK(x.size() == 6);
    CHECK(shape_to_string(x.shape()) == "[2x3]");
    Tensor s = Tensor::scalar(3.0);
    CHECK(s.value() == 3.0);
    CHECK_THROWS_AS(x.grad(), ContractError);
}

TEST_SUITE_END();
