#include <doctest.h>

#include <cmath>
#include <vector>

#include "testutil.hpp"
#include "vpit/tensor.hpp"

using namespace vpit;
using testutil::fd_check;

namespace {

Tensor rand_mat(Rng& rng, size_t n, size_t m, double stdev = 1.0) {
    return Tensor::randn({n, m}, rng, stdev);
}

std::vector<uint8_t> ones_mask(size_t n) { return std::vector<uint8_t>(n, 1); }

}  // namespace

TEST_CASE("grad of x*x at x=3 is 6") {
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    Tensor loss = mul(x, x);
    auto g = grad(loss, std::vector<Tensor>{x});
    CHECK(g[0][0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad of sum(softmax(v)) is zero") {
    Rng rng(7);
    Tensor v = rand_mat(rng, 3, 5);
    v.set_requires_grad(true);
    Tensor loss = sum(softmax_rows(v));
    auto g = grad(loss, std::vector<Tensor>{v});
    for (double gi : g[0]) CHECK(std::abs(gi) < 1e-12);
}

TEST_CASE("shared subexpression accumulates: d(x+x)/dx = 2") {
    Tensor x = Tensor::scalar(1.5).set_requires_grad(true);
    Tensor loss = add(x, x);
    auto g = grad(loss, std::vector<Tensor>{x});
    CHECK(g[0][0] == doctest::Approx(2.0));
}

TEST_CASE("non-participating params get zero gradients") {
    Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
    Tensor y = Tensor::scalar(5.0).set_requires_grad(true);
    Tensor loss = mul(x, x);
    auto g = grad(loss, std::vector<Tensor>{x, y});
    CHECK(g[0][0] == doctest::Approx(4.0));
    CHECK(g[1][0] == 0.0);
}

TEST_CASE("grad errors: non-scalar loss and non-leaf param") {
    Rng rng(3);
    Tensor x = rand_mat(rng, 2, 2);
    x.set_requires_grad(true);
    Tensor y = add(x, x);
    CHECK_THROWS_AS((void)grad(y, std::vector<Tensor>{x}), std::invalid_argument);
    Tensor loss = sum(y);
    CHECK_THROWS_AS((void)grad(loss, std::vector<Tensor>{y}), std::invalid_argument);
}

TEST_CASE("random 3-layer composition matches finite differences") {
    // matmul -> GELU -> rmsnorm -> matmul -> mean, shapes 5x4
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(derive_seed(1000, seed));
        Tensor x = rand_mat(rng, 5, 4);
        Tensor w1 = rand_mat(rng, 4, 4, 0.7).set_requires_grad(true);
        Tensor w2 = rand_mat(rng, 4, 3, 0.7).set_requires_grad(true);
        std::vector<Tensor> params{w1, w2};
        auto f = [&]() { return mean(matmul(rmsnorm_rows(gelu(matmul(x, w1))), w2)); };
        auto rep = fd_check(f, params);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("per-op gradients match central finite differences over 100 seeds") {
    // One composite graph touching every differentiable op, checked at
    // h = 1e-5 / rel tol 1e-4 on shapes <= 8x8.
    int fails = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(derive_seed(42, seed));
        size_t n = 2 + seed % 5;  // 2..6
        size_t d = 4 + seed % 4;  // 4..7

        {
            Tensor a = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor b = rand_mat(rng, n, d).set_requires_grad(true);
            std::vector<Tensor> ps{a, b};
            auto f = [&]() { return mean(mul(add(a, b), sub(a, b))); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor a = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor v = Tensor::randn({d}, rng).set_requires_grad(true);
            std::vector<Tensor> ps{a, v};
            auto f = [&]() { return mean(mul_rowvec(add_rowvec(a, v), v)); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor a = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor w = rand_mat(rng, d, 3).set_requires_grad(true);
            std::vector<Tensor> ps{a, w};
            auto f = [&]() { return mean(gelu(matmul(a, w))); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor a = rand_mat(rng, n, d).set_requires_grad(true);
            std::vector<Tensor> ps{a};
            auto f = [&]() { return mean(matmul(transpose(a), a)); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor a = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor probe = rand_mat(rng, n, d);
            std::vector<Tensor> ps{a};
            auto f = [&]() { return sum(mul(softmax_rows(a), probe)); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor a = rand_mat(rng, n, n).set_requires_grad(true);
            Tensor probe = rand_mat(rng, n, n);
            std::vector<Tensor> ps{a};
            auto f = [&]() { return sum(mul(causal_softmax(a), probe)); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor a = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor probe = rand_mat(rng, n, d);
            std::vector<Tensor> ps{a};
            auto f = [&]() { return sum(mul(rownorm_zm(a), probe)); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor a = rand_mat(rng, n, d).set_requires_grad(true);
            std::vector<size_t> idx{0, n - 1, 0, n / 2};
            Tensor probe = rand_mat(rng, idx.size(), d);
            std::vector<Tensor> ps{a};
            auto f = [&]() { return sum(mul(gather_rows(a, idx), probe)); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor a = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor b = rand_mat(rng, n, d).set_requires_grad(true);
            std::vector<Tensor> ps{a, b};
            auto f = [&]() {
                Tensor cr = concat_rows({a, b});
                Tensor cc = concat_cols({slice_cols(cr, 0, 2), slice_cols(cr, 1, d)});
                return mean(reshape(cc, {cc.numel()}));
            };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor p = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor t = rand_mat(rng, n, d).set_requires_grad(true);
            std::vector<uint8_t> mask(n, 0);
            for (size_t i = 0; i < n; ++i) mask[i] = (rng.uniform() < 0.7);
            mask[0] = 1;
            std::vector<Tensor> ps{p, t};
            auto f = [&]() { return cosine_loss(p, t, mask); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor logits = rand_mat(rng, n, 5).set_requires_grad(true);
            std::vector<int> targets(n);
            std::vector<uint8_t> mask(n, 1);
            for (size_t i = 0; i < n; ++i) targets[i] = static_cast<int>(rng.below(5));
            std::vector<Tensor> ps{logits};
            auto f = [&]() { return masked_cross_entropy(logits, targets, mask); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            // keep pred-target gaps away from the |x| kink so FD is valid
            Tensor p = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor t = rand_mat(rng, n, d);
            for (size_t i = 0; i < p.numel(); ++i) {
                if (std::abs(p.data()[i] - t.data()[i]) < 1e-3)
                    p.data()[i] += 2e-3;
            }
            std::vector<Tensor> ps{p};
            auto f = [&]() { return l1_loss(p, t, ones_mask(n)); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
        {
            Tensor p = rand_mat(rng, n, d).set_requires_grad(true);
            Tensor t = rand_mat(rng, n, d);
            std::vector<Tensor> ps{p};
            auto f = [&]() { return mse_loss(p, t); };
            if (fd_check(f, ps).max_rel_err >= 1e-4) ++fails;
        }
    }
    CHECK(fails == 0);
}

TEST_CASE("conv2d gradient matches finite differences") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(derive_seed(77, seed));
        Tensor x = Tensor::randn({2, 4, 4}, rng).set_requires_grad(true);
        Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5).set_requires_grad(true);
        Tensor b = Tensor::randn({3}, rng, 0.5).set_requires_grad(true);
        std::vector<Tensor> ps{x, w, b};
        auto f = [&]() { return mean(gelu(conv2d_3x3(x, w, b))); };
        auto rep = fd_check(f, ps);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("cosine_loss spec values") {
    Rng rng(9);
    Tensor t = rand_mat(rng, 3, 4);
    SUBCASE("identical rows give 0") {
        Tensor p = Tensor::from_data(t.shape(), t.data());
        CHECK(cosine_loss(p, t, ones_mask(3)).value() == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("opposite rows give 2") {
        std::vector<double> neg = t.data();
        for (double& x : neg) x = -x;
        Tensor p = Tensor::from_data(t.shape(), neg);
        CHECK(cosine_loss(p, t, ones_mask(3)).value() == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("orthogonal single row gives 1") {
        Tensor p = Tensor::from_data({1, 2}, {1.0, 0.0});
        Tensor q = Tensor::from_data({1, 2}, {0.0, 1.0});
        CHECK(cosine_loss(p, q, ones_mask(1)).value() == doctest::Approx(1.0));
    }
    SUBCASE("zero-norm target row is a hard error") {
        Tensor p = Tensor::from_data({1, 2}, {1.0, 0.0});
        Tensor q = Tensor::from_data({1, 2}, {0.0, 0.0});
        CHECK_THROWS_AS((void)cosine_loss(p, q, ones_mask(1)), std::runtime_error);
    }
    SUBCASE("empty mask is a configuration error") {
        Tensor p = Tensor::from_data({1, 2}, {1.0, 0.0});
        CHECK_THROWS_AS((void)cosine_loss(p, p, std::vector<uint8_t>{0}), std::invalid_argument);
    }
}

TEST_CASE("cosine_loss stays in [0,2] for random inputs") {
    for (uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(derive_seed(5150, seed));
        Tensor p = rand_mat(rng, 4, 6);
        Tensor t = rand_mat(rng, 4, 6);
        double v = cosine_loss(p, t, ones_mask(4)).value();
        CHECK(v >= 0.0);
        CHECK(v <= 2.0);
    }
}

TEST_CASE("masked_cross_entropy spec values") {
    SUBCASE("uniform logits give ln V") {
        Tensor logits = Tensor::zeros({1, 4});
        double v = masked_cross_entropy(logits, {2}, {1}).value();
        CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-9));
        CHECK(v == doctest::Approx(1.386294).epsilon(1e-5));
    }
    SUBCASE("+30 on target class gives near-zero loss") {
        Tensor logits = Tensor::zeros({1, 4});
        logits.data()[1] = 30.0;
        CHECK(masked_cross_entropy(logits, {1}, {1}).value() < 1e-9);
    }
    SUBCASE("unmasked positions do not affect the value") {
        Rng rng(11);
        Tensor logits = rand_mat(rng, 2, 4);
        std::vector<int> targets{1, 3};
        std::vector<uint8_t> mask{1, 0};
        double before = masked_cross_entropy(logits, targets, mask).value();
        Tensor perturbed = Tensor::from_data(logits.shape(), logits.data());
        for (size_t j = 0; j < 4; ++j) perturbed.data()[4 + j] += 17.0 * (double)(j + 1);
        double after = masked_cross_entropy(perturbed, targets, mask).value();
        CHECK(before == after);  // bit-identical
    }
    SUBCASE("loss is nonnegative") {
        for (uint64_t seed = 0; seed < 50; ++seed) {
            Rng rng(derive_seed(31, seed));
            Tensor logits = rand_mat(rng, 3, 6);
            std::vector<int> targets{0, 5, 2};
            CHECK(masked_cross_entropy(logits, targets, ones_mask(3)).value() >= 0.0);
        }
    }
    SUBCASE("target id out of range") {
        Tensor logits = Tensor::zeros({1, 4});
        CHECK_THROWS_AS((void)masked_cross_entropy(logits, {4}, {1}), std::invalid_argument);
    }
    SUBCASE("empty mask") {
        Tensor logits = Tensor::zeros({1, 4});
        CHECK_THROWS_AS((void)masked_cross_entropy(logits, {0}, {0}), std::invalid_argument);
    }
}

TEST_CASE("ops are deterministic: identical inputs, bit-identical outputs") {
    Rng rng(123);
    Tensor a = rand_mat(rng, 6, 6);
    Tensor b = rand_mat(rng, 6, 6);
    Tensor r1 = matmul(gelu(a), softmax_rows(b));
    Tensor r2 = matmul(gelu(a), softmax_rows(b));
    REQUIRE(r1.numel() == r2.numel());
    for (size_t i = 0; i < r1.numel(); ++i) CHECK(r1.data()[i] == r2.data()[i]);
}

TEST_CASE("non-finite op output is a hard error") {
    Tensor a = Tensor::from_data({1, 2}, {1e308, 1e308});
    CHECK_THROWS_AS((void)add(a, a), std::runtime_error);
}

TEST_CASE("backward() convenience accumulates into leaf grads") {
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    Tensor loss = mul(x, x);
    loss.backward();
    CHECK(x.grad_data()[0] == doctest::Approx(6.0));
    loss.backward();
    CHECK(x.grad_data()[0] == doctest::Approx(12.0));  // accumulates
    x.zero_grad();
    CHECK(x.grad_data()[0] == 0.0);
}

TEST_CASE("interpolation-friendly reductions: sum and mean") {
    Tensor a = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(sum(a).value() == doctest::Approx(10.0));
    CHECK(mean(a).value() == doctest::Approx(2.5));
}
