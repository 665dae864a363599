#include "doctest.h"

#include "megatts/errors.hpp"
#include "megatts/grad_check.hpp"
#include "megatts/kernels.hpp"
#include "megatts/nn.hpp"
#include "megatts/ops.hpp"
#include "megatts/optim.hpp"

#include <cmath>
#include <limits>

using namespace megatts;

namespace {

Matrix triple_loop(const Matrix& a, const Matrix& b) {
    Matrix c = Matrix::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j)
            for (Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
    return c;
}

Tensor param(Index r, Index c, Rng& rng, Real s = 0.5) { return Tensor(random_normal(r, c, s, rng), true); }

}  // namespace

TEST_CASE("matmul") {
    SUBCASE("identity") {
        Matrix i2 = Matrix::Identity(2, 2);
        CHECK(matmul(Tensor(i2), Tensor(i2)).value() == i2);
    }
    SUBCASE("annihilator") {
        Matrix a(2, 2);
        a << 1, 2, 3, 4;
        CHECK(matmul(Tensor(a), Tensor(Matrix::Zero(2, 2))).value().isZero(0));
    }
    SUBCASE("random vs triple loop") {
        Rng rng(7);
        Matrix a = random_normal(3, 4, 1.0, rng), b = random_normal(4, 2, 1.0, rng);
        CHECK((matmul(Tensor(a), Tensor(b)).value() - triple_loop(a, b)).cwiseAbs().maxCoeff() < 1e-14);
    }
    SUBCASE("shape mismatch") { CHECK_THROWS_AS(matmul(Tensor(Matrix::Ones(2, 3)), Tensor(Matrix::Ones(2, 3))), DimensionError); }
}

TEST_CASE("softmax") {
    Matrix x(1, 2);
    x << 0, 0;
    CHECK(softmax_rows(Tensor(x)).value()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

    Rng rng(3);
    Matrix r = random_normal(4, 6, 2.0, rng);
    Matrix shifted = (r.array() + 17.25).matrix();
    CHECK((softmax_rows(r) - softmax_rows(shifted)).cwiseAbs().maxCoeff() < 1e-14);
    for (Index i = 0; i < r.rows(); ++i) CHECK(std::abs(softmax_rows(r).row(i).sum() - 1.0) < 1e-12);

    // Extended-precision oracle.
    Matrix v(1, 3);
    v << 1, 2, 3;
    long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), z = e1 + e2 + e3;
    Matrix p = softmax_rows(Tensor(v)).value();
    CHECK(std::abs(p(0, 0) - static_cast<double>(e1 / z)) < 1e-12);
    CHECK(std::abs(p(0, 1) - static_cast<double>(e2 / z)) < 1e-12);
    CHECK(std::abs(p(0, 2) - static_cast<double>(e3 / z)) < 1e-12);
}

TEST_CASE("masked attention") {
    Rng rng(11);
    SUBCASE("single key returns the value row") {
        Matrix q = random_normal(3, 4, 1.0, rng), k = random_normal(1, 4, 1.0, rng), v = random_normal(1, 4, 1.0, rng);
        Matrix out = masked_attention(Tensor(q), Tensor(k), Tensor(v), BoolGrid::Constant(3, 1, true)).value();
        for (Index i = 0; i < 3; ++i) CHECK((out.row(i) - v.row(0)).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("masked key is ignored") {
        Matrix q = random_normal(2, 4, 1.0, rng), k = random_normal(3, 4, 1.0, rng), v = random_normal(3, 4, 1.0, rng);
        BoolGrid mask = BoolGrid::Constant(2, 3, true);
        mask.col(1).setConstant(false);
        Matrix before = masked_attention(Tensor(q), Tensor(k), Tensor(v), mask).value();
        k.row(1) *= 1e3;
        v.row(1).setConstant(-42.0);
        Matrix after = masked_attention(Tensor(q), Tensor(k), Tensor(v), mask).value();
        CHECK(before == after);
        CHECK(attention_weights(q, k, mask).col(1).isZero(0));
    }
    SUBCASE("causal vs prefix recomputation") {
        Matrix q = random_normal(3, 4, 1.0, rng), k = random_normal(3, 4, 1.0, rng), v = random_normal(3, 4, 1.0, rng);
        Matrix out = masked_attention(Tensor(q), Tensor(k), Tensor(v), causal_mask(3)).value();
        for (Index i = 0; i < 3; ++i) {
            // Unmasked attention over keys 0..i only.
            Matrix scores = q.row(i) * k.topRows(i + 1).transpose() / 2.0;
            Matrix w = softmax_rows(scores);
            Matrix expect = w * v.topRows(i + 1);
            CHECK((out.row(i) - expect.row(0)).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
    SUBCASE("fully masked row is a contract violation") {
        BoolGrid mask = BoolGrid::Constant(2, 2, true);
        mask.row(1).setConstant(false);
        Matrix m = Matrix::Ones(2, 2);
        CHECK_THROWS_AS(masked_attention(Tensor(m), Tensor(m), Tensor(m), mask), ContractError);
    }
}

TEST_CASE("grad_check basics") {
    Rng rng(5);
    Tensor x = param(3, 4, rng);
    CHECK(grad_check([&] { return sum_all(mul(x, x)); }, {x}, 1e-4) < 1e-8);
    CHECK(grad_check([&] { return Tensor::scalar(2.5); }, {x}, 1e-4) == 0.0);
    CHECK_THROWS_AS(grad_check([&] { return sum_all(x); }, {x}, 1e-2), ParameterError);
}

TEST_CASE("grad_check every differentiable op") {
    Rng rng(21);
    Tensor a = param(3, 4, rng), b = param(4, 5, rng), c = param(3, 4, rng);
    Tensor row = param(1, 4, rng), gain = param(1, 4, rng), bias = param(1, 4, rng);
    Tensor target(random_normal(3, 4, 1.0, rng));
    Tensor w = param(3 * 4, 2, rng), wb = param(1, 2, rng);
    auto probe = [&](Tensor out) { return sum_all(mul(out, Tensor(Matrix::Constant(out.rows(), out.cols(), 0.37)))); };
    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"matmul", [&] { return sum_all(tanh(matmul(a, b))); }},
        {"add/sub/mul", [&] { return sum_all(mul(add(a, c), sub(a, c))); }},
        {"add_row/scale", [&] { return sum_all(tanh(scale(add_row(a, row), 1.7))); }},
        {"gelu", [&] { return sum_all(gelu(a)); }},
        {"softmax", [&] { return sum_all(mul(softmax_rows(a), c)); }},
        {"log_softmax", [&] { return sum_all(mul(log_softmax_rows(a), c)); }},
        {"layer_norm", [&] { return sum_all(mul(layer_norm(a, gain, bias), c)); }},
        {"conv1d", [&] { return sum_all(tanh(conv1d(a, w, wb, 3, 1, 1, 1))); }},
        {"conv1d strided", [&] { return sum_all(tanh(conv1d(a, w, wb, 3, 3, 0, 0))); }},
        {"gather", [&] { return probe(gather_rows(a, {2, 0, 2, 1})); }},
        {"slices/concat", [&] {
             return sum_all(tanh(concat_cols({slice_cols(a, 1, 2), concat_rows({slice_rows(c, 0, 1), slice_rows(a, 1, 2)})})));
         }},
        {"pooling", [&] { return sum_all(tanh(concat_rows({mean_rows(a), avg_pool_rows(c, 2)}))); }},
        {"attention", [&] {
             BoolGrid m = causal_mask(3);
             return sum_all(tanh(masked_attention(a, c, add(a, c), m)));
         }},
        {"cross_entropy", [&] { return cross_entropy(a, {0, 3, 1}, {1.0, 0.5, 2.0}); }},
        {"mse", [&] { return mse(a, target); }},
    };
    for (const auto& [name, f] : cases) {
        INFO(name);
        CHECK(grad_check(f, {a, b, c, row, gain, bias, w, wb}, 1e-3) < 1e-4);
    }
}

TEST_CASE("transformer block with cross entropy passes grad_check") {
    Rng rng(9);
    ParameterSet ps;
    TransformerBlock block(ps, "blk", 8, 2, 16, 1, rng);
    Linear head(ps, "head", 8, 5, rng);
    Tensor x(random_normal(4, 8, 1.0, rng));
    auto f = [&] { return cross_entropy(head(block(x, causal_mask(4))), {1, 4, 0, 2}); };
    CHECK(grad_check(f, ps, 1e-3).max_rel_err < 1e-4);
}

TEST_CASE("conv1d matches direct convolution") {
    Rng rng(4);
    Matrix x = random_normal(7, 3, 1.0, rng), w = random_normal(5 * 3, 2, 1.0, rng), b = random_normal(1, 2, 1.0, rng);
    Matrix out = conv1d(Tensor(x), Tensor(w), Tensor(b), 5, 1, 2, 2).value();
    REQUIRE(out.rows() == 7);
    for (Index t = 0; t < 7; ++t) {
        for (Index o = 0; o < 2; ++o) {
            Real acc = b(0, o);
            for (Index j = 0; j < 5; ++j) {
                const Index s = t + j - 2;
                if (s < 0 || s >= 7) continue;
                for (Index c = 0; c < 3; ++c) acc += x(s, c) * w(j * 3 + c, o);
            }
            CHECK(std::abs(out(t, o) - acc) < 1e-12);
        }
    }
}

TEST_CASE("cross entropy matches manual -log p") {
    Rng rng(8);
    Matrix logits = random_normal(5, 6, 1.5, rng);
    std::vector<int> t = {0, 5, 2, 2, 3};
    long double acc = 0;
    for (Index r = 0; r < 5; ++r) {
        long double z = 0;
        for (Index c = 0; c < 6; ++c) z += std::exp(static_cast<long double>(logits(r, c)));
        acc += -std::log(std::exp(static_cast<long double>(logits(r, t[r]))) / z);
    }
    CHECK(std::abs(cross_entropy(Tensor(logits), t).item() - static_cast<double>(acc / 5)) < 1e-12);
    CHECK_THROWS_AS(embedding_lookup(Tensor(logits), {6}), VocabularyError);
}

TEST_CASE("layer norm rows are standardized") {
    Rng rng(2);
    Matrix x = random_normal(3, 8, 3.0, rng);
    Matrix y = layer_norm(Tensor(x), Tensor(Matrix::Ones(1, 8)), Tensor(Matrix::Zero(1, 8))).value();
    for (Index r = 0; r < 3; ++r) {
        CHECK(std::abs(y.row(r).mean()) < 1e-12);
        CHECK(std::abs(y.row(r).squaredNorm() / 8 - 1.0) < 1e-4);
    }
}

TEST_CASE("adam") {
    Rng rng(1);
    ParameterSet ps;
    Tensor p = ps.add("p", random_normal(2, 3, 1.0, rng));
    const Matrix before = p.value();
    Adam adam(ps, AdamConfig{});
    CHECK(adam.config().beta1 == 0.9);
    CHECK(adam.config().beta2 == 0.98);
    CHECK(adam.config().eps == 1e-9);

    SUBCASE("zero gradient leaves parameters unchanged") {
        adam.step(ps, 0.1);
        CHECK(p.value() == before);
    }
    SUBCASE("first step moves by lr * sign(g)") {
        sum_all(p).backward();
        adam.step(ps, 0.01);
        CHECK(((before - p.value()).array() - 0.01).abs().maxCoeff() < 1e-9);
    }
    SUBCASE("zero learning rate") {
        sum_all(mul(p, p)).backward();
        adam.step(ps, 0.0);
        CHECK(p.value() == before);
    }
}

TEST_CASE("noam schedule") {
    // Peak at the end of warmup: d^-0.5 * warmup^-0.5.
    CHECK(noam_rate(400, 64, 400) == doctest::Approx(0.125 * 0.05).epsilon(1e-12));
    CHECK(noam_rate(200, 64, 400) < noam_rate(400, 64, 400));
    CHECK(noam_rate(1600, 64, 400) == doctest::Approx(0.125 / 40.0).epsilon(1e-12));
}

TEST_CASE("non-finite values are rejected") {
    Matrix m = Matrix::Ones(2, 2);
    m(0, 1) = std::numeric_limits<Real>::quiet_NaN();
    CHECK_THROWS_AS(Tensor{m}, NumericError);
    Tensor big(Matrix::Constant(1, 1, 1e200));
    CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("backward visits shared nodes once") {
    Rng rng(3);
    Tensor x = param(2, 2, rng);
    Tensor y = mul(x, x);
    Tensor z = add(y, y);  // y reached twice
    sum_all(z).backward();
    CHECK((x.grad() - 4.0 * x.value()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("straight-through gradient is the identity") {
    Rng rng(6);
    Tensor h = param(1, 4, rng);
    Tensor q(random_normal(1, 4, 1.0, rng));
    Tensor w(random_normal(4, 3, 1.0, rng));
    Tensor out = straight_through(h, q);
    CHECK(out.value() == q.value());
    sum_all(tanh(matmul(out, w))).backward();

    Tensor q2(q.value(), true);
    sum_all(tanh(matmul(q2, w))).backward();
    CHECK(h.grad() == q2.grad());
}
