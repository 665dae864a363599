#include "doctest.h"

#include "megatts/errors.hpp"
#include "megatts/plm.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace megatts;

namespace {

constexpr Index kCodes = 64;
constexpr Index kCond = 12;

struct Fixture {
    ParameterSet ps;
    Plm plm;
    Rng rng{5};

    explicit Fixture(std::uint64_t seed = 4, LmConfig cfg = {2, 16, 2, 96, 1, 2}) {
        Rng init(seed);
        plm = Plm(ps, cfg, kCodes, kCond, init);
    }
    std::vector<int> codes(Index n) {
        std::uniform_int_distribution<int> d(0, static_cast<int>(kCodes) - 1);
        std::vector<int> c(static_cast<std::size_t>(n));
        for (auto& x : c) x = d(rng);
        return c;
    }
    Matrix cond(Index n) { return random_normal(n, kCond, 1.0, rng); }
};

}  // namespace

TEST_CASE("plm: causality") {
    Fixture fx;
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 12;
        auto c = fx.codes(n);
        Matrix cond = fx.cond(n);
        const Index t = trial % n;
        Matrix base = fx.plm.logits(c, Tensor(cond), causal_mask(n)).value();
        auto changed = c;
        for (Index j = t + 1; j < n; ++j) changed[static_cast<std::size_t>(j)] = (changed[static_cast<std::size_t>(j)] + 1) % kCodes;
        Matrix other = fx.plm.logits(changed, Tensor(cond), causal_mask(n)).value();
        // Row t + 1 depends on codes[t] only, so rows 0..t must be untouched.
        REQUIRE(other.topRows(t + 1) == base.topRows(t + 1));
        if (t + 2 < n) REQUIRE(other.row(t + 2) != base.row(t + 2));
    }
}

TEST_CASE("plm: speaker blocks are isolated and use block-relative positions") {
    Fixture fx;
    const Index a = 7, b = 9;
    auto c = fx.codes(a + b);
    Matrix cond = fx.cond(a + b);
    const BoolGrid mask = block_causal_mask({a, b});
    Matrix joint = fx.plm.logits(c, Tensor(cond), mask).value();
    std::vector<int> second(c.begin() + a, c.end());
    Matrix alone = fx.plm.logits(second, Tensor(Matrix(cond.bottomRows(b))), causal_mask(b)).value();
    CHECK((joint.bottomRows(b) - alone).cwiseAbs().maxCoeff() < 1e-10);

    auto changed = c;
    for (Index j = 0; j < a; ++j) changed[static_cast<std::size_t>(j)] = (changed[static_cast<std::size_t>(j)] + 3) % kCodes;
    Matrix other = fx.plm.logits(changed, Tensor(cond), mask).value();
    CHECK(other.bottomRows(b) == joint.bottomRows(b));
    CHECK(other.topRows(a) != joint.topRows(a));

    BoolGrid bad = mask;
    bad(a, a - 1) = true;  // a row that sees across the boundary but not its own block start
    CHECK_THROWS_AS(fx.plm.logits(c, Tensor(cond), bad), ContractError);
}

TEST_CASE("plm: incremental cache matches full recomputation") {
    Fixture fx;
    const Index n = 20;
    auto c = fx.codes(n);
    Matrix cond = fx.cond(n);
    Matrix full = fx.plm.logits(c, Tensor(cond), causal_mask(n)).value();
    PlmSession s(fx.plm);
    for (Index t = 0; t < n; ++t) {
        RowVector l = s.next_logits(cond.row(t));
        REQUIRE((l - full.row(t)).cwiseAbs().maxCoeff() < 1e-10);
        s.push(c[static_cast<std::size_t>(t)]);
    }
    CHECK_THROWS_AS(s.push(0), ContractError);
    s.next(cond.row(0));
    CHECK_THROWS_AS(s.next(cond.row(0)), ContractError);
}

TEST_CASE("plm: loss values") {
    Fixture fx;
    const Index n = 40;
    auto c = fx.codes(n);
    Matrix cond = fx.cond(n);
    const BoolGrid mask = block_causal_mask({25, 15});
    const Real loss = fx.plm.loss(c, Tensor(cond), mask).item();
    CHECK(std::abs(loss - std::log(static_cast<Real>(kCodes))) < 0.3);

    Matrix l = fx.plm.logits(c, Tensor(cond), mask).value();
    long double manual = 0;
    for (Index t = 0; t < n; ++t) {
        long double z = 0;
        for (Index k = 0; k < kCodes; ++k) z += std::exp(static_cast<long double>(l(t, k)));
        manual += std::log(z) - l(t, c[static_cast<std::size_t>(t)]);
    }
    CHECK(std::abs(loss - static_cast<Real>(manual / n)) < 1e-8);

    const Matrix p = softmax_rows(l);
    for (Index t = 0; t < n; ++t) CHECK(std::abs(p.row(t).sum() - 1.0) <= 1e-12);
    for (Real shift : {-50.0, 3.0, 1e3}) {
        for (Index t = 0; t < n; ++t) {
            RowVector shifted = l.row(t).array() + shift;
            REQUIRE(argmax(softmax_rows(shifted)) == argmax(p.row(t)));
        }
    }
}

TEST_CASE("plm: generation") {
    Fixture fx;
    auto prompt = fx.codes(10);
    Matrix pcond = fx.cond(10);
    Matrix tcond = fx.cond(15);
    auto a = fx.plm.generate(prompt, pcond, tcond);
    CHECK(a.size() == 15);
    CHECK(fx.plm.generate(prompt, pcond, tcond) == a);

    // Teacher forcing the greedy output reproduces every greedy choice.
    std::vector<int> seq = prompt;
    seq.insert(seq.end(), a.begin(), a.end());
    Matrix cond(25, kCond);
    cond << pcond, tcond;
    CHECK(fx.plm.accuracy(seq, cond, causal_mask(25), 10) == 1.0);

    // Frame-rate overload: one code per hop frames of the target.
    const Index hop = 4;
    CondSeq pc{Tensor(random_normal(10 * hop - 2, kCond, 1.0, fx.rng))};
    CondSeq tc{Tensor(random_normal(21, kCond, 1.0, fx.rng))};
    ProsodyCodeSeq out = fx.plm.generate(ProsodyCodeSeq{prompt, static_cast<int>(hop)}, pc, tc);
    CHECK(static_cast<Index>(out.size()) == code_count(21, hop));
    CHECK_THROWS_AS(fx.plm.generate(ProsodyCodeSeq{fx.codes(3), static_cast<int>(hop)}, pc, tc), AlignmentError);

    CHECK_THROWS_AS(fx.plm.generate(fx.codes(90), fx.cond(90), fx.cond(7)), ContextLengthError);
    CHECK_THROWS_AS(fx.plm.logits(fx.codes(97), Tensor(fx.cond(97)), causal_mask(97)), ContextLengthError);
    CHECK_THROWS_AS(fx.plm.logits({0, static_cast<int>(kCodes)}, Tensor(fx.cond(2)), causal_mask(2)), VocabularyError);
}

TEST_CASE("plm: pooled condition") {
    Matrix frames(6, 2);
    frames << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    Matrix pooled = pool_to_codes(frames, 4);
    REQUIRE(pooled.rows() == 2);
    CHECK(pooled(0, 0) == 4.0);
    CHECK(pooled(0, 1) == 5.0);
    CHECK(pooled(1, 0) == 10.0);
    CHECK(pooled(1, 1) == 11.0);
}
