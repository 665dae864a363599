#include "doctest.h"

#include "megatts/errors.hpp"
#include "megatts/mrte.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace megatts;
using megatts::testing::random_mel;
using megatts::testing::small_config;

namespace {

struct Fixture {
    RunConfig cfg = small_config();
    ParameterSet ps;
    Mrte mrte;
    Rng rng{21};

    Fixture() {
        Rng init(20);
        mrte = Mrte(ps, cfg.mrte, cfg.corpus.vocab, cfg.corpus.bins, init);
    }
    Matrix mel(Index frames) { return random_mel(frames, cfg.corpus.bins, rng); }
    std::vector<int> phonemes(std::size_t n) {
        std::uniform_int_distribution<int> d(0, cfg.corpus.vocab - 1);
        std::vector<int> p(n);
        for (auto& x : p) x = d(rng);
        return p;
    }
};

}  // namespace

TEST_CASE("mel_encode: shapes and reference blocks") {
    Fixture fx;
    Matrix a = fx.mel(8), b = fx.mel(11);
    CHECK(fx.mrte.mel_encode({{a}}).rows() == 8);
    Tensor ab = fx.mrte.mel_encode({{a, b}});
    Tensor ba = fx.mrte.mel_encode({{b, a}});
    CHECK(ab.rows() == 19);
    CHECK(ab.value().topRows(8) == ba.value().bottomRows(8));
    CHECK(ab.value().bottomRows(11) == ba.value().topRows(11));

    Tensor aa = fx.mrte.mel_encode({{a, a}});
    CHECK(aa.value().topRows(8) == aa.value().bottomRows(8));

    TimbreRefSet small{{a}}, big{{a, b}};
    CHECK(fx.mrte.mel_encode(big).rows() >= fx.mrte.mel_encode(small).rows());
    CHECK_THROWS_AS(fx.mrte.mel_encode({}), PreconditionError);
    CHECK_THROWS_AS(fx.mrte.mel_encode({{a, Matrix::Zero(4, 3)}}), PreconditionError);
}

TEST_CASE("content_encode: shape, positions, vocabulary") {
    Fixture fx;
    std::vector<int> ph{1, 2, 3, 4, 5};
    Matrix h = fx.mrte.content_encode(ph).value();
    CHECK(h.rows() == 5);
    CHECK(h.cols() == fx.cfg.mrte.d_model);
    std::vector<int> rev(ph.rbegin(), ph.rend());
    Matrix hr = fx.mrte.content_encode(rev).value();
    // Row for phoneme 1 differs once its position changes.
    CHECK((h.row(0) - hr.row(4)).norm() > 1e-6);
    CHECK((fx.mrte.content_encode({6, 7, 8, 9, 10}).value() - h).norm() > 1e-6);
    CHECK_THROWS_AS(fx.mrte.content_encode({0, fx.cfg.corpus.vocab}), VocabularyError);
    CHECK_THROWS_AS(fx.mrte.content_encode({-1}), VocabularyError);
    CHECK_THROWS_AS(fx.mrte.content_encode({}), PreconditionError);
}

TEST_CASE("mel_to_phoneme_attend: single key, weights, masked invariance") {
    Fixture fx;
    Tensor content = fx.mrte.content_encode(fx.phonemes(6));

    SUBCASE("single reference frame") {
        Tensor h = fx.mrte.mel_encode({{fx.mel(1)}});
        REQUIRE(h.rows() == 1);
        Matrix readout = sub(fx.mrte.mel_to_phoneme_attend(content, h), content).value();
        RowVector value = fx.mrte.attention.wo(fx.mrte.attention.wv(h)).value();
        for (Index i = 0; i < readout.rows(); ++i) CHECK((readout.row(i) - value).norm() < 1e-12);
    }
    SUBCASE("naive oracle and row sums") {
        Tensor h = fx.mrte.mel_encode({{fx.mel(9), fx.mel(5)}});
        Matrix w = fx.mrte.attention_map(content, h);
        Matrix q = fx.mrte.attention.wq(content).value();
        Matrix k = fx.mrte.attention.wk(h).value();
        const Real s = 1.0 / std::sqrt(static_cast<Real>(q.cols()));
        for (Index i = 0; i < q.rows(); ++i) {
            std::vector<long double> e(static_cast<std::size_t>(k.rows()));
            long double mx = -1e300L, z = 0;
            for (Index j = 0; j < k.rows(); ++j) {
                long double dot = 0;
                for (Index c = 0; c < q.cols(); ++c) dot += static_cast<long double>(q(i, c)) * k(j, c);
                e[static_cast<std::size_t>(j)] = dot * s;
                mx = std::max(mx, e[static_cast<std::size_t>(j)]);
            }
            for (auto& x : e) z += (x = std::exp(x - mx));
            for (Index j = 0; j < k.rows(); ++j) {
                CHECK(std::abs(w(i, j) - static_cast<Real>(e[static_cast<std::size_t>(j)] / z)) < 1e-10);
            }
            CHECK(std::abs(w.row(i).sum() - 1.0) <= 1e-12);
        }
    }
    SUBCASE("masked value rows do not matter") {
        Matrix hm = fx.mrte.mel_encode({{fx.mel(7)}}).value();
        BoolGrid mask = BoolGrid::Constant(content.rows(), hm.rows(), true);
        mask.col(3).setConstant(false);
        Matrix out = fx.mrte.attention(content, Tensor(hm), mask).value();
        hm.row(3).setConstant(42.0);
        CHECK(fx.mrte.attention(content, Tensor(hm), mask).value() == out);
    }
    CHECK_THROWS_AS(fx.mrte.attention_map(content, Tensor(Matrix::Zero(0, 0))), Error);
}

TEST_CASE("global_timbre: mean oracle, permutation, duplication") {
    Fixture fx;
    Matrix a = fx.mel(10), b = fx.mel(6);
    Matrix feats = fx.mrte.global_features({{a, b}}).value();
    Matrix g = fx.mrte.global_timbre({{a, b}}).value();
    RowVector oracle = RowVector::Zero(feats.cols());
    for (Index r = 0; r < feats.rows(); ++r) oracle += feats.row(r);
    oracle /= static_cast<Real>(feats.rows());
    CHECK((g - oracle).cwiseAbs().maxCoeff() < 1e-14);

    // Integer-valued frames make every partial sum exact, so any order agrees bit for bit.
    Matrix ints(6, 3);
    ints << 1, 2, 3, 4, 5, 6, 7, 8, 9, -1, -2, -3, 10, 0, 5, 2, 2, 2;
    std::vector<Index> perm{3, 0, 5, 1, 4, 2};
    CHECK(mean_rows(Tensor(ints)).value() == mean_rows(gather_rows(Tensor(ints), perm)).value());
    Rng rng(5);
    Matrix rnd = random_normal(40, 4, 1.0, rng);
    std::vector<Index> p(40);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    CHECK((mean_rows(Tensor(rnd)).value() - mean_rows(gather_rows(Tensor(rnd), p)).value()).norm() < 1e-14);

    Matrix ga = fx.mrte.global_timbre({{a}}).value();
    Matrix gaa = fx.mrte.global_timbre({{a, a}}).value();
    CHECK((ga - gaa).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("length regulator and build_cond") {
    Fixture fx;
    TimbreRefSet refs{{fx.mel(12)}};
    std::vector<int> ph = fx.phonemes(4);
    Matrix per_phone = fx.mrte.phoneme_hidden(ph, refs).value();

    CondSeq ones = fx.mrte.build_cond(ph, {1, 1, 1, 1}, refs);
    CHECK(ones.frames() == 4);
    CHECK(ones.hidden.value() == per_phone);

    std::vector<int> two{ph[0], ph[1]};
    Matrix pp = fx.mrte.phoneme_hidden(two, refs).value();
    CondSeq c = fx.mrte.build_cond(two, {2, 3}, refs);
    REQUIRE(c.frames() == 5);
    CHECK(c.hidden.value().row(0) == pp.row(0));
    CHECK(c.hidden.value().row(1) == pp.row(0));
    for (Index r = 2; r < 5; ++r) CHECK(c.hidden.value().row(r) == pp.row(1));

    std::uniform_int_distribution<int> dur(1, 7), len(0, 30);
    for (int t = 0; t < 300; ++t) {
        std::vector<int> d(static_cast<std::size_t>(len(fx.rng)));
        for (auto& x : d) x = dur(fx.rng);
        auto idx = length_regulator_index(d);
        std::vector<Index> oracle;
        for (std::size_t i = 0; i < d.size(); ++i)
            for (int k = 0; k < d[i]; ++k) oracle.push_back(static_cast<Index>(i));
        REQUIRE(idx == oracle);
        REQUIRE(static_cast<int>(idx.size()) == std::accumulate(d.begin(), d.end(), 0));
    }
    for (int t = 0; t < 20; ++t) {
        std::vector<int> p = fx.phonemes(static_cast<std::size_t>(1 + len(fx.rng) % 10));
        std::vector<int> d(p.size());
        for (auto& x : d) x = dur(fx.rng);
        REQUIRE(fx.mrte.build_cond(p, d, refs).frames() == std::accumulate(d.begin(), d.end(), 0));
    }

    CHECK_THROWS_AS(fx.mrte.build_cond(ph, {1, 1}, refs), AlignmentError);
    CHECK_THROWS_AS(fx.mrte.build_cond(ph, {1, 0, 1, 1}, refs), AlignmentError);
}

TEST_CASE("pool-only speaker encoder") {
    RunConfig cfg = small_config();
    cfg.mrte.use_attention = false;
    ParameterSet ps;
    Rng rng(3);
    Mrte m(ps, cfg.mrte, cfg.corpus.vocab, cfg.corpus.bins, rng);
    CHECK_FALSE(ps.contains("mrte.attn.wq.w"));
    Matrix a = random_mel(9, cfg.corpus.bins, rng);
    CHECK(m.build_cond({1, 2}, {3, 4}, {{a}}).frames() == 7);
    CHECK_THROWS_AS(m.attention_map(m.content_encode({1}), m.mel_encode({{a}})), PreconditionError);
}
