// Acceptance run: one PASS/FAIL line per criterion, each with its own
// time limit. Optional arguments select criteria by number (1-8).

#include "megatts/experiments.hpp"
#include "megatts/interp.hpp"
#include "megatts/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

using namespace megatts;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
    double earlier_seconds = 0.0;  // shared work this criterion relies on, done before it started
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

// ---- shared trained models -----------------------------------------------

constexpr int kMrteAblationSteps = 4000;

RunConfig trend_config(const std::string& corpus_path) {
    RunConfig c;
    c.seed = 1;
    c.corpus.speakers = 1000;
    c.corpus.utts_per_speaker = 20;
    c.corpus.seed = 1;
    c.plm = LmConfig{2, 64, 2, 512, 1, 4};
    c.adm = LmConfig{2, 32, 2, 256, 1, 4};
    c.optim.lr_scale = 0.25;
    c.train.vq_steps = 1000;
    c.train.plm_steps = 6000;
    c.train.adm_steps = 1500;
    c.train.max_frames = 1024;
    c.train.heldout_speakers = 12;
    c.train.max_train_utts = 6;
    c.train.checkpoint_every = 1000;
    c.corpus_path = corpus_path;
    return c;
}

// Corpus and trained stages shared by criteria 6-8. Each criterion is
// charged for the shared work it relies on, whether it ran inside the
// criterion or earlier on behalf of another one.
struct Shared {
    fs::path work;
    RunConfig cfg;
    Corpus corpus;
    SpeakerSplit split;
    std::string dir;
    double first_stage_seconds = -1.0;  // corpus generation plus first-stage training
    double lm_seconds = -1.0;

    // Returns the seconds of requested work that was already done earlier.
    double use(bool language_models) {
        double earlier = 0.0;
        if (first_stage_seconds >= 0.0) {
            earlier += first_stage_seconds;
        } else {
            const auto t0 = Clock::now();
            cfg = trend_config((work / "corpus.jsonl").string());
            corpus = generate_corpus(cfg.corpus).corpus;
            split = split_by_speaker(corpus, cfg.train.heldout_speakers, cfg.train.max_train_utts);
            dir = (work / "trend").string();
            fs::remove_all(dir);
            train_stage(cfg, corpus, Stage::vqgan, dir);
            first_stage_seconds = seconds_since(t0);
        }
        if (!language_models) return earlier;
        if (lm_seconds >= 0.0) {
            earlier += lm_seconds;
        } else {
            const auto t0 = Clock::now();
            train_stage(cfg, corpus, Stage::plm, dir);
            train_stage(cfg, corpus, Stage::adm, dir);
            lm_seconds = seconds_since(t0);
        }
        return earlier;
    }
};

// ---- 1: gradient integrity ---------------------------------------------------

Outcome gradient_integrity() {
    Real worst = 0.0;
    std::string worst_module;
    for (const auto& m : grad_check_modules()) {
        const GradCheckReport r = grad_check_module(m);
        if (r.max_rel_err >= worst) {
            worst = r.max_rel_err;
            worst_module = m;
        }
    }
    return {worst < 1e-4,
            std::to_string(grad_check_modules().size()) + " modules, max rel err " + fmt(worst) + " (" + worst_module +
                ") < 1e-4"};
}

// ---- 2: masks and causality --------------------------------------------------

std::vector<Index> random_blocks(Index total, Rng& rng) {
    std::vector<Index> blocks;
    Index left = total;
    while (left > 0) {
        const Index len = 1 + static_cast<Index>(rng() % static_cast<std::uint64_t>(left));
        blocks.push_back(len);
        left -= len;
    }
    return blocks;
}

Index block_of(const std::vector<Index>& blocks, Index t) {
    Index start = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (t < start + blocks[b]) return static_cast<Index>(b);
        start += blocks[b];
    }
    return -1;
}

// Perturbs step j of a sequence model and counts rows that changed although
// they are earlier than j (causality) or outside j's block (isolation).
struct Violations {
    int causality = 0;
    int isolation = 0;
};

template <typename Forward, typename Perturb>
void perturbation_trial(Index n, Rng& rng, Forward forward, Perturb perturb, Violations& v) {
    const auto blocks = random_blocks(n, rng);
    const BoolGrid mask = block_causal_mask(blocks);
    const Index j = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
    const Matrix base = forward(mask);
    perturb(j);
    const Matrix moved = forward(mask);
    bool causal_ok = true, isolated_ok = true;
    for (Index i = 0; i < n; ++i) {
        const bool same = moved.row(i) == base.row(i);
        if (i < j && !same) causal_ok = false;
        if (block_of(blocks, i) != block_of(blocks, j) && !same) isolated_ok = false;
    }
    v.causality += causal_ok ? 0 : 1;
    v.isolation += isolated_ok ? 0 : 1;
}

// Frames i and j may attend iff j <= i and every frame from j to i belongs to
// one contiguous run of the same speaker.
int corpus_mask_trial(Rng& rng) {
    const int utts = 1 + static_cast<int>(rng() % 8);
    std::vector<Utterance> list;
    for (int u = 0; u < utts; ++u) {
        Utterance x;
        x.speaker_id = static_cast<int>(rng() % 3);
        x.mel = Matrix::Zero(1 + static_cast<Index>(rng() % 6), 2);
        list.push_back(x);
    }
    Index longest = 0;
    for (const auto& u : list) longest = std::max(longest, u.frames());
    const Index budget = longest + static_cast<Index>(rng() % 20);
    const SpeakerBatch b = build_batch(list, budget);
    std::vector<int> speaker;
    for (std::size_t k : b.plan.order) {
        for (Index f = 0; f < list[k].frames(); ++f) speaker.push_back(list[k].speaker_id);
    }
    const Index n = static_cast<Index>(speaker.size());
    if (b.attn_mask.rows() != n || b.attn_mask.cols() != n || n > budget) return 1;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            bool allowed = j <= i;
            for (Index t = j; allowed && t <= i; ++t) allowed = speaker[static_cast<std::size_t>(t)] == speaker[static_cast<std::size_t>(i)];
            if (b.attn_mask(i, j) != allowed) return 1;
        }
    }
    return 0;
}

Outcome mask_suite() {
    constexpr int kTrials = 1000;
    constexpr Index kCodes = 16, kCond = 6;
    Rng rng(21);
    ParameterSet pps, aps;
    Plm plm(pps, LmConfig{2, 8, 2, 64, 1, 2}, kCodes, kCond, rng);
    Adm adm(aps, LmConfig{2, 8, 2, 64, 1, 2}, kCond, rng);
    std::uniform_int_distribution<int> code(0, kCodes - 1);
    std::normal_distribution<Real> normal(0.0, 1.0);

    Violations pv, av;
    for (int t = 0; t < kTrials; ++t) {
        const Index n = 2 + static_cast<Index>(rng() % 23);
        std::vector<int> codes(static_cast<std::size_t>(n));
        for (auto& c : codes) c = code(rng);
        Matrix cond = random_normal(n, kCond, 1.0, rng);
        perturbation_trial(
            n, rng, [&](const BoolGrid& m) { return plm.logits(codes, Tensor(cond), m).value(); },
            [&](Index j) {
                codes[static_cast<std::size_t>(j)] = (codes[static_cast<std::size_t>(j)] + 1) % kCodes;
                cond.row(j) = random_normal(1, kCond, 1.0, rng);
            },
            pv);
    }
    for (int t = 0; t < kTrials; ++t) {
        const Index n = 2 + static_cast<Index>(rng() % 23);
        std::vector<Real> logd(static_cast<std::size_t>(n));
        for (auto& x : logd) x = normal(rng);
        Matrix content = random_normal(n, kCond, 1.0, rng);
        perturbation_trial(
            n, rng, [&](const BoolGrid& m) { return adm.forward(logd, Tensor(content), m).value(); },
            [&](Index j) {
                logd[static_cast<std::size_t>(j)] += 1.0;
                content.row(j) = random_normal(1, kCond, 1.0, rng);
            },
            av);
    }
    int corpus = 0;
    for (int t = 0; t < kTrials; ++t) corpus += corpus_mask_trial(rng);
    const int total = pv.causality + pv.isolation + av.causality + av.isolation + corpus;
    return {total == 0, std::to_string(kTrials) + " trials each; violations plm causal " + std::to_string(pv.causality) +
                            " isolation " + std::to_string(pv.isolation) + ", adm causal " +
                            std::to_string(av.causality) + " isolation " + std::to_string(av.isolation) +
                            ", corpus mask " + std::to_string(corpus)};
}

// ---- 3: vector quantization --------------------------------------------------

Outcome vq_suite() {
    constexpr int kVectors = 10000, kRows = 100;
    constexpr Index kSize = 64, kDim = 8;
    Rng rng(31);
    ParameterSet ps;
    Codebook cb(ps, "codebook", kSize, kDim, rng);
    const Matrix& e = cb.entries.value();
    int nn_mismatch = 0, st_mismatch = 0, idem_mismatch = 0;
    for (int batch = 0; batch < kVectors / kRows; ++batch) {
        Tensor h(random_normal(kRows, kDim, 1.0, rng), true);
        const Matrix w = random_normal(kRows, kDim, 1.0, rng);
        QuantizedRows q = cb.quantize_rows(h, 0.25);
        Tensor f = sum_all(mul(q.quantized, Tensor(w)));
        cb.entries.zero_grad();
        f.backward();
        if (h.grad() != w) ++st_mismatch;
        for (Index r = 0; r < kRows; ++r) {
            // Independent scan in extended precision, lowest index on ties.
            Index best = 0;
            long double best_d = INFINITY;
            for (Index k = 0; k < kSize; ++k) {
                long double d = 0.0L;
                for (Index c = 0; c < kDim; ++c) {
                    const long double diff = static_cast<long double>(e(k, c)) - h.value()(r, c);
                    d += diff * diff;
                }
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            const int got = q.indices[static_cast<std::size_t>(r)];
            if (got != best) ++nn_mismatch;
            const QuantizeResult again = cb.quantize(q.quantized.value().row(r), 0.25);
            if (again.index != got || again.q != q.quantized.value().row(r)) ++idem_mismatch;
        }
    }
    return {nn_mismatch + st_mismatch + idem_mismatch == 0,
            std::to_string(kVectors) + " vectors; nearest-neighbour mismatches " + std::to_string(nn_mismatch) +
                ", straight-through mismatches " + std::to_string(st_mismatch) + ", idempotence mismatches " +
                std::to_string(idem_mismatch)};
}

// ---- 4: interpolation --------------------------------------------------------

Outcome interp_suite() {
    constexpr int kSequences = 50;
    constexpr Index kCodes = 24, kCond = 6;
    Rng rng(41);
    ParameterSet ps;
    Plm plm(ps, LmConfig{2, 16, 2, 96, 1, 2}, kCodes, kCond, rng);
    std::uniform_int_distribution<int> code(0, kCodes - 1);
    auto prompt = [&](Index n) {
        PromptContext p;
        for (Index i = 0; i < n; ++i) p.codes.push_back(code(rng));
        p.cond = random_normal(n, kCond, 1.0, rng);
        return p;
    };
    int reduction = 0, normalization = 0, convexity = 0, steps = 0;
    Real worst_sum = 0.0;
    for (int s = 0; s < kSequences; ++s) {
        const PromptContext flat = prompt(2 + s % 13), rhy = prompt(3 + (s * 7) % 11);
        const Matrix target = random_normal(10 + s % 7, kCond, 1.0, rng);
        if (interp_generate(plm, flat, rhy, target, 1.0) != plm.generate(flat.codes, flat.cond, target)) ++reduction;
        if (interp_generate(plm, flat, rhy, target, 0.0) != plm.generate(rhy.codes, rhy.cond, target)) ++reduction;
        const Real gamma = static_cast<Real>(s) / (kSequences - 1);
        InterpSession session(plm, flat, rhy, gamma);
        for (Index t = 0; t < target.rows(); ++t) {
            const InterpStep st = session.step(target.row(t));
            ++steps;
            const Real err = std::abs(st.p_mix.sum() - 1.0);
            worst_sum = std::max(worst_sum, err);
            if (err > 1e-12) ++normalization;
            for (Index k = 0; k < kCodes; ++k) {
                const Real lo = std::min(st.components[0](k), st.components[1](k));
                const Real hi = std::max(st.components[0](k), st.components[1](k));
                if (st.p_mix(k) < lo || st.p_mix(k) > hi) {
                    ++convexity;
                    break;
                }
            }
        }
    }
    return {reduction + normalization + convexity == 0,
            std::to_string(kSequences) + " sequences, " + std::to_string(steps) +
                " mixed steps; reduction mismatches " + std::to_string(reduction) + ", max |sum-1| " +
                fmt(worst_sum) + ", convexity violations " + std::to_string(convexity)};
}

// ---- 5: overfit ----------------------------------------------------------------

Outcome overfit() {
    RunConfig c;
    c.seed = 5;
    c.corpus.speakers = 2;
    c.corpus.utts_per_speaker = 2;
    c.corpus.seed = 5;
    c.plm = LmConfig{2, 64, 2, 512, 1, 4};
    c.adm = LmConfig{2, 32, 2, 256, 1, 4};
    const Corpus corpus = generate_corpus(c.corpus).corpus;
    const OverfitTargets targets;
    const OverfitResult r = run_overfit(c, corpus, 5000, targets, 50);
    const bool vq_ok = r.vq_final_l1 * targets.l1_improvement <= r.vq_initial_l1;
    const bool plm_ok = r.plm_accuracy >= targets.plm_accuracy;
    const bool adm_ok = r.adm_mse < targets.adm_mse;
    return {vq_ok && plm_ok && adm_ok,
            "4 utterances; vq L1 " + fmt(r.vq_initial_l1) + " -> " + fmt(r.vq_final_l1) + " (" +
                fmt(r.vq_initial_l1 / r.vq_final_l1, 3) + "x >= 10x) in " + std::to_string(r.vq_steps) +
                " steps; plm accuracy " + fmt(r.plm_accuracy) + " >= 0.95 in " + std::to_string(r.plm_steps) +
                " steps; adm log-MSE " + fmt(r.adm_mse) + " < 0.01 in " + std::to_string(r.adm_steps) + " steps"};
}

// ---- 6: prompt-length trend ----------------------------------------------------

Outcome prompt_length(Shared& shared) {
    const double earlier = shared.use(true);
    const TrainedModels m = load_models(shared.dir);
    PromptLenOptions opt;
    opt.lengths = {4, 16, 64};
    opt.timbre_refs = {1, 4, 16};
    opt.trials = 240;
    opt.cond_refs = shared.cfg.train.cond_refs;
    opt.seed = 7;
    const PromptLenResult r = eval_prompt_length(*m.vq, m.plm, m.adm, shared.corpus, shared.split.heldout, opt);
    save_report(prompt_length_report(r), (shared.work / "promptlen_report.jsonl").string());
    const PairedTest* acc = nullptr;
    const PairedTest* tim = nullptr;
    for (const auto& t : r.tests) {
        if (t.metric == "code_accuracy" && t.low == 4 && t.high == 64) acc = &t;
        if (t.metric == "timbre_cosine" && t.low == 1 && t.high == 16) tim = &t;
    }
    const int trials = r.rows.front().trials;
    const bool pass = trials >= 200 && r.accuracy_trend(0.05) && r.timbre_trend(0.05);
    std::ostringstream d;
    d << trials << " paired trials; accuracy";
    for (const auto& row : r.rows) d << ' ' << fmt(row.code_accuracy);
    d << " (4 vs 64: " << acc->count.wins << '/' << acc->count.losses << ", p=" << fmt(acc->p_value, 3) << ")";
    d << "; timbre cosine";
    for (const auto& row : r.rows) d << ' ' << fmt(row.timbre_cosine, 5);
    d << " (1 vs 16 refs: " << tim->count.wins << '/' << tim->count.losses << ", p=" << fmt(tim->p_value, 3) << ")";
    return {pass, d.str(), earlier};
}

// ---- 7: ablations --------------------------------------------------------------

Outcome ablations(Shared& shared) {
    const double earlier = shared.use(false);
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    const auto vq = load_vq(shared.dir);
    const AblationResult dur = ablate_adm_vs_dp(shared.cfg, *vq, shared.corpus, shared.split, seeds, 64);
    // The pool-only encoder plateaus within a few thousand steps while the
    // attention readout keeps improving; both variants get the same budget.
    RunConfig c = shared.cfg;
    c.train.vq_steps = kMrteAblationSteps;
    const AblationResult tim = ablate_mrte_vs_se(c, shared.corpus, shared.split, seeds, 2);
    save_report(ablation_report(dur), (shared.work / "ablation_adm_vs_dp.jsonl").string());
    save_report(ablation_report(tim), (shared.work / "ablation_mrte_vs_se.jsonl").string());
    auto line = [](const AblationResult& r) {
        std::ostringstream s;
        s << r.which << ' ' << r.proposed_wins() << "/5 seeds (";
        for (std::size_t i = 0; i < r.seeds.size(); ++i) {
            s << (i ? ", " : "") << fmt(r.seeds[i].proposed) << " vs " << fmt(r.seeds[i].baseline);
        }
        s << ')';
        return s.str();
    };
    return {dur.proposed_wins() >= 4 && tim.proposed_wins() >= 4, line(dur) + "; " + line(tim), earlier};
}

// ---- 8: determinism and persistence ------------------------------------------

RunConfig tiny_stage_config(const std::string& corpus_path) {
    RunConfig c;
    c.seed = 9;
    c.corpus.speakers = 3;
    c.corpus.utts_per_speaker = 4;
    c.corpus.min_phonemes = 6;
    c.corpus.max_phonemes = 10;
    c.vq.hidden = 16;
    c.vq.code_dim = 8;
    c.vq.codebook = 16;
    c.mrte.d_model = 16;
    c.mrte.d_global = 8;
    c.plm = LmConfig{2, 16, 2, 256, 1, 2};
    c.adm = LmConfig{2, 16, 2, 256, 1, 2};
    c.train.batch_utts = 2;
    c.train.max_refs = 2;
    c.train.checkpoint_every = 10;
    c.corpus_path = corpus_path;
    return c;
}

// Trains `stage` for 20 steps straight and as 10 + 10 with a resume in
// between; returns the largest loss difference over the last 10 records.
Real resume_gap(const fs::path& work, const RunConfig& c, const Corpus& corpus, Stage stage) {
    const fs::path straight = work / "straight", resumed = work / "resumed";
    for (const auto& dir : {straight, resumed}) {
        fs::remove_all(dir);
        fs::create_directories(dir);
        if (stage != Stage::vqgan) {
            fs::copy_file(checkpoint_path((work / "base").string(), Stage::vqgan), checkpoint_path(dir.string(), Stage::vqgan));
        }
    }
    auto with_steps = [&](int n) {
        RunConfig x = c;
        (stage == Stage::vqgan ? x.train.vq_steps : stage == Stage::plm ? x.train.plm_steps : x.train.adm_steps) = n;
        return x;
    };
    train_stage(with_steps(20), corpus, stage, straight.string());
    train_stage(with_steps(10), corpus, stage, resumed.string());
    const TrainOutcome o = train_stage(with_steps(20), corpus, stage, resumed.string());
    if (o.start_step != 10) return INFINITY;
    const auto a = read_loss_curve(loss_curve_path(straight.string(), stage));
    const auto b = read_loss_curve(loss_curve_path(resumed.string(), stage));
    if (a.size() != 20 || b.size() != 20) return INFINITY;
    Real gap = 0.0;
    for (std::size_t i = 10; i < 20; ++i) {
        if (a[i].step != b[i].step || a[i].values.size() != b[i].values.size()) return INFINITY;
        for (std::size_t k = 0; k < a[i].values.size(); ++k) {
            gap = std::max(gap, std::abs(a[i].values[k].second - b[i].values[k].second));
        }
    }
    return gap;
}

Real resume_gap_all(const fs::path& root) {
    const fs::path work = root / "resume";
    fs::remove_all(work);
    fs::create_directories(work);
    RunConfig c = tiny_stage_config((work / "tiny.jsonl").string());
    c.train.vq_steps = c.train.plm_steps = c.train.adm_steps = 20;
    const Corpus corpus = generate_corpus(c.corpus).corpus;
    train_stage(c, corpus, Stage::vqgan, (work / "base").string());
    Real worst = 0.0;
    for (Stage s : {Stage::vqgan, Stage::plm, Stage::adm}) worst = std::max(worst, resume_gap(work, c, corpus, s));
    return worst;
}

Outcome determinism(Shared& shared) {
    const double earlier = shared.use(true);
    const auto speakers = shared.corpus.utterances_of(shared.corpus.utterances[shared.split.heldout.front()].speaker_id);
    const std::vector<std::size_t> prompt(speakers.begin(), speakers.begin() + 3);
    const auto& phonemes = shared.corpus.utterances[speakers.back()].phonemes;
    std::vector<std::string> bytes;
    for (int run = 0; run < 2; ++run) {
        const TrainedModels m = load_models(shared.dir);
        const TimbreRefSet refs = timbre_budget_refs(shared.corpus, prompt, 160);
        const SynthOutput out = synthesize(m, shared.corpus, prompt, refs, phonemes);
        const std::string path = (shared.work / ("synth" + std::to_string(run) + ".mel")).string();
        save_mel(out.mel, path);
        std::ifstream in(path, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        bytes.push_back(ss.str());
    }
    const bool identical = bytes[0] == bytes[1] && !bytes[0].empty();
    const Real worst = resume_gap_all(shared.work);
    return {identical && worst <= 1e-8,
            std::string("synthesis outputs ") + (identical ? "byte-identical" : "differ") + " (" +
                std::to_string(bytes[0].size()) + " bytes); resume max |loss gap| over 10 steps " + fmt(worst) +
                " <= 1e-8 (vqgan, plm, adm)",
            earlier};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };

    Shared shared;
    shared.work = fs::current_path() / "acceptance_work";
    fs::create_directories(shared.work);

    struct Criterion {
        int id;
        std::string name;
        double limit;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient integrity", 120, gradient_integrity},
        {2, "mask and causality suite", 60, mask_suite},
        {3, "vector quantization suite", 30, vq_suite},
        {4, "prosody interpolation suite", 30, interp_suite},
        {5, "overfit convergence", 20 * 60, overfit},
        {6, "prompt-length trend", 30 * 60, [&] { return prompt_length(shared); }},
        {7, "ablation direction", 45 * 60, [&] { return ablations(shared); }},
        {8, "determinism and persistence", 0, [&] { return determinism(shared); }},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        if (!wanted(c.id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double charged = seconds_since(t0) + o.earlier_seconds;
        const bool in_time = c.limit <= 0 || charged < c.limit;
        const bool pass = o.pass && in_time;
        failures += pass ? 0 : 1;
        std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << "; "
                  << fmt(charged, 4) << " s";
        if (c.limit > 0) std::cout << " (limit " << c.limit << " s)";
        std::cout << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
