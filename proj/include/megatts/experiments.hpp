#pragma once

// Evaluation experiments: prompt-length sweeps, baseline ablations, overfit
// runs, per-module gradient checks, and the line-delimited report format
// they are written in.

#include "megatts/grad_check.hpp"
#include "megatts/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace megatts {

// One-sided exact sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
// Ties are dropped before calling. Returns 1 when there are no decided pairs.
Real sign_test_p(int wins, int losses);

struct PairedCount {
    int wins = 0;  // second value strictly greater
    int losses = 0;
    int ties = 0;
};
PairedCount paired_count(const std::vector<Real>& low, const std::vector<Real>& high);

// Report file: a header line
//   {"format":"megatts-report","version":1,"kind":...,"sections":{name:[columns]}}
// followed by one object per line carrying "section" plus exactly that
// section's columns, in order.
struct Report {
    static constexpr int kVersion = 1;
    std::string kind;
    std::vector<std::pair<std::string, std::vector<std::string>>> sections;
    std::vector<nlohmann::ordered_json> rows;

    const std::vector<std::string>& columns(const std::string& section) const;
    // Appends a row; `values` must match the section's columns in order.
    void add(const std::string& section, nlohmann::ordered_json values);
    std::vector<nlohmann::ordered_json> rows_of(const std::string& section) const;
    bool operator==(const Report&) const = default;
};
std::string serialize_report(const Report& r);
Report parse_report(const std::string& text);
void save_report(const Report& r, const std::string& path);
Report load_report(const std::string& path);
// Fixed-width human-readable rendering, one table per section.
std::string summary_table(const Report& r);

// Prompt-length sweep on held-out speakers. Trial k takes target
// eval_ids[k % n] and a seeded shuffle of its speaker's other utterances;
// the prompt at length L is the last L codes (phonemes for durations) of
// that concatenation, so shorter prompts are suffixes of longer ones, and
// the timbre references are the first refs[i] utterances of the shuffle.
struct PromptLenOptions {
    std::vector<Index> lengths{4, 16, 64};
    std::vector<Index> timbre_refs;  // empty: max(1, L / 4) per length
    int trials = 200;
    int cond_refs = 2;  // references behind the language-model conditions
    std::uint64_t seed = 1;
};

struct PromptLenRow {
    Index length = 0;
    Index timbre_refs = 0;
    int trials = 0;
    Real code_accuracy = 0.0;  // teacher-forced, target positions only
    Real duration_mse = 0.0;   // teacher-forced log-duration MSE
    Real timbre_cosine = 0.0;  // global timbre of reconstruction vs target
};

struct PairedTest {
    std::string metric;
    Index low = 0;  // prompt length (code_accuracy) or reference count (timbre_cosine)
    Index high = 0;
    PairedCount count;
    Real p_value = 1.0;
};

struct PromptLenResult {
    std::vector<PromptLenRow> rows;
    std::vector<PairedTest> tests;  // adjacent pairs and first vs last, per metric
    int skipped = 0;                // targets whose speaker lacks enough prompt material
    // Per length, per trial.
    std::vector<std::vector<Real>> accuracy, timbre;

    // Means non-decreasing along the sweep and first-vs-last p below alpha.
    bool accuracy_trend(Real alpha) const;
    bool timbre_trend(Real alpha) const;
};

PromptLenResult eval_prompt_length(const VqTtsModel& vq, const Plm& plm, const Adm& adm, const Corpus& corpus,
                                   const std::vector<std::size_t>& eval_ids, const PromptLenOptions& opt);
Report prompt_length_report(const PromptLenResult& r);

// Baseline ablations. Each seed reseeds initialization and batching of
// both variants; "better" means a lower held-out error.
struct AblationSeed {
    std::uint64_t seed = 0;
    Real proposed = 0.0;
    Real baseline = 0.0;
};
struct AblationResult {
    std::string which;   // adm_vs_dp or mrte_vs_se
    std::string metric;  // logdur_mse or recon_l1
    std::vector<AblationSeed> seeds;
    int proposed_wins() const;
};

// Held-out log-duration MSE of the autoregressive duration model (prompted
// with `prompt_phonemes` of the speaker's other utterances) against the
// content-only duration predictor. Both are trained on `train` features.
AblationResult ablate_adm_vs_dp(const RunConfig& cfg, const VqTtsModel& vq, const Corpus& corpus,
                                const SpeakerSplit& split, const std::vector<std::uint64_t>& seeds,
                                Index prompt_phonemes, std::ostream* progress = nullptr);
// Held-out reconstruction L1 of the first-stage model with the attention
// timbre encoder against the pool-only one, each trained from scratch.
AblationResult ablate_mrte_vs_se(const RunConfig& cfg, const Corpus& corpus, const SpeakerSplit& split,
                                 const std::vector<std::uint64_t>& seeds, int eval_refs,
                                 std::ostream* progress = nullptr);
Report ablation_report(const AblationResult& r);

// Mean reconstruction L1 over `ids`, each using as references up to `refs`
// of its speaker's utterances that follow it in corpus order, wrapping
// around (itself when it is the speaker's only utterance).
Real heldout_recon_l1(const VqTtsModel& model, const Corpus& corpus, const std::vector<std::size_t>& ids, int refs);

// Trains each stage on the whole (tiny) corpus until its target is met or
// max_steps is reached, checking every `check_every` steps.
struct OverfitResult {
    Real vq_initial_l1 = 0.0;
    Real vq_final_l1 = 0.0;
    std::int64_t vq_steps = 0;
    Real plm_accuracy = 0.0;
    Real plm_loss = 0.0;
    std::int64_t plm_steps = 0;
    Real adm_mse = 0.0;
    std::int64_t adm_steps = 0;
};
struct OverfitTargets {
    Real l1_improvement = 10.0;
    Real plm_accuracy = 0.95;
    Real adm_mse = 0.01;
};
OverfitResult run_overfit(const RunConfig& cfg, const Corpus& corpus, std::int64_t max_steps,
                          const OverfitTargets& targets, std::int64_t check_every = 50,
                          std::ostream* progress = nullptr);

// Gradient checks of each trainable module on small random instances.
// Objectives are the module's smooth training losses or fixed random linear
// probes of its outputs. Terms a finite difference cannot reproduce are left
// out: stop-gradient losses (their value still moves with the detached
// input), the nearest-code choice, and the L1 kink; the decoder reads
// codebook rows at fixed codes.
std::vector<std::string> grad_check_modules();
GradCheckReport grad_check_module(const std::string& module, std::uint64_t seed = 1);
Report grad_check_report(const std::vector<std::pair<std::string, GradCheckReport>>& results);

}  // namespace megatts
