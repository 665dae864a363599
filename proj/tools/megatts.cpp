// Command-line front end: corpus generation, staged training, synthesis,
// interpolation, evaluation, ablations, and gradient checks.

#include "megatts/errors.hpp"
#include "megatts/experiments.hpp"
#include "megatts/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

using namespace megatts;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "RunConfig JSON file (defaults apply when omitted)");
    cmd->add_option("--seed", c.seed, "overrides the configured seed");
    cmd->add_option("--out", c.out, "output path");
}

RunConfig load(const Common& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
    if (c.seed) cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

// Writes to `path`, or to stdout when it is empty.
void emit(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << text;
}

struct SynthArgs {
    std::string run_dir;
    std::string corpus_path;
    int speaker = 0;
    int rhy_speaker = 1;
    int target = -1;
    int prompt_sents = 1;
    int timbre_frames = 0;
    double gamma = 0.5;
};

void add_synth_options(CLI::App* cmd, SynthArgs& a) {
    cmd->add_option("--run", a.run_dir, "directory holding the stage checkpoints (default: config out_dir)");
    cmd->add_option("--corpus", a.corpus_path, "corpus file (default: config corpus_path)");
    cmd->add_option("--speaker", a.speaker, "prompt / timbre speaker id");
    cmd->add_option("--target", a.target, "utterance index whose phonemes are synthesized (default: speaker's last)");
    cmd->add_option("--prompt-sents", a.prompt_sents, "prosody/duration prompt sentences")->check(CLI::PositiveNumber);
    cmd->add_option("--timbre-frames", a.timbre_frames, "timbre reference frame budget (0: all prompt speech)")
        ->check(CLI::NonNegativeNumber);
}

struct SynthSetup {
    Corpus corpus;
    std::size_t target = 0;
    std::vector<std::size_t> prompt_ids;
    TimbreRefSet refs;
};

// Prompt sentences: the speaker's first utterances other than the target.
std::vector<std::size_t> prompt_of(const Corpus& corpus, int speaker, std::size_t target, int count) {
    std::vector<std::size_t> ids;
    for (std::size_t i : corpus.utterances_of(speaker)) {
        if (i != target && static_cast<int>(ids.size()) < count) ids.push_back(i);
    }
    if (ids.empty()) throw PreconditionError("speaker " + std::to_string(speaker) + " has no prompt utterances");
    return ids;
}

SynthSetup synth_setup(const RunConfig& cfg, SynthArgs& a) {
    if (a.run_dir.empty()) a.run_dir = cfg.out_dir;
    SynthSetup s;
    s.corpus = load_corpus(a.corpus_path.empty() ? cfg.corpus_path : a.corpus_path);
    const auto own = s.corpus.utterances_of(a.speaker);
    if (own.empty()) throw PreconditionError("speaker " + std::to_string(a.speaker) + " is not in the corpus");
    s.target = a.target >= 0 ? static_cast<std::size_t>(a.target) : own.back();
    if (s.target >= s.corpus.utterances.size()) throw PreconditionError("target utterance out of range");
    s.prompt_ids = prompt_of(s.corpus, a.speaker, s.target, a.prompt_sents);
    std::vector<std::size_t> timbre_ids;
    for (std::size_t i : own) {
        if (i != s.target) timbre_ids.push_back(i);
    }
    s.refs = timbre_budget_refs(s.corpus, timbre_ids, a.timbre_frames);
    return s;
}

// One-line metrics record for a synthesized mel.
std::string synth_record(const TrainedModels& m, const SynthOutput& out, const TimbreRefSet& refs) {
    NoGradGuard guard;
    TimbreRefSet produced;
    produced.refs.push_back(out.mel);
    const Real cos = cosine_similarity(RowVector(m.vq->mrte.global_timbre(produced).value()),
                                       RowVector(m.vq->mrte.global_timbre(refs).value()));
    Index total = 0;
    for (int d : out.durations) total += d;
    nlohmann::ordered_json j;
    j["frames"] = out.mel.rows();
    j["duration_sum"] = total;
    j["phonemes"] = out.durations.size();
    j["codes"] = out.codes.size();
    j["timbre_cosine"] = cos;
    return j.dump();
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, int count) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < count; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale zero-shot speech synthesis with prompt-conditioned prosody and duration models"};
    app.require_subcommand(1);

    Common common;
    SynthArgs synth;

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic multi-speaker corpus");
    add_common(gen, common);

    std::string stage;
    std::string train_corpus;
    auto* train = app.add_subcommand("train", "train one stage (vqgan, then plm and adm)");
    add_common(train, common);
    train->add_option("stage", stage, "vqgan, plm or adm")->required();
    train->add_option("--corpus", train_corpus, "corpus file (default: config corpus_path)");

    auto* syn = app.add_subcommand("synth", "synthesize a target sentence from a speaker's prompts");
    add_common(syn, common);
    add_synth_options(syn, synth);

    auto* interp = app.add_subcommand("interp-synth", "synthesize with prosody interpolated between two speakers");
    add_common(interp, common);
    add_synth_options(interp, synth);
    interp->add_option("--rhy-speaker", synth.rhy_speaker, "speaker supplying the rhythmic prosody prompt");
    interp->add_option("--gamma", synth.gamma, "weight of the flat (target speaker) context")
        ->check(CLI::Range(0.0, 1.0));

    std::vector<Index> lengths{4, 16, 64};
    std::vector<Index> timbre_refs;
    int trials = 200;
    auto* evalp = app.add_subcommand("eval-promptlen", "prompt-length sweep on held-out speakers");
    add_common(evalp, common);
    evalp->add_option("--run", synth.run_dir, "directory holding the stage checkpoints (default: config out_dir)");
    evalp->add_option("--corpus", synth.corpus_path, "corpus file (default: config corpus_path)");
    evalp->add_option("--lengths", lengths, "prompt lengths in codes (phonemes for durations)")->delimiter(',');
    evalp->add_option("--timbre-refs", timbre_refs, "timbre reference counts, one per length")->delimiter(',');
    evalp->add_option("--trials", trials, "paired trials")->check(CLI::PositiveNumber);

    std::string which;
    int seeds = 5;
    Index prompt_phonemes = 64;
    int eval_refs = 2;
    auto* ablate = app.add_subcommand("ablate", "compare a proposed component with its baseline over seeds");
    add_common(ablate, common);
    ablate->add_option("which", which, "adm_vs_dp or mrte_vs_se")
        ->required()
        ->check(CLI::IsMember({"adm_vs_dp", "mrte_vs_se"}));
    ablate->add_option("--run", synth.run_dir, "checkpoint directory with vqgan.ckpt (adm_vs_dp)");
    ablate->add_option("--corpus", synth.corpus_path, "corpus file (default: config corpus_path)");
    ablate->add_option("--seeds", seeds, "number of seeds, starting at --seed")->check(CLI::PositiveNumber);
    ablate->add_option("--prompt-phonemes", prompt_phonemes, "duration prompt length (adm_vs_dp)");
    ablate->add_option("--eval-refs", eval_refs, "references per held-out reconstruction (mrte_vs_se)");

    std::string module = "all";
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check of the trainable modules");
    add_common(gc, common);
    gc->add_option("module", module, "vqvae, mrte, plm, adm, duration_predictor or all");

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = load(common);
        if (gen->parsed()) {
            CorpusConfig cc = cfg.corpus;
            if (common.seed) cc.seed = *common.seed;
            const std::string path = common.out.empty() ? cfg.corpus_path : common.out;
            save_corpus(generate_corpus(cc).corpus, path);
            std::cout << "wrote " << path << '\n';
        } else if (train->parsed()) {
            const Corpus corpus = load_corpus(train_corpus.empty() ? cfg.corpus_path : train_corpus);
            const std::string dir = common.out.empty() ? cfg.out_dir : common.out;
            const TrainOutcome o = train_stage(cfg, corpus, parse_stage(stage), dir, &std::cout);
            std::cout << stage << " trained steps " << o.start_step << ".." << o.end_step << " -> "
                      << checkpoint_path(dir, parse_stage(stage)) << '\n';
        } else if (syn->parsed() || interp->parsed()) {
            const SynthSetup s = synth_setup(cfg, synth);
            const TrainedModels m = load_models(synth.run_dir);
            const auto& phonemes = s.corpus.utterances[s.target].phonemes;
            SynthOutput out;
            if (syn->parsed()) {
                out = synthesize(m, s.corpus, s.prompt_ids, s.refs, phonemes);
            } else {
                const auto rhy = prompt_of(s.corpus, synth.rhy_speaker, s.target, synth.prompt_sents);
                out = interp_synthesize(m, s.corpus, s.prompt_ids, rhy, s.refs, phonemes, synth.gamma);
            }
            save_mel(out.mel, common.out.empty() ? "synth.mel" : common.out);
            std::cout << synth_record(m, out, s.refs) << '\n';
        } else if (evalp->parsed()) {
            if (synth.run_dir.empty()) synth.run_dir = cfg.out_dir;
            const Corpus corpus = load_corpus(synth.corpus_path.empty() ? cfg.corpus_path : synth.corpus_path);
            const TrainedModels m = load_models(synth.run_dir);
            const SpeakerSplit split = split_by_speaker(corpus, m.cfg.train.heldout_speakers);
            PromptLenOptions opt;
            opt.lengths = lengths;
            opt.timbre_refs = timbre_refs;
            opt.trials = trials;
            opt.cond_refs = m.cfg.train.cond_refs;
            opt.seed = cfg.seed;
            const auto ids = split.heldout.empty() ? split.train : split.heldout;
            const Report rep = prompt_length_report(eval_prompt_length(*m.vq, m.plm, m.adm, corpus, ids, opt));
            emit(serialize_report(rep), common.out);
            std::cerr << summary_table(rep);
        } else if (ablate->parsed()) {
            const Corpus corpus = load_corpus(synth.corpus_path.empty() ? cfg.corpus_path : synth.corpus_path);
            const SpeakerSplit split = split_by_speaker(corpus, cfg.train.heldout_speakers, cfg.train.max_train_utts);
            const auto list = seed_list(cfg.seed, seeds);
            AblationResult r;
            if (which == "adm_vs_dp") {
                const auto vq = load_vq(synth.run_dir.empty() ? cfg.out_dir : synth.run_dir);
                r = ablate_adm_vs_dp(cfg, *vq, corpus, split, list, prompt_phonemes, &std::cerr);
            } else {
                r = ablate_mrte_vs_se(cfg, corpus, split, list, eval_refs, &std::cerr);
            }
            const Report rep = ablation_report(r);
            emit(serialize_report(rep), common.out);
            std::cerr << summary_table(rep);
        } else if (gc->parsed()) {
            std::vector<std::string> modules = module == "all" ? grad_check_modules() : std::vector<std::string>{module};
            std::vector<std::pair<std::string, GradCheckReport>> results;
            for (const auto& m : modules) results.emplace_back(m, grad_check_module(m, cfg.seed));
            const Report rep = grad_check_report(results);
            emit(serialize_report(rep), common.out);
            std::cerr << summary_table(rep);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
