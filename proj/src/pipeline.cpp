#include "megatts/pipeline.hpp"

#include "megatts/base64.hpp"
#include "megatts/errors.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace megatts {

namespace {

constexpr std::uint64_t kVqInit = 11;
constexpr std::uint64_t kPlmInit = 12;
constexpr std::uint64_t kAdmInit = 13;
constexpr std::uint64_t kFeatureRefs = 14;

std::vector<std::size_t> every_utterance(const Corpus& corpus) {
    std::vector<std::size_t> v(corpus.utterances.size());
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

Plm make_plm(ParameterSet& ps, const RunConfig& cfg, const RunConfig& vq_cfg) {
    Rng rng(mix_seed(cfg.seed, kPlmInit));
    return Plm(ps, cfg.plm, vq_cfg.vq.codebook, vq_cfg.mrte.d_model, rng);
}

Adm make_adm(ParameterSet& ps, const RunConfig& cfg, const RunConfig& vq_cfg) {
    Rng rng(mix_seed(cfg.seed, kAdmInit));
    return Adm(ps, cfg.adm, vq_cfg.mrte.d_model, rng);
}

Checkpoint load_stage_checkpoint(const std::string& dir, Stage s) {
    const std::string path = checkpoint_path(dir, s);
    if (!std::filesystem::exists(path)) {
        throw DependencyError("stage " + stage_name(s) + " has no checkpoint at " + path + "; train it first");
    }
    Checkpoint c = load_checkpoint(path);
    if (c.stage != stage_name(s)) throw ParseError(path + " holds stage " + c.stage, 0, 0);
    return c;
}

// Drives any trainer with the shared resume / checkpoint / loss-curve logic.
TrainOutcome drive(const RunConfig& cfg, Stage stage, const std::string& dir, ParameterSet& params, Optimizer& opt,
                   const std::function<StepRecord()>& step, std::int64_t total, std::ostream* progress) {
    const std::string ckpt = checkpoint_path(dir, stage);
    const std::string curve = loss_curve_path(dir, stage);
    TrainOutcome out;
    std::vector<StepRecord> kept;
    if (std::filesystem::exists(ckpt)) {
        Checkpoint c = load_stage_checkpoint(dir, stage);
        restore(c, params, &opt.adam());
        opt.set_step(c.step);
        out.start_step = c.step;
        if (std::filesystem::exists(curve)) {
            for (auto& r : read_loss_curve(curve)) {
                if (r.step <= c.step) kept.push_back(std::move(r));
            }
        }
    }
    {
        std::ofstream f(curve, std::ios::trunc);
        if (!f) throw Error("cannot write " + curve);
        f << loss_curve_header(stage_name(stage)) << '\n';
        for (const auto& r : kept) f << format_step_record(r) << '\n';
    }
    std::ofstream f(curve, std::ios::app);
    const std::int64_t every = std::max(1, cfg.train.checkpoint_every);
    while (opt.step() < total) {
        out.last = step();
        f << format_step_record(out.last) << '\n';
        if (opt.step() % every == 0 || opt.step() == total) {
            f.flush();
            save_checkpoint(capture(stage_name(stage), cfg, params, &opt.adam(), opt.step()), ckpt);
            if (progress != nullptr) *progress << format_step_record(out.last) << '\n';
        }
    }
    out.end_step = opt.step();
    return out;
}

}  // namespace

Stage parse_stage(const std::string& name) {
    if (name == "vqgan") return Stage::vqgan;
    if (name == "plm") return Stage::plm;
    if (name == "adm") return Stage::adm;
    throw ParameterError("unknown stage '" + name + "' (expected vqgan, plm or adm)");
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::vqgan: return "vqgan";
        case Stage::plm: return "plm";
        case Stage::adm: return "adm";
    }
    return "?";
}

std::string checkpoint_path(const std::string& dir, Stage s) {
    return (std::filesystem::path(dir) / (stage_name(s) + ".ckpt")).string();
}

std::string loss_curve_path(const std::string& dir, Stage s) {
    return (std::filesystem::path(dir) / (stage_name(s) + "_loss.jsonl")).string();
}

TrainOutcome train_stage(const RunConfig& cfg, const Corpus& corpus, Stage stage, const std::string& dir,
                         std::ostream* progress) {
    cfg.validate();
    std::filesystem::create_directories(dir);
    const SpeakerSplit split = split_by_speaker(corpus, cfg.train.heldout_speakers, cfg.train.max_train_utts);
    if (stage == Stage::vqgan) {
        VqTtsModel model(cfg, mix_seed(cfg.seed, kVqInit));
        VqTrainer trainer(model, corpus, split.train, cfg);
        return drive(cfg, stage, dir, model.params, trainer.optimizer(), [&] { return trainer.step(); },
                     cfg.train.vq_steps, progress);
    }
    auto vq = load_vq(dir);
    const auto feats = extract_features(*vq, corpus, split.train, every_utterance(corpus), cfg.train.cond_refs,
                                        mix_seed(cfg.seed, kFeatureRefs));
    ParameterSet ps;
    if (stage == Stage::plm) {
        Plm plm = make_plm(ps, cfg, vq->config());
        PlmTrainer trainer(plm, ps, feats, cfg);
        return drive(cfg, stage, dir, ps, trainer.optimizer(), [&] { return trainer.step(); }, cfg.train.plm_steps,
                     progress);
    }
    Adm adm = make_adm(ps, cfg, vq->config());
    AdmTrainer trainer(adm, ps, feats, cfg);
    return drive(cfg, stage, dir, ps, trainer.optimizer(), [&] { return trainer.step(); }, cfg.train.adm_steps,
                 progress);
}

std::unique_ptr<VqTtsModel> load_vq(const std::string& dir) {
    Checkpoint c = load_stage_checkpoint(dir, Stage::vqgan);
    const RunConfig cfg = checkpoint_config(c);
    auto model = std::make_unique<VqTtsModel>(cfg, mix_seed(cfg.seed, kVqInit));
    restore(c, model->params, nullptr);
    return model;
}

TrainedModels load_models(const std::string& dir) {
    TrainedModels m;
    m.vq = load_vq(dir);
    m.cfg = m.vq->config();
    Checkpoint pc = load_stage_checkpoint(dir, Stage::plm);
    m.plm = make_plm(m.plm_params, checkpoint_config(pc), m.cfg);
    restore(pc, m.plm_params, nullptr);
    Checkpoint ac = load_stage_checkpoint(dir, Stage::adm);
    m.adm = make_adm(m.adm_params, checkpoint_config(ac), m.cfg);
    restore(ac, m.adm_params, nullptr);
    return m;
}

int single_speaker(const Corpus& corpus, const std::vector<std::size_t>& ids) {
    if (ids.empty()) throw PreconditionError("prompt set is empty");
    const int s = corpus.utterances.at(ids.front()).speaker_id;
    for (std::size_t i : ids) {
        if (corpus.utterances.at(i).speaker_id != s) throw PreconditionError("prompts come from more than one speaker");
    }
    return s;
}

TimbreRefSet timbre_budget_refs(const Corpus& corpus, const std::vector<std::size_t>& ids, Index frames) {
    single_speaker(corpus, ids);
    TimbreRefSet refs;
    Index left = frames > 0 ? frames : std::numeric_limits<Index>::max();
    for (std::size_t i : ids) {
        if (left <= 0) break;
        const Matrix& mel = corpus.utterances.at(i).mel;
        const Index take = std::min(left, mel.rows());
        refs.refs.push_back(mel.topRows(take));
        left -= take;
    }
    return refs;
}

PromptFeatures prompt_features(const VqTtsModel& vq, const Corpus& corpus, const std::vector<std::size_t>& ids,
                               const TimbreRefSet& refs) {
    NoGradGuard guard;
    PromptFeatures p;
    std::vector<Matrix> conds, contents;
    Index cond_rows = 0, content_rows = 0;
    for (std::size_t i : ids) {
        const Utterance& u = corpus.utterances.at(i);
        const auto codes = vq.encode_codes(u.mel).codes;
        p.codes.insert(p.codes.end(), codes.begin(), codes.end());
        p.durations.insert(p.durations.end(), u.durations.begin(), u.durations.end());
        Tensor content = vq.mrte.content_encode(u.phonemes);
        contents.push_back(content.value());
        conds.push_back(pool_to_codes(
            gather_rows(vq.mrte.phoneme_hidden(content, refs), length_regulator_index(u.durations)).value(), vq.hop()));
        cond_rows += conds.back().rows();
        content_rows += contents.back().rows();
    }
    const Index d = vq.mrte.d_model();
    p.code_cond.resize(cond_rows, d);
    p.content.resize(content_rows, d);
    Index a = 0, b = 0;
    for (std::size_t k = 0; k < conds.size(); ++k) {
        p.code_cond.middleRows(a, conds[k].rows()) = conds[k];
        p.content.middleRows(b, contents[k].rows()) = contents[k];
        a += conds[k].rows();
        b += contents[k].rows();
    }
    return p;
}

namespace {

struct TargetPlan {
    std::vector<int> durations;
    CondSeq cond;
    Matrix code_cond;
};

TargetPlan plan_target(const TrainedModels& m, const PromptFeatures& prompt, const TimbreRefSet& refs,
                       const std::vector<int>& phonemes) {
    NoGradGuard guard;
    TargetPlan t;
    Tensor content = m.vq->mrte.content_encode(phonemes);
    t.durations = m.adm.generate(prompt.durations, prompt.content, content.value());
    t.cond = CondSeq{gather_rows(m.vq->mrte.phoneme_hidden(content, refs), length_regulator_index(t.durations))};
    t.code_cond = pool_to_codes(t.cond, m.vq->hop());
    return t;
}

}  // namespace

SynthOutput synthesize(const TrainedModels& m, const Corpus& corpus, const std::vector<std::size_t>& prompt_ids,
                       const TimbreRefSet& refs, const std::vector<int>& target_phonemes) {
    single_speaker(corpus, prompt_ids);
    const PromptFeatures prompt = prompt_features(*m.vq, corpus, prompt_ids, refs);
    TargetPlan t = plan_target(m, prompt, refs, target_phonemes);
    SynthOutput out;
    out.durations = t.durations;
    out.codes = ProsodyCodeSeq{m.plm.generate(prompt.codes, prompt.code_cond, t.code_cond), static_cast<int>(m.vq->hop())};
    out.mel = m.vq->decode_mel(out.codes, t.cond);
    return out;
}

SynthOutput interp_synthesize(const TrainedModels& m, const Corpus& corpus, const std::vector<std::size_t>& flat_ids,
                              const std::vector<std::size_t>& rhy_ids, const TimbreRefSet& refs,
                              const std::vector<int>& target_phonemes, Real gamma) {
    single_speaker(corpus, flat_ids);
    single_speaker(corpus, rhy_ids);
    const PromptFeatures flat = prompt_features(*m.vq, corpus, flat_ids, refs);
    const PromptFeatures rhy = prompt_features(*m.vq, corpus, rhy_ids, refs);
    TargetPlan t = plan_target(m, flat, refs, target_phonemes);
    SynthOutput out;
    out.durations = t.durations;
    out.codes = ProsodyCodeSeq{interp_generate(m.plm, {flat.codes, flat.code_cond}, {rhy.codes, rhy.code_cond},
                                               t.code_cond, gamma),
                               static_cast<int>(m.vq->hop())};
    out.mel = m.vq->decode_mel(out.codes, t.cond);
    return out;
}

std::string serialize_mel(const Matrix& mel) {
    std::ostringstream out;
    nlohmann::ordered_json h;
    h["format"] = "megatts-mel";
    h["version"] = 1;
    h["frames"] = mel.rows();
    h["bins"] = mel.cols();
    out << h.dump() << '\n';
    std::vector<float> row(static_cast<std::size_t>(mel.cols()));
    for (Index r = 0; r < mel.rows(); ++r) {
        for (Index c = 0; c < mel.cols(); ++c) row[static_cast<std::size_t>(c)] = static_cast<float>(mel(r, c));
        out << base64::encode_f32(row) << '\n';
    }
    return out.str();
}

Matrix parse_mel(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty mel file", 1, 0);
    Index frames = 0, bins = 0;
    try {
        auto h = nlohmann::json::parse(line);
        if (h.at("format") != "megatts-mel") throw ParseError("not a mel file", 1, 0);
        if (h.at("version") != 1) throw VersionError("unsupported mel file version");
        frames = h.at("frames").get<Index>();
        bins = h.at("bins").get<Index>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("mel header: ") + e.what(), 1, 0);
    }
    Matrix mel(frames, bins);
    for (Index r = 0; r < frames; ++r) {
        if (!std::getline(in, line)) throw ParseError("mel file truncated", static_cast<std::size_t>(r + 2), 0);
        std::vector<float> row;
        try {
            row = base64::decode_f32(line);
        } catch (const std::invalid_argument& e) {
            throw ParseError(std::string("mel row: ") + e.what(), static_cast<std::size_t>(r + 2), 0);
        }
        if (static_cast<Index>(row.size()) != bins) throw ParseError("mel row width", static_cast<std::size_t>(r + 2), 0);
        for (Index c = 0; c < bins; ++c) mel(r, c) = row[static_cast<std::size_t>(c)];
    }
    return mel;
}

void save_mel(const Matrix& mel, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << serialize_mel(mel);
}

Matrix load_mel(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_mel(ss.str());
}

}  // namespace megatts
