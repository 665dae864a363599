#include "megatts/config.hpp"

#include "megatts/errors.hpp"

#include <fstream>
#include <type_traits>

namespace megatts {

namespace {

// Calls f(name, member) for every serialized member.
template <class F>
void visit_fields_CorpusConfig(CorpusConfig& c, F&& f) {
    f("speakers", c.speakers);
    f("utts_per_speaker", c.utts_per_speaker);
    f("bins", c.bins);
    f("vocab", c.vocab);
    f("pitch_levels", c.pitch_levels);
    f("content_bins", c.content_bins);
    f("prosody_block", c.prosody_block);
    f("min_phonemes", c.min_phonemes);
    f("max_phonemes", c.max_phonemes);
    f("noise", c.noise);
    f("p_pref", c.p_pref);
    f("min_tempo", c.min_tempo);
    f("max_tempo", c.max_tempo);
    f("duration_jitter", c.duration_jitter);
    f("seed", c.seed);
}

template <class F>
void visit_fields_VqConfig(VqConfig& c, F&& f) {
    f("hop", c.hop);
    f("codebook", c.codebook);
    f("code_dim", c.code_dim);
    f("hidden", c.hidden);
    f("kernel", c.kernel);
    f("decoder_layers", c.decoder_layers);
    f("prosody_bins", c.prosody_bins);
    f("beta", c.beta);
}

template <class F>
void visit_fields_MrteConfig(MrteConfig& c, F&& f) {
    f("d_model", c.d_model);
    f("d_global", c.d_global);
    f("kernel", c.kernel);
    f("content_layers", c.content_layers);
    f("content_heads", c.content_heads);
    f("attention_heads", c.attention_heads);
    f("use_attention", c.use_attention);
}

template <class F>
void visit_fields_LmConfig(LmConfig& c, F&& f) {
    f("layers", c.layers);
    f("d_model", c.d_model);
    f("heads", c.heads);
    f("max_context", c.max_context);
    f("conv_kernel", c.conv_kernel);
    f("ffn_mult", c.ffn_mult);
}

template <class F>
void visit_fields_OptimConfig(OptimConfig& c, F&& f) {
    f("beta1", c.beta1);
    f("beta2", c.beta2);
    f("eps", c.eps);
    f("warmup", c.warmup);
    f("lr_scale", c.lr_scale);
    f("weight_decay", c.weight_decay);
    f("clip_norm", c.clip_norm);
}

template <class F>
void visit_fields_TrainConfig(TrainConfig& c, F&& f) {
    f("vq_steps", c.vq_steps);
    f("plm_steps", c.plm_steps);
    f("adm_steps", c.adm_steps);
    f("batch_utts", c.batch_utts);
    f("max_refs", c.max_refs);
    f("max_frames", c.max_frames);
    f("lm_batches", c.lm_batches);
    f("heldout_speakers", c.heldout_speakers);
    f("checkpoint_every", c.checkpoint_every);
    f("cond_refs", c.cond_refs);
    f("max_train_utts", c.max_train_utts);
}

template <class F>
void visit_fields_RunConfig(RunConfig& c, F&& f) {
    f("seed", c.seed);
    f("corpus", c.corpus);
    f("vq", c.vq);
    f("mrte", c.mrte);
    f("plm", c.plm);
    f("adm", c.adm);
    f("optim", c.optim);
    f("train", c.train);
    f("gamma", c.gamma);
    f("corpus_path", c.corpus_path);
    f("out_dir", c.out_dir);
}

template <class C, class F>
void for_each_field(C& c, F&& f) {
    if constexpr (std::is_same_v<std::remove_const_t<C>, CorpusConfig>) visit_fields_CorpusConfig(const_cast<CorpusConfig&>(c), f);
    else if constexpr (std::is_same_v<std::remove_const_t<C>, VqConfig>) visit_fields_VqConfig(const_cast<VqConfig&>(c), f);
    else if constexpr (std::is_same_v<std::remove_const_t<C>, MrteConfig>) visit_fields_MrteConfig(const_cast<MrteConfig&>(c), f);
    else if constexpr (std::is_same_v<std::remove_const_t<C>, LmConfig>) visit_fields_LmConfig(const_cast<LmConfig&>(c), f);
    else if constexpr (std::is_same_v<std::remove_const_t<C>, OptimConfig>) visit_fields_OptimConfig(const_cast<OptimConfig&>(c), f);
    else if constexpr (std::is_same_v<std::remove_const_t<C>, TrainConfig>) visit_fields_TrainConfig(const_cast<TrainConfig&>(c), f);
    else if constexpr (std::is_same_v<std::remove_const_t<C>, RunConfig>) visit_fields_RunConfig(const_cast<RunConfig&>(c), f);
}

template <class C>
void write_json(nlohmann::json& j, const C& c) {
    j = nlohmann::json::object();
    for_each_field(c, [&j](const char* name, const auto& v) { j[name] = v; });
}

template <class C>
void read_json(const nlohmann::json& j, C& c) {
    if (!j.is_object()) throw ParseError("config: expected an object", 0, 0);
    for_each_field(c, [&j](const char* name, auto& v) {
        if (auto it = j.find(name); it != j.end()) it->get_to(v);
    });
}

}  // namespace

void to_json(nlohmann::json& j, const CorpusConfig& c) { write_json(j, c); }
void from_json(const nlohmann::json& j, CorpusConfig& c) { read_json(j, c); }
void to_json(nlohmann::json& j, const VqConfig& c) { write_json(j, c); }
void from_json(const nlohmann::json& j, VqConfig& c) { read_json(j, c); }
void to_json(nlohmann::json& j, const MrteConfig& c) { write_json(j, c); }
void from_json(const nlohmann::json& j, MrteConfig& c) { read_json(j, c); }
void to_json(nlohmann::json& j, const LmConfig& c) { write_json(j, c); }
void from_json(const nlohmann::json& j, LmConfig& c) { read_json(j, c); }
void to_json(nlohmann::json& j, const OptimConfig& c) { write_json(j, c); }
void from_json(const nlohmann::json& j, OptimConfig& c) { read_json(j, c); }
void to_json(nlohmann::json& j, const TrainConfig& c) { write_json(j, c); }
void from_json(const nlohmann::json& j, TrainConfig& c) { read_json(j, c); }
void to_json(nlohmann::json& j, const RunConfig& c) { write_json(j, c); }
void from_json(const nlohmann::json& j, RunConfig& c) { read_json(j, c); }

void RunConfig::validate() const {
    corpus.validate();
    if (vq.hop < 1 || vq.codebook < 2 || vq.code_dim < 1) throw ParameterError("vq: hop >= 1, K >= 2, d >= 1");
    if (vq.prosody_bins < 1 || vq.prosody_bins > corpus.bins) throw ParameterError("vq: prosody_bins out of range");
    if (vq.kernel < 1 || vq.kernel % 2 == 0) throw ParameterError("vq: kernel must be odd");
    for (const LmConfig* lm : {&plm, &adm}) {
        if (lm->conv_kernel != 1) throw ParameterError("language models need a position-wise (kernel 1) feed-forward");
        if (lm->layers < 1 || lm->d_model % lm->heads != 0) throw ParameterError("lm: layers >= 1, heads | d_model");
    }
    if (mrte.d_model % mrte.content_heads != 0 || mrte.d_model % mrte.attention_heads != 0) {
        throw ParameterError("mrte: heads must divide d_model");
    }
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in [0, 1]");
    if (train.heldout_speakers >= corpus.speakers) throw ParameterError("no training speakers left");
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what(), 0, e.byte);
    }
    RunConfig cfg = j.get<RunConfig>();
    cfg.validate();
    return cfg;
}

void save_config(const RunConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << nlohmann::json(config).dump(2) << '\n';
}

}  // namespace megatts
