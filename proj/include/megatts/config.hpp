#pragma once

#include "megatts/corpus.hpp"
#include "megatts/optim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace megatts {

struct VqConfig {
    int hop = 4;            // frames per prosody code
    int codebook = 64;      // K
    int code_dim = 32;      // d
    int hidden = 64;
    int kernel = 5;
    int decoder_layers = 3;
    int prosody_bins = 8;   // low bins seen by the prosody encoder
    Real beta = 0.25;       // commitment weight
};

struct MrteConfig {
    int d_model = 64;
    int d_global = 16;
    int kernel = 5;
    int content_layers = 1;
    int content_heads = 2;
    int attention_heads = 1;
    bool use_attention = true;  // false: pool-only speaker encoder baseline
};

// Shared by the prosody and duration language models.
struct LmConfig {
    int layers = 4;
    int d_model = 128;
    int heads = 4;
    int max_context = 512;
    int conv_kernel = 1;
    int ffn_mult = 4;
};

struct OptimConfig {
    Real beta1 = 0.9;
    Real beta2 = 0.98;
    Real eps = 1e-9;
    int warmup = 400;
    Real lr_scale = 1.0;
    Real weight_decay = 0.0;
    Real clip_norm = 0.0;

    AdamConfig adam() const { return {beta1, beta2, eps, weight_decay, clip_norm}; }
};

struct TrainConfig {
    int vq_steps = 2000;
    int plm_steps = 5000;
    int adm_steps = 5000;
    int batch_utts = 4;        // utterances per first-stage step
    int max_refs = 4;          // timbre references per first-stage example
    int max_frames = 2048;     // speaker-batch frame budget
    int lm_batches = 1;        // speaker batches per language-model step
    int heldout_speakers = 0;  // highest speaker ids excluded from training
    int checkpoint_every = 500;
    int cond_refs = 2;         // references used to build conditions for LM training
    int max_train_utts = 0;    // per training speaker; 0 keeps all
};

struct RunConfig {
    std::uint64_t seed = 1;
    CorpusConfig corpus;
    VqConfig vq;
    MrteConfig mrte;
    LmConfig plm;
    LmConfig adm{4, 128, 4, 512, 1, 4};
    OptimConfig optim;
    TrainConfig train;
    Real gamma = 0.5;
    std::string corpus_path = "corpus.jsonl";
    std::string out_dir = "run";

    void validate() const;
};

// JSON mapping; missing keys keep their defaults, unknown keys are ignored.
void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);
void to_json(nlohmann::json& j, const VqConfig& c);
void from_json(const nlohmann::json& j, VqConfig& c);
void to_json(nlohmann::json& j, const MrteConfig& c);
void from_json(const nlohmann::json& j, MrteConfig& c);
void to_json(nlohmann::json& j, const LmConfig& c);
void from_json(const nlohmann::json& j, LmConfig& c);
void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_config(const std::string& path);
void save_config(const RunConfig& config, const std::string& path);

}  // namespace megatts
