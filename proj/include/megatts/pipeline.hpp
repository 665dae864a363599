#pragma once

// Staged training with checkpoints and loss curves, model loading, and the
// synthesis pipelines (durations -> condition -> prosody codes -> mel).

#include "megatts/adm.hpp"
#include "megatts/checkpoint.hpp"
#include "megatts/interp.hpp"
#include "megatts/train.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace megatts {

enum class Stage { vqgan, plm, adm };
Stage parse_stage(const std::string& name);
std::string stage_name(Stage s);
std::string checkpoint_path(const std::string& dir, Stage s);
std::string loss_curve_path(const std::string& dir, Stage s);

struct TrainOutcome {
    std::int64_t start_step = 0;  // > 0 when resumed from an existing checkpoint
    std::int64_t end_step = 0;
    StepRecord last;
};

// Trains one stage up to its configured step count, resuming from
// `dir/<stage>.ckpt` when present. Appends records to the loss curve and
// checkpoints every train.checkpoint_every steps and at the end. The plm and
// adm stages need `dir/vqgan.ckpt` (DependencyError otherwise).
TrainOutcome train_stage(const RunConfig& cfg, const Corpus& corpus, Stage stage, const std::string& dir,
                         std::ostream* progress = nullptr);

std::unique_ptr<VqTtsModel> load_vq(const std::string& dir);

struct TrainedModels {
    RunConfig cfg;
    std::unique_ptr<VqTtsModel> vq;
    ParameterSet plm_params;
    Plm plm;
    ParameterSet adm_params;
    Adm adm;
};
TrainedModels load_models(const std::string& dir);

// Throws PreconditionError unless ids is non-empty and single-speaker.
int single_speaker(const Corpus& corpus, const std::vector<std::size_t>& ids);
// References from the given utterances, in order, cut to `frames` in total
// (frames <= 0 keeps everything).
TimbreRefSet timbre_budget_refs(const Corpus& corpus, const std::vector<std::size_t>& ids, Index frames);

// Language-model view of prompt utterances, concatenated in order. The
// condition uses `refs` (the target speaker's timbre).
struct PromptFeatures {
    std::vector<int> codes;
    Matrix code_cond;
    std::vector<int> durations;
    Matrix content;
};
PromptFeatures prompt_features(const VqTtsModel& vq, const Corpus& corpus, const std::vector<std::size_t>& ids,
                               const TimbreRefSet& refs);

struct SynthOutput {
    std::vector<int> durations;
    ProsodyCodeSeq codes;
    Matrix mel;
};
SynthOutput synthesize(const TrainedModels& m, const Corpus& corpus, const std::vector<std::size_t>& prompt_ids,
                       const TimbreRefSet& refs, const std::vector<int>& target_phonemes);
// Durations follow the flat prompt; prosody codes mix the flat and rhythmic
// contexts with weight gamma on the flat one. Only `refs` supplies timbre.
SynthOutput interp_synthesize(const TrainedModels& m, const Corpus& corpus, const std::vector<std::size_t>& flat_ids,
                              const std::vector<std::size_t>& rhy_ids, const TimbreRefSet& refs,
                              const std::vector<int>& target_phonemes, Real gamma);

// Mel file: a header line {"format":"megatts-mel","version":1,"frames","bins"}
// then one base64 little-endian float32 row per line.
std::string serialize_mel(const Matrix& mel);
Matrix parse_mel(const std::string& text);
void save_mel(const Matrix& mel, const std::string& path);
Matrix load_mel(const std::string& path);

}  // namespace megatts
