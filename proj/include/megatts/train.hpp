#pragma once

// Training loops. Every batch is a pure function of (seed, step), so resuming
// needs only parameters, optimizer moments, and the step counter.

#include "megatts/adm.hpp"
#include "megatts/config.hpp"
#include "megatts/corpus.hpp"
#include "megatts/optim.hpp"
#include "megatts/plm.hpp"
#include "megatts/tts_model.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace megatts {

// Utterance indices split by speaker: the `heldout_speakers` highest ids are
// held out. A positive `max_train_utts` keeps only each training speaker's
// first utterances.
struct SpeakerSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> heldout;
};
SpeakerSplit split_by_speaker(const Corpus& corpus, int heldout_speakers, int max_train_utts = 0);

// Up to `count` distinct other utterances of the target's speaker, drawn
// from `pool`; the target itself when it has no same-speaker partner.
std::vector<std::size_t> sample_reference_ids(const Corpus& corpus, const std::vector<std::size_t>& pool,
                                              std::size_t target, int count, Rng& rng);
TimbreRefSet make_refs(const Corpus& corpus, const std::vector<std::size_t>& ids);

// Optimizer plus schedule; one call to update() per step.
class Optimizer {
public:
    Optimizer(ParameterSet& params, const OptimConfig& cfg, Index d_model);
    Real learning_rate(std::int64_t step) const;
    // Backpropagates `loss`, applies Adam, advances the step counter, and
    // returns the loss value. Throws NumericError naming the stage and step
    // when the loss is not finite.
    Real update(const Tensor& loss, const std::string& stage);
    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s);
    Adam& adam() { return adam_; }
    const Adam& adam() const { return adam_; }
    ParameterSet& params() { return *params_; }

private:
    ParameterSet* params_;
    OptimConfig cfg_;
    Index d_model_;
    Adam adam_;
    std::int64_t step_ = 0;
};

// One loss-curve record.
struct StepRecord {
    std::string stage;
    std::int64_t step = 0;
    Real lr = 0.0;
    std::vector<std::pair<std::string, Real>> values;
    bool operator==(const StepRecord&) const = default;
};
std::string format_step_record(const StepRecord& r);
StepRecord parse_step_record(const std::string& line);
// Loss-curve file: a header line {"format":"megatts-loss-curve","version":1,
// "stage":...} followed by one record per step.
std::string loss_curve_header(const std::string& stage);
std::vector<StepRecord> read_loss_curve(const std::string& path);

class VqTrainer {
public:
    VqTrainer(VqTtsModel& model, const Corpus& corpus, std::vector<std::size_t> pool, const RunConfig& cfg);
    std::vector<VqExample> batch(std::int64_t step) const;
    // The first step seeds the codebook from encoder outputs over the pool.
    StepRecord step();
    Optimizer& optimizer() { return opt_; }

private:
    void init_codebook();

    VqTtsModel* model_;
    const Corpus* corpus_;
    std::vector<std::size_t> pool_;
    RunConfig cfg_;
    Optimizer opt_;
};

// Frozen first-stage features of one utterance for the language models.
struct UtteranceFeatures {
    int speaker = 0;
    std::vector<int> codes;
    Matrix code_cond;  // codes x d_model, pooled spectrogram-level condition
    Matrix content;    // phonemes x d_model content hidden states
    std::vector<int> durations;
};
// Conditions use `cond_refs` other utterances of the same speaker from
// `pool`, drawn with a per-utterance seed.
std::vector<UtteranceFeatures> extract_features(const VqTtsModel& model, const Corpus& corpus,
                                                const std::vector<std::size_t>& ids,
                                                const std::vector<std::size_t>& pool, int cond_refs,
                                                std::uint64_t seed);

// Concatenated speaker blocks for a language-model step.
struct LmBatch {
    std::vector<std::size_t> order;  // feature indices, in sequence order
    std::vector<Index> segment_lengths;
    BoolGrid mask;
};
// unit: codes (prosody) or phonemes (durations).
enum class LmUnit { codes, phonemes };
LmBatch plan_lm_batch(const std::vector<UtteranceFeatures>& feats, LmUnit unit, Index budget, std::uint64_t seed,
                      std::int64_t step);
// Sequence tensors for a planned batch.
std::vector<int> batch_codes(const std::vector<UtteranceFeatures>& feats, const LmBatch& b);
Matrix batch_code_cond(const std::vector<UtteranceFeatures>& feats, const LmBatch& b);
std::vector<Real> batch_log_durations(const std::vector<UtteranceFeatures>& feats, const LmBatch& b);
Matrix batch_content(const std::vector<UtteranceFeatures>& feats, const LmBatch& b);

class PlmTrainer {
public:
    PlmTrainer(Plm& model, ParameterSet& params, const std::vector<UtteranceFeatures>& feats, const RunConfig& cfg);
    LmBatch batch(std::int64_t step) const;
    StepRecord step();
    Optimizer& optimizer() { return opt_; }

private:
    Plm* model_;
    const std::vector<UtteranceFeatures>* feats_;
    RunConfig cfg_;
    Optimizer opt_;
};

class AdmTrainer {
public:
    AdmTrainer(Adm& model, ParameterSet& params, const std::vector<UtteranceFeatures>& feats, const RunConfig& cfg);
    LmBatch batch(std::int64_t step) const;
    StepRecord step();
    Optimizer& optimizer() { return opt_; }

private:
    Adm* model_;
    const std::vector<UtteranceFeatures>* feats_;
    RunConfig cfg_;
    Optimizer opt_;
};

// The baseline sees one utterance's content at a time; each step averages
// the loss over `batch_utts` utterances.
class DurationPredictorTrainer {
public:
    DurationPredictorTrainer(DurationPredictor& model, ParameterSet& params,
                             const std::vector<UtteranceFeatures>& feats, const RunConfig& cfg);
    std::vector<std::size_t> batch(std::int64_t step) const;
    StepRecord step();
    Optimizer& optimizer() { return opt_; }

private:
    DurationPredictor* model_;
    const std::vector<UtteranceFeatures>* feats_;
    RunConfig cfg_;
    Optimizer opt_;
};

}  // namespace megatts
