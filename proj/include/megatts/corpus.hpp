#pragma once

// Synthetic multi-speaker speech-feature corpora and speaker-block batching.
//
// A synthetic mel frame has three bands:
//   [0, pitch_levels)                      pitch bump at the current prosody level
//   [pitch_levels, +content_bins)          phoneme identity pattern
//   [pitch_levels + content_bins, bins)    timbre: speaker vector + per-phoneme imprint
// Prosody levels follow a speaker-specific Markov chain, one state per
// `prosody_block` frames.

#include "megatts/kernels.hpp"
#include "megatts/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace megatts {

struct CorpusConfig {
    int speakers = 8;
    int utts_per_speaker = 16;
    int bins = 16;
    int vocab = 32;
    int pitch_levels = 8;
    int content_bins = 4;
    int prosody_block = 4;
    int min_phonemes = 12;
    int max_phonemes = 24;
    Real noise = 0.01;
    Real p_pref = 0.8;  // probability of a state's preferred successor
    Real min_tempo = 0.6;
    Real max_tempo = 1.6;
    Real duration_jitter = 0.1;  // log-normal sigma on per-phoneme durations
    std::uint64_t seed = 1;

    int timbre_bins() const { return bins - pitch_levels - content_bins; }
    void validate() const;
};

// Documented ranges: pitch_range in [2, pitch_levels]; pitch_base in
// [0, pitch_levels - pitch_range]; tempo in [min_tempo, max_tempo];
// timbre_vec entries in [0.2, 1]; timbre_phone entries in [-0.3, 0.3];
// markov is pitch_range x pitch_range and row-stochastic.
struct SpeakerStyle {
    int pitch_base = 0;
    int pitch_range = 2;
    Real tempo = 1.0;
    RowVector timbre_vec;
    Matrix timbre_phone;  // vocab x timbre_bins
    Matrix markov;

    void validate(const CorpusConfig& cfg) const;
};

// Tables shared by every speaker of a corpus.
struct PhonemeInventory {
    Matrix content;                   // vocab x content_bins, entries in [0, 1]
    std::vector<Real> base_duration;  // frames at tempo 1
};

struct Utterance {
    int speaker_id = 0;
    std::vector<int> phonemes;
    std::vector<int> durations;
    Matrix mel;  // frames x bins

    Index frames() const { return mel.rows(); }
    bool operator==(const Utterance&) const = default;
};

struct Corpus {
    static constexpr int kVersion = 1;
    int bins = 16;
    int vocab = 32;
    std::vector<Utterance> utterances;

    bool operator==(const Corpus&) const = default;
    // Indices of the speaker's utterances, in corpus order.
    std::vector<std::size_t> utterances_of(int speaker_id) const;
    std::vector<int> speaker_ids() const;
};

struct GeneratedSpeaker {
    std::vector<Utterance> utterances;
    std::vector<std::vector<int>> prosody_states;  // per utterance, per block
};

struct SyntheticCorpus {
    Corpus corpus;
    std::vector<SpeakerStyle> styles;  // indexed by speaker id
    PhonemeInventory inventory;
};

// Markov matrix with `p_pref` on a random fixed-point-free successor of each state.
Matrix preferred_successor_markov(int states, Real p_pref, Rng& rng);
SpeakerStyle random_style(const CorpusConfig& cfg, Rng& rng);
PhonemeInventory make_inventory(const CorpusConfig& cfg);

// Samples `blocks` prosody states (0-based within the speaker's range).
std::vector<int> sample_prosody_states(const SpeakerStyle& style, Index blocks, Rng& rng);

GeneratedSpeaker gen_speaker(std::uint64_t seed, const SpeakerStyle& style, const PhonemeInventory& inventory,
                             const CorpusConfig& cfg, int speaker_id, int count);

// Styles from the corpus seed, speakers generated on worker threads with
// independent per-speaker seeds. Output is independent of thread timing.
SyntheticCorpus generate_corpus(const CorpusConfig& cfg);

struct Segment {
    int speaker_id = 0;
    Index start = 0;  // inclusive
    Index end = 0;    // exclusive
    bool operator==(const Segment&) const = default;
};

struct BatchPlan {
    std::vector<std::size_t> order;  // indices into the input list, in batch order
    std::vector<Segment> segments;   // in frames
    std::vector<std::size_t> utterances_per_segment;
    Index frames = 0;
};

struct SpeakerBatch {
    BatchPlan plan;
    Matrix mel;          // concatenated frames x bins
    BoolGrid attn_mask;  // speaker-block causal, frames x frames
    std::vector<int> code_targets;  // filled by the prosody encoder stage
};

// Greedy fill: the first utterance's speaker goes first with all of its
// utterances that fit, then the remaining speakers in order of first
// appearance. Utterances are never split. Throws RejectionError if any
// single utterance exceeds `max_frames`.
BatchPlan plan_batch(const std::vector<Index>& frame_counts, const std::vector<int>& speaker_ids, Index max_frames);
SpeakerBatch build_batch(const std::vector<Utterance>& utts, Index max_frames);

// Segment lengths of a plan re-expressed in another unit (e.g. codes or
// phonemes), given that unit's count per input utterance.
std::vector<Index> segment_lengths(const BatchPlan& plan, const std::vector<Index>& units_per_utterance);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);
std::string serialize_corpus(const Corpus& corpus);
Corpus parse_corpus(const std::string& text);

}  // namespace megatts
