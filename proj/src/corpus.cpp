#include "megatts/corpus.hpp"

#include "megatts/base64.hpp"
#include "megatts/errors.hpp"


#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

namespace megatts {


namespace {

constexpr Real kPitchWidth = 0.5;

Real uniform(Rng& rng, Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(rng); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Real to_f32(Real v) { return static_cast<Real>(static_cast<float>(v)); }

}  // namespace

void CorpusConfig::validate() const {
    if (speakers < 1 || utts_per_speaker < 1) throw ParameterError("corpus needs at least one speaker and utterance");
    if (vocab < 2) throw ParameterError("phoneme vocabulary must have at least 2 entries");
    if (pitch_levels < 2 || content_bins < 1 || timbre_bins() < 1) {
        throw ParameterError("bins must cover pitch, content and timbre bands");
    }
    if (prosody_block < 1) throw ParameterError("prosody_block must be >= 1");
    if (min_phonemes < 1 || max_phonemes < min_phonemes) throw ParameterError("invalid phoneme count range");
    if (!(p_pref > 0 && p_pref < 1)) throw ParameterError("p_pref must lie in (0, 1)");
    if (!(min_tempo > 0 && max_tempo >= min_tempo)) throw ParameterError("invalid tempo range");
    if (noise < 0 || duration_jitter < 0) throw ParameterError("noise levels must be non-negative");
}

void SpeakerStyle::validate(const CorpusConfig& cfg) const {
    if (pitch_range < 2 || pitch_range > cfg.pitch_levels) throw ParameterError("pitch_range out of range");
    if (pitch_base < 0 || pitch_base + pitch_range > cfg.pitch_levels) throw ParameterError("pitch_base out of range");
    if (tempo < cfg.min_tempo || tempo > cfg.max_tempo) throw ParameterError("tempo out of range");
    if (timbre_vec.size() != cfg.timbre_bins() || timbre_vec.minCoeff() < 0.2 || timbre_vec.maxCoeff() > 1.0) {
        throw ParameterError("timbre_vec out of range");
    }
    if (timbre_phone.rows() != cfg.vocab || timbre_phone.cols() != cfg.timbre_bins() ||
        timbre_phone.cwiseAbs().maxCoeff() > 0.3) {
        throw ParameterError("timbre_phone out of range");
    }
    if (markov.rows() != pitch_range || markov.cols() != pitch_range || markov.minCoeff() < 0) {
        throw ParameterError("markov matrix shape or sign invalid");
    }
    for (Index r = 0; r < markov.rows(); ++r) {
        if (std::abs(markov.row(r).sum() - 1.0) > 1e-9) throw ParameterError("markov rows must sum to 1");
    }
}

Matrix preferred_successor_markov(int states, Real p_pref, Rng& rng) {
    std::vector<int> succ(static_cast<std::size_t>(states));
    std::iota(succ.begin(), succ.end(), 0);
    bool has_fixed = true;
    while (has_fixed) {
        std::shuffle(succ.begin(), succ.end(), rng);
        has_fixed = false;
        for (int i = 0; i < states; ++i) has_fixed = has_fixed || succ[static_cast<std::size_t>(i)] == i;
    }
    Matrix m = Matrix::Constant(states, states, (1.0 - p_pref) / static_cast<Real>(states - 1));
    for (int i = 0; i < states; ++i) m(i, succ[static_cast<std::size_t>(i)]) = p_pref;
    return m;
}

SpeakerStyle random_style(const CorpusConfig& cfg, Rng& rng) {
    SpeakerStyle s;
    s.pitch_range = uniform_int(rng, std::max(2, cfg.pitch_levels - 3), cfg.pitch_levels);
    s.pitch_base = uniform_int(rng, 0, cfg.pitch_levels - s.pitch_range);
    s.tempo = uniform(rng, cfg.min_tempo, cfg.max_tempo);
    s.timbre_vec.resize(cfg.timbre_bins());
    for (Index i = 0; i < s.timbre_vec.size(); ++i) s.timbre_vec(i) = uniform(rng, 0.2, 1.0);
    s.timbre_phone.resize(cfg.vocab, cfg.timbre_bins());
    for (Index i = 0; i < s.timbre_phone.size(); ++i) s.timbre_phone.data()[i] = uniform(rng, -0.3, 0.3);
    s.markov = preferred_successor_markov(s.pitch_range, cfg.p_pref, rng);
    return s;
}

PhonemeInventory make_inventory(const CorpusConfig& cfg) {
    Rng rng(mix_seed(cfg.seed, 0xC0FFEE));
    PhonemeInventory inv;
    inv.content.resize(cfg.vocab, cfg.content_bins);
    for (Index i = 0; i < inv.content.size(); ++i) inv.content.data()[i] = uniform(rng, 0.0, 1.0);
    inv.base_duration.resize(static_cast<std::size_t>(cfg.vocab));
    for (auto& d : inv.base_duration) d = uniform(rng, 2.0, 6.0);
    return inv;
}

std::vector<int> sample_prosody_states(const SpeakerStyle& style, Index blocks, Rng& rng) {
    std::vector<int> states(static_cast<std::size_t>(blocks));
    if (blocks == 0) return states;
    states[0] = uniform_int(rng, 0, style.pitch_range - 1);
    for (std::size_t b = 1; b < states.size(); ++b) {
        const auto row = style.markov.row(states[b - 1]);
        std::discrete_distribution<int> next(row.data(), row.data() + row.size());
        states[b] = next(rng);
    }
    return states;
}

GeneratedSpeaker gen_speaker(std::uint64_t seed, const SpeakerStyle& style, const PhonemeInventory& inventory,
                             const CorpusConfig& cfg, int speaker_id, int count) {
    cfg.validate();
    style.validate(cfg);
    Rng rng(seed);
    std::normal_distribution<Real> jitter(0.0, cfg.duration_jitter);
    std::normal_distribution<Real> noise(0.0, cfg.noise);
    const int content_at = cfg.pitch_levels;
    const int timbre_at = cfg.pitch_levels + cfg.content_bins;

    GeneratedSpeaker out;
    for (int u = 0; u < count; ++u) {
        Utterance utt;
        utt.speaker_id = speaker_id;
        const int n = uniform_int(rng, cfg.min_phonemes, cfg.max_phonemes);
        for (int i = 0; i < n; ++i) {
            const int p = uniform_int(rng, 0, cfg.vocab - 1);
            const Real d = inventory.base_duration[static_cast<std::size_t>(p)] * style.tempo * std::exp(jitter(rng));
            utt.phonemes.push_back(p);
            utt.durations.push_back(std::max(1, static_cast<int>(std::lround(d))));
        }
        const Index frames = std::accumulate(utt.durations.begin(), utt.durations.end(), Index{0});
        const Index blocks = (frames + cfg.prosody_block - 1) / cfg.prosody_block;
        auto states = sample_prosody_states(style, blocks, rng);

        utt.mel.resize(frames, cfg.bins);
        Index f = 0;
        for (std::size_t i = 0; i < utt.phonemes.size(); ++i) {
            const int p = utt.phonemes[i];
            for (int k = 0; k < utt.durations[i]; ++k, ++f) {
                const int level = style.pitch_base + states[static_cast<std::size_t>(f / cfg.prosody_block)];
                auto row = utt.mel.row(f);
                for (int b = 0; b < cfg.pitch_levels; ++b) {
                    const Real z = (b - level) / kPitchWidth;
                    row(b) = std::exp(-0.5 * z * z);
                }
                row.segment(content_at, cfg.content_bins) = inventory.content.row(p);
                row.segment(timbre_at, cfg.timbre_bins()) = style.timbre_vec + style.timbre_phone.row(p);
                for (Index b = 0; b < cfg.bins; ++b) row(b) = to_f32(row(b) + noise(rng));
            }
        }
        out.utterances.push_back(std::move(utt));
        out.prosody_states.push_back(std::move(states));
    }
    return out;
}

SyntheticCorpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    SyntheticCorpus sc;
    sc.inventory = make_inventory(cfg);
    Rng style_rng(mix_seed(cfg.seed, 0x57E1E));
    for (int s = 0; s < cfg.speakers; ++s) sc.styles.push_back(random_style(cfg, style_rng));

    std::vector<std::future<GeneratedSpeaker>> jobs;
    for (int s = 0; s < cfg.speakers; ++s) {
        jobs.push_back(std::async(std::launch::async, [&, s] {
            return gen_speaker(mix_seed(cfg.seed, static_cast<std::uint64_t>(s) + 1), sc.styles[static_cast<std::size_t>(s)],
                               sc.inventory, cfg, s, cfg.utts_per_speaker);
        }));
    }
    sc.corpus.bins = cfg.bins;
    sc.corpus.vocab = cfg.vocab;
    for (auto& job : jobs) {
        auto gen = job.get();
        for (auto& u : gen.utterances) sc.corpus.utterances.push_back(std::move(u));
    }
    return sc;
}

std::vector<std::size_t> Corpus::utterances_of(int speaker_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < utterances.size(); ++i) {
        if (utterances[i].speaker_id == speaker_id) out.push_back(i);
    }
    return out;
}

std::vector<int> Corpus::speaker_ids() const {
    std::vector<int> ids;
    for (const auto& u : utterances) {
        if (std::find(ids.begin(), ids.end(), u.speaker_id) == ids.end()) ids.push_back(u.speaker_id);
    }
    return ids;
}

BatchPlan plan_batch(const std::vector<Index>& frame_counts, const std::vector<int>& speaker_ids, Index max_frames) {
    if (frame_counts.size() != speaker_ids.size()) throw DimensionError("plan_batch: one speaker id per utterance");
    for (std::size_t i = 0; i < frame_counts.size(); ++i) {
        if (frame_counts[i] > max_frames) {
            throw RejectionError("utterance " + std::to_string(i) + " has " + std::to_string(frame_counts[i]) +
                                 " frames, more than max_frames " + std::to_string(max_frames));
        }
    }
    std::vector<int> speaker_order;
    for (int s : speaker_ids) {
        if (std::find(speaker_order.begin(), speaker_order.end(), s) == speaker_order.end()) speaker_order.push_back(s);
    }
    BatchPlan plan;
    for (int s : speaker_order) {
        const Index seg_start = plan.frames;
        const std::size_t taken_before = plan.order.size();
        for (std::size_t i = 0; i < frame_counts.size(); ++i) {
            if (speaker_ids[i] != s || plan.frames + frame_counts[i] > max_frames) continue;
            plan.order.push_back(i);
            plan.frames += frame_counts[i];
        }
        if (plan.frames > seg_start) {
            plan.segments.push_back({s, seg_start, plan.frames});
            plan.utterances_per_segment.push_back(plan.order.size() - taken_before);
        }
    }
    return plan;
}

SpeakerBatch build_batch(const std::vector<Utterance>& utts, Index max_frames) {
    std::vector<Index> frames;
    std::vector<int> speakers;
    for (const auto& u : utts) {
        frames.push_back(u.frames());
        speakers.push_back(u.speaker_id);
    }
    SpeakerBatch batch;
    batch.plan = plan_batch(frames, speakers, max_frames);
    if (batch.plan.order.empty()) throw PreconditionError("build_batch: no utterances");
    batch.mel.resize(batch.plan.frames, utts[batch.plan.order.front()].mel.cols());
    Index at = 0;
    for (std::size_t i : batch.plan.order) {
        batch.mel.middleRows(at, utts[i].frames()) = utts[i].mel;
        at += utts[i].frames();
    }
    std::vector<Index> lengths;
    for (const auto& seg : batch.plan.segments) lengths.push_back(seg.end - seg.start);
    batch.attn_mask = block_causal_mask(lengths);
    return batch;
}

std::vector<Index> segment_lengths(const BatchPlan& plan, const std::vector<Index>& units_per_utterance) {
    std::vector<Index> lengths;
    std::size_t k = 0;
    for (std::size_t count : plan.utterances_per_segment) {
        Index len = 0;
        for (std::size_t i = 0; i < count; ++i) len += units_per_utterance.at(plan.order[k++]);
        lengths.push_back(len);
    }
    return lengths;
}

}  // namespace megatts
