#include "megatts/train.hpp"

#include "megatts/errors.hpp"
#include "megatts/kernels.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace megatts {

namespace {

// Distinct stream ids keep the stages' batch draws independent.
constexpr std::uint64_t kVqStream = 0x5651;
constexpr std::uint64_t kPlmStream = 0x504C4D;
constexpr std::uint64_t kAdmStream = 0x41444D;
constexpr std::uint64_t kDpStream = 0x4450;
constexpr std::uint64_t kCodebookStream = 0x4342;

Rng step_rng(std::uint64_t seed, std::uint64_t stream, std::int64_t step) {
    return Rng(mix_seed(mix_seed(seed, stream), static_cast<std::uint64_t>(step)));
}

std::vector<std::size_t> draw_distinct(const std::vector<std::size_t>& pool, std::size_t count, Rng& rng) {
    std::vector<std::size_t> v = pool;
    count = std::min(count, v.size());
    // Partial Fisher-Yates with an explicit index draw (portable across standard libraries).
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (v.size() - i));
        std::swap(v[i], v[j]);
    }
    v.resize(count);
    return v;
}

}  // namespace

SpeakerSplit split_by_speaker(const Corpus& corpus, int heldout_speakers, int max_train_utts) {
    auto ids = corpus.speaker_ids();
    std::sort(ids.begin(), ids.end());
    if (heldout_speakers < 0 || heldout_speakers >= static_cast<int>(ids.size())) {
        throw ParameterError("held-out speaker count must leave at least one training speaker");
    }
    const std::vector<int> held(ids.end() - heldout_speakers, ids.end());
    SpeakerSplit split;
    std::map<int, int> taken;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
        const int spk = corpus.utterances[i].speaker_id;
        if (std::find(held.begin(), held.end(), spk) != held.end()) {
            split.heldout.push_back(i);
        } else if (max_train_utts <= 0 || taken[spk]++ < max_train_utts) {
            split.train.push_back(i);
        }
    }
    return split;
}

std::vector<std::size_t> sample_reference_ids(const Corpus& corpus, const std::vector<std::size_t>& pool,
                                              std::size_t target, int count, Rng& rng) {
    std::vector<std::size_t> same;
    for (std::size_t i : pool) {
        if (i != target && corpus.utterances[i].speaker_id == corpus.utterances[target].speaker_id) same.push_back(i);
    }
    if (same.empty()) return {target};
    return draw_distinct(same, static_cast<std::size_t>(std::max(1, count)), rng);
}

TimbreRefSet make_refs(const Corpus& corpus, const std::vector<std::size_t>& ids) {
    TimbreRefSet refs;
    for (std::size_t i : ids) refs.refs.push_back(corpus.utterances.at(i).mel);
    return refs;
}

Optimizer::Optimizer(ParameterSet& params, const OptimConfig& cfg, Index d_model)
    : params_(&params), cfg_(cfg), d_model_(d_model), adam_(params, cfg.adam()) {}

Real Optimizer::learning_rate(std::int64_t step) const {
    return noam_rate(step, d_model_, cfg_.warmup, cfg_.lr_scale);
}

Real Optimizer::update(const Tensor& loss, const std::string& stage) {
    const Real value = loss.item();
    if (!std::isfinite(value)) {
        throw NumericError(stage + ": non-finite loss at step " + std::to_string(step_ + 1));
    }
    params_->zero_grad();
    loss.backward();
    for (const auto& [name, t] : params_->items()) {
        if (t.has_grad() && !t.grad().allFinite()) {
            throw NumericError(stage + ": non-finite gradient for " + name + " at step " + std::to_string(step_ + 1));
        }
    }
    ++step_;
    adam_.step(*params_, learning_rate(step_));
    return value;
}

void Optimizer::set_step(std::int64_t s) {
    if (s < 0) throw ParameterError("negative step");
    step_ = s;
}

std::string format_step_record(const StepRecord& r) {
    nlohmann::ordered_json j;
    j["stage"] = r.stage;
    j["step"] = r.step;
    j["lr"] = r.lr;
    nlohmann::ordered_json values = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.values) values[k] = v;
    j["values"] = values;
    return j.dump();
}

StepRecord parse_step_record(const std::string& line) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("loss record: ") + e.what(), 0, e.byte);
    }
    StepRecord r;
    try {
        r.stage = j.at("stage").get<std::string>();
        r.step = j.at("step").get<std::int64_t>();
        r.lr = j.at("lr").get<Real>();
        for (const auto& [k, v] : j.at("values").items()) r.values.emplace_back(k, v.get<Real>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("loss record: ") + e.what(), 0, 0);
    }
    return r;
}

std::string loss_curve_header(const std::string& stage) {
    nlohmann::ordered_json h;
    h["format"] = "megatts-loss-curve";
    h["version"] = 1;
    h["stage"] = stage;
    return h.dump();
}

std::vector<StepRecord> read_loss_curve(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty loss curve", 1, 0);
    try {
        const auto h = nlohmann::json::parse(line);
        if (h.at("format") != "megatts-loss-curve") throw ParseError("not a loss curve", 1, 0);
        if (h.at("version") != 1) throw VersionError("unsupported loss curve version");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("loss curve header: ") + e.what(), 1, 0);
    }
    std::vector<StepRecord> out;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(parse_step_record(line));
        } catch (const ParseError& e) {
            throw ParseError(e.what(), n, e.offset());
        }
    }
    return out;
}

VqTrainer::VqTrainer(VqTtsModel& model, const Corpus& corpus, std::vector<std::size_t> pool, const RunConfig& cfg)
    : model_(&model), corpus_(&corpus), pool_(std::move(pool)), cfg_(cfg),
      opt_(model.params, cfg.optim, cfg.vq.hidden) {
    if (pool_.empty()) throw PreconditionError("no training utterances");
}

std::vector<VqExample> VqTrainer::batch(std::int64_t step) const {
    Rng rng = step_rng(cfg_.seed, kVqStream, step);
    std::vector<VqExample> out;
    for (std::size_t t : draw_distinct(pool_, static_cast<std::size_t>(cfg_.train.batch_utts), rng)) {
        const int refs = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(cfg_.train.max_refs));
        out.push_back({&corpus_->utterances[t], make_refs(*corpus_, sample_reference_ids(*corpus_, pool_, t, refs, rng))});
    }
    return out;
}

void VqTrainer::init_codebook() {
    NoGradGuard guard;
    std::vector<Matrix> parts;
    Index rows = 0;
    for (std::size_t i : pool_) {
        parts.push_back(model_->encoder(corpus_->utterances[i].mel).value());
        rows += parts.back().rows();
    }
    Matrix all(rows, model_->codebook.dim());
    Index r = 0;
    for (const auto& p : parts) {
        all.middleRows(r, p.rows()) = p;
        r += p.rows();
    }
    Rng rng(mix_seed(cfg_.seed, kCodebookStream));
    model_->codebook.init_from(all, rng);
}

StepRecord VqTrainer::step() {
    const std::int64_t s = opt_.step() + 1;
    if (s == 1) init_codebook();
    VqLosses l = model_->loss(batch(s));
    const Real total = opt_.update(l.total, "vqgan");
    return {"vqgan", s, opt_.learning_rate(s),
            {{"loss", total}, {"recon_l1", l.recon_l1}, {"codebook", l.codebook}, {"commit", l.commit}}};
}

std::vector<UtteranceFeatures> extract_features(const VqTtsModel& model, const Corpus& corpus,
                                                const std::vector<std::size_t>& ids,
                                                const std::vector<std::size_t>& pool, int cond_refs,
                                                std::uint64_t seed) {
    NoGradGuard guard;
    std::vector<UtteranceFeatures> out;
    for (std::size_t i : ids) {
        const Utterance& u = corpus.utterances.at(i);
        Rng rng(mix_seed(seed, i));
        TimbreRefSet refs = make_refs(corpus, sample_reference_ids(corpus, pool, i, cond_refs, rng));
        UtteranceFeatures f;
        f.speaker = u.speaker_id;
        f.codes = model.encode_codes(u.mel).codes;
        Tensor content = model.mrte.content_encode(u.phonemes);
        f.content = content.value();
        const auto idx = length_regulator_index(u.durations);
        f.code_cond = pool_to_codes(gather_rows(model.mrte.phoneme_hidden(content, refs), idx).value(), model.hop());
        f.durations = u.durations;
        out.push_back(std::move(f));
    }
    return out;
}

namespace {

Index unit_count(const UtteranceFeatures& f, LmUnit unit) {
    return static_cast<Index>(unit == LmUnit::codes ? f.codes.size() : f.durations.size());
}

}  // namespace

LmBatch plan_lm_batch(const std::vector<UtteranceFeatures>& feats, LmUnit unit, Index budget, std::uint64_t seed,
                      std::int64_t step) {
    if (feats.empty()) throw PreconditionError("no training features");
    std::vector<std::size_t> order(feats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(step)));
    order = draw_distinct(order, order.size(), rng);
    std::vector<Index> counts;
    std::vector<int> speakers;
    for (std::size_t i : order) {
        counts.push_back(unit_count(feats[i], unit));
        speakers.push_back(feats[i].speaker);
    }
    BatchPlan plan = plan_batch(counts, speakers, budget);
    LmBatch b;
    for (std::size_t k : plan.order) b.order.push_back(order[k]);
    for (const auto& s : plan.segments) b.segment_lengths.push_back(s.end - s.start);
    b.mask = block_causal_mask(b.segment_lengths);
    return b;
}

std::vector<int> batch_codes(const std::vector<UtteranceFeatures>& feats, const LmBatch& b) {
    std::vector<int> out;
    for (std::size_t i : b.order) out.insert(out.end(), feats[i].codes.begin(), feats[i].codes.end());
    return out;
}

namespace {

Matrix stack(const std::vector<UtteranceFeatures>& feats, const LmBatch& b, Matrix UtteranceFeatures::*field) {
    Index rows = 0;
    for (std::size_t i : b.order) rows += (feats[i].*field).rows();
    Matrix out(rows, (feats[b.order.front()].*field).cols());
    Index r = 0;
    for (std::size_t i : b.order) {
        const Matrix& m = feats[i].*field;
        out.middleRows(r, m.rows()) = m;
        r += m.rows();
    }
    return out;
}

}  // namespace

Matrix batch_code_cond(const std::vector<UtteranceFeatures>& feats, const LmBatch& b) {
    return stack(feats, b, &UtteranceFeatures::code_cond);
}

Matrix batch_content(const std::vector<UtteranceFeatures>& feats, const LmBatch& b) {
    return stack(feats, b, &UtteranceFeatures::content);
}

std::vector<Real> batch_log_durations(const std::vector<UtteranceFeatures>& feats, const LmBatch& b) {
    std::vector<Real> out;
    for (std::size_t i : b.order) {
        const auto l = log_durations(feats[i].durations);
        out.insert(out.end(), l.begin(), l.end());
    }
    return out;
}

PlmTrainer::PlmTrainer(Plm& model, ParameterSet& params, const std::vector<UtteranceFeatures>& feats,
                       const RunConfig& cfg)
    : model_(&model), feats_(&feats), cfg_(cfg), opt_(params, cfg.optim, cfg.plm.d_model) {}

LmBatch PlmTrainer::batch(std::int64_t step) const {
    const Index budget = std::min<Index>(cfg_.plm.max_context, cfg_.train.max_frames / cfg_.vq.hop);
    return plan_lm_batch(*feats_, LmUnit::codes, budget, mix_seed(cfg_.seed, kPlmStream), step);
}

StepRecord PlmTrainer::step() {
    const std::int64_t s = opt_.step() + 1;
    const LmBatch b = batch(s);
    const auto codes = batch_codes(*feats_, b);
    Tensor logits = model_->logits(codes, Tensor(batch_code_cond(*feats_, b)), b.mask);
    Index hit = 0;
    for (Index t = 0; t < logits.rows(); ++t) hit += argmax(logits.value().row(t)) == codes[static_cast<std::size_t>(t)];
    const Real loss = opt_.update(cross_entropy(logits, codes), "plm");
    return {"plm", s, opt_.learning_rate(s),
            {{"loss", loss}, {"accuracy", static_cast<Real>(hit) / static_cast<Real>(codes.size())}}};
}

AdmTrainer::AdmTrainer(Adm& model, ParameterSet& params, const std::vector<UtteranceFeatures>& feats,
                       const RunConfig& cfg)
    : model_(&model), feats_(&feats), cfg_(cfg), opt_(params, cfg.optim, cfg.adm.d_model) {}

LmBatch AdmTrainer::batch(std::int64_t step) const {
    return plan_lm_batch(*feats_, LmUnit::phonemes, cfg_.adm.max_context, mix_seed(cfg_.seed, kAdmStream), step);
}

StepRecord AdmTrainer::step() {
    const std::int64_t s = opt_.step() + 1;
    const LmBatch b = batch(s);
    const Real loss =
        opt_.update(model_->loss(batch_log_durations(*feats_, b), Tensor(batch_content(*feats_, b)), b.mask), "adm");
    return {"adm", s, opt_.learning_rate(s), {{"loss", loss}}};
}

DurationPredictorTrainer::DurationPredictorTrainer(DurationPredictor& model, ParameterSet& params,
                                                   const std::vector<UtteranceFeatures>& feats, const RunConfig& cfg)
    : model_(&model), feats_(&feats), cfg_(cfg), opt_(params, cfg.optim, cfg.adm.d_model) {
    if (feats.empty()) throw PreconditionError("no training features");
}

std::vector<std::size_t> DurationPredictorTrainer::batch(std::int64_t step) const {
    std::vector<std::size_t> all(feats_->size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    Rng rng = step_rng(cfg_.seed, kDpStream, step);
    return draw_distinct(all, static_cast<std::size_t>(cfg_.train.batch_utts), rng);
}

StepRecord DurationPredictorTrainer::step() {
    const std::int64_t s = opt_.step() + 1;
    std::vector<Tensor> losses;
    for (std::size_t i : batch(s)) {
        const auto& f = (*feats_)[i];
        losses.push_back(model_->loss(log_durations(f.durations), Tensor(f.content)));
    }
    Tensor mean = scale(sum_all(concat_rows(losses)), 1.0 / static_cast<Real>(losses.size()));
    const Real loss = opt_.update(mean, "dp");
    return {"dp", s, opt_.learning_rate(s), {{"loss", loss}}};
}

}  // namespace megatts
