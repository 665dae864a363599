#include "megatts/experiments.hpp"

#include "megatts/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace megatts {

namespace {

constexpr std::uint64_t kVqInit = 11;
constexpr std::uint64_t kPlmInit = 12;
constexpr std::uint64_t kAdmInit = 13;
constexpr std::uint64_t kFeatureRefs = 14;
constexpr std::uint64_t kDpInit = 15;
constexpr std::uint64_t kProbe = 16;

std::vector<std::size_t> every_utterance(const Corpus& corpus) {
    std::vector<std::size_t> v(corpus.utterances.size());
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

Real mean(const std::vector<Real>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<Real>(v.size());
}

// Same-speaker utterances following `id` in corpus order, wrapping around.
std::vector<std::size_t> following_same_speaker(const Corpus& corpus, std::size_t id, int count) {
    const auto ids = corpus.utterances_of(corpus.utterances.at(id).speaker_id);
    const auto at = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
    std::vector<std::size_t> out;
    for (std::size_t k = 1; k < ids.size() && static_cast<int>(out.size()) < count; ++k) {
        out.push_back(ids[(at + k) % ids.size()]);
    }
    return out;
}

template <typename T>
void append(std::vector<T>& out, const std::vector<T>& v) {
    out.insert(out.end(), v.begin(), v.end());
}

Matrix stack_rows(const std::vector<const Matrix*>& parts, Index cols) {
    Index rows = 0;
    for (const Matrix* m : parts) rows += m->rows();
    Matrix out(rows, cols);
    Index r = 0;
    for (const Matrix* m : parts) {
        out.middleRows(r, m->rows()) = *m;
        r += m->rows();
    }
    return out;
}

// Prompt suffix of length `len` followed by the whole target.
template <typename T>
std::vector<T> suffix_then(const std::vector<T>& prompt, Index len, const std::vector<T>& target) {
    std::vector<T> out(prompt.end() - len, prompt.end());
    append(out, target);
    return out;
}

Matrix suffix_then(const Matrix& prompt, Index len, const Matrix& target) {
    Matrix out(len + target.rows(), target.cols());
    out.topRows(len) = prompt.bottomRows(len);
    out.bottomRows(target.rows()) = target;
    return out;
}

Real tail_mse(const Matrix& prediction, const std::vector<Real>& target, Index from) {
    Real s = 0.0;
    for (Index t = from; t < prediction.rows(); ++t) {
        const Real d = prediction(t, 0) - target[static_cast<std::size_t>(t)];
        s += d * d;
    }
    return s / static_cast<Real>(prediction.rows() - from);
}

RowVector global_timbre_of(const VqTtsModel& vq, const Matrix& mel) {
    TimbreRefSet refs;
    refs.refs.push_back(mel);
    return vq.mrte.global_timbre(refs).value();
}

}  // namespace

Real sign_test_p(int wins, int losses) {
    if (wins < 0 || losses < 0) throw ParameterError("sign test counts must be non-negative");
    const int n = wins + losses;
    if (n == 0) return 1.0;
    const Real log_half_n = static_cast<Real>(n) * std::log(0.5);
    Real p = 0.0;
    for (int k = wins; k <= n; ++k) {
        const Real log_choose = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
        p += std::exp(log_choose + log_half_n);
    }
    return std::min(p, 1.0);
}

PairedCount paired_count(const std::vector<Real>& low, const std::vector<Real>& high) {
    if (low.size() != high.size()) throw DimensionError("paired samples differ in length");
    PairedCount c;
    for (std::size_t i = 0; i < low.size(); ++i) {
        if (high[i] > low[i]) {
            ++c.wins;
        } else if (high[i] < low[i]) {
            ++c.losses;
        } else {
            ++c.ties;
        }
    }
    return c;
}

// ---- reports ---------------------------------------------------------------

const std::vector<std::string>& Report::columns(const std::string& section) const {
    for (const auto& [name, cols] : sections) {
        if (name == section) return cols;
    }
    throw PreconditionError("report has no section '" + section + "'");
}

void Report::add(const std::string& section, nlohmann::ordered_json values) {
    const auto& cols = columns(section);
    if (!values.is_array() || values.size() != cols.size()) {
        throw DimensionError("report row for '" + section + "' needs " + std::to_string(cols.size()) + " values");
    }
    nlohmann::ordered_json row;
    row["section"] = section;
    for (std::size_t i = 0; i < cols.size(); ++i) row[cols[i]] = values[i];
    rows.push_back(std::move(row));
}

std::vector<nlohmann::ordered_json> Report::rows_of(const std::string& section) const {
    std::vector<nlohmann::ordered_json> out;
    for (const auto& r : rows) {
        if (r.at("section") == section) out.push_back(r);
    }
    return out;
}

std::string serialize_report(const Report& r) {
    nlohmann::ordered_json h;
    h["format"] = "megatts-report";
    h["version"] = Report::kVersion;
    h["kind"] = r.kind;
    nlohmann::ordered_json sections = nlohmann::ordered_json::object();
    for (const auto& [name, cols] : r.sections) sections[name] = cols;
    h["sections"] = sections;
    std::ostringstream out;
    out << h.dump() << '\n';
    for (const auto& row : r.rows) out << row.dump() << '\n';
    return out.str();
}

Report parse_report(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0, offset = 0;
    auto next = [&]() {
        offset += line_no == 0 ? 0 : line.size() + 1;
        ++line_no;
        return static_cast<bool>(std::getline(in, line));
    };
    if (!next()) throw ParseError("empty report", 1, 0);
    Report r;
    try {
        const auto h = nlohmann::ordered_json::parse(line);
        if (h.at("format") != "megatts-report") throw ParseError("not a report", line_no, offset);
        if (h.at("version") != Report::kVersion) throw VersionError("unsupported report version");
        r.kind = h.at("kind").get<std::string>();
        for (const auto& [name, cols] : h.at("sections").items()) {
            r.sections.emplace_back(name, cols.get<std::vector<std::string>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("report header: ") + e.what(), line_no, offset);
    }
    while (next()) {
        if (line.empty()) continue;
        nlohmann::ordered_json row;
        try {
            row = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("report row: ") + e.what(), line_no, offset);
        }
        if (!row.is_object() || !row.contains("section") || !row["section"].is_string()) {
            throw ParseError("report row lacks a section", line_no, offset);
        }
        const std::string section = row["section"];
        const std::vector<std::string>* cols = nullptr;
        for (const auto& [name, c] : r.sections) {
            if (name == section) cols = &c;
        }
        if (cols == nullptr) throw ParseError("unknown report section '" + section + "'", line_no, offset);
        std::vector<std::string> keys;
        for (const auto& [k, v] : row.items()) {
            if (k != "section") keys.push_back(k);
        }
        if (keys != *cols) throw ParseError("report row columns differ from the header", line_no, offset);
        r.rows.push_back(std::move(row));
    }
    return r;
}

void save_report(const Report& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << serialize_report(r);
}

Report load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_report(ss.str());
}

std::string summary_table(const Report& r) {
    auto cell = [](const nlohmann::ordered_json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_float()) {
            std::ostringstream s;
            s << std::setprecision(4) << v.get<Real>();
            return s.str();
        }
        return v.dump();
    };
    std::ostringstream out;
    out << r.kind << '\n';
    for (const auto& [name, cols] : r.sections) {
        const auto rows = r.rows_of(name);
        std::vector<std::size_t> width(cols.size());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            width[c] = cols[c].size();
            for (const auto& row : rows) width[c] = std::max(width[c], cell(row[cols[c]]).size());
        }
        out << '\n' << "[" << name << "]\n";
        for (std::size_t c = 0; c < cols.size(); ++c) out << std::setw(static_cast<int>(width[c]) + 2) << cols[c];
        out << '\n';
        for (const auto& row : rows) {
            for (std::size_t c = 0; c < cols.size(); ++c) {
                out << std::setw(static_cast<int>(width[c]) + 2) << cell(row[cols[c]]);
            }
            out << '\n';
        }
    }
    return out.str();
}

// ---- prompt length -----------------------------------------------------------

bool PromptLenResult::accuracy_trend(Real alpha) const {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].code_accuracy < rows[i - 1].code_accuracy) return false;
    }
    for (const auto& t : tests) {
        if (t.metric == "code_accuracy" && t.low == rows.front().length && t.high == rows.back().length) {
            return t.p_value < alpha;
        }
    }
    return false;
}

bool PromptLenResult::timbre_trend(Real alpha) const {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].timbre_cosine < rows[i - 1].timbre_cosine) return false;
    }
    for (const auto& t : tests) {
        if (t.metric == "timbre_cosine" && t.low == rows.front().timbre_refs && t.high == rows.back().timbre_refs) {
            return t.p_value < alpha;
        }
    }
    return false;
}

PromptLenResult eval_prompt_length(const VqTtsModel& vq, const Plm& plm, const Adm& adm, const Corpus& corpus,
                                   const std::vector<std::size_t>& eval_ids, const PromptLenOptions& opt) {
    NoGradGuard guard;
    if (opt.lengths.empty()) throw ParameterError("prompt lengths are empty");
    if (eval_ids.empty()) throw PreconditionError("no evaluation utterances");
    if (opt.trials < 1) throw ParameterError("trials must be positive");
    std::vector<Index> refs = opt.timbre_refs;
    if (refs.empty()) {
        for (Index l : opt.lengths) refs.push_back(std::max<Index>(1, l / 4));
    }
    if (refs.size() != opt.lengths.size()) throw DimensionError("one timbre reference count per prompt length");
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (opt.lengths[i] < 1 || refs[i] < 1) throw ParameterError("prompt lengths and reference counts must be >= 1");
    }
    const Index max_len = *std::max_element(opt.lengths.begin(), opt.lengths.end());
    const Index max_refs = *std::max_element(refs.begin(), refs.end());

    const auto feats = extract_features(vq, corpus, eval_ids, eval_ids, opt.cond_refs, mix_seed(opt.seed, kFeatureRefs));
    const Index d = feats.front().code_cond.cols();
    const std::size_t n_len = opt.lengths.size();

    PromptLenResult out;
    out.accuracy.assign(n_len, {});
    out.timbre.assign(n_len, {});
    std::vector<std::vector<Real>> dur(n_len);
    for (int k = 0; k < opt.trials; ++k) {
        const std::size_t t = static_cast<std::size_t>(k) % feats.size();
        const UtteranceFeatures& tf = feats[t];
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < feats.size(); ++j) {
            if (j != t && feats[j].speaker == tf.speaker) others.push_back(j);
        }
        Rng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(k)));
        std::shuffle(others.begin(), others.end(), rng);

        std::vector<int> p_codes, p_durs;
        std::vector<const Matrix*> p_cond, p_content;
        for (std::size_t j : others) {
            append(p_codes, feats[j].codes);
            append(p_durs, feats[j].durations);
            p_cond.push_back(&feats[j].code_cond);
            p_content.push_back(&feats[j].content);
        }
        if (static_cast<Index>(p_codes.size()) < max_len || static_cast<Index>(p_durs.size()) < max_len ||
            static_cast<Index>(others.size()) < max_refs) {
            ++out.skipped;
            continue;
        }
        const Matrix cond = stack_rows(p_cond, d);
        const Matrix content = stack_rows(p_content, d);
        const auto p_logd = log_durations(p_durs);
        const auto t_logd = log_durations(tf.durations);

        const Utterance& target = corpus.utterances[eval_ids[t]];
        const RowVector target_timbre = global_timbre_of(vq, target.mel);
        const ProsodyCodeSeq target_codes{tf.codes, static_cast<int>(vq.hop())};

        for (std::size_t i = 0; i < n_len; ++i) {
            const Index len = opt.lengths[i];
            const auto seq = suffix_then(p_codes, len, tf.codes);
            out.accuracy[i].push_back(
                plm.accuracy(seq, suffix_then(cond, len, tf.code_cond), causal_mask(static_cast<Index>(seq.size())), len));

            const auto logd = suffix_then(p_logd, len, t_logd);
            const Matrix pred = adm.forward(logd, Tensor(suffix_then(content, len, tf.content)),
                                            causal_mask(static_cast<Index>(logd.size())))
                                    .value();
            dur[i].push_back(tail_mse(pred, logd, len));

            std::vector<std::size_t> ref_ids;
            for (Index r = 0; r < refs[i]; ++r) ref_ids.push_back(eval_ids[others[static_cast<std::size_t>(r)]]);
            const Matrix recon =
                vq.decode_mel(target_codes, vq.mrte.build_cond(target.phonemes, target.durations, make_refs(corpus, ref_ids)));
            const RowVector g = global_timbre_of(vq, recon);
            out.timbre[i].push_back(cosine_similarity(g, target_timbre));
        }
    }
    if (out.accuracy.front().empty()) throw PreconditionError("no evaluation target has enough prompt material");

    for (std::size_t i = 0; i < n_len; ++i) {
        PromptLenRow row;
        row.length = opt.lengths[i];
        row.timbre_refs = refs[i];
        row.trials = static_cast<int>(out.accuracy[i].size());
        row.code_accuracy = mean(out.accuracy[i]);
        row.duration_mse = mean(dur[i]);
        row.timbre_cosine = mean(out.timbre[i]);
        out.rows.push_back(row);
    }
    auto add_test = [&](const std::string& metric, const std::vector<std::vector<Real>>& v, const std::vector<Index>& key,
                        std::size_t a, std::size_t b) {
        PairedTest t;
        t.metric = metric;
        t.low = key[a];
        t.high = key[b];
        t.count = paired_count(v[a], v[b]);
        t.p_value = sign_test_p(t.count.wins, t.count.losses);
        out.tests.push_back(t);
    };
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 1; i < n_len; ++i) pairs.emplace_back(i - 1, i);
    if (n_len > 2) pairs.emplace_back(0, n_len - 1);
    for (auto [a, b] : pairs) add_test("code_accuracy", out.accuracy, opt.lengths, a, b);
    for (auto [a, b] : pairs) add_test("timbre_cosine", out.timbre, refs, a, b);
    return out;
}

Report prompt_length_report(const PromptLenResult& r) {
    Report rep;
    rep.kind = "prompt-length";
    rep.sections = {{"length",
                     {"length", "timbre_refs", "trials", "code_accuracy", "duration_mse", "timbre_cosine"}},
                    {"sign_test", {"metric", "low", "high", "wins", "losses", "ties", "p_value"}}};
    for (const auto& row : r.rows) {
        rep.add("length", {row.length, row.timbre_refs, row.trials, row.code_accuracy, row.duration_mse,
                           row.timbre_cosine});
    }
    for (const auto& t : r.tests) {
        rep.add("sign_test", {t.metric, t.low, t.high, t.count.wins, t.count.losses, t.count.ties, t.p_value});
    }
    return rep;
}

// ---- ablations ---------------------------------------------------------------

int AblationResult::proposed_wins() const {
    return static_cast<int>(
        std::count_if(seeds.begin(), seeds.end(), [](const AblationSeed& s) { return s.proposed < s.baseline; }));
}

Real heldout_recon_l1(const VqTtsModel& model, const Corpus& corpus, const std::vector<std::size_t>& ids, int refs) {
    NoGradGuard guard;
    if (ids.empty()) throw PreconditionError("no utterances to reconstruct");
    Real total = 0.0;
    for (std::size_t i : ids) {
        auto ref_ids = following_same_speaker(corpus, i, refs);
        if (ref_ids.empty()) ref_ids.push_back(i);
        const Utterance& u = corpus.utterances.at(i);
        total += (model.reconstruct(u, make_refs(corpus, ref_ids)) - u.mel).cwiseAbs().mean();
    }
    return total / static_cast<Real>(ids.size());
}

AblationResult ablate_adm_vs_dp(const RunConfig& cfg, const VqTtsModel& vq, const Corpus& corpus,
                                const SpeakerSplit& split, const std::vector<std::uint64_t>& seeds,
                                Index prompt_phonemes, std::ostream* progress) {
    const auto all = every_utterance(corpus);
    const auto train = extract_features(vq, corpus, split.train, all, cfg.train.cond_refs, mix_seed(cfg.seed, kFeatureRefs));
    const auto held = extract_features(vq, corpus, split.heldout, all, cfg.train.cond_refs, mix_seed(cfg.seed, kFeatureRefs));
    if (held.empty()) throw PreconditionError("ablation needs held-out speakers");
    const Index d = vq.mrte.d_model();

    AblationResult result{"adm_vs_dp", "logdur_mse", {}};
    for (std::uint64_t seed : seeds) {
        RunConfig c = cfg;
        c.seed = seed;
        ParameterSet aps, dps;
        Rng arng(mix_seed(seed, kAdmInit)), drng(mix_seed(seed, kDpInit));
        Adm adm(aps, c.adm, d, arng);
        DurationPredictor dp(dps, d, c.adm.d_model, drng);
        {
            AdmTrainer at(adm, aps, train, c);
            DurationPredictorTrainer dt(dp, dps, train, c);
            for (int s = 0; s < c.train.adm_steps; ++s) at.step();
            for (int s = 0; s < c.train.adm_steps; ++s) dt.step();
        }
        NoGradGuard guard;
        std::vector<Real> adm_err, dp_err;
        for (std::size_t t = 0; t < held.size(); ++t) {
            const auto& tf = held[t];
            std::vector<int> p_durs;
            std::vector<const Matrix*> p_content;
            for (std::size_t k = 1; k < held.size(); ++k) {
                const auto& f = held[(t + k) % held.size()];
                if (f.speaker != tf.speaker) continue;
                append(p_durs, f.durations);
                p_content.push_back(&f.content);
            }
            const auto t_logd = log_durations(tf.durations);
            const Index len = std::min<Index>(prompt_phonemes, static_cast<Index>(p_durs.size()));
            const auto logd = suffix_then(log_durations(p_durs), len, t_logd);
            const Matrix content = suffix_then(stack_rows(p_content, d), len, tf.content);
            const Matrix pred =
                adm.forward(logd, Tensor(content), causal_mask(static_cast<Index>(logd.size()))).value();
            adm_err.push_back(tail_mse(pred, logd, len));
            dp_err.push_back(tail_mse(dp.forward(Tensor(tf.content)).value(), t_logd, 0));
        }
        result.seeds.push_back({seed, mean(adm_err), mean(dp_err)});
        if (progress != nullptr) {
            *progress << "adm_vs_dp seed " << seed << " adm " << result.seeds.back().proposed << " dp "
                      << result.seeds.back().baseline << std::endl;
        }
    }
    return result;
}

AblationResult ablate_mrte_vs_se(const RunConfig& cfg, const Corpus& corpus, const SpeakerSplit& split,
                                 const std::vector<std::uint64_t>& seeds, int eval_refs, std::ostream* progress) {
    if (split.heldout.empty()) throw PreconditionError("ablation needs held-out speakers");
    AblationResult result{"mrte_vs_se", "recon_l1", {}};
    for (std::uint64_t seed : seeds) {
        Real err[2] = {0.0, 0.0};
        for (int variant = 0; variant < 2; ++variant) {
            RunConfig c = cfg;
            c.seed = seed;
            c.mrte.use_attention = variant == 0;
            VqTtsModel model(c, mix_seed(seed, kVqInit));
            VqTrainer trainer(model, corpus, split.train, c);
            for (int s = 0; s < c.train.vq_steps; ++s) trainer.step();
            err[variant] = heldout_recon_l1(model, corpus, split.heldout, eval_refs);
        }
        result.seeds.push_back({seed, err[0], err[1]});
        if (progress != nullptr) {
            *progress << "mrte_vs_se seed " << seed << " mrte " << err[0] << " pool " << err[1] << std::endl;
        }
    }
    return result;
}

Report ablation_report(const AblationResult& r) {
    Report rep;
    rep.kind = "ablation";
    rep.sections = {{"seed", {"which", "metric", "seed", "proposed", "baseline", "proposed_better"}},
                    {"summary", {"which", "metric", "seeds", "proposed_wins", "proposed_mean", "baseline_mean"}}};
    std::vector<Real> p, b;
    for (const auto& s : r.seeds) {
        rep.add("seed", {r.which, r.metric, s.seed, s.proposed, s.baseline, s.proposed < s.baseline});
        p.push_back(s.proposed);
        b.push_back(s.baseline);
    }
    rep.add("summary", {r.which, r.metric, r.seeds.size(), r.proposed_wins(), mean(p), mean(b)});
    return rep;
}

// ---- overfit -----------------------------------------------------------------

OverfitResult run_overfit(const RunConfig& cfg, const Corpus& corpus, std::int64_t max_steps,
                          const OverfitTargets& targets, std::int64_t check_every, std::ostream* progress) {
    cfg.validate();
    if (max_steps < 1 || check_every < 1) throw ParameterError("step counts must be positive");
    const auto all = every_utterance(corpus);
    OverfitResult r;
    auto report = [&](const std::string& stage, std::int64_t step, Real value) {
        if (progress != nullptr) *progress << stage << " step " << step << ' ' << value << std::endl;
    };

    VqTtsModel vq(cfg, mix_seed(cfg.seed, kVqInit));
    r.vq_initial_l1 = heldout_recon_l1(vq, corpus, all, cfg.train.max_refs);
    r.vq_final_l1 = r.vq_initial_l1;
    {
        VqTrainer trainer(vq, corpus, all, cfg);
        while (trainer.optimizer().step() < max_steps) {
            trainer.step();
            r.vq_steps = trainer.optimizer().step();
            if (r.vq_steps % check_every != 0 && r.vq_steps != max_steps) continue;
            r.vq_final_l1 = heldout_recon_l1(vq, corpus, all, cfg.train.max_refs);
            report("vqgan", r.vq_steps, r.vq_final_l1);
            if (r.vq_final_l1 * targets.l1_improvement <= r.vq_initial_l1) break;
        }
    }

    const auto feats = extract_features(vq, corpus, all, all, cfg.train.cond_refs, mix_seed(cfg.seed, kFeatureRefs));
    const Index d = vq.mrte.d_model();
    {
        ParameterSet ps;
        Rng rng(mix_seed(cfg.seed, kPlmInit));
        Plm plm(ps, cfg.plm, cfg.vq.codebook, d, rng);
        PlmTrainer trainer(plm, ps, feats, cfg);
        auto evaluate = [&] {
            NoGradGuard guard;
            Index hits = 0, total = 0;
            Real loss = 0.0;
            for (const auto& f : feats) {
                const Index n = static_cast<Index>(f.codes.size());
                const BoolGrid mask = causal_mask(n);
                hits += static_cast<Index>(std::lround(plm.accuracy(f.codes, f.code_cond, mask) * static_cast<Real>(n)));
                loss += plm.loss(f.codes, Tensor(f.code_cond), mask).item() * static_cast<Real>(n);
                total += n;
            }
            r.plm_accuracy = static_cast<Real>(hits) / static_cast<Real>(total);
            r.plm_loss = loss / static_cast<Real>(total);
        };
        while (trainer.optimizer().step() < max_steps) {
            trainer.step();
            r.plm_steps = trainer.optimizer().step();
            if (r.plm_steps % check_every != 0 && r.plm_steps != max_steps) continue;
            evaluate();
            report("plm", r.plm_steps, r.plm_accuracy);
            if (r.plm_accuracy >= targets.plm_accuracy) break;
        }
    }
    {
        ParameterSet ps;
        Rng rng(mix_seed(cfg.seed, kAdmInit));
        Adm adm(ps, cfg.adm, d, rng);
        AdmTrainer trainer(adm, ps, feats, cfg);
        auto evaluate = [&] {
            NoGradGuard guard;
            Real s = 0.0;
            Index total = 0;
            for (const auto& f : feats) {
                const auto logd = log_durations(f.durations);
                const Index n = static_cast<Index>(logd.size());
                s += adm.loss(logd, Tensor(f.content), causal_mask(n)).item() * static_cast<Real>(n);
                total += n;
            }
            r.adm_mse = s / static_cast<Real>(total);
        };
        while (trainer.optimizer().step() < max_steps) {
            trainer.step();
            r.adm_steps = trainer.optimizer().step();
            if (r.adm_steps % check_every != 0 && r.adm_steps != max_steps) continue;
            evaluate();
            report("adm", r.adm_steps, r.adm_mse);
            if (r.adm_mse < targets.adm_mse) break;
        }
    }
    return r;
}

// ---- gradient checks ---------------------------------------------------------

namespace {

RunConfig grad_check_config() {
    RunConfig c;
    c.vq = VqConfig{4, 6, 4, 6, 3, 2, 8, 0.25};
    c.mrte = MrteConfig{6, 4, 3, 1, 2, 1, true};
    c.plm = LmConfig{2, 6, 2, 64, 1, 2};
    c.adm = LmConfig{2, 6, 2, 64, 1, 2};
    return c;
}

Matrix uniform(Index rows, Index cols, Rng& rng) {
    std::uniform_real_distribution<Real> u(-1.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

std::vector<int> random_ids(Index n, int vocab, Rng& rng) {
    std::uniform_int_distribution<int> u(0, vocab - 1);
    std::vector<int> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = u(rng);
    return v;
}

// sum(probe .* x): a fixed random linear readout of a module output.
Tensor probe(const Tensor& x, const Matrix& weights) { return sum_all(mul(x, Tensor(weights))); }

}  // namespace

std::vector<std::string> grad_check_modules() { return {"vqvae", "mrte", "plm", "adm", "duration_predictor"}; }

GradCheckReport grad_check_module(const std::string& module, std::uint64_t seed) {
    const RunConfig c = grad_check_config();
    const Index bins = c.corpus.bins;
    Rng rng(mix_seed(seed, kProbe));
    ParameterSet ps;
    if (module == "vqvae") {
        const Index frames = 10;
        ProsodyEncoder encoder(ps, c.vq, rng);
        Codebook codebook(ps, "codebook", c.vq.codebook, c.vq.code_dim, rng);
        MelDecoder decoder(ps, c.vq, c.mrte.d_model, bins, rng);
        const Matrix mel = uniform(frames, bins, rng);
        const Matrix cond = uniform(frames, c.mrte.d_model, rng);
        const Index codes = code_count(frames, c.vq.hop);
        const Matrix w_h = uniform(codes, c.vq.code_dim, rng), w_y = uniform(frames, bins, rng);
        std::vector<Index> fixed(static_cast<std::size_t>(codes));
        for (auto& x : fixed) x = static_cast<Index>(rng() % static_cast<std::uint64_t>(c.vq.codebook));
        return grad_check(
            [&] {
                Tensor y = decoder(gather_rows(codebook.entries, fixed), Tensor(cond));
                return add(probe(encoder(mel), w_h), probe(y, w_y));
            },
            ps);
    }
    if (module == "mrte") {
        Mrte mrte(ps, c.mrte, c.corpus.vocab, bins, rng);
        TimbreRefSet refs;
        refs.refs = {uniform(7, bins, rng), uniform(5, bins, rng)};
        const auto phonemes = random_ids(5, c.corpus.vocab, rng);
        const Matrix w_p = uniform(5, c.mrte.d_model, rng), w_g = uniform(1, c.mrte.d_global, rng);
        return grad_check(
            [&] { return add(probe(mrte.phoneme_hidden(phonemes, refs), w_p), probe(mrte.global_timbre(refs), w_g)); },
            ps);
    }
    if (module == "plm") {
        const Index cond_dim = 5;
        Plm plm(ps, c.plm, c.vq.codebook, cond_dim, rng);
        const auto codes = random_ids(9, c.vq.codebook, rng);
        const Matrix cond = uniform(9, cond_dim, rng);
        const BoolGrid mask = block_causal_mask({4, 5});
        return grad_check([&] { return plm.loss(codes, Tensor(cond), mask); }, ps);
    }
    if (module == "adm") {
        const Index cond_dim = 5;
        Adm adm(ps, c.adm, cond_dim, rng);
        std::vector<Real> logd;
        for (int d : random_ids(9, 12, rng)) logd.push_back(std::log(d + 1.0));
        const Matrix content = uniform(9, cond_dim, rng);
        const BoolGrid mask = block_causal_mask({5, 4});
        return grad_check([&] { return adm.loss(logd, Tensor(content), mask); }, ps);
    }
    if (module == "duration_predictor") {
        const Index cond_dim = 5;
        DurationPredictor dp(ps, cond_dim, 6, rng);
        std::vector<Real> logd;
        for (int d : random_ids(8, 12, rng)) logd.push_back(std::log(d + 1.0));
        const Matrix content = uniform(8, cond_dim, rng);
        return grad_check([&] { return dp.loss(logd, Tensor(content)); }, ps);
    }
    throw ParameterError("unknown module '" + module + "'");
}

Report grad_check_report(const std::vector<std::pair<std::string, GradCheckReport>>& results) {
    Report rep;
    rep.kind = "grad-check";
    rep.sections = {{"group", {"module", "group", "max_rel_err"}}, {"module", {"module", "max_rel_err"}}};
    for (const auto& [module, r] : results) {
        for (const auto& [group, err] : r.per_group) rep.add("group", {module, group, err});
    }
    for (const auto& [module, r] : results) rep.add("module", {module, r.max_rel_err});
    return rep;
}

}  // namespace megatts
