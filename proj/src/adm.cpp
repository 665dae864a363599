#include "megatts/adm.hpp"

#include "megatts/errors.hpp"

#include <cmath>

namespace megatts {

int integerize_duration(Real log_duration) {
    if (!std::isfinite(log_duration)) throw NumericError("non-finite log duration");
    const Real d = std::floor(std::exp(log_duration) + 0.5);
    return d < 1.0 ? 1 : static_cast<int>(d);
}

std::vector<Real> log_durations(const std::vector<int>& durations) {
    std::vector<Real> out;
    out.reserve(durations.size());
    for (int d : durations) {
        if (d < 1) throw AlignmentError("duration below 1 frame");
        out.push_back(std::log(static_cast<Real>(d)));
    }
    return out;
}

namespace {

Tensor column(const std::vector<Real>& v) {
    Matrix m(static_cast<Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
    return Tensor(m);
}

}  // namespace

Adm::Adm(ParameterSet& ps, const LmConfig& cfg, Index cond_dim, Rng& rng) {
    begin = ps.add("adm.begin", random_normal(1, cfg.d_model, 1.0, rng));
    dur_proj = Linear(ps, "adm.dur", 1, cfg.d_model, rng);
    cond_proj = Linear(ps, "adm.cond", cond_dim, cfg.d_model, rng);
    trunk = CausalTrunk(ps, "adm", cfg, rng);
    head = Linear(ps, "adm.head", cfg.d_model, 1, rng);
}

Tensor Adm::forward(const std::vector<Real>& log_durs, const Tensor& content, const BoolGrid& mask) const {
    const Index n = static_cast<Index>(log_durs.size());
    if (content.rows() != n) throw AlignmentError("adm: condition rows != duration count");
    if (mask.rows() != n) throw DimensionError("adm: mask rows != duration count");
    if (n > trunk.max_context()) throw ContextLengthError("adm: sequence exceeds max_context");
    const auto starts = block_starts(mask);
    std::vector<Real> prev(log_durs.size(), 0.0);
    std::vector<Index> pick(log_durs.size());
    for (std::size_t i = 0; i < log_durs.size(); ++i) {
        // Block starts read the begin vector (row n of the table below).
        pick[i] = starts[i] ? n : static_cast<Index>(i);
        if (!starts[i]) prev[i] = log_durs[i - 1];
    }
    Tensor inputs = gather_rows(concat_rows({dur_proj(column(prev)), begin}), pick);
    Tensor x = add(inputs, cond_proj(content));
    return head(trunk(x, mask));
}

Tensor Adm::loss(const std::vector<Real>& log_durs, const Tensor& content, const BoolGrid& mask) const {
    return mse(forward(log_durs, content, mask), column(log_durs));
}

std::vector<int> Adm::generate(const std::vector<int>& prompt_durs, const Matrix& prompt_content,
                               const Matrix& target_content) const {
    if (static_cast<Index>(prompt_durs.size()) + target_content.rows() > max_context()) {
        throw ContextLengthError("adm: prompt + target exceed max_context");
    }
    AdmSession s(*this);
    s.feed(log_durations(prompt_durs), prompt_content);
    std::vector<int> out;
    for (Index t = 0; t < target_content.rows(); ++t) {
        const int d = integerize_duration(s.next(target_content.row(t)));
        s.push(std::log(static_cast<Real>(d)));
        out.push_back(d);
    }
    return out;
}

AdmSession::AdmSession(const Adm& model) : model_(&model), session_(model.trunk.start()), pending_(model.begin) {}

Real AdmSession::next(const RowVector& content_row) {
    if (awaiting_push_) throw ContractError("adm session: push the previous duration before predicting the next");
    NoGradGuard guard;
    Tensor x = add(pending_, model_->cond_proj(Tensor(content_row)));
    const Real y = model_->head(model_->trunk.step(x, session_)).item();
    awaiting_push_ = true;
    return y;
}

void AdmSession::push(Real log_duration) {
    if (!awaiting_push_) throw ContractError("adm session: no predicted position to commit");
    NoGradGuard guard;
    pending_ = model_->dur_proj(Tensor(Matrix::Constant(1, 1, log_duration)));
    awaiting_push_ = false;
}

void AdmSession::feed(const std::vector<Real>& log_durs, const Matrix& content) {
    if (content.rows() != static_cast<Index>(log_durs.size())) throw AlignmentError("prompt condition rows != durations");
    for (std::size_t i = 0; i < log_durs.size(); ++i) {
        next(content.row(static_cast<Index>(i)));
        push(log_durs[i]);
    }
}

DurationPredictor::DurationPredictor(ParameterSet& ps, Index cond_dim, Index hidden, Rng& rng) {
    conv1 = Conv1d(ps, "dp.conv1", cond_dim, hidden, 3, rng);
    ln1 = LayerNorm(ps, "dp.ln1", hidden);
    conv2 = Conv1d(ps, "dp.conv2", hidden, hidden, 3, rng);
    ln2 = LayerNorm(ps, "dp.ln2", hidden);
    head = Linear(ps, "dp.head", hidden, 1, rng);
}

Tensor DurationPredictor::forward(const Tensor& content) const {
    return head(ln2(gelu(conv2(ln1(gelu(conv1(content)))))));
}

Tensor DurationPredictor::loss(const std::vector<Real>& log_durs, const Tensor& content) const {
    if (content.rows() != static_cast<Index>(log_durs.size())) throw AlignmentError("dp: condition rows != durations");
    return mse(forward(content), column(log_durs));
}

std::vector<int> DurationPredictor::generate(const Matrix& content) const {
    NoGradGuard guard;
    const Matrix y = forward(Tensor(content)).value();
    std::vector<int> out;
    for (Index r = 0; r < y.rows(); ++r) out.push_back(integerize_duration(y(r, 0)));
    return out;
}

}  // namespace megatts
