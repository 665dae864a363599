#include "megatts/checkpoint.hpp"

#include "megatts/errors.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>

namespace megatts {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'S', '2'};
const std::string kMomentM = "adam.m/";
const std::string kMomentV = "adam.v/";

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_string(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : b_(bytes) {}
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw ParseError("checkpoint truncated", 0, pos_);
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::string& b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
    std::string out(kMagic, 4);
    put_u32(out, Checkpoint::kVersion);
    put_string(out, c.stage);
    put_string(out, c.config_json);
    put_u64(out, static_cast<std::uint64_t>(c.step));
    put_u64(out, static_cast<std::uint64_t>(c.adam_steps));
    put_u64(out, c.tensors.size());
    for (const auto& [name, m] : c.tensors) {
        put_string(out, name);
        put_u64(out, static_cast<std::uint64_t>(m.rows()));
        put_u64(out, static_cast<std::uint64_t>(m.cols()));
        for (Index i = 0; i < m.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(m.data()[i]));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) throw ParseError("not a checkpoint (bad magic)", 0, 0);
    Reader r(bytes);
    r.skip(4);
    Checkpoint c;
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::kVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) + " (expected " +
                           std::to_string(Checkpoint::kVersion) + ")");
    }
    c.stage = r.str();
    c.config_json = r.str();
    c.step = static_cast<std::int64_t>(r.u64());
    c.adam_steps = static_cast<std::int64_t>(r.u64());
    const std::uint64_t count = r.u64();
    for (std::uint64_t k = 0; k < count; ++k) {
        std::string name = r.str();
        const std::uint64_t rows = r.u64(), cols = r.u64();
        if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24)) {
            throw ParseError("checkpoint tensor " + name + " has an invalid shape", 0, r.pos());
        }
        r.need(rows * cols * 8);
        Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(r.u64());
        c.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (!r.done()) throw ParseError("trailing bytes after checkpoint", 0, r.pos());
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + tmp);
        const std::string bytes = encode_checkpoint(c);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("missing checkpoint " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Checkpoint capture(const std::string& stage, const RunConfig& cfg, const ParameterSet& params, const Adam* adam,
                   std::int64_t step) {
    Checkpoint c;
    c.stage = stage;
    c.config_json = nlohmann::json(cfg).dump();
    c.step = step;
    for (const auto& [name, t] : params.items()) c.tensors.emplace_back(name, t.value());
    if (adam != nullptr) {
        c.adam_steps = adam->steps_taken();
        const auto& items = params.items();
        for (std::size_t i = 0; i < items.size(); ++i) {
            c.tensors.emplace_back(kMomentM + items[i].first, adam->first_moments()[i]);
            c.tensors.emplace_back(kMomentV + items[i].first, adam->second_moments()[i]);
        }
    }
    return c;
}

void restore(const Checkpoint& c, ParameterSet& params, Adam* adam) {
    std::map<std::string, const Matrix*> byname;
    for (const auto& [name, m] : c.tensors) byname[name] = &m;
    auto fetch = [&](const std::string& name, Index rows, Index cols) -> const Matrix& {
        auto it = byname.find(name);
        if (it == byname.end()) throw ParseError("checkpoint lacks tensor " + name, 0, 0);
        if (it->second->rows() != rows || it->second->cols() != cols) {
            throw DimensionError("checkpoint tensor " + name + " has the wrong shape");
        }
        return *it->second;
    };
    const auto& items = params.items();
    for (const auto& [name, t] : items) {
        Tensor handle = t;
        handle.mutable_value() = fetch(name, t.rows(), t.cols());
    }
    if (adam != nullptr) {
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto& [name, t] = items[i];
            adam->first_moments()[i] = fetch(kMomentM + name, t.rows(), t.cols());
            adam->second_moments()[i] = fetch(kMomentV + name, t.rows(), t.cols());
        }
        adam->set_steps_taken(c.adam_steps);
    }
}

RunConfig checkpoint_config(const Checkpoint& c) {
    try {
        return nlohmann::json::parse(c.config_json).get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint config: ") + e.what(), 0, 0);
    }
}

}  // namespace megatts
