#include "megatts/base64.hpp"
#include "megatts/corpus.hpp"
#include "megatts/errors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>
#include <sstream>

namespace megatts {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "megatts-corpus";

json utterance_record(const Utterance& u) {
    json mel = json::array();
    std::vector<float> row(static_cast<std::size_t>(u.mel.cols()));
    for (Index r = 0; r < u.mel.rows(); ++r) {
        for (Index c = 0; c < u.mel.cols(); ++c) row[static_cast<std::size_t>(c)] = static_cast<float>(u.mel(r, c));
        mel.push_back(base64::encode_f32(row));
    }
    return json{{"speaker", u.speaker_id}, {"phonemes", u.phonemes}, {"durations", u.durations}, {"mel", std::move(mel)}};
}

Utterance parse_utterance(const json& j, const Corpus& header, std::size_t line, std::size_t offset) {
    auto fail = [&](const std::string& what) { return ParseError(what, line, offset); };
    Utterance u;
    try {
        u.speaker_id = j.at("speaker").get<int>();
        u.phonemes = j.at("phonemes").get<std::vector<int>>();
        u.durations = j.at("durations").get<std::vector<int>>();
        const auto& rows = j.at("mel");
        if (!rows.is_array()) throw fail("mel must be an array of rows");
        u.mel.resize(static_cast<Index>(rows.size()), header.bins);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto values = base64::decode_f32(rows[r].get<std::string>());
            if (static_cast<int>(values.size()) != header.bins) throw fail("mel row has wrong bin count");
            for (int c = 0; c < header.bins; ++c) u.mel(static_cast<Index>(r), c) = values[static_cast<std::size_t>(c)];
        }
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw fail(std::string("malformed utterance record: ") + e.what());
    }
    if (u.phonemes.empty()) throw fail("utterance has no phonemes");
    if (u.phonemes.size() != u.durations.size()) throw fail("phoneme/duration count mismatch");
    for (int p : u.phonemes) {
        if (p < 0 || p >= header.vocab) throw fail("phoneme id outside vocabulary");
    }
    for (int d : u.durations) {
        if (d < 1) throw fail("duration below 1 frame");
    }
    if (std::accumulate(u.durations.begin(), u.durations.end(), Index{0}) != u.mel.rows()) {
        throw fail("durations do not sum to the mel frame count");
    }
    return u;
}

}  // namespace

std::string serialize_corpus(const Corpus& corpus) {
    std::string out = json{{"format", kFormat},
                           {"version", Corpus::kVersion},
                           {"bins", corpus.bins},
                           {"vocab", corpus.vocab},
                           {"utterances", corpus.utterances.size()}}
                          .dump();
    out += '\n';
    for (const auto& u : corpus.utterances) {
        out += utterance_record(u).dump();
        out += '\n';
    }
    return out;
}

Corpus parse_corpus(const std::string& text) {
    Corpus corpus;
    std::size_t expected = 0;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    bool have_header = false;
    while (offset < text.size()) {
        const std::size_t nl = text.find('\n', offset);
        if (nl == std::string::npos) throw ParseError("record is not newline-terminated (truncated file?)", line_no + 1, offset);
        const std::string_view line(text.data() + offset, nl - offset);
        ++line_no;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no, offset);
        }
        if (!have_header) {
            try {
                if (j.at("format").get<std::string>() != kFormat) throw ParseError("not a corpus file", line_no, offset);
                const int version = j.at("version").get<int>();
                if (version != Corpus::kVersion) {
                    throw VersionError("corpus version " + std::to_string(version) + " unsupported (expected " +
                                       std::to_string(Corpus::kVersion) + ")");
                }
                corpus.bins = j.at("bins").get<int>();
                corpus.vocab = j.at("vocab").get<int>();
                expected = j.at("utterances").get<std::size_t>();
            } catch (const Error&) {
                throw;
            } catch (const std::exception& e) {
                throw ParseError(std::string("malformed header: ") + e.what(), line_no, offset);
            }
            if (corpus.bins < 1 || corpus.vocab < 1) throw ParseError("header dims must be positive", line_no, offset);
            have_header = true;
        } else {
            corpus.utterances.push_back(parse_utterance(j, corpus, line_no, offset));
        }
        offset = nl + 1;
    }
    if (!have_header) throw ParseError("empty corpus file", 1, 0);
    if (corpus.utterances.size() != expected) {
        throw ParseError("header promises " + std::to_string(expected) + " utterances, found " +
                             std::to_string(corpus.utterances.size()),
                         line_no, offset);
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << serialize_corpus(corpus);
    if (!out) throw Error("write failed: " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_corpus(ss.str());
}

}  // namespace megatts
