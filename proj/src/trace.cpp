#include "stopcal/trace.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace stopcal {

namespace {

constexpr char kMagic[4] = {'T', 'C', 'A', 'L'};
constexpr std::uint32_t kVersion = 1;

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool word_at(std::string_view s, std::size_t pos, std::string_view word) {
    if (pos + word.size() > s.size()) return false;
    for (std::size_t i = 0; i < word.size(); ++i) {
        if (lower(s[pos + i]) != word[i]) return false;
    }
    if (pos > 0 && is_word_char(s[pos - 1])) return false;
    if (pos + word.size() < s.size() && is_word_char(s[pos + word.size()])) return false;
    return true;
}

// Whole-word, case-insensitive "wait" or "but".
bool contains_keyword(std::string_view s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = lower(s[i]);
        if (c == 'w' && word_at(s, i, "wait")) return true;
        if (c == 'b' && word_at(s, i, "but")) return true;
    }
    return false;
}

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::calibration: return "calibration";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "calibration") return Split::calibration;
    if (name == "test") return Split::test;
    throw Error("unknown split tag: " + std::string(name));
}

std::vector<std::string> segment_thoughts(std::string_view raw_text) {
    if (raw_text.empty()) throw Error("empty trace text");
    std::vector<std::string> out;
    std::string cur;
    bool cur_has_keyword = false;
    bool cur_started = false;
    std::size_t pos = 0;
    for (;;) {
        std::size_t delim = raw_text.find("\n\n", pos);
        bool last = delim == std::string_view::npos;
        std::string_view section = last ? raw_text.substr(pos) : raw_text.substr(pos, delim - pos);
        if (cur_started) cur += "\n\n";
        cur.append(section);
        cur_started = true;
        cur_has_keyword = cur_has_keyword || contains_keyword(section);
        if (last) break;
        if (cur_has_keyword) {
            out.push_back(std::move(cur));
            cur.clear();
            cur_started = false;
            cur_has_keyword = false;
        }
        pos = delim + 2;
    }
    out.push_back(std::move(cur));  // final section is always emitted
    return out;
}

void validate_trace(const Trace& trace, std::size_t dimension) {
    if (trace.steps.empty()) throw Error("trace has no steps (id=" + trace.id + ")");
    if (trace.labels.size() != trace.steps.size())
        throw Error("label/step length mismatch at id=" + trace.id);
    std::int64_t tokens = 0;
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const Step& st = trace.steps[i];
        if (st.embedding.size() != dimension)
            throw Error("embedding dimension mismatch at id=" + trace.id + " step=" + std::to_string(i));
        for (float v : st.embedding) {
            if (!std::isfinite(v)) throw Error("non-finite embedding at id=" + trace.id + " step=" + std::to_string(i));
        }
        if (st.token_count < 0)
            throw Error("negative token_count at id=" + trace.id + " step=" + std::to_string(i));
        if (!st.text.empty() && st.token_count < 1)
            throw Error("token_count must be >= 1 for non-empty step text at id=" + trace.id +
                        " step=" + std::to_string(i));
        tokens += st.token_count;
    }
    if (trace.total_tokens != tokens)
        throw Error("total_tokens does not match step sum at id=" + trace.id);
}

std::filesystem::path sidecar_path(const std::filesystem::path& trace_path) {
    std::filesystem::path p = trace_path;
    p += ".bin";
    return p;
}

void save_traceset(const TraceSet& set, const std::filesystem::path& path) {
    std::unordered_set<std::string> seen;
    for (const Trace& t : set.traces) {
        validate_trace(t, set.dimension);
        if (!seen.insert(t.id).second) throw Error("duplicate id '" + t.id + "'");
    }

    std::string sidecar;
    sidecar.append(kMagic, 4);
    put_u32_le(sidecar, kVersion);
    put_u32_le(sidecar, static_cast<std::uint32_t>(set.dimension));
    std::uint64_t rows = 0;
    for (const Trace& t : set.traces) rows += t.steps.size();
    put_u64_le(sidecar, rows);

    std::ostringstream lines;
    std::uint64_t row = 0;
    for (const Trace& t : set.traces) {
        nlohmann::json steps = nlohmann::json::array();
        for (const Step& st : t.steps) {
            steps.push_back({{"text", st.text}, {"token_count", st.token_count}, {"emb_off", row++}});
            for (float v : st.embedding) put_f32_le(sidecar, v);
        }
        nlohmann::json labels = nlohmann::json::array();
        auto opt = [](const std::optional<bool>& b) -> nlohmann::json {
            return b ? nlohmann::json(*b) : nlohmann::json(nullptr);
        };
        for (const StepLabels& l : t.labels) {
            labels.push_back({{"correct", opt(l.correct_if_stopped)},
                              {"consistent", opt(l.consistent_with_final)},
                              {"leaf", opt(l.is_leaf)},
                              {"novel", opt(l.is_novel)}});
        }
        nlohmann::json rec = {{"id", t.id},
                              {"question", t.question},
                              {"steps", steps},
                              {"labels", labels},
                              {"final_correct", opt(t.final_correct)}};
        lines << rec.dump() << '\n';
    }

    write_file(path.string(), lines.str());
    write_file(sidecar_path(path).string(), sidecar);
}

TraceSet load_traceset(const std::filesystem::path& path, Split split_tag) {
    const std::string sidecar = read_file(sidecar_path(path).string());
    if (sidecar.size() < 20 || std::string_view(sidecar.data(), 4) != std::string_view(kMagic, 4))
        throw Error("bad sidecar magic: " + sidecar_path(path).string());
    if (get_u32_le(sidecar, 4) != kVersion) throw Error("unsupported sidecar version");
    const std::size_t dim = get_u32_le(sidecar, 8);
    const std::uint64_t rows = get_u64_le(sidecar, 12);
    if (sidecar.size() != 20 + rows * dim * 4) throw Error("sidecar size does not match header");

    TraceSet set;
    set.dimension = dim;
    set.split_tag = split_tag;

    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    std::unordered_set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error("malformed record at line " + std::to_string(line_no) + ": " + e.what());
        }
        Trace t;
        try {
            t.id = rec.at("id").get<std::string>();
            t.question = rec.value("question", std::string());
            if (rec.contains("final_correct") && !rec["final_correct"].is_null())
                t.final_correct = rec["final_correct"].get<bool>();
            for (const auto& js : rec.at("steps")) {
                Step st;
                st.text = js.value("text", std::string());
                st.token_count = js.at("token_count").get<std::int64_t>();
                const std::uint64_t off = js.at("emb_off").get<std::uint64_t>();
                if (off >= rows)
                    throw Error("embedding row out of range at id=" + t.id);
                st.embedding.resize(dim);
                for (std::size_t j = 0; j < dim; ++j)
                    st.embedding[j] = get_f32_le(sidecar, 20 + (off * dim + j) * 4);
                t.total_tokens += st.token_count;
                t.steps.push_back(std::move(st));
            }
            auto opt = [](const nlohmann::json& j, const char* key) -> std::optional<bool> {
                if (!j.contains(key) || j[key].is_null()) return std::nullopt;
                return j[key].get<bool>();
            };
            for (const auto& jl : rec.at("labels")) {
                StepLabels l;
                l.correct_if_stopped = opt(jl, "correct");
                l.consistent_with_final = opt(jl, "consistent");
                l.is_leaf = opt(jl, "leaf");
                l.is_novel = opt(jl, "novel");
                t.labels.push_back(l);
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error("malformed record at line " + std::to_string(line_no) + ": " + e.what());
        }
        validate_trace(t, dim);
        if (!seen.insert(t.id).second) throw Error("duplicate id '" + t.id + "'");
        set.traces.push_back(std::move(t));
    }
    return set;
}

}  // namespace stopcal
