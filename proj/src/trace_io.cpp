#include "pf/trace_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pf {

namespace {

using Json = nlohmann::ordered_json;

Json layout_to_json(const TokenLayout& layout) {
    Json segs = Json::array();
    for (const Segment& s : layout.segments()) {
        Json seg;
        seg["kind"] = s.kind == SegmentKind::Image ? "image" : "text";
        if (s.kind == SegmentKind::Image) seg["image"] = s.image_index;
        seg["begin"] = s.begin;
        seg["end"] = s.end;
        segs.push_back(std::move(seg));
    }
    Json j;
    j["total_len"] = layout.total_len();
    j["num_images"] = layout.num_images();
    j["segments"] = std::move(segs);
    return j;
}

TokenLayout layout_from_json(const nlohmann::json& j, int line) {
    std::vector<Segment> segments;
    if (!j.contains("segments") || !j["segments"].is_array())
        throw TraceError("header layout lacks a segments array", line);
    for (const auto& seg : j["segments"]) {
        Segment s;
        const std::string kind = seg.at("kind").get<std::string>();
        if (kind == "image") {
            s.kind = SegmentKind::Image;
            s.image_index = seg.at("image").get<int>();
        } else if (kind == "text") {
            s.kind = SegmentKind::Text;
        } else {
            throw TraceError("unknown segment kind '" + kind + "'", line);
        }
        s.begin = seg.at("begin").get<std::size_t>();
        s.end = seg.at("end").get<std::size_t>();
        segments.push_back(s);
    }
    TokenLayout layout;
    try {
        layout = TokenLayout(std::move(segments));
    } catch (const std::exception& e) {
        throw TraceError(std::string("invalid layout: ") + e.what(), line);
    }
    if (j.contains("total_len") && j["total_len"].get<std::size_t>() != layout.total_len())
        throw TraceError("header total_len disagrees with segments", line);
    if (j.contains("num_images") && j["num_images"].get<int>() != layout.num_images())
        throw TraceError("header num_images disagrees with segments", line);
    return layout;
}

// Token text is usually UTF-8, but a sampler can emit any byte. Valid text
// is stored under "token"; anything else is hex-encoded under "token_hex"
// so records stay valid UTF-8 JSON and the round trip stays lossless.
bool is_valid_utf8(const std::string& s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        if (c < 0x80) len = 1;
        else if ((c & 0xE0) == 0xC0 && c >= 0xC2) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0 && c <= 0xF4) len = 4;
        else return false;
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k)
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
        i += len;
    }
    return true;
}

std::string to_hex(const std::string& s) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(s.size() * 2);
    for (unsigned char c : std::string_view(s)) {
        out += digits[c >> 4];
        out += digits[c & 0xF];
    }
    return out;
}

std::string from_hex(const std::string& s, int line) {
    if (s.size() % 2 != 0) throw TraceError("odd-length token_hex field", line);
    auto nibble = [&](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        throw TraceError("invalid token_hex digit", line);
    };
    std::string out;
    out.reserve(s.size() / 2);
    for (std::size_t i = 0; i < s.size(); i += 2)
        out += static_cast<char>((nibble(s[i]) << 4) | nibble(s[i + 1]));
    return out;
}

}  // namespace

void write_trace(const AttentionTrace& trace, const std::string& path, bool mass_only) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);

    Json header;
    header["schema_version"] =
        std::to_string(kTraceSchemaMajor) + "." + std::to_string(kTraceSchemaMinor);
    header["layout"] = layout_to_json(trace.layout);
    header["num_images"] = trace.layout.num_images();
    header["lambda"] = trace.meta.lambda;
    header["mode"] = episode_mode_name(trace.meta.mode);
    header["model_digest"] = trace.meta.model_digest;
    header["selected_layers"] = trace.meta.selected_layers;
    header["model_seed"] = trace.meta.model_seed;
    header["sampling_seed"] = trace.meta.sampling_seed;
    if (!trace.meta.tag.empty()) header["tag"] = trace.meta.tag;
    out << header.dump() << "\n";

    PulseSeries series;
    if (mass_only) series = pulse_series(trace);

    for (std::size_t k = 0; k < trace.steps.size(); ++k) {
        const TraceStep& step = trace.steps[k];
        Json rec;
        rec["step"] = step.step_index;
        if (is_valid_utf8(step.token_text))
            rec["token"] = step.token_text;
        else
            rec["token_hex"] = to_hex(step.token_text);
        rec["mode"] = step_mode_name(step.mode);
        if (!step.focus.empty()) rec["focus"] = step.focus;
        if (step.gated) rec["gated"] = true;
        if (step.injected) rec["injected"] = true;
        if (mass_only) {
            rec["image_mass"] = series.image_mass[k];
            rec["text_mass"] = series.text_mass[k];
        } else if (!step.reduced_row.empty()) {
            rec["row"] = step.reduced_row;
            if (!step.raw_rows.empty()) rec["raw"] = step.raw_rows;
        } else if (step.image_mass && step.text_mass) {
            rec["image_mass"] = *step.image_mass;
            rec["text_mass"] = *step.text_mass;
        } else {
            throw std::invalid_argument("trace step carries neither a row nor masses");
        }
        out << rec.dump() << "\n";
    }

    const auto bytes = out.tellp();
    if (bytes > std::streamoff{1} << 30)
        std::fprintf(stderr, "warning: trace file %s exceeds 1 GB\n", path.c_str());
}

AttentionTrace read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);

    AttentionTrace trace;
    std::string line;
    int line_no = 0;
    bool have_header = false;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw TraceError(std::string("malformed record: ") + e.what(), line_no);
        }

        if (!have_header) {
            if (!rec.contains("schema_version"))
                throw TraceError("first record must be the header (schema_version missing)",
                                 line_no);
            const std::string version = rec["schema_version"].get<std::string>();
            int major = -1, minor = -1;
            if (std::sscanf(version.c_str(), "%d.%d", &major, &minor) != 2 ||
                major != kTraceSchemaMajor)
                throw TraceError("unsupported schema version '" + version + "'", line_no);
            trace.layout = layout_from_json(rec.at("layout"), line_no);
            if (rec.contains("lambda")) trace.meta.lambda = rec["lambda"].get<double>();
            if (rec.contains("mode")) {
                const auto mode = episode_mode_from_name(rec["mode"].get<std::string>());
                if (!mode) throw TraceError("unknown mode in header", line_no);
                trace.meta.mode = *mode;
            }
            if (rec.contains("model_digest"))
                trace.meta.model_digest = rec["model_digest"].get<std::string>();
            if (rec.contains("selected_layers"))
                trace.meta.selected_layers = rec["selected_layers"].get<std::vector<int>>();
            if (rec.contains("model_seed"))
                trace.meta.model_seed = rec["model_seed"].get<std::uint64_t>();
            if (rec.contains("sampling_seed"))
                trace.meta.sampling_seed = rec["sampling_seed"].get<std::uint64_t>();
            if (rec.contains("tag")) trace.meta.tag = rec["tag"].get<std::string>();
            have_header = true;
            continue;
        }

        if (rec.contains("schema_version")) throw TraceError("duplicate header record", line_no);

        TraceStep step;
        if (!rec.contains("step")) throw TraceError("step record lacks 'step'", line_no);
        step.step_index = rec["step"].get<int>();
        if (step.step_index != static_cast<int>(trace.steps.size()))
            throw TraceError("step records out of order (expected " +
                                 std::to_string(trace.steps.size()) + ", got " +
                                 std::to_string(step.step_index) + ")",
                             line_no);
        if (rec.contains("token")) step.token_text = rec["token"].get<std::string>();
        else if (rec.contains("token_hex"))
            step.token_text = from_hex(rec["token_hex"].get<std::string>(), line_no);
        if (rec.contains("mode")) {
            const auto mode = step_mode_from_name(rec["mode"].get<std::string>());
            if (!mode) throw TraceError("unknown step mode", line_no);
            step.mode = *mode;
        }
        if (rec.contains("focus")) step.focus = rec["focus"].get<std::vector<int>>();
        if (rec.contains("gated")) step.gated = rec["gated"].get<bool>();
        if (rec.contains("injected")) step.injected = rec["injected"].get<bool>();

        const bool has_row = rec.contains("row");
        const bool has_mass = rec.contains("image_mass") && rec.contains("text_mass");
        if (!has_row && !has_mass)
            throw TraceError("step record needs either 'row' or 'image_mass'+'text_mass'",
                             line_no);
        if (has_row) {
            step.reduced_row = rec["row"].get<std::vector<double>>();
            const std::size_t expect = trace.layout.total_len() +
                                       static_cast<std::size_t>(step.step_index) + 1;
            if (step.reduced_row.size() != expect)
                throw TraceError("row length " + std::to_string(step.reduced_row.size()) +
                                     " inconsistent with step index (expected " +
                                     std::to_string(expect) + ")",
                                 line_no);
            if (rec.contains("raw"))
                step.raw_rows =
                    rec["raw"].get<std::vector<std::vector<std::vector<double>>>>();
        }
        if (has_mass) {
            step.image_mass = rec["image_mass"].get<std::vector<double>>();
            step.text_mass = rec["text_mass"].get<double>();
            if (step.image_mass->size() !=
                static_cast<std::size_t>(trace.layout.num_images()))
                throw TraceError("image_mass covers " + std::to_string(step.image_mass->size()) +
                                     " images but the header declares " +
                                     std::to_string(trace.layout.num_images()),
                                 line_no);
        }
        trace.steps.push_back(std::move(step));
    }

    if (!have_header) throw TraceError("empty trace file", line_no == 0 ? 1 : line_no);
    return trace;
}

// Shortest decimal that parses back to the same value as the full
// 9-significant-digit rendering. For the in-[0,1] masses the reports carry
// this keeps the reparse error under 1e-9 absolute.
std::string format_csv_float(double v) {
    char full[64];
    std::snprintf(full, sizeof(full), "%.9g", v);
    const double target = std::strtod(full, nullptr);
    char buf[64];
    for (int prec = 1; prec < 9; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == target) return buf;
    }
    return full;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

void write_pulse_csv(const PulseSeries& series, const AttentionTrace& trace,
                     std::ostream& out) {
    out << "step";
    for (int j = 1; j <= series.num_images; ++j) out << ",image_" << j;
    out << ",text_mass\n";
    for (std::size_t k = 0; k < series.image_mass.size(); ++k) {
        out << trace.steps[k].step_index;
        for (double m : series.image_mass[k]) out << "," << format_csv_float(m);
        out << "," << format_csv_float(series.text_mass[k]) << "\n";
    }
}

void write_bias_csv(const PositionalBiasReport& report, std::ostream& out) {
    out << "position,mean,std,n\n";
    for (const auto& row : report.rows)
        out << row.position << "," << format_csv_float(row.mean) << ","
            << format_csv_float(row.stddev) << "," << row.sample_count << "\n";
}

void write_colouring_csv(const std::vector<ColouringRecord>& records,
                         const AttentionTrace& trace, std::ostream& out) {
    out << "step,token,dominant,ratio,diffuse\n";
    for (std::size_t k = 0; k < records.size(); ++k) {
        const ColouringRecord& rec = records[k];
        out << rec.step << "," << csv_escape(trace.steps[k].token_text) << ",";
        if (rec.dominant) out << *rec.dominant;
        out << "," << format_csv_float(rec.ratio) << "," << (rec.diffuse ? 1 : 0) << "\n";
    }
}

void write_alignment_csv(const FocusAlignmentReport& report, std::ostream& out) {
    out << "block,focus,first_step,last_step,steps,alignment\n";
    for (const auto& b : report.blocks) {
        out << b.ordinal << ",";
        for (std::size_t i = 0; i < b.focus.size(); ++i)
            out << (i ? "+" : "") << "I" << b.focus[i];
        out << "," << b.first_step << "," << b.last_step << "," << b.steps_counted << ","
            << format_csv_float(b.alignment) << "\n";
    }
}

void write_plot_data_csv(const PulseSeries& series, std::ostream& out) {
    out << "step,series,mass\n";
    for (std::size_t k = 0; k < series.image_mass.size(); ++k) {
        for (int j = 1; j <= series.num_images; ++j)
            out << k << ",image_" << j << ","
                << format_csv_float(series.image_mass[k][static_cast<std::size_t>(j - 1)])
                << "\n";
        out << k << ",text," << format_csv_float(series.text_mass[k]) << "\n";
    }
}

}  // namespace pf
