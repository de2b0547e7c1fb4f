#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>

#include "pf/analytics.hpp"

namespace pf {

// Trace files are line-delimited UTF-8 JSON records (".trace"): one header
// record, then one record per decode step, strictly ordered. Doubles are
// written in shortest-round-trip decimal, so read(write(x)) is bit-exact.
// Field names and the record variants are documented in docs/trace_format.md.
inline constexpr int kTraceSchemaMajor = 1;
inline constexpr int kTraceSchemaMinor = 0;

class TraceError : public std::runtime_error {
public:
    TraceError(const std::string& msg, int line)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// mass_only drops reduced rows and writes precomputed per-image/text masses
// instead; raw per-(layer,head) rows are written only when the steps carry
// them. Warns on stderr past 1 GB.
void write_trace(const AttentionTrace& trace, const std::string& path, bool mass_only = false);

// Throws TraceError (with line number) on malformed records, unsupported
// schema versions, or rows inconsistent with the declared layout. Unknown
// fields of newer 1.x minor versions are ignored.
AttentionTrace read_trace(const std::string& path);

// Report CSV floats: shortest decimal preserving the 9-significant-digit
// value (for the in-[0,1] masses these reports carry, reparse error is
// under 1e-9 absolute).
std::string format_csv_float(double v);

// RFC 4180 quoting for fields containing commas, quotes or newlines.
std::string csv_escape(const std::string& field);

void write_pulse_csv(const PulseSeries& series, const AttentionTrace& trace, std::ostream& out);
void write_bias_csv(const PositionalBiasReport& report, std::ostream& out);
void write_colouring_csv(const std::vector<ColouringRecord>& records,
                         const AttentionTrace& trace, std::ostream& out);
void write_alignment_csv(const FocusAlignmentReport& report, std::ostream& out);
// Long-format pulse data (step,series,mass) for plotting.
void write_plot_data_csv(const PulseSeries& series, std::ostream& out);

}  // namespace pf
