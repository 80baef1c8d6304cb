// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pbt/hparam.hpp"

namespace pbt {

using CheckpointId = std::uint64_t;

/// One trained-and-evaluated (or pending) model state.
struct CheckpointRecord {
    CheckpointId id = 0;
    int generation = 0;
    std::optional<CheckpointId> parent;
    HyperparamVector hparams;              // values used to train this checkpoint
    std::optional<double> loss;            // nullopt while pending; +inf for failed steps
    std::map<std::string, double> metrics; // secondary metrics, e.g. a reporting split
    bool initiated = false;
    std::string state_ref;                 // empty when no blob exists
    std::uint64_t seq = 0;                 // creation order
    int worker = -1;                       // -1 for seeds
    std::uint64_t draws = 0;               // creator's stream position at creation

    bool evaluated() const { return loss.has_value(); }
    bool viable() const { return loss.has_value() && std::isfinite(*loss); }

    friend bool operator==(const CheckpointRecord&, const CheckpointRecord&) = default;
};

class LogFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw LogFormatError("bad number '" + std::string(s) + "'");
    return v;
}

template <typename Int>
Int parse_integer(std::string_view s) {
    Int v{};
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw LogFormatError("bad integer '" + std::string(s) + "'");
    return v;
}

namespace detail {

inline std::string encode_map(const std::map<std::string, double>& m) {
    std::string out;
    for (const auto& [k, v] : m) {
        if (!out.empty()) out += ',';
        out += k;
        out += ':';
        out += format_number(v);
    }
    return out;
}

inline std::map<std::string, double> decode_map(std::string_view s) {
    std::map<std::string, double> m;
    while (!s.empty()) {
        auto comma = s.find(',');
        auto item = s.substr(0, comma);
        auto colon = item.find(':');
        if (colon == std::string_view::npos) throw LogFormatError("bad map entry '" + std::string(item) + "'");
        m[std::string(item.substr(0, colon))] = parse_number(item.substr(colon + 1));
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
    }
    return m;
}

}  // namespace detail

/// Single-line key=value encoding, without the trailing newline. Field order is fixed.
inline std::string encode_record(const CheckpointRecord& r) {
    std::string out;
    out.reserve(160);
    out += "id=" + std::to_string(r.id);
    out += " gen=" + std::to_string(r.generation);
    out += " parent=" + (r.parent ? std::to_string(*r.parent) : std::string("-"));
    out += " loss=" + (r.loss ? format_number(*r.loss) : std::string("pending"));
    out += std::string(" initiated=") + (r.initiated ? "1" : "0");
    out += " state_ref=" + (r.state_ref.empty() ? std::string("-") : r.state_ref);
    out += " seq=" + std::to_string(r.seq);
    out += " worker=" + std::to_string(r.worker);
    out += " draws=" + std::to_string(r.draws);
    out += " hparams=" + detail::encode_map(r.hparams.values());
    out += " metrics=" + detail::encode_map(r.metrics);
    return out;
}

inline CheckpointRecord decode_record(std::string_view line) {
    CheckpointRecord r;
    unsigned seen = 0;
    constexpr unsigned kRequired = (1u << 11) - 1;
    static constexpr std::string_view kFields[] = {"id",  "gen",    "parent", "loss",    "initiated", "state_ref",
                                                   "seq", "worker", "draws",  "hparams", "metrics"};
    while (!line.empty()) {
        auto space = line.find(' ');
        auto token = line.substr(0, space);
        auto eq = token.find('=');
        if (eq == std::string_view::npos) throw LogFormatError("token without '=': '" + std::string(token) + "'");
        auto key = token.substr(0, eq);
        auto value = token.substr(eq + 1);
        unsigned bit = 0;
        for (; bit < 11; ++bit)
            if (kFields[bit] == key) break;
        if (bit == 11) throw LogFormatError("unknown field '" + std::string(key) + "'");
        if (seen & (1u << bit)) throw LogFormatError("duplicate field '" + std::string(key) + "'");
        seen |= 1u << bit;
        switch (bit) {
            case 0: r.id = parse_integer<CheckpointId>(value); break;
            case 1: r.generation = parse_integer<int>(value); break;
            case 2:
                if (value != "-") r.parent = parse_integer<CheckpointId>(value);
                break;
            case 3:
                if (value != "pending") r.loss = parse_number(value);
                break;
            case 4:
                if (value != "0" && value != "1") throw LogFormatError("bad initiated flag");
                r.initiated = value == "1";
                break;
            case 5:
                if (value != "-") r.state_ref = std::string(value);
                break;
            case 6: r.seq = parse_integer<std::uint64_t>(value); break;
            case 7: r.worker = parse_integer<int>(value); break;
            case 8: r.draws = parse_integer<std::uint64_t>(value); break;
            case 9: r.hparams = HyperparamVector(detail::decode_map(value)); break;
            case 10: r.metrics = detail::decode_map(value); break;
        }
        if (space == std::string_view::npos) break;
        line.remove_prefix(space + 1);
    }
    if (seen != kRequired) throw LogFormatError("record is missing fields");
    if (r.generation < 0) throw LogFormatError("negative generation");
    return r;
}

}  // namespace pbt
