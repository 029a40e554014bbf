#pragma once

#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mbt/explorer.hpp"
#include "oracle.hpp"
#include "random_models.hpp"

namespace support {

/// Common shape for explorer and oracle output so the two can be compared as
/// sets, ignoring each side's internal ordering.
struct NormCase {
    std::vector<std::tuple<std::string, std::string, std::string>> steps; // device, event, rule
    bool complete = false;
    bool truncated = false;

    friend auto operator<=>(const NormCase&, const NormCase&) = default;
};

inline std::set<NormCase> normalize(const mbt::ExplorationResult& r) {
    std::set<NormCase> out;
    for (const mbt::TestCase& tc : r.cases) {
        NormCase n;
        n.complete = tc.complete;
        n.truncated = tc.truncated;
        for (const mbt::TestStep& s : tc.steps) {
            n.steps.emplace_back(s.device, s.event ? s.event->name : std::string(),
                                 std::string(mbt::to_string(s.rule)));
        }
        out.insert(std::move(n));
    }
    return out;
}

inline std::set<NormCase> normalize(const std::vector<oracle::Case>& cases) {
    std::set<NormCase> out;
    for (const oracle::Case& c : cases) {
        NormCase n;
        n.complete = c.complete;
        n.truncated = c.truncated;
        for (const oracle::Step& s : c.steps) {
            n.steps.emplace_back(s.device, s.event, s.rule);
        }
        out.insert(std::move(n));
    }
    return out;
}

inline std::string to_string(const NormCase& c) {
    std::string out = "[";
    for (size_t i = 0; i < c.steps.size(); ++i) {
        if (i > 0) out += " ";
        const auto& [device, event, rule] = c.steps[i];
        out += device + ":" + (event.empty() ? "(back)" : event) + "/" + rule;
    }
    out += c.complete ? "] complete" : "]";
    if (c.truncated) out += " truncated";
    return out;
}

/// First few entries present in `a` but not `b`, for failure output.
inline std::string diff(const std::set<NormCase>& a, const std::set<NormCase>& b, size_t limit = 3) {
    std::string out;
    size_t shown = 0;
    for (const NormCase& c : a) {
        if (!b.contains(c)) {
            out += "  " + to_string(c) + "\n";
            if (++shown >= limit) break;
        }
    }
    return out;
}

inline mbt::ExplorationBound bound_of(const testgen::RandomCase& rc) {
    mbt::ExplorationBound b;
    b.max_transitions_per_device = rc.bound;
    b.emit_truncated = rc.emit_truncated;
    b.require_all_finished = rc.require_all_finished;
    return b;
}

inline oracle::Options oracle_options(const testgen::RandomCase& rc) {
    oracle::Options o;
    o.bound = rc.bound;
    o.relaxed = rc.relaxed;
    o.emit_truncated = rc.emit_truncated;
    o.require_all_finished = rc.require_all_finished;
    return o;
}

} // namespace support
