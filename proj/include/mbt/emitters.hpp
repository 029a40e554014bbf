#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mbt/explorer.hpp"
#include "mbt/model.hpp"
#include "mbt/semantics.hpp"

namespace mbt {

/// Emission failure: an event without a usable control binding, an action
/// outside the vocabulary, or a model shape the PROMELA encoding cannot
/// express (cyclic call graph).
class EmitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-step trace annotation recovered by replaying a step sequence against
/// the model: which machine moved and between which states.
struct StepAnnotation {
    int device = 0;
    std::string machine;
    int source = -1;
    int target = -1;
};

/// Replays `steps` from every entry-configuration combination, matching each
/// step on (device id, rule, event name); backtracks across ambiguous edges.
/// Returns the annotations of the first completing match, or nullopt when the
/// sequence is not a trace of the model.
std::optional<std::vector<StepAnnotation>> annotate_trace(const std::vector<TestStep>& steps,
                                                          const SystemModel& model,
                                                          ReceivePolicy policy);

struct ActionScriptStep {
    std::string device_id;
    std::string action; // click, swipe, setText, waitEvent, back
    std::string control_group;
    std::string classname;
    int index = 0;
    std::string text;
    std::string parameter;
    std::string event; // model event name, empty for returns
    std::string rule;  // R1..R7, or R5 for returns
};

struct ActionScript {
    std::string model_hash;
    int bound = 0;
    std::string policy;
    std::vector<std::string> devices;
    std::vector<ActionScriptStep> steps;
};

ActionScript make_action_script(const TestCase& tc, const SystemModel& model,
                                const ExplorationBound& bound, ReceivePolicy policy);

/// Parses the JSON form emitted by emit_script. Throws EmitError on schema
/// defects.
ActionScript parse_action_script(std::string_view text);

/// True when the script's step sequence replays against the model from some
/// entry combination under the script's own receive policy.
bool replay_script(const ActionScript& script, const SystemModel& model,
                   std::string* error = nullptr);

enum class ScriptFormat { json, uiauto };

std::string emit_script(const TestCase& tc, const SystemModel& model, ScriptFormat format,
                        const ExplorationBound& bound, ReceivePolicy policy);

/// Self-contained SPIN-compatible model: Backstack typedef with a
/// currentState alias to the stack top, one inline per state machine (one
/// do-loop branch per transition), view and per-device app inlines, one
/// active proctype per device, and a traceCloser that prints the recorded
/// trace once every device finished and then fails an assert so each
/// completed trace becomes a replayable error trail. Receive semantics are
/// strict; reuse/autoReturn other than the defaults are noted as comments
/// only.
std::string emit_promela(const SystemModel& model, const ExplorationBound& bound);

enum class ReportFormat { text, csv, json };

struct GenerationReport {
    int devices = 0;
    std::size_t backstack = 0; // deepest observed state history
    int transitions = 0;       // per-device bound
    std::size_t test_cases = 0;
    double time_s = 0.0;
    std::size_t states = 0;
    std::size_t state_size_b = 0;
    double memory_mb = 0.0;
    std::size_t truncated_flows = 0;
    std::string policy;
    bool reduced = false;
    bool cap_hit = false;
};

GenerationReport make_report(const ExplorationResult& result, const SystemModel& model,
                             const ExplorationBound& bound, ReceivePolicy policy, bool reduced,
                             double seconds);

std::string emit_report(const GenerationReport& report, ReportFormat format);

} // namespace mbt
