#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mbt/model.hpp"

namespace mbt {

/// Structural defect in a model or controls document: missing required
/// attribute, bad enum value, duplicate ID. Distinct from semantic
/// validation, which returns Violation lists instead of throwing.
class SchemaError : public std::runtime_error {
public:
    SchemaError(const std::string& msg, int line = 0)
        : std::runtime_error(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
          line_(line) {}

    int line() const { return line_; }

private:
    int line_;
};

/// A through/state/app name that resolves to nothing in the document.
class DanglingReference : public SchemaError {
public:
    using SchemaError::SchemaError;
};

struct TransitionDef {
    int id = 0;
    std::string event;
    std::string prev;    // "" marks an entry transition from the initial state
    std::string next;    // "" marks an exit to the final state
    std::string through; // callee view or state machine, set iff type != Simple
    std::string type = "Simple"; // Simple | View | StateMachine
    std::string kind = "user";   // user | system
    std::string channel;         // message channel name, optional
    std::string action;          // control action override, optional
    std::optional<bool> reuse;
    std::optional<bool> auto_return;
    std::vector<std::pair<std::string, std::string>> extra; // unknown attrs, kept verbatim
    int line = 0;

    friend bool operator==(const TransitionDef&, const TransitionDef&) = default;
};

struct StateMachineDef {
    std::string name;
    bool entry = false;
    std::vector<std::string> states;
    std::vector<TransitionDef> transitions;
    std::vector<std::pair<std::string, std::string>> extra;
    int line = 0;

    friend bool operator==(const StateMachineDef&, const StateMachineDef&) = default;
};

struct ViewDef {
    std::string name;
    std::string controls_file;
    bool entry = false;
    std::vector<StateMachineDef> machines;
    std::vector<std::pair<std::string, std::string>> extra;
    int line = 0;

    friend bool operator==(const ViewDef&, const ViewDef&) = default;
};

struct ApplicationDef {
    std::string name;
    std::string package;
    std::vector<ViewDef> views;
    std::vector<std::pair<std::string, std::string>> extra;
    int line = 0;

    friend bool operator==(const ApplicationDef&, const ApplicationDef&) = default;
};

struct DeviceDef {
    std::string id;
    std::vector<std::string> apps;
    std::vector<std::pair<std::string, std::string>> extra;
    int line = 0;

    friend bool operator==(const DeviceDef&, const DeviceDef&) = default;
};

struct ModelDocument {
    std::vector<ApplicationDef> applications;
    std::vector<DeviceDef> devices;

    friend bool operator==(const ModelDocument&, const ModelDocument&) = default;
};

/// One annotated control from a UIX hierarchy dump. `group` is empty for
/// nodes that were not assigned to a control group.
struct ControlNode {
    std::string group;
    std::string class_name;
    int index = 0;
    std::string text;
    std::string resource_id;
    bool clickable = false;
    bool long_clickable = false;
    bool scrollable = false;
    bool is_fixed_value = false;
    std::string pattern_or_value;
    std::vector<ControlNode> children;
};

struct ControlDefinition {
    ControlNode root;

    /// First node (document order) whose group matches; an exact pass runs
    /// before a case-insensitive one.
    const ControlNode* find_group(std::string_view group) const;
    std::vector<const ControlNode*> grouped_nodes() const;
};

/// Parses a model document. XML follows the canonical dialect (root Model
/// with Applications/Devices sections, or a bare Application); a '{' first
/// byte switches to the equivalent JSON mirror. Reference checking runs after
/// the structural parse, so a returned document has resolvable through/app
/// names.
ModelDocument parse_model(std::string_view text);

/// Canonical XML serialization; parse_model(serialize_model(d)) is
/// structurally equal to d, and serialize is a fixpoint on its own output.
std::string serialize_model(const ModelDocument& doc);

/// JSON mirror with the same field names as the XML attributes.
std::string serialize_model_json(const ModelDocument& doc);

ControlDefinition parse_controls(std::string_view text);

/// Content equality modulo source positions: documents loaded from XML and
/// from the JSON mirror compare equal when they describe the same model.
bool document_equal(const ModelDocument& a, const ModelDocument& b);

struct BuildResult {
    SystemModel model;
    std::vector<Violation> violations; // build findings plus validate_system output
};

/// Lowers the document to core-model types. Machines get ids
/// App.View.Machine; prev=""/next="" become one fresh initial/final state per
/// machine; View/StateMachine transitions become connection edges labelled by
/// a call event named event#through whose return state is the transition's
/// next; call attributes come from the reuse/autoReturn transition
/// attributes, defaults reuse=false autoReturn=true; kind/channel attributes
/// feed event kinds and channel bindings; controls (keyed by view name) bind
/// events to (group, action, selector).
///
/// `device_assignments` overrides the document's Devices section; when both
/// are empty a single device dev0 running every application is assumed.
BuildResult build_system_model(const ModelDocument& doc,
                               const std::map<std::string, ControlDefinition>& controls = {},
                               const std::vector<DeviceDef>& device_assignments = {});

/// FNV-1a 64 over the canonical serialization, as 16 hex digits.
std::string model_hash(const ModelDocument& doc);

} // namespace mbt
