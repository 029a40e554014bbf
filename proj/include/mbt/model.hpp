#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mbt {

enum class EventKind { user, system, call };

std::string_view to_string(EventKind kind);

/// A transition label. `name` is unique within the owning machine's alphabet;
/// call events label connection edges only and never in-machine transitions.
struct EventLabel {
    std::string name;
    EventKind kind = EventKind::user;
    std::vector<std::pair<std::string, std::string>> params;

    friend auto operator<=>(const EventLabel&, const EventLabel&) = default;
};

/// In-machine transition; states are indices into the owning machine.
struct Transition {
    int source = -1;
    EventLabel event;
    int target = -1;
};

/// A deterministic state machine modeling user interaction with one screen.
///
/// Initial, connection and final state sets are mutually disjoint. Final
/// states have no outgoing transitions. Every connection state has a return
/// state (the state the machine resumes in after a called view finishes).
struct ViewStateMachine {
    std::string id;
    std::vector<std::string> states;
    std::vector<int> initial;
    std::vector<int> connection;
    std::vector<int> final_states;
    std::vector<Transition> transitions;
    std::map<int, int> return_of;

    int state_index(std::string_view name) const;
    const std::string& state_name(int index) const { return states[static_cast<size_t>(index)]; }
    bool is_initial(int s) const;
    bool is_connection(int s) const;
    bool is_final(int s) const;
};

/// One edge of the connection relation: from a connection state of
/// `source_machine` to an initial state of `target_machine`, labelled by a
/// call event. Source and target machine may coincide.
struct ConnectionEdge {
    std::string source_machine;
    int source_state = -1;
    EventLabel call_event;
    std::string target_machine;
    int target_state = -1;
};

struct ConnectionRelation {
    std::vector<ConnectionEdge> edges;
};

struct CallEventAttributes {
    std::string event_name; // call event name; one record per distinct call event
    bool reuse = false;
    bool auto_return = true;
};

/// Pairs a user event (the send side) with a system event (the receive side)
/// of a cross-device message channel. Events are machine-qualified since
/// event names are only unique per machine.
struct ChannelBinding {
    std::string channel;
    std::string send_machine;
    std::string send_event;
    std::string recv_machine;
    std::string recv_event;
};

/// How one event is realized on the UI: the control group it acts on, the
/// action performed, selector fields for locating a concrete control, and an
/// optional fixed input value.
struct ControlBinding {
    std::string control_group;
    std::string action; // click, swipe, setText, waitEvent, back
    std::string class_name;
    int index = 0;
    std::string text;
    std::string parameter;
};

struct DeviceSpec {
    std::string id;
    std::vector<std::string> entry_machines;
};

/// Source location of a lowered transition or connection edge, kept so script
/// and PROMELA emitters can name things after the authored model.
struct TransitionOrigin {
    std::string app;
    std::string view;
    int id = 0;
};

struct MachineMeta {
    std::string app;
    std::string view;
    std::string package;
    std::string controls_file;
};

struct SystemModel {
    std::vector<ViewStateMachine> machines;
    ConnectionRelation connection;
    std::vector<CallEventAttributes> call_attrs;
    std::vector<DeviceSpec> devices;
    std::vector<ChannelBinding> channels;

    /// Keyed by (machine id, event name). Call events are bound under their
    /// base event name (the part before '#').
    std::map<std::pair<std::string, std::string>, ControlBinding> control_bindings;
    std::map<std::tuple<std::string, int, std::string>, TransitionOrigin> origins;
    std::map<std::string, MachineMeta> machine_meta;
    std::string model_hash;

    int machine_index(std::string_view id) const;
    const ViewStateMachine* machine(std::string_view id) const;
    const CallEventAttributes* attributes_of(std::string_view call_event_name) const;
    const ControlBinding* binding_of(std::string_view machine_id, std::string_view event_name) const;
    const TransitionOrigin* origin_of(std::string_view machine_id, int state,
                                      std::string_view event_name) const;
    int device_index(std::string_view id) const;
    int channel_index(std::string_view name) const;
};

enum class ViolationKind {
    DisjointnessViolation,
    DeterminismViolation,
    FinalStateEvolves,
    MissingReturn,
    DanglingState,
    EmptyInitial,
    NoExit,
    DuplicateMachineId,
    ConnectionSourceViolation,
    ConnectionTargetViolation,
    AmbiguousConnectionEdge,
    MissingCallAttributes,
    DuplicateCallAttributes,
    CallEventKindViolation,
    ChannelViolation,
    UnknownDeviceMachine,
    DuplicateDeviceId,
    ReturnConflict,
    BindError,
    ConfigError,
    NotSupported,
};

std::string_view to_string(ViolationKind kind);

/// A validation finding. Violations are data, not failures: validators return
/// every finding instead of stopping at the first.
struct Violation {
    ViolationKind kind;
    bool warning = false;
    std::string machine; // offending machine id, empty for model-level findings
    std::string detail;

    std::string format() const;
};

/// Checks every ViewStateMachine invariant; empty result means the machine is
/// well formed. `NoExit` (no final and no connection state) is a warning.
std::vector<Violation> validate_view_machine(const ViewStateMachine& m);

/// Validates the whole model: per-machine checks plus connection-edge
/// classification, call-attribute coverage, channel well-formedness and
/// device assignments.
std::vector<Violation> validate_system(const SystemModel& model);

bool has_errors(const std::vector<Violation>& violations);

} // namespace mbt
