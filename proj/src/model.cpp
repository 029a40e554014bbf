#include "mbt/model.hpp"

#include <algorithm>
#include <set>

namespace mbt {

std::string_view to_string(EventKind kind) {
    switch (kind) {
    case EventKind::user: return "user";
    case EventKind::system: return "system";
    case EventKind::call: return "call";
    }
    return "?";
}

int ViewStateMachine::state_index(std::string_view name) const {
    for (size_t i = 0; i < states.size(); ++i) {
        if (states[i] == name) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

namespace {
bool contains(const std::vector<int>& xs, int x) {
    return std::find(xs.begin(), xs.end(), x) != xs.end();
}
} // namespace

bool ViewStateMachine::is_initial(int s) const { return contains(initial, s); }
bool ViewStateMachine::is_connection(int s) const { return contains(connection, s); }
bool ViewStateMachine::is_final(int s) const { return contains(final_states, s); }

int SystemModel::machine_index(std::string_view id) const {
    for (size_t i = 0; i < machines.size(); ++i) {
        if (machines[i].id == id) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

const ViewStateMachine* SystemModel::machine(std::string_view id) const {
    int i = machine_index(id);
    return i < 0 ? nullptr : &machines[static_cast<size_t>(i)];
}

const CallEventAttributes* SystemModel::attributes_of(std::string_view call_event_name) const {
    for (const CallEventAttributes& a : call_attrs) {
        if (a.event_name == call_event_name) {
            return &a;
        }
    }
    return nullptr;
}

const ControlBinding* SystemModel::binding_of(std::string_view machine_id,
                                              std::string_view event_name) const {
    auto it = control_bindings.find({std::string(machine_id), std::string(event_name)});
    return it == control_bindings.end() ? nullptr : &it->second;
}

const TransitionOrigin* SystemModel::origin_of(std::string_view machine_id, int state,
                                               std::string_view event_name) const {
    auto it = origins.find({std::string(machine_id), state, std::string(event_name)});
    return it == origins.end() ? nullptr : &it->second;
}

int SystemModel::device_index(std::string_view id) const {
    for (size_t i = 0; i < devices.size(); ++i) {
        if (devices[i].id == id) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

int SystemModel::channel_index(std::string_view name) const {
    for (size_t i = 0; i < channels.size(); ++i) {
        if (channels[i].channel == name) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

std::string_view to_string(ViolationKind kind) {
    switch (kind) {
    case ViolationKind::DisjointnessViolation: return "DisjointnessViolation";
    case ViolationKind::DeterminismViolation: return "DeterminismViolation";
    case ViolationKind::FinalStateEvolves: return "FinalStateEvolves";
    case ViolationKind::MissingReturn: return "MissingReturn";
    case ViolationKind::DanglingState: return "DanglingState";
    case ViolationKind::EmptyInitial: return "EmptyInitial";
    case ViolationKind::NoExit: return "NoExit";
    case ViolationKind::DuplicateMachineId: return "DuplicateMachineId";
    case ViolationKind::ConnectionSourceViolation: return "ConnectionSourceViolation";
    case ViolationKind::ConnectionTargetViolation: return "ConnectionTargetViolation";
    case ViolationKind::AmbiguousConnectionEdge: return "AmbiguousConnectionEdge";
    case ViolationKind::MissingCallAttributes: return "MissingCallAttributes";
    case ViolationKind::DuplicateCallAttributes: return "DuplicateCallAttributes";
    case ViolationKind::CallEventKindViolation: return "CallEventKindViolation";
    case ViolationKind::ChannelViolation: return "ChannelViolation";
    case ViolationKind::UnknownDeviceMachine: return "UnknownDeviceMachine";
    case ViolationKind::DuplicateDeviceId: return "DuplicateDeviceId";
    case ViolationKind::ReturnConflict: return "ReturnConflict";
    case ViolationKind::BindError: return "BindError";
    case ViolationKind::ConfigError: return "ConfigError";
    case ViolationKind::NotSupported: return "NotSupported";
    }
    return "?";
}

std::string Violation::format() const {
    std::string out(to_string(kind));
    out += warning ? " [warning]" : "";
    if (!machine.empty()) {
        out += " machine=" + machine;
    }
    if (!detail.empty()) {
        out += ": " + detail;
    }
    return out;
}

std::vector<Violation> validate_view_machine(const ViewStateMachine& m) {
    std::vector<Violation> out;
    auto add = [&](ViolationKind kind, std::string detail, bool warning = false) {
        out.push_back({kind, warning, m.id, std::move(detail)});
    };

    auto in_range = [&](int s) { return s >= 0 && s < static_cast<int>(m.states.size()); };
    auto name_of = [&](int s) { return in_range(s) ? m.states[static_cast<size_t>(s)] : "#" + std::to_string(s); };

    for (int s : m.initial) {
        if (!in_range(s)) add(ViolationKind::DanglingState, "initial state " + name_of(s));
    }
    for (int s : m.connection) {
        if (!in_range(s)) add(ViolationKind::DanglingState, "connection state " + name_of(s));
    }
    for (int s : m.final_states) {
        if (!in_range(s)) add(ViolationKind::DanglingState, "final state " + name_of(s));
    }

    // I, C, F pairwise disjoint.
    for (int s : m.initial) {
        if (m.is_connection(s)) add(ViolationKind::DisjointnessViolation, name_of(s) + " in I and C");
        if (m.is_final(s)) add(ViolationKind::DisjointnessViolation, name_of(s) + " in I and F");
    }
    for (int s : m.connection) {
        if (m.is_final(s)) add(ViolationKind::DisjointnessViolation, name_of(s) + " in C and F");
    }

    if (m.initial.empty()) {
        add(ViolationKind::EmptyInitial, "machine has no initial state");
    }
    if (m.final_states.empty() && m.connection.empty()) {
        add(ViolationKind::NoExit, "machine has no final and no connection state", /*warning=*/true);
    }

    std::set<std::pair<int, std::string>> seen;
    for (const Transition& t : m.transitions) {
        if (!in_range(t.source) || !in_range(t.target)) {
            add(ViolationKind::DanglingState,
                "transition " + name_of(t.source) + " -" + t.event.name + "-> " + name_of(t.target));
            continue;
        }
        if (t.event.name.empty()) {
            add(ViolationKind::DeterminismViolation, "transition with empty event name from " + name_of(t.source));
        }
        if (t.event.kind == EventKind::call) {
            add(ViolationKind::CallEventKindViolation,
                "in-machine transition labelled by call event " + t.event.name);
        }
        if (m.is_final(t.source)) {
            add(ViolationKind::FinalStateEvolves,
                "final state " + name_of(t.source) + " has outgoing event " + t.event.name);
        }
        if (!seen.insert({t.source, t.event.name}).second) {
            add(ViolationKind::DeterminismViolation,
                "(" + name_of(t.source) + ", " + t.event.name + ") has more than one target");
        }
    }

    // Same event name must not appear with two different kinds in one alphabet.
    std::map<std::string, EventKind> kinds;
    for (const Transition& t : m.transitions) {
        auto [it, inserted] = kinds.insert({t.event.name, t.event.kind});
        if (!inserted && it->second != t.event.kind) {
            add(ViolationKind::DeterminismViolation,
                "event " + t.event.name + " used with two different kinds");
        }
    }

    for (int s : m.connection) {
        if (!in_range(s)) continue;
        auto it = m.return_of.find(s);
        if (it == m.return_of.end()) {
            add(ViolationKind::MissingReturn, "connection state " + name_of(s) + " has no return state");
        } else if (!in_range(it->second)) {
            add(ViolationKind::DanglingState, "return state of " + name_of(s));
        }
    }

    return out;
}

std::vector<Violation> validate_system(const SystemModel& model) {
    std::vector<Violation> out;
    auto add = [&](ViolationKind kind, std::string machine, std::string detail, bool warning = false) {
        out.push_back({kind, warning, std::move(machine), std::move(detail)});
    };

    std::set<std::string> ids;
    for (const ViewStateMachine& m : model.machines) {
        if (!ids.insert(m.id).second) {
            add(ViolationKind::DuplicateMachineId, m.id, "machine id declared twice");
        }
        auto per_machine = validate_view_machine(m);
        out.insert(out.end(), per_machine.begin(), per_machine.end());
    }

    std::set<std::pair<std::string, int>> edge_sources;
    std::map<std::pair<std::string, std::string>, std::set<std::pair<std::string, int>>> edge_targets;
    for (const ConnectionEdge& e : model.connection.edges) {
        const ViewStateMachine* src = model.machine(e.source_machine);
        const ViewStateMachine* dst = model.machine(e.target_machine);
        if (src == nullptr) {
            add(ViolationKind::ConnectionSourceViolation, e.source_machine, "unknown source machine");
        } else if (e.source_state < 0 || e.source_state >= static_cast<int>(src->states.size()) ||
                   !src->is_connection(e.source_state)) {
            add(ViolationKind::ConnectionSourceViolation, e.source_machine,
                "edge source is not a connection state");
        } else {
            edge_sources.insert({e.source_machine, e.source_state});
        }
        if (dst == nullptr) {
            add(ViolationKind::ConnectionTargetViolation, e.target_machine, "unknown target machine");
        } else if (e.target_state < 0 || e.target_state >= static_cast<int>(dst->states.size()) ||
                   !dst->is_initial(e.target_state)) {
            add(ViolationKind::ConnectionTargetViolation, e.target_machine,
                "edge target is not an initial state");
        }
        if (e.call_event.kind != EventKind::call) {
            add(ViolationKind::CallEventKindViolation, e.source_machine,
                "connection edge labelled by non-call event " + e.call_event.name);
        }
        if (model.attributes_of(e.call_event.name) == nullptr) {
            add(ViolationKind::MissingCallAttributes, e.source_machine,
                "call event " + e.call_event.name + " has no attribute record");
        }
        if (src != nullptr) {
            edge_targets[{e.source_machine, e.call_event.name}].insert(
                {e.target_machine, e.target_state});
        }
    }

    // A connection state that is the source of no edge can never fire R2-R4.
    for (const ViewStateMachine& m : model.machines) {
        for (int s : m.connection) {
            if (s >= 0 && s < static_cast<int>(m.states.size()) &&
                !edge_sources.contains({m.id, s})) {
                add(ViolationKind::ConnectionSourceViolation, m.id,
                    "connection state " + m.state_name(s) + " has no outgoing connection edge",
                    /*warning=*/true);
            }
        }
    }

    // Same (source, call event) with several targets makes replay ambiguous.
    for (const auto& [key, targets] : edge_targets) {
        if (targets.size() > 1) {
            add(ViolationKind::AmbiguousConnectionEdge, key.first,
                "call event " + key.second + " leads to " + std::to_string(targets.size()) +
                    " different targets",
                /*warning=*/true);
        }
    }

    std::set<std::string> attr_names;
    for (const CallEventAttributes& a : model.call_attrs) {
        if (!attr_names.insert(a.event_name).second) {
            add(ViolationKind::DuplicateCallAttributes, "", a.event_name + " has two attribute records");
        }
    }

    std::set<std::pair<std::string, std::string>> channel_ends;
    for (const ChannelBinding& c : model.channels) {
        const ViewStateMachine* sm = model.machine(c.send_machine);
        const ViewStateMachine* rm = model.machine(c.recv_machine);
        if (sm == nullptr || rm == nullptr) {
            add(ViolationKind::ChannelViolation, "", "channel " + c.channel + " references unknown machine");
            continue;
        }
        if (c.send_machine == c.recv_machine) {
            add(ViolationKind::ChannelViolation, c.send_machine,
                "channel " + c.channel + " sends and receives in the same machine");
        }
        auto kind_of = [](const ViewStateMachine& m, const std::string& event) -> std::optional<EventKind> {
            for (const Transition& t : m.transitions) {
                if (t.event.name == event) return t.event.kind;
            }
            return std::nullopt;
        };
        auto send_kind = kind_of(*sm, c.send_event);
        auto recv_kind = kind_of(*rm, c.recv_event);
        if (!send_kind || *send_kind != EventKind::user) {
            add(ViolationKind::ChannelViolation, c.send_machine,
                "channel " + c.channel + " send event " + c.send_event + " is not a user event");
        }
        if (!recv_kind || *recv_kind != EventKind::system) {
            add(ViolationKind::ChannelViolation, c.recv_machine,
                "channel " + c.channel + " receive event " + c.recv_event + " is not a system event");
        }
        if (!channel_ends.insert({c.send_machine, c.send_event}).second) {
            add(ViolationKind::ChannelViolation, c.send_machine,
                "event " + c.send_event + " appears in more than one binding");
        }
        if (!channel_ends.insert({c.recv_machine, c.recv_event}).second) {
            add(ViolationKind::ChannelViolation, c.recv_machine,
                "event " + c.recv_event + " appears in more than one binding");
        }
    }

    std::set<std::string> device_ids;
    for (const DeviceSpec& d : model.devices) {
        if (!device_ids.insert(d.id).second) {
            add(ViolationKind::DuplicateDeviceId, "", "device id " + d.id + " declared twice");
        }
        if (d.entry_machines.empty()) {
            add(ViolationKind::ConfigError, "", "device " + d.id + " has no entry machine");
        }
        for (const std::string& m : d.entry_machines) {
            if (model.machine(m) == nullptr) {
                add(ViolationKind::UnknownDeviceMachine, m, "device " + d.id + " references unknown machine");
            }
        }
    }

    return out;
}

bool has_errors(const std::vector<Violation>& violations) {
    return std::any_of(violations.begin(), violations.end(),
                       [](const Violation& v) { return !v.warning; });
}

} // namespace mbt
