#include "mbt/semantics.hpp"

#include <algorithm>
#include <cassert>

namespace mbt {

std::string_view to_string(Rule rule) {
    switch (rule) {
    case Rule::R1: return "R1";
    case Rule::R2: return "R2";
    case Rule::R3: return "R3";
    case Rule::R4: return "R4";
    case Rule::R5: return "R5";
    case Rule::R6: return "R6";
    case Rule::R7: return "R7";
    }
    return "?";
}

std::string_view to_string(ReceivePolicy policy) {
    return policy == ReceivePolicy::strict ? "strict" : "relaxed";
}

std::optional<std::pair<int, StateRef>> top(const std::vector<StateRef>& history,
                                            int machine_index) {
    for (int i = static_cast<int>(history.size()) - 1; i >= 0; --i) {
        if (history[static_cast<size_t>(i)].machine == machine_index) {
            return std::pair{i, history[static_cast<size_t>(i)]};
        }
    }
    return std::nullopt;
}

namespace {

/// Looks up the channel a (machine, event) pair participates in, if any.
struct ChannelRole {
    int channel = -1;
    bool is_send = false;
};

ChannelRole channel_role(const SystemModel& model, const std::string& machine_id,
                         const std::string& event_name) {
    for (size_t i = 0; i < model.channels.size(); ++i) {
        const ChannelBinding& c = model.channels[i];
        if (c.send_machine == machine_id && c.send_event == event_name) {
            return {static_cast<int>(i), true};
        }
        if (c.recv_machine == machine_id && c.recv_event == event_name) {
            return {static_cast<int>(i), false};
        }
    }
    return {};
}

bool call_reuse(const SystemModel& model, const std::string& event_name) {
    const CallEventAttributes* a = model.attributes_of(event_name);
    return a != nullptr && a->reuse;
}

bool call_auto_return(const SystemModel& model, const std::string& event_name) {
    const CallEventAttributes* a = model.attributes_of(event_name);
    return a == nullptr || a->auto_return;
}

} // namespace

std::vector<std::pair<StepChoice, Configuration>> enabled_single(const Configuration& cfg,
                                                                 const SystemModel& model) {
    std::vector<std::pair<StepChoice, Configuration>> out;
    const ViewStateMachine& m = model.machines[static_cast<size_t>(cfg.current.machine)];
    const int s = cfg.current.state;

    // R1: in-machine transitions.
    for (const Transition& t : m.transitions) {
        if (t.source != s) {
            continue;
        }
        Configuration next = cfg;
        next.current.state = t.target;
        ChannelRole role = channel_role(model, m.id, t.event.name);
        out.push_back({{Rule::R1, t.event, 0, role.channel, role.is_send}, std::move(next)});
    }

    // R2/R3/R4: connection edges from a connection state.
    if (m.is_connection(s)) {
        for (size_t ei = 0; ei < model.connection.edges.size(); ++ei) {
            const ConnectionEdge& e = model.connection.edges[ei];
            if (e.source_machine != m.id || e.source_state != s) {
                continue;
            }
            const int target_machine = model.machine_index(e.target_machine);
            assert(target_machine >= 0);
            if (!call_reuse(model, e.call_event.name)) {
                Configuration next = cfg;
                next.current = {target_machine, e.target_state};
                next.state_history.push_back({cfg.current.machine, m.return_of.at(s)});
                next.event_history.push_back(static_cast<int>(ei));
                out.push_back({{Rule::R2, e.call_event, 0}, std::move(next)});
            } else if (auto resumable = top(cfg.state_history, target_machine); !resumable) {
                Configuration next = cfg;
                next.current = {target_machine, e.target_state};
                next.state_history.push_back({cfg.current.machine, m.return_of.at(s)});
                next.event_history.push_back(static_cast<int>(ei));
                out.push_back({{Rule::R3, e.call_event, 0}, std::move(next)});
            } else {
                const auto [k, resumed] = *resumable;
                Configuration next;
                next.current = resumed;
                next.state_history.assign(cfg.state_history.begin(), cfg.state_history.begin() + k);
                next.event_history.assign(cfg.event_history.begin(), cfg.event_history.begin() + k);
                out.push_back({{Rule::R4, e.call_event, 0}, std::move(next)});
            }
        }
    }

    // R5: return from a final state to the suspended caller.
    if (m.is_final(s) && !cfg.state_history.empty()) {
        const int top_edge = cfg.event_history.back();
        const std::string& top_event =
            model.connection.edges[static_cast<size_t>(top_edge)].call_event.name;
        if (call_auto_return(model, top_event)) {
            Configuration next = cfg;
            next.current = next.state_history.back();
            next.state_history.pop_back();
            next.event_history.pop_back();
            out.push_back({{Rule::R5, std::nullopt, 0}, std::move(next)});
        }
    }

    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        const std::string no_event;
        const std::string& ea = a.first.event ? a.first.event->name : no_event;
        const std::string& eb = b.first.event ? b.first.event->name : no_event;
        return std::tie(a.first.rule, ea, a.second.current) <
               std::tie(b.first.rule, eb, b.second.current);
    });
    return out;
}

std::vector<std::pair<StepChoice, MultiDeviceState>> enabled_multi(const MultiDeviceState& ms,
                                                                   const SystemModel& model,
                                                                   ReceivePolicy policy) {
    std::vector<std::pair<StepChoice, MultiDeviceState>> out;
    for (size_t d = 0; d < ms.configs.size(); ++d) {
        if (ms.finished[d]) {
            continue;
        }
        for (auto& [choice, cfg] : enabled_single(ms.configs[d], model)) {
            StepChoice lifted = choice;
            lifted.device = static_cast<int>(d);
            MultiDeviceState next = ms;

            if (choice.channel >= 0 && choice.is_send) {
                lifted.rule = Rule::R6;
                next.channel_counts[static_cast<size_t>(choice.channel)] += 1;
            } else if (choice.channel >= 0) {
                // R7 premise: the matching send must be pending. Relaxed mode
                // lets the receive run ahead, leaving a debt.
                if (policy == ReceivePolicy::strict &&
                    next.channel_counts[static_cast<size_t>(choice.channel)] < 1) {
                    continue;
                }
                lifted.rule = Rule::R7;
                next.channel_counts[static_cast<size_t>(choice.channel)] -= 1;
            }

            next.configs[d] = std::move(cfg);
            next.finished[d] = is_finished(next.configs[d], model);
            out.push_back({lifted, std::move(next)});
        }
    }
    return out;
}

bool is_terminal(const Configuration& cfg, const SystemModel& model) {
    return enabled_single(cfg, model).empty();
}

bool is_finished(const Configuration& cfg, const SystemModel& model) {
    const ViewStateMachine& m = model.machines[static_cast<size_t>(cfg.current.machine)];
    return m.is_final(cfg.current.state) && is_terminal(cfg, model);
}

MultiDeviceState make_initial(const std::vector<Configuration>& entries, const SystemModel& model) {
    MultiDeviceState ms;
    ms.configs = entries;
    ms.channel_counts.assign(model.channels.size(), 0);
    ms.finished.resize(entries.size());
    for (size_t d = 0; d < entries.size(); ++d) {
        ms.finished[d] = is_finished(entries[d], model);
    }
    return ms;
}

std::vector<Configuration> entry_configurations(const SystemModel& model, const DeviceSpec& device) {
    std::vector<Configuration> out;
    for (const std::string& machine_id : device.entry_machines) {
        int mi = model.machine_index(machine_id);
        if (mi < 0) {
            continue;
        }
        for (int s : model.machines[static_cast<size_t>(mi)].initial) {
            out.push_back({{mi, s}, {}, {}});
        }
    }
    return out;
}

std::vector<std::vector<Configuration>> entry_combinations(const SystemModel& model) {
    std::vector<std::vector<Configuration>> per_device;
    for (const DeviceSpec& dev : model.devices) {
        std::vector<Configuration> entries = entry_configurations(model, dev);
        if (entries.empty()) {
            return {};
        }
        per_device.push_back(std::move(entries));
    }
    if (per_device.empty()) {
        return {};
    }

    std::vector<std::vector<Configuration>> combos;
    std::vector<size_t> pick(per_device.size(), 0);
    for (;;) {
        std::vector<Configuration> combo;
        combo.reserve(per_device.size());
        for (size_t d = 0; d < per_device.size(); ++d) {
            combo.push_back(per_device[d][pick[d]]);
        }
        combos.push_back(std::move(combo));

        size_t d = per_device.size();
        while (d > 0) {
            --d;
            if (++pick[d] < per_device[d].size()) {
                break;
            }
            pick[d] = 0;
            if (d == 0) {
                return combos;
            }
        }
    }
}

std::optional<Rule> classify_step(const Configuration& cfg, const Configuration& next,
                                  const std::optional<EventLabel>& event, const SystemModel& model) {
    const ViewStateMachine& m = model.machines[static_cast<size_t>(cfg.current.machine)];
    const int s = cfg.current.state;

    if (!event.has_value()) {
        // Only R5 has an unlabelled conclusion.
        if (m.is_final(s) && !cfg.state_history.empty() &&
            next.current == cfg.state_history.back() &&
            next.state_history ==
                std::vector<StateRef>(cfg.state_history.begin(), cfg.state_history.end() - 1) &&
            next.event_history ==
                std::vector<int>(cfg.event_history.begin(), cfg.event_history.end() - 1) &&
            call_auto_return(model,
                             model.connection.edges[static_cast<size_t>(cfg.event_history.back())]
                                 .call_event.name)) {
            return Rule::R5;
        }
        return std::nullopt;
    }

    if (event->kind != EventKind::call) {
        for (const Transition& t : m.transitions) {
            if (t.source == s && t.event == *event && next.current.machine == cfg.current.machine &&
                next.current.state == t.target && next.state_history == cfg.state_history &&
                next.event_history == cfg.event_history) {
                return Rule::R1;
            }
        }
        return std::nullopt;
    }

    if (!m.is_connection(s)) {
        return std::nullopt;
    }
    for (size_t ei = 0; ei < model.connection.edges.size(); ++ei) {
        const ConnectionEdge& e = model.connection.edges[ei];
        if (e.source_machine != m.id || e.source_state != s || e.call_event != *event) {
            continue;
        }
        const int tm = model.machine_index(e.target_machine);
        const bool reuse = call_reuse(model, e.call_event.name);
        auto resumable = top(cfg.state_history, tm);

        Configuration pushed = cfg;
        pushed.current = {tm, e.target_state};
        pushed.state_history.push_back({cfg.current.machine, m.return_of.at(s)});
        pushed.event_history.push_back(static_cast<int>(ei));
        if (next == pushed) {
            if (!reuse) return Rule::R2;
            if (!resumable) return Rule::R3;
            return std::nullopt;
        }
        if (reuse && resumable) {
            const auto [k, resumed] = *resumable;
            if (next.current == resumed &&
                next.state_history ==
                    std::vector<StateRef>(cfg.state_history.begin(), cfg.state_history.begin() + k) &&
                next.event_history ==
                    std::vector<int>(cfg.event_history.begin(), cfg.event_history.begin() + k)) {
                return Rule::R4;
            }
        }
    }
    return std::nullopt;
}

namespace {
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}
} // namespace

std::vector<std::uint8_t> encode(const MultiDeviceState& ms) {
    std::vector<std::uint8_t> out;
    put_u32(out, static_cast<std::uint32_t>(ms.configs.size()));
    for (size_t d = 0; d < ms.configs.size(); ++d) {
        const Configuration& c = ms.configs[d];
        put_u32(out, static_cast<std::uint32_t>(c.current.machine));
        put_u32(out, static_cast<std::uint32_t>(c.current.state));
        put_u32(out, static_cast<std::uint32_t>(c.state_history.size()));
        for (const StateRef& s : c.state_history) {
            put_u32(out, static_cast<std::uint32_t>(s.machine));
            put_u32(out, static_cast<std::uint32_t>(s.state));
        }
        for (int e : c.event_history) {
            put_u32(out, static_cast<std::uint32_t>(e));
        }
        out.push_back(ms.finished[d] ? 1 : 0);
    }
    put_u32(out, static_cast<std::uint32_t>(ms.channel_counts.size()));
    for (int n : ms.channel_counts) {
        put_u32(out, static_cast<std::uint32_t>(n));
    }
    return out;
}

} // namespace mbt
