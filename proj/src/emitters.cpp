#include "mbt/emitters.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace mbt {
namespace {

using nlohmann::json;

std::string base_event(const std::string& name) {
    const auto pos = name.find('#');
    return pos == std::string::npos ? name : name.substr(0, pos);
}

std::string through_part(const std::string& name) {
    const auto pos = name.find('#');
    return pos == std::string::npos ? std::string() : name.substr(pos + 1);
}

std::optional<Rule> rule_from_string(std::string_view s) {
    static constexpr Rule all[] = {Rule::R1, Rule::R2, Rule::R3, Rule::R4,
                                   Rule::R5, Rule::R6, Rule::R7};
    for (Rule r : all) {
        if (to_string(r) == s) {
            return r;
        }
    }
    return std::nullopt;
}

const std::set<std::string>& action_vocabulary() {
    static const std::set<std::string> vocab{"click", "swipe", "setText", "waitEvent", "back"};
    return vocab;
}

/// What a replayed step must look like: device id, rule tag and event name
/// (empty for returns). Machine determinism makes matches near-unique, so the
/// backtracking below rarely backtracks.
struct Matcher {
    std::string device;
    Rule rule = Rule::R1;
    std::string event;
};

bool matches(const StepChoice& choice, const std::vector<std::string>& device_names,
             const Matcher& want) {
    if (choice.rule != want.rule) {
        return false;
    }
    if (device_names[static_cast<size_t>(choice.device)] != want.device) {
        return false;
    }
    const std::string ev = choice.event ? choice.event->name : std::string();
    return ev == want.event;
}

struct ReplayEngine {
    const SystemModel& model;
    ReceivePolicy policy;
    std::vector<std::string> device_names;
    std::vector<Matcher> want;
    std::vector<StepAnnotation> annotations;

    bool run() {
        annotations.assign(want.size(), {});
        if (want.empty()) {
            return true;
        }
        for (const std::vector<Configuration>& entries : entry_combinations(model)) {
            if (search(make_initial(entries, model), 0)) {
                return true;
            }
        }
        return false;
    }

    bool search(const MultiDeviceState& ms, size_t i) {
        if (i == want.size()) {
            return true;
        }
        for (auto& [choice, next] : enabled_multi(ms, model, policy)) {
            if (!matches(choice, device_names, want[i])) {
                continue;
            }
            annotations[i] = annotate(choice, ms);
            if (search(next, i + 1)) {
                return true;
            }
        }
        return false;
    }

    StepAnnotation annotate(const StepChoice& choice, const MultiDeviceState& before) const {
        StepAnnotation a;
        a.device = choice.device;
        const Configuration& pre = before.configs[static_cast<size_t>(choice.device)];
        const ViewStateMachine& m = model.machines[static_cast<size_t>(pre.current.machine)];
        a.machine = m.id;
        a.source = pre.current.state;
        switch (choice.rule) {
        case Rule::R1:
        case Rule::R6:
        case Rule::R7: {
            for (const Transition& t : m.transitions) {
                if (t.source == a.source && choice.event && t.event.name == choice.event->name) {
                    a.target = t.target;
                    break;
                }
            }
            break;
        }
        case Rule::R2:
        case Rule::R3:
        case Rule::R4: {
            // The authored "next" of a call transition is the state the
            // caller resumes in.
            auto it = m.return_of.find(a.source);
            a.target = it == m.return_of.end() ? -1 : it->second;
            break;
        }
        case Rule::R5:
            a.target = -1;
            break;
        }
        return a;
    }
};

ReplayEngine make_engine(const SystemModel& model, ReceivePolicy policy) {
    ReplayEngine engine{model, policy, {}, {}, {}};
    for (const DeviceSpec& d : model.devices) {
        engine.device_names.push_back(d.id);
    }
    return engine;
}

json script_to_json(const ActionScript& script) {
    json steps = json::array();
    for (const ActionScriptStep& st : script.steps) {
        steps.push_back(json{
            {"deviceId", st.device_id},
            {"action", st.action},
            {"controlGroup", st.control_group},
            {"selector", json{{"classname", st.classname}, {"index", st.index}, {"text", st.text}}},
            {"parameter", st.parameter},
            {"event", st.event},
            {"rule", st.rule},
        });
    }
    return json{
        {"header", json{{"modelHash", script.model_hash},
                        {"bound", script.bound},
                        {"policy", script.policy},
                        {"devices", script.devices}}},
        {"steps", steps},
    };
}

} // namespace

std::optional<std::vector<StepAnnotation>> annotate_trace(const std::vector<TestStep>& steps,
                                                          const SystemModel& model,
                                                          ReceivePolicy policy) {
    ReplayEngine engine = make_engine(model, policy);
    for (const TestStep& s : steps) {
        engine.want.push_back({s.device, s.rule, s.event ? s.event->name : std::string()});
    }
    if (engine.run()) {
        return engine.annotations;
    }
    return std::nullopt;
}

ActionScript make_action_script(const TestCase& tc, const SystemModel& model,
                                const ExplorationBound& bound, ReceivePolicy policy) {
    ActionScript script;
    script.model_hash = model.model_hash;
    script.bound = bound.max_transitions_per_device;
    script.policy = std::string(to_string(policy));
    for (const DeviceSpec& d : model.devices) {
        script.devices.push_back(d.id);
    }

    auto ann = annotate_trace(tc.steps, model, policy);
    if (!ann) {
        throw EmitError("test case does not replay against the model");
    }

    for (size_t i = 0; i < tc.steps.size(); ++i) {
        const TestStep& step = tc.steps[i];
        ActionScriptStep st;
        st.device_id = step.device;
        st.rule = std::string(to_string(step.rule));
        if (step.rule == Rule::R5) {
            st.action = "back";
        } else {
            st.event = step.event->name;
            const std::string base = base_event(st.event);
            st.control_group = base;
            const ControlBinding* b = model.binding_of((*ann)[i].machine, base);
            if (b != nullptr) {
                if (!action_vocabulary().contains(b->action)) {
                    throw EmitError("BindError: action '" + b->action + "' bound to event " +
                                    base + " is outside the vocabulary");
                }
                st.action = b->action;
                st.control_group = b->control_group;
                st.classname = b->class_name;
                st.index = b->index;
                st.text = b->text;
                st.parameter = b->parameter;
            } else if (step.event->kind == EventKind::system) {
                st.action = "waitEvent";
            } else {
                st.action = "click";
            }
            if (st.action == "waitEvent" && st.parameter.empty() && step.channel >= 0) {
                st.parameter = model.channels[static_cast<size_t>(step.channel)].channel;
            }
        }
        script.steps.push_back(std::move(st));
    }
    return script;
}

ActionScript parse_action_script(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw EmitError("action script is not valid JSON");
    }
    try {
        ActionScript script;
        const json& h = j.at("header");
        script.model_hash = h.value("modelHash", std::string());
        script.bound = h.value("bound", 0);
        script.policy = h.value("policy", std::string("strict"));
        if (h.contains("devices")) {
            for (const json& d : h.at("devices")) {
                script.devices.push_back(d.get<std::string>());
            }
        }
        for (const json& e : j.at("steps")) {
            ActionScriptStep st;
            st.device_id = e.at("deviceId").get<std::string>();
            st.action = e.at("action").get<std::string>();
            st.control_group = e.value("controlGroup", std::string());
            if (e.contains("selector")) {
                const json& sel = e.at("selector");
                st.classname = sel.value("classname", std::string());
                st.index = sel.value("index", 0);
                st.text = sel.value("text", std::string());
            }
            st.parameter = e.value("parameter", std::string());
            st.event = e.value("event", std::string());
            st.rule = e.at("rule").get<std::string>();
            script.steps.push_back(std::move(st));
        }
        return script;
    } catch (const json::exception& e) {
        throw EmitError(std::string("action script schema: ") + e.what());
    }
}

bool replay_script(const ActionScript& script, const SystemModel& model, std::string* error) {
    auto fail = [&](std::string msg) {
        if (error != nullptr) {
            *error = std::move(msg);
        }
        return false;
    };

    if (!script.model_hash.empty() && !model.model_hash.empty() &&
        script.model_hash != model.model_hash) {
        return fail("model hash mismatch: script has " + script.model_hash + ", model has " +
                    model.model_hash);
    }
    ReceivePolicy policy;
    if (script.policy == "strict") {
        policy = ReceivePolicy::strict;
    } else if (script.policy == "relaxed") {
        policy = ReceivePolicy::relaxed;
    } else {
        return fail("unknown policy '" + script.policy + "'");
    }

    ReplayEngine engine = make_engine(model, policy);
    for (size_t i = 0; i < script.steps.size(); ++i) {
        const ActionScriptStep& st = script.steps[i];
        std::optional<Rule> rule = rule_from_string(st.rule);
        if (!rule) {
            return fail("step " + std::to_string(i + 1) + ": unknown rule '" + st.rule + "'");
        }
        engine.want.push_back({st.device_id, *rule, st.event});
    }
    if (!engine.run()) {
        return fail("step sequence is not a trace of the model");
    }
    if (error != nullptr) {
        error->clear();
    }
    return true;
}

namespace {

std::string java_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\\' || c == '"') {
            out += '\\';
        }
        out += c;
    }
    return out;
}

std::string alnum_only(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            out += c;
        }
    }
    return out.empty() ? std::string("X") : out;
}

std::string selector_chain(const ActionScriptStep& st) {
    std::string sel = "new UiSelector()";
    if (!st.classname.empty()) {
        sel += ".className(\"" + java_escape(st.classname) + "\")";
    }
    sel += ".index(" + std::to_string(st.index) + ")";
    if (!st.text.empty()) {
        sel += ".textContains(\"" + java_escape(st.text) + "\")";
    }
    return sel;
}

std::string emit_uiauto(const TestCase& tc, const SystemModel& model,
                        const ExplorationBound& bound, ReceivePolicy policy) {
    auto ann = annotate_trace(tc.steps, model, policy);
    if (!ann) {
        throw EmitError("test case does not replay against the model");
    }
    const ActionScript script = make_action_script(tc, model, bound, policy);

    struct Method {
        std::string name;
        std::string comment;
        std::vector<std::string> body;
        bool uses_ui_object = false;
    };
    std::vector<std::vector<Method>> per_device(model.devices.size());
    std::vector<std::pair<size_t, size_t>> order;
    std::map<std::string, int> name_counts;

    for (size_t i = 0; i < tc.steps.size(); ++i) {
        const TestStep& step = tc.steps[i];
        const StepAnnotation& a = (*ann)[i];
        const ActionScriptStep& st = script.steps[i];
        const ViewStateMachine* vm = model.machine(a.machine);
        auto meta = model.machine_meta.find(a.machine);
        const std::string app =
            meta != model.machine_meta.end() ? alnum_only(meta->second.app) : std::string("App");
        const std::string view = meta != model.machine_meta.end() ? meta->second.view : a.machine;

        Method method;
        if (step.rule == Rule::R5) {
            method.name = "Test" + app + "Back" + std::to_string(i + 1);
            method.comment = "// Return from " + a.machine;
            method.body = {"getUiDevice().pressBack();"};
        } else {
            const std::string& ev = step.event->name;
            const std::string base = base_event(ev);
            const ControlBinding* b = model.binding_of(a.machine, base);
            if (b == nullptr) {
                throw EmitError("BindError: event " + base + " of machine " + a.machine +
                                " has no control binding");
            }
            const TransitionOrigin* origin = model.origin_of(a.machine, a.source, ev);
            const int id = origin != nullptr ? origin->id : static_cast<int>(i + 1);
            method.name = "Test" + app + alnum_only(base) + std::to_string(id);
            const std::string prev =
                vm != nullptr && a.source >= 0 ? vm->state_name(a.source) : std::string("?");
            const std::string next =
                vm != nullptr && a.target >= 0 ? vm->state_name(a.target) : std::string("?");
            method.comment = "// Transition " + std::to_string(id) + " previous " + prev +
                             " next " + next + " on view " + view;
            if (st.action == "click" || st.action == "swipe" || st.action == "setText") {
                if (st.classname.empty() && st.text.empty()) {
                    throw EmitError("BindError: event " + base + " of machine " + a.machine +
                                    " resolves to no selectable control");
                }
                method.uses_ui_object = true;
                method.body.push_back("UiObject control = new UiObject(" + selector_chain(st) +
                                      ");");
                if (st.action == "click") {
                    method.body.push_back("control.click();");
                } else if (st.action == "swipe") {
                    method.body.push_back("control.swipeUp(10);");
                } else {
                    method.body.push_back("control.setText(\"" + java_escape(st.parameter) +
                                          "\");");
                }
            } else if (st.action == "waitEvent") {
                const std::string label = st.parameter.empty() ? base : st.parameter;
                method.body = {"// blocking wait for " + label,
                               "getUiDevice().waitForWindowUpdate(null, 5000);"};
            } else if (st.action == "back") {
                method.body = {"getUiDevice().pressBack();"};
            } else {
                throw EmitError("BindError: action '" + st.action +
                                "' is outside the vocabulary");
            }
        }

        int& count = name_counts[method.name];
        ++count;
        if (count > 1) {
            method.name += "_" + std::to_string(count);
        }
        const auto di = static_cast<size_t>(a.device);
        per_device[di].push_back(std::move(method));
        order.emplace_back(di, per_device[di].size() - 1);
    }

    std::string out;
    out += "// Generated UiAutomator test classes, one class per device.\n";
    out += "// Model " + model.model_hash + ", bound " +
           std::to_string(bound.max_transitions_per_device) + ", policy " +
           std::string(to_string(policy)) + ".\n";
    if (!order.empty()) {
        out += "// Execution order:\n";
        for (size_t i = 0; i < order.size(); ++i) {
            out += "//   " + std::to_string(i + 1) + ". TestDevice" +
                   std::to_string(order[i].first + 1) + "." +
                   per_device[order[i].first][order[i].second].name + "\n";
        }
    }
    out += "\n";
    out += "import com.android.uiautomator.core.UiObject;\n";
    out += "import com.android.uiautomator.core.UiObjectNotFoundException;\n";
    out += "import com.android.uiautomator.core.UiSelector;\n";
    out += "import com.android.uiautomator.testrunner.UiAutomatorTestCase;\n";
    for (size_t d = 0; d < per_device.size(); ++d) {
        out += "\n// Device: " + model.devices[d].id + "\n";
        out += "public class TestDevice" + std::to_string(d + 1) +
               " extends UiAutomatorTestCase {\n";
        for (const Method& m : per_device[d]) {
            out += "\n    " + m.comment + "\n";
            out += "    public void " + m.name + "()";
            if (m.uses_ui_object) {
                out += " throws UiObjectNotFoundException";
            }
            out += " {\n";
            for (const std::string& line : m.body) {
                out += "        " + line + "\n";
            }
            out += "    }\n";
        }
        out += "}\n";
    }
    return out;
}

} // namespace

std::string emit_script(const TestCase& tc, const SystemModel& model, ScriptFormat format,
                        const ExplorationBound& bound, ReceivePolicy policy) {
    if (format == ScriptFormat::json) {
        return script_to_json(make_action_script(tc, model, bound, policy)).dump(2) + "\n";
    }
    return emit_uiauto(tc, model, bound, policy);
}

namespace {

std::string sanitize_id(const std::string& raw) {
    std::string out;
    for (char c : raw) {
        out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    }
    if (out.empty() || std::isdigit(static_cast<unsigned char>(out[0]))) {
        out.insert(out.begin(), '_');
    }
    return out;
}

/// Stable identifier pool: non-alphanumeric characters become underscores and
/// collisions get a numeric disambiguator. Keys are semantic, so the same
/// model element always maps to the same identifier within one emission.
class IdPool {
public:
    const std::string& get(const std::string& key, const std::string& raw) {
        auto it = by_key_.find(key);
        if (it != by_key_.end()) {
            return it->second;
        }
        const std::string base = sanitize_id(raw);
        std::string candidate = base;
        int k = 2;
        while (!used_.insert(candidate).second) {
            candidate = base + "_" + std::to_string(k++);
        }
        return by_key_.emplace(key, std::move(candidate)).first->second;
    }

private:
    std::map<std::string, std::string> by_key_;
    std::set<std::string> used_;
};

struct MachineNames {
    std::string app;
    std::string view;
    std::string base;
};

MachineNames names_of(const SystemModel& model, const std::string& machine_id) {
    auto it = model.machine_meta.find(machine_id);
    if (it == model.machine_meta.end()) {
        return {"App", machine_id, machine_id};
    }
    const std::string prefix = it->second.app + "." + it->second.view + ".";
    std::string base = machine_id;
    if (machine_id.size() > prefix.size() && machine_id.compare(0, prefix.size(), prefix) == 0) {
        base = machine_id.substr(prefix.size());
    }
    return {it->second.app, it->second.view, base};
}

} // namespace

std::string emit_promela(const SystemModel& model, const ExplorationBound& bound) {
    if (model.machines.empty()) {
        throw EmitError("model has no state machines");
    }
    if (model.devices.empty()) {
        throw EmitError("model has no devices");
    }

    IdPool ids;
    const size_t n_machines = model.machines.size();
    const size_t n_devices = model.devices.size();
    const int max_tr = std::max(1, bound.max_transitions_per_device);

    // Views group machines: each distinct (app, view) pair gets a numeric
    // code and an inline that enters the view's entry machine (the first
    // machine declaring the pair).
    struct ViewEntry {
        std::string app;
        std::string view;
        size_t entry_machine;
    };
    std::vector<ViewEntry> views;
    std::map<std::pair<std::string, std::string>, size_t> view_index;
    std::vector<size_t> view_of_machine(n_machines, 0);
    std::vector<MachineNames> mnames(n_machines);
    for (size_t i = 0; i < n_machines; ++i) {
        mnames[i] = names_of(model, model.machines[i].id);
        const auto key = std::make_pair(mnames[i].app, mnames[i].view);
        auto it = view_index.find(key);
        if (it == view_index.end()) {
            it = view_index.emplace(key, views.size()).first;
            views.push_back({mnames[i].app, mnames[i].view, i});
        }
        view_of_machine[i] = it->second;
    }

    auto state_const = [&](size_t mi, int si) -> const std::string& {
        return ids.get("state:" + std::to_string(mi) + ":" + std::to_string(si),
                       "State_" + mnames[mi].app + "_" + mnames[mi].view + "_" + mnames[mi].base +
                           "_" + model.machines[mi].states[static_cast<size_t>(si)]);
    };
    auto machine_inline = [&](size_t mi) -> const std::string& {
        return ids.get("sm:" + std::to_string(mi), "statemachine_" + mnames[mi].app + "_" +
                                                       mnames[mi].view + "_" + mnames[mi].base);
    };
    auto view_inline = [&](size_t vi) -> const std::string& {
        return ids.get("vw:" + std::to_string(vi), "view_" + views[vi].app + "_" + views[vi].view);
    };
    auto view_code_name = [&](size_t vi) -> const std::string& {
        return ids.get("vc:" + std::to_string(vi),
                       "VIEW_" + views[vi].app + "_" + views[vi].view);
    };
    auto device_code = [&](size_t di) -> const std::string& {
        return ids.get("dc:" + std::to_string(di), "D_" + model.devices[di].id);
    };
    auto chan_counter = [&](const std::string& name) -> const std::string& {
        return ids.get("ch:" + name, "chan_" + name);
    };

    // (machine id, event name) -> (channel name, is send side).
    std::map<std::pair<std::string, std::string>, std::pair<std::string, bool>> chan_of;
    for (const ChannelBinding& c : model.channels) {
        chan_of[{c.send_machine, c.send_event}] = {c.channel, true};
        chan_of[{c.recv_machine, c.recv_event}] = {c.channel, false};
    }

    std::vector<std::vector<const ConnectionEdge*>> edges_of(n_machines);
    for (const ConnectionEdge& e : model.connection.edges) {
        const int mi = model.machine_index(e.source_machine);
        if (mi >= 0) {
            edges_of[static_cast<size_t>(mi)].push_back(&e);
        }
    }

    // A call is routed through the view inline when its `through` names the
    // target's view and the target is that view's entry machine; otherwise
    // the branch calls the machine inline directly.
    auto callee_view = [&](const ConnectionEdge& e) -> int {
        const int ti = model.machine_index(e.target_machine);
        if (ti < 0) {
            return -1;
        }
        const std::string th = through_part(e.call_event.name);
        if (th.empty()) {
            return -1;
        }
        const size_t vi = view_of_machine[static_cast<size_t>(ti)];
        const ViewEntry& v = views[vi];
        if (v.entry_machine != static_cast<size_t>(ti)) {
            return -1;
        }
        if (th == v.view || th == v.app + "." + v.view) {
            return static_cast<int>(vi);
        }
        return -1;
    };

    // Inlines are macros, so callees must be defined before callers; a DFS
    // post-order gives that. Call sites that would recurse (back edges) are
    // elided in the branch body instead of failing the emission.
    const size_t n_nodes = n_machines + views.size();
    std::vector<int> color(n_nodes, 0);
    std::vector<size_t> emit_sequence;
    std::set<std::pair<size_t, size_t>> elided;
    std::function<void(size_t)> visit = [&](size_t node) {
        if (color[node] == 2) {
            return;
        }
        color[node] = 1;
        if (node < n_machines) {
            const auto& edges = edges_of[node];
            for (size_t k = 0; k < edges.size(); ++k) {
                const int ti = model.machine_index(edges[k]->target_machine);
                if (ti < 0) {
                    continue;
                }
                const int vi = callee_view(*edges[k]);
                const size_t dep =
                    vi >= 0 ? n_machines + static_cast<size_t>(vi) : static_cast<size_t>(ti);
                const bool dep_gray =
                    color[dep] == 1 ||
                    (vi >= 0 && color[views[static_cast<size_t>(vi)].entry_machine] == 1);
                if (dep_gray) {
                    elided.insert({node, k});
                    continue;
                }
                visit(dep);
            }
        } else {
            visit(views[node - n_machines].entry_machine);
        }
        color[node] = 2;
        emit_sequence.push_back(node);
    };
    for (size_t i = 0; i < n_machines; ++i) {
        visit(i);
    }
    for (size_t v = 0; v < views.size(); ++v) {
        visit(n_machines + v);
    }

    std::string out;
    auto line = [&](const std::string& s) {
        out += s;
        out += '\n';
    };

    line("/* SPIN model of the composed view state machines; every completed");
    line("   bounded trace becomes an assertion-violation trail that replays the");
    line("   recorded transitions. Model hash " +
         (model.model_hash.empty() ? std::string("(unset)") : model.model_hash) + ". */");
    line("");
    line("#define DEVICES " + std::to_string(n_devices));
    line("#define MAX_TR " + std::to_string(max_tr));
    line("#define MAX_BK " + std::to_string(max_tr + 2));
    line("#define TRACE_LEN " + std::to_string(static_cast<int>(n_devices) * max_tr));
    for (size_t di = 0; di < n_devices; ++di) {
        line("#define " + device_code(di) + " " + std::to_string(di));
    }
    line("");

    std::string mtypes;
    for (size_t mi = 0; mi < n_machines; ++mi) {
        const ViewStateMachine& m = model.machines[mi];
        for (int si = 0; si < static_cast<int>(m.states.size()); ++si) {
            if (!mtypes.empty()) {
                mtypes += ", ";
            }
            mtypes += state_const(mi, si);
        }
    }
    line("mtype = { " + mtypes + " };");
    line("");
    line("typedef Device {");
    line("    byte transitions[MAX_TR];");
    line("    byte views[MAX_TR];");
    line("    short index;");
    line("    bool finish");
    line("};");
    line("Device devices[DEVICES];");
    line("");
    line("typedef Backstack {");
    line("    mtype states[MAX_BK];");
    line("    short index");
    line("};");
    line("Backstack backstacks[DEVICES];");
    line("");
    line("byte trace_dev[TRACE_LEN];");
    line("byte trace_view[TRACE_LEN];");
    line("byte trace_id[TRACE_LEN];");
    line("short trace_index = 0;");
    line("");
    line("#define currentBackstack backstacks[device]");
    line("#define currentState currentBackstack.states[currentBackstack.index]");
    line("");
    for (size_t vi = 0; vi < views.size(); ++vi) {
        line("#define " + view_code_name(vi) + " " + std::to_string(vi + 1));
    }
    if (!model.channels.empty()) {
        line("");
        for (const ChannelBinding& c : model.channels) {
            line("byte " + chan_counter(c.channel) + " = 0;");
        }
    }

    bool attr_notes = false;
    for (const CallEventAttributes& a : model.call_attrs) {
        if (a.reuse || !a.auto_return) {
            if (!attr_notes) {
                line("");
                line("/* Call attribute notes:");
                attr_notes = true;
            }
            if (a.reuse) {
                line("   " + a.event_name +
                     ": reuse=true is approximated by a fresh invocation.");
            }
            if (!a.auto_return) {
                line("   " + a.event_name +
                     ": autoReturn=false is not encoded; every callee returns.");
            }
        }
    }
    if (attr_notes) {
        line("*/");
    }

    line("");
    line("inline pushToBackstack(device, st) {");
    line("    d_step {");
    line("        assert(currentBackstack.index < MAX_BK - 1);");
    line("        currentBackstack.index++;");
    line("        currentState = st");
    line("    }");
    line("}");
    line("");
    line("inline popFromBackstack(device) {");
    line("    currentBackstack.index--");
    line("}");
    line("");
    line("inline transition(device, vw, id) {");
    line("    d_step {");
    line("        devices[device].transitions[devices[device].index] = id;");
    line("        devices[device].views[devices[device].index] = vw;");
    line("        devices[device].index++;");
    line("        trace_dev[trace_index] = device;");
    line("        trace_view[trace_index] = vw;");
    line("        trace_id[trace_index] = id;");
    line("        trace_index++");
    line("    }");
    line("}");

    struct BranchText {
        int sort_id = 0;
        int seq = 0;
        std::vector<std::string> lines;
    };

    auto emit_machine = [&](size_t mi) {
        const ViewStateMachine& m = model.machines[mi];
        const std::string& vc = view_code_name(view_of_machine[mi]);
        std::vector<BranchText> branches;
        int seq = 0;

        auto origin_id = [&](int source, const std::string& event) {
            const TransitionOrigin* o = model.origin_of(m.id, source, event);
            return o != nullptr ? o->id : 0;
        };

        for (const Transition& t : m.transitions) {
            BranchText b;
            b.seq = seq++;
            b.sort_id = origin_id(t.source, t.event.name);
            const std::string id = std::to_string(b.sort_id);
            const bool exits = m.is_final(t.target);
            auto ch = chan_of.find({m.id, t.event.name});
            const bool is_send = ch != chan_of.end() && ch->second.second;
            const bool is_recv = ch != chan_of.end() && !ch->second.second;

            if (is_recv) {
                const std::string& counter = chan_counter(ch->second.first);
                b.lines.push_back(":: atomic { (currentState == " + state_const(mi, t.source) +
                                  " && " + counter +
                                  " > 0 && devices[device].index < MAX_TR) ->");
                b.lines.push_back("        " + counter + "--;");
                b.lines.push_back("        transition(device, " + vc + ", " + id + ")");
                b.lines.push_back("    }; /* receive on " + ch->second.first + " */");
            } else {
                b.lines.push_back(":: (currentState == " + state_const(mi, t.source) +
                                  " && devices[device].index < MAX_TR) ->");
                b.lines.push_back("    transition(device, " + vc + ", " + id + ");");
                if (is_send) {
                    b.lines.push_back("    " + chan_counter(ch->second.first) + "++; /* send on " +
                                      ch->second.first + " */");
                }
            }
            if (exits) {
                b.lines.push_back("    break /* to " +
                                  m.states[static_cast<size_t>(t.target)] + " */");
            } else {
                b.lines.push_back("    currentState = " + state_const(mi, t.target));
            }
            branches.push_back(std::move(b));
        }

        const auto& edges = edges_of[mi];
        for (size_t k = 0; k < edges.size(); ++k) {
            const ConnectionEdge& e = *edges[k];
            BranchText b;
            b.seq = seq++;
            b.sort_id = origin_id(e.source_state, e.call_event.name);
            const std::string id = std::to_string(b.sort_id);
            const int ti = model.machine_index(e.target_machine);
            auto rit = m.return_of.find(e.source_state);
            const int ret = rit == m.return_of.end() ? e.source_state : rit->second;

            b.lines.push_back(":: (currentState == " + state_const(mi, e.source_state) +
                              " && devices[device].index < MAX_TR) ->");
            b.lines.push_back("    transition(device, " + vc + ", " + id + ");");
            if (ti < 0 || elided.contains({mi, k})) {
                b.lines.push_back("    skip; /* call " + e.call_event.name +
                                  ": recursive call site elided */");
            } else {
                const int vi = callee_view(e);
                const std::string& callee = vi >= 0 ? view_inline(static_cast<size_t>(vi))
                                                    : machine_inline(static_cast<size_t>(ti));
                b.lines.push_back("    " + callee + "(device); /* call " + e.call_event.name +
                                  " */");
            }
            b.lines.push_back("    currentState = " + state_const(mi, ret));
            branches.push_back(std::move(b));
        }

        const bool all_have_ids =
            std::all_of(branches.begin(), branches.end(),
                        [](const BranchText& b) { return b.sort_id > 0; });
        if (all_have_ids) {
            std::stable_sort(branches.begin(), branches.end(),
                             [](const BranchText& a, const BranchText& b) {
                                 return a.sort_id < b.sort_id;
                             });
        }

        line("");
        line("inline " + machine_inline(mi) + "(device) {");
        const int entry = m.initial.empty() ? 0 : m.initial.front();
        line("    pushToBackstack(device, " + state_const(mi, entry) + ");");
        if (m.initial.size() > 1) {
            line("    /* machine has several initial states; the first is entered */");
        }
        if (branches.empty()) {
            line("    skip; /* no transitions */");
        } else {
            line("    do");
            for (const BranchText& b : branches) {
                for (const std::string& bl : b.lines) {
                    line("    " + bl);
                }
            }
            line("    od;");
        }
        line("    popFromBackstack(device)");
        line("}");
    };

    auto emit_view = [&](size_t vi) {
        line("");
        line("inline " + view_inline(vi) + "(device) {");
        line("    " + machine_inline(views[vi].entry_machine) + "(device)");
        line("}");
    };

    for (size_t node : emit_sequence) {
        if (node < n_machines) {
            emit_machine(node);
        } else {
            emit_view(node - n_machines);
        }
    }

    // Per-device app inlines over the assigned entry machines.
    struct AppRef {
        std::string name;
        size_t machine;
    };
    std::vector<std::vector<AppRef>> apps_of_device(n_devices);
    for (size_t di = 0; di < n_devices; ++di) {
        for (const std::string& em : model.devices[di].entry_machines) {
            const int mi = model.machine_index(em);
            if (mi < 0) {
                continue;
            }
            const size_t vi = view_of_machine[static_cast<size_t>(mi)];
            const std::string key = "app:" + std::to_string(di) + ":" + mnames[mi].app;
            const std::string& name = ids.get(
                key, "app_" + model.devices[di].id + "_" + mnames[static_cast<size_t>(mi)].app);
            const bool fresh =
                std::none_of(apps_of_device[di].begin(), apps_of_device[di].end(),
                             [&](const AppRef& a) { return a.name == name; });
            if (!fresh) {
                continue;
            }
            apps_of_device[di].push_back({name, static_cast<size_t>(mi)});
            line("");
            line("inline " + name + "(device) {");
            if (views[vi].entry_machine == static_cast<size_t>(mi)) {
                line("    " + view_inline(vi) + "(device)");
            } else {
                line("    " + machine_inline(static_cast<size_t>(mi)) + "(device)");
            }
            line("}");
        }
    }

    line("");
    std::string all_finished;
    for (size_t di = 0; di < n_devices; ++di) {
        if (!all_finished.empty()) {
            all_finished += " && ";
        }
        all_finished += "devices[" + device_code(di) + "].finish";
    }
    line("active proctype traceCloser() provided (" + all_finished + ") {");
    line("    short i = 0;");
    line("end_tc:");
    line("    d_step {");
    line("        i = 0;");
    line("        do");
    line("        :: i < trace_index ->");
    line("            printf(\"TR %d %d %d\\n\", trace_dev[i], trace_view[i], trace_id[i]);");
    line("            i++");
    line("        :: else -> break");
    line("        od;");
    line("        printf(\"END_TC\\n\")");
    line("    };");
    line("    assert(false)");
    line("}");

    for (size_t di = 0; di < n_devices; ++di) {
        const std::string& proc =
            ids.get("proc:" + std::to_string(di), "device_" + model.devices[di].id);
        line("");
        line("active proctype " + proc + "() {");
        const auto& apps = apps_of_device[di];
        if (apps.empty()) {
            line("    skip; /* no entry machines assigned */");
        } else if (apps.size() == 1) {
            line("    " + apps[0].name + "(" + device_code(di) + ");");
        } else {
            line("    if");
            for (const AppRef& a : apps) {
                line("    :: true -> " + a.name + "(" + device_code(di) + ")");
            }
            line("    fi;");
        }
        line("    devices[" + device_code(di) + "].finish = true");
        line("}");
    }

    return out;
}

GenerationReport make_report(const ExplorationResult& result, const SystemModel& model,
                             const ExplorationBound& bound, ReceivePolicy policy, bool reduced,
                             double seconds) {
    GenerationReport r;
    r.devices = static_cast<int>(model.devices.size());
    r.backstack = result.stats.max_backstack_depth;
    r.transitions = bound.max_transitions_per_device;
    r.test_cases = result.cases.size();
    r.time_s = seconds;
    r.states = result.stats.states_expanded;
    r.state_size_b = result.stats.max_state_bytes;
    r.memory_mb = static_cast<double>(result.stats.peak_live_bytes) / (1024.0 * 1024.0);
    r.truncated_flows = result.stats.truncated_flows;
    r.policy = std::string(to_string(policy));
    r.reduced = reduced;
    r.cap_hit = result.cap_hit;
    return r;
}

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

std::string emit_report(const GenerationReport& r, ReportFormat format) {
    switch (format) {
    case ReportFormat::csv: {
        std::string out =
            "devices,backstack,transitions,test_cases,time_s,states,state_size_b,memory_mb\n";
        out += std::to_string(r.devices) + "," + std::to_string(r.backstack) + "," +
               std::to_string(r.transitions) + "," + std::to_string(r.test_cases) + "," +
               fixed(r.time_s, 3) + "," + std::to_string(r.states) + "," +
               std::to_string(r.state_size_b) + "," + fixed(r.memory_mb, 1) + "\n";
        return out;
    }
    case ReportFormat::json: {
        const json j{
            {"devices", r.devices},
            {"backstack", r.backstack},
            {"transitions", r.transitions},
            {"test_cases", r.test_cases},
            {"time_s", r.time_s},
            {"states", r.states},
            {"state_size_b", r.state_size_b},
            {"memory_mb", r.memory_mb},
            {"truncated_flows", r.truncated_flows},
            {"policy", r.policy},
            {"reduced", r.reduced},
            {"cap_hit", r.cap_hit},
        };
        return j.dump(2) + "\n";
    }
    case ReportFormat::text:
        break;
    }

    std::string out;
    auto kv = [&](const std::string& key, const std::string& value) {
        out += key;
        out += ": ";
        out += value;
        out += '\n';
    };
    kv("devices", std::to_string(r.devices));
    kv("backstack", std::to_string(r.backstack));
    kv("transitions", std::to_string(r.transitions));
    kv("test_cases", std::to_string(r.test_cases));
    kv("time_s", fixed(r.time_s, 3));
    kv("states", std::to_string(r.states));
    kv("state_size_b", std::to_string(r.state_size_b));
    kv("memory_mb", fixed(r.memory_mb, 1));
    kv("truncated_flows", std::to_string(r.truncated_flows));
    kv("policy", r.policy);
    kv("reduced", r.reduced ? "true" : "false");
    kv("cap_hit", r.cap_hit ? "true" : "false");
    return out;
}

} // namespace mbt
