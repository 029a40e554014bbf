#include "mbt/model_io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <initializer_list>
#include <set>
#include <sstream>

#include "mbt/xml.hpp"
#include "json.hpp"

namespace mbt {

namespace {

using nlohmann::json;

const std::set<std::string>& transition_types() {
    static const std::set<std::string> types{"Simple", "View", "StateMachine"};
    return types;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in{std::string(s)};
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) {
            continue;
        }
        const auto e = item.find_last_not_of(" \t");
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (const std::string& s : items) {
        if (!out.empty()) {
            out += ",";
        }
        out += s;
    }
    return out;
}

// ---------------------------------------------------------------------------
// XML parsing

const std::string& require_attr(const xml::Element& e, std::string_view key) {
    const std::string* v = e.find_attr(key);
    if (v == nullptr) {
        throw SchemaError("<" + e.name + "> missing required attribute '" + std::string(key) + "'",
                          e.line);
    }
    return *v;
}

bool parse_bool(const std::string& value, std::string_view what, int line) {
    if (value == "true") {
        return true;
    }
    if (value == "false") {
        return false;
    }
    throw SchemaError("attribute '" + std::string(what) + "' must be true or false, got '" + value +
                          "'",
                      line);
}

int parse_id(const std::string& value, int line) {
    if (value.empty() || !std::all_of(value.begin(), value.end(),
                                      [](unsigned char c) { return std::isdigit(c); })) {
        throw SchemaError("attribute 'ID' must be a non-negative integer, got '" + value + "'",
                          line);
    }
    return std::stoi(value);
}

std::vector<std::pair<std::string, std::string>> collect_extras(
    const xml::Element& e, std::initializer_list<std::string_view> known) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, v] : e.attrs) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            out.emplace_back(k, v);
        }
    }
    return out;
}

TransitionDef parse_transition_xml(const xml::Element& e) {
    TransitionDef t;
    t.line = e.line;
    t.id = parse_id(require_attr(e, "ID"), e.line);
    t.event = require_attr(e, "event");
    t.prev = require_attr(e, "prev");
    t.next = require_attr(e, "next");
    t.through = e.attr_or("through");
    t.type = e.attr_or("type", "Simple");
    t.kind = e.attr_or("kind", "user");
    t.channel = e.attr_or("channel");
    t.action = e.attr_or("action");
    if (const std::string* v = e.find_attr("reuse")) {
        t.reuse = parse_bool(*v, "reuse", e.line);
    }
    if (const std::string* v = e.find_attr("autoReturn")) {
        t.auto_return = parse_bool(*v, "autoReturn", e.line);
    }
    t.extra = collect_extras(e, {"ID", "event", "prev", "next", "through", "type", "kind",
                                 "channel", "action", "reuse", "autoReturn"});
    return t;
}

StateMachineDef parse_state_machine_xml(const xml::Element& e) {
    StateMachineDef sm;
    sm.line = e.line;
    sm.name = require_attr(e, "name");
    if (const std::string* v = e.find_attr("entry")) {
        sm.entry = parse_bool(*v, "entry", e.line);
    }
    sm.extra = collect_extras(e, {"name", "entry"});
    for (const xml::Element& c : e.children) {
        if (c.name == "States") {
            for (const xml::Element& s : c.children) {
                if (s.name != "State") {
                    throw SchemaError("unexpected element <" + s.name + "> inside <States>", s.line);
                }
                sm.states.push_back(require_attr(s, "name"));
            }
        } else if (c.name == "Transitions") {
            for (const xml::Element& tr : c.children) {
                if (tr.name != "Transition") {
                    throw SchemaError("unexpected element <" + tr.name + "> inside <Transitions>",
                                      tr.line);
                }
                sm.transitions.push_back(parse_transition_xml(tr));
            }
        } else {
            throw SchemaError("unexpected element <" + c.name + "> inside <StateMachine>", c.line);
        }
    }
    return sm;
}

ViewDef parse_view_xml(const xml::Element& e) {
    ViewDef v;
    v.line = e.line;
    v.name = require_attr(e, "name");
    v.controls_file = e.attr_or("controlsFile");
    if (const std::string* a = e.find_attr("entry")) {
        v.entry = parse_bool(*a, "entry", e.line);
    }
    v.extra = collect_extras(e, {"name", "controlsFile", "entry"});
    for (const xml::Element& c : e.children) {
        if (c.name != "StateMachines") {
            throw SchemaError("unexpected element <" + c.name + "> inside <View>", c.line);
        }
        for (const xml::Element& sm : c.children) {
            if (sm.name != "StateMachine") {
                throw SchemaError("unexpected element <" + sm.name + "> inside <StateMachines>",
                                  sm.line);
            }
            v.machines.push_back(parse_state_machine_xml(sm));
        }
    }
    return v;
}

ApplicationDef parse_application_xml(const xml::Element& e) {
    ApplicationDef app;
    app.line = e.line;
    app.name = require_attr(e, "name");
    app.package = e.attr_or("package");
    app.extra = collect_extras(e, {"name", "package"});
    for (const xml::Element& c : e.children) {
        if (c.name != "Views") {
            throw SchemaError("unexpected element <" + c.name + "> inside <Application>", c.line);
        }
        for (const xml::Element& v : c.children) {
            if (v.name != "View") {
                throw SchemaError("unexpected element <" + v.name + "> inside <Views>", v.line);
            }
            app.views.push_back(parse_view_xml(v));
        }
    }
    return app;
}

DeviceDef parse_device_xml(const xml::Element& e) {
    DeviceDef d;
    d.line = e.line;
    d.id = require_attr(e, "id");
    d.apps = split_list(e.attr_or("apps"));
    d.extra = collect_extras(e, {"id", "apps"});
    return d;
}

ModelDocument parse_model_xml(std::string_view text) {
    xml::Element root = [&] {
        try {
            return xml::parse(text);
        } catch (const xml::ParseError& ex) {
            throw SchemaError(ex.what(), 0);
        }
    }();

    ModelDocument doc;
    if (root.name == "Application") {
        doc.applications.push_back(parse_application_xml(root));
        return doc;
    }
    if (root.name != "Model") {
        throw SchemaError("root element must be <Model> or <Application>, got <" + root.name + ">",
                          root.line);
    }
    for (const xml::Element& c : root.children) {
        if (c.name == "Applications") {
            for (const xml::Element& a : c.children) {
                if (a.name != "Application") {
                    throw SchemaError("unexpected element <" + a.name + "> inside <Applications>",
                                      a.line);
                }
                doc.applications.push_back(parse_application_xml(a));
            }
        } else if (c.name == "Devices") {
            for (const xml::Element& d : c.children) {
                if (d.name != "Device") {
                    throw SchemaError("unexpected element <" + d.name + "> inside <Devices>",
                                      d.line);
                }
                doc.devices.push_back(parse_device_xml(d));
            }
        } else {
            throw SchemaError("unexpected element <" + c.name + "> inside <Model>", c.line);
        }
    }
    return doc;
}

// ---------------------------------------------------------------------------
// JSON mirror

std::string json_string(const json& j, const char* key, const json& node, bool required,
                        std::string fallback = "") {
    if (!node.contains(key)) {
        if (required) {
            throw SchemaError(std::string("JSON object missing required key '") + key + "': " +
                              j.dump());
        }
        return fallback;
    }
    const json& v = node.at(key);
    if (!v.is_string()) {
        throw SchemaError(std::string("JSON key '") + key + "' must be a string");
    }
    return v.get<std::string>();
}

std::vector<std::pair<std::string, std::string>> json_extras(
    const json& node, std::initializer_list<std::string_view> known) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, v] : node.items()) {
        if (std::find(known.begin(), known.end(), k) != known.end()) {
            continue;
        }
        out.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
    }
    return out;
}

TransitionDef parse_transition_json(const json& node) {
    TransitionDef t;
    if (!node.contains("ID")) {
        throw SchemaError("transition missing required key 'ID'");
    }
    const json& id = node.at("ID");
    if (id.is_number_integer()) {
        t.id = id.get<int>();
    } else if (id.is_string()) {
        t.id = parse_id(id.get<std::string>(), 0);
    } else {
        throw SchemaError("transition 'ID' must be an integer");
    }
    t.event = json_string(node, "event", node, true);
    if (!node.contains("prev") || !node.contains("next")) {
        throw SchemaError("transition missing required key 'prev' or 'next'");
    }
    t.prev = json_string(node, "prev", node, true);
    t.next = json_string(node, "next", node, true);
    t.through = json_string(node, "through", node, false);
    t.type = json_string(node, "type", node, false, "Simple");
    t.kind = json_string(node, "kind", node, false, "user");
    t.channel = json_string(node, "channel", node, false);
    t.action = json_string(node, "action", node, false);
    if (node.contains("reuse")) {
        if (!node.at("reuse").is_boolean()) {
            throw SchemaError("transition 'reuse' must be a boolean");
        }
        t.reuse = node.at("reuse").get<bool>();
    }
    if (node.contains("autoReturn")) {
        if (!node.at("autoReturn").is_boolean()) {
            throw SchemaError("transition 'autoReturn' must be a boolean");
        }
        t.auto_return = node.at("autoReturn").get<bool>();
    }
    t.extra = json_extras(node, {"ID", "event", "prev", "next", "through", "type", "kind",
                                 "channel", "action", "reuse", "autoReturn"});
    return t;
}

ModelDocument parse_model_json_impl(const json& j);

ModelDocument parse_model_json(std::string_view text) {
    try {
        return parse_model_json_impl(json::parse(text));
    } catch (const json::exception& ex) {
        throw SchemaError(std::string("invalid JSON model: ") + ex.what());
    }
}

ModelDocument parse_model_json_impl(const json& j) {
    ModelDocument doc;
    for (const json& a : j.value("applications", json::array())) {
        ApplicationDef app;
        app.name = json_string(a, "name", a, true);
        app.package = json_string(a, "package", a, false);
        app.extra = json_extras(a, {"name", "package", "views"});
        for (const json& v : a.value("views", json::array())) {
            ViewDef view;
            view.name = json_string(v, "name", v, true);
            view.controls_file = json_string(v, "controlsFile", v, false);
            view.entry = v.value("entry", false);
            view.extra = json_extras(v, {"name", "controlsFile", "entry", "stateMachines"});
            for (const json& m : v.value("stateMachines", json::array())) {
                StateMachineDef sm;
                sm.name = json_string(m, "name", m, true);
                sm.entry = m.value("entry", false);
                sm.extra = json_extras(m, {"name", "entry", "states", "transitions"});
                for (const json& s : m.value("states", json::array())) {
                    if (!s.is_string()) {
                        throw SchemaError("state names must be strings");
                    }
                    sm.states.push_back(s.get<std::string>());
                }
                for (const json& t : m.value("transitions", json::array())) {
                    sm.transitions.push_back(parse_transition_json(t));
                }
                view.machines.push_back(std::move(sm));
            }
            app.views.push_back(std::move(view));
        }
        doc.applications.push_back(std::move(app));
    }
    for (const json& d : j.value("devices", json::array())) {
        DeviceDef dev;
        dev.id = json_string(d, "id", d, true);
        for (const json& a : d.value("apps", json::array())) {
            if (!a.is_string()) {
                throw SchemaError("device app names must be strings");
            }
            dev.apps.push_back(a.get<std::string>());
        }
        dev.extra = json_extras(d, {"id", "apps"});
        doc.devices.push_back(std::move(dev));
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Reference resolution and document checking

struct ViewRef {
    int app = -1;
    int view = -1;
};

struct MachineRef {
    int app = -1;
    int view = -1;
    int machine = -1;
};

std::vector<std::string> split_qualified(std::string_view name) {
    std::vector<std::string> parts;
    std::string part;
    std::istringstream in{std::string(name)};
    while (std::getline(in, part, '.')) {
        parts.push_back(part);
    }
    return parts;
}

std::optional<ViewRef> resolve_view(const ModelDocument& doc, int from_app, std::string_view name,
                                    int line) {
    const std::vector<std::string> parts = split_qualified(name);
    if (parts.size() == 2) {
        for (size_t a = 0; a < doc.applications.size(); ++a) {
            if (doc.applications[a].name != parts[0]) {
                continue;
            }
            for (size_t v = 0; v < doc.applications[a].views.size(); ++v) {
                if (doc.applications[a].views[v].name == parts[1]) {
                    return ViewRef{static_cast<int>(a), static_cast<int>(v)};
                }
            }
        }
        return std::nullopt;
    }
    if (parts.size() != 1) {
        throw SchemaError("view reference '" + std::string(name) + "' must be Name or App.Name",
                          line);
    }
    if (from_app >= 0) {
        const ApplicationDef& app = doc.applications[static_cast<size_t>(from_app)];
        for (size_t v = 0; v < app.views.size(); ++v) {
            if (app.views[v].name == name) {
                return ViewRef{from_app, static_cast<int>(v)};
            }
        }
    }
    std::vector<ViewRef> matches;
    for (size_t a = 0; a < doc.applications.size(); ++a) {
        for (size_t v = 0; v < doc.applications[a].views.size(); ++v) {
            if (doc.applications[a].views[v].name == name) {
                matches.push_back({static_cast<int>(a), static_cast<int>(v)});
            }
        }
    }
    if (matches.size() > 1) {
        throw SchemaError("ambiguous view reference '" + std::string(name) + "'", line);
    }
    return matches.empty() ? std::nullopt : std::optional{matches.front()};
}

std::optional<MachineRef> resolve_machine(const ModelDocument& doc, int from_app, int from_view,
                                          std::string_view name, int line) {
    const std::vector<std::string> parts = split_qualified(name);
    if (parts.size() == 3) {
        for (size_t a = 0; a < doc.applications.size(); ++a) {
            if (doc.applications[a].name != parts[0]) {
                continue;
            }
            for (size_t v = 0; v < doc.applications[a].views.size(); ++v) {
                if (doc.applications[a].views[v].name != parts[1]) {
                    continue;
                }
                const auto& machines = doc.applications[a].views[v].machines;
                for (size_t m = 0; m < machines.size(); ++m) {
                    if (machines[m].name == parts[2]) {
                        return MachineRef{static_cast<int>(a), static_cast<int>(v),
                                          static_cast<int>(m)};
                    }
                }
            }
        }
        return std::nullopt;
    }
    if (parts.size() != 1) {
        throw SchemaError(
            "state machine reference '" + std::string(name) + "' must be Name or App.View.Name",
            line);
    }
    auto search = [&](int a, int v) -> std::vector<MachineRef> {
        std::vector<MachineRef> matches;
        const auto& machines = doc.applications[static_cast<size_t>(a)]
                                   .views[static_cast<size_t>(v)]
                                   .machines;
        for (size_t m = 0; m < machines.size(); ++m) {
            if (machines[m].name == name) {
                matches.push_back({a, v, static_cast<int>(m)});
            }
        }
        return matches;
    };
    if (from_app >= 0 && from_view >= 0) {
        auto matches = search(from_app, from_view);
        if (matches.size() == 1) {
            return matches.front();
        }
    }
    if (from_app >= 0) {
        std::vector<MachineRef> matches;
        const ApplicationDef& app = doc.applications[static_cast<size_t>(from_app)];
        for (size_t v = 0; v < app.views.size(); ++v) {
            auto more = search(from_app, static_cast<int>(v));
            matches.insert(matches.end(), more.begin(), more.end());
        }
        if (matches.size() > 1) {
            throw SchemaError("ambiguous state machine reference '" + std::string(name) + "'",
                              line);
        }
        if (matches.size() == 1) {
            return matches.front();
        }
    }
    std::vector<MachineRef> matches;
    for (size_t a = 0; a < doc.applications.size(); ++a) {
        for (size_t v = 0; v < doc.applications[a].views.size(); ++v) {
            auto more = search(static_cast<int>(a), static_cast<int>(v));
            matches.insert(matches.end(), more.begin(), more.end());
        }
    }
    if (matches.size() > 1) {
        throw SchemaError("ambiguous state machine reference '" + std::string(name) + "'", line);
    }
    return matches.empty() ? std::nullopt : std::optional{matches.front()};
}

void check_document(const ModelDocument& doc) {
    std::set<std::string> app_names;
    for (size_t a = 0; a < doc.applications.size(); ++a) {
        const ApplicationDef& app = doc.applications[a];
        if (app.name.empty()) {
            throw SchemaError("application with empty name", app.line);
        }
        if (!app_names.insert(app.name).second) {
            throw SchemaError("duplicate application name '" + app.name + "'", app.line);
        }
        std::set<std::string> view_names;
        for (size_t v = 0; v < app.views.size(); ++v) {
            const ViewDef& view = app.views[v];
            if (!view_names.insert(view.name).second) {
                throw SchemaError("duplicate view name '" + view.name + "' in application '" +
                                      app.name + "'",
                                  view.line);
            }
            std::set<std::string> machine_names;
            std::set<int> transition_ids;
            for (const StateMachineDef& sm : view.machines) {
                if (!machine_names.insert(sm.name).second) {
                    throw SchemaError("duplicate state machine name '" + sm.name + "' in view '" +
                                          view.name + "'",
                                      sm.line);
                }
                std::set<std::string> state_names;
                for (const std::string& s : sm.states) {
                    if (s.empty()) {
                        throw SchemaError("empty state name in machine '" + sm.name + "'", sm.line);
                    }
                    if (!state_names.insert(s).second) {
                        throw SchemaError("duplicate state name '" + s + "' in machine '" +
                                              sm.name + "'",
                                          sm.line);
                    }
                }
                for (const TransitionDef& t : sm.transitions) {
                    if (!transition_ids.insert(t.id).second) {
                        throw SchemaError("duplicate transition ID " + std::to_string(t.id) +
                                              " in view '" + view.name + "'",
                                          t.line);
                    }
                    if (t.event.empty()) {
                        throw SchemaError("transition " + std::to_string(t.id) +
                                              " has an empty event",
                                          t.line);
                    }
                    if (!transition_types().contains(t.type)) {
                        throw SchemaError("transition " + std::to_string(t.id) +
                                              " has unknown type '" + t.type + "'",
                                          t.line);
                    }
                    if (t.kind != "user" && t.kind != "system") {
                        throw SchemaError("transition " + std::to_string(t.id) +
                                              " has unknown kind '" + t.kind + "'",
                                          t.line);
                    }
                    if (t.type == "Simple" && !t.through.empty()) {
                        throw SchemaError("Simple transition " + std::to_string(t.id) +
                                              " must not set 'through'",
                                          t.line);
                    }
                    if (t.type != "Simple" && t.through.empty()) {
                        throw SchemaError(t.type + " transition " + std::to_string(t.id) +
                                              " requires 'through'",
                                          t.line);
                    }
                    if (!t.prev.empty() && !state_names.contains(t.prev)) {
                        throw DanglingReference("transition " + std::to_string(t.id) +
                                                    " prev state '" + t.prev + "' is not declared",
                                                t.line);
                    }
                    if (!t.next.empty() && !state_names.contains(t.next)) {
                        throw DanglingReference("transition " + std::to_string(t.id) +
                                                    " next state '" + t.next + "' is not declared",
                                                t.line);
                    }
                    if (t.type == "View" &&
                        !resolve_view(doc, static_cast<int>(a), t.through, t.line)) {
                        throw DanglingReference("through=\"" + t.through +
                                                    "\" names no view in the model",
                                                t.line);
                    }
                    if (t.type == "StateMachine" &&
                        !resolve_machine(doc, static_cast<int>(a), static_cast<int>(v), t.through,
                                         t.line)) {
                        throw DanglingReference("through=\"" + t.through +
                                                    "\" names no state machine in the model",
                                                t.line);
                    }
                }
            }
        }
    }
    std::set<std::string> device_ids;
    for (const DeviceDef& d : doc.devices) {
        if (d.id.empty()) {
            throw SchemaError("device with empty id", d.line);
        }
        if (!device_ids.insert(d.id).second) {
            throw SchemaError("duplicate device id '" + d.id + "'", d.line);
        }
        for (const std::string& app : d.apps) {
            if (!app_names.contains(app)) {
                throw DanglingReference("device '" + d.id + "' references unknown application '" +
                                            app + "'",
                                        d.line);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization

xml::Element to_xml(const ModelDocument& doc) {
    xml::Element root{"Model"};
    xml::Element apps{"Applications"};
    for (const ApplicationDef& app : doc.applications) {
        xml::Element a{"Application"};
        a.set_attr("name", app.name);
        if (!app.package.empty()) {
            a.set_attr("package", app.package);
        }
        for (const auto& [k, v] : app.extra) {
            a.set_attr(k, v);
        }
        xml::Element views{"Views"};
        for (const ViewDef& view : app.views) {
            xml::Element v{"View"};
            v.set_attr("name", view.name);
            if (!view.controls_file.empty()) {
                v.set_attr("controlsFile", view.controls_file);
            }
            if (view.entry) {
                v.set_attr("entry", "true");
            }
            for (const auto& [k, val] : view.extra) {
                v.set_attr(k, val);
            }
            xml::Element sms{"StateMachines"};
            for (const StateMachineDef& smdef : view.machines) {
                xml::Element sm{"StateMachine"};
                sm.set_attr("name", smdef.name);
                if (smdef.entry) {
                    sm.set_attr("entry", "true");
                }
                for (const auto& [k, val] : smdef.extra) {
                    sm.set_attr(k, val);
                }
                xml::Element states{"States"};
                for (const std::string& s : smdef.states) {
                    xml::Element st{"State"};
                    st.set_attr("name", s);
                    states.children.push_back(std::move(st));
                }
                xml::Element transitions{"Transitions"};
                for (const TransitionDef& t : smdef.transitions) {
                    xml::Element tr{"Transition"};
                    tr.set_attr("ID", std::to_string(t.id));
                    tr.set_attr("event", t.event);
                    tr.set_attr("prev", t.prev);
                    tr.set_attr("next", t.next);
                    if (!t.through.empty()) {
                        tr.set_attr("through", t.through);
                    }
                    tr.set_attr("type", t.type);
                    if (t.kind != "user") {
                        tr.set_attr("kind", t.kind);
                    }
                    if (!t.channel.empty()) {
                        tr.set_attr("channel", t.channel);
                    }
                    if (!t.action.empty()) {
                        tr.set_attr("action", t.action);
                    }
                    if (t.reuse.has_value()) {
                        tr.set_attr("reuse", *t.reuse ? "true" : "false");
                    }
                    if (t.auto_return.has_value()) {
                        tr.set_attr("autoReturn", *t.auto_return ? "true" : "false");
                    }
                    for (const auto& [k, val] : t.extra) {
                        tr.set_attr(k, val);
                    }
                    transitions.children.push_back(std::move(tr));
                }
                sm.children.push_back(std::move(states));
                sm.children.push_back(std::move(transitions));
                sms.children.push_back(std::move(sm));
            }
            v.children.push_back(std::move(sms));
            views.children.push_back(std::move(v));
        }
        a.children.push_back(std::move(views));
        apps.children.push_back(std::move(a));
    }
    root.children.push_back(std::move(apps));
    if (!doc.devices.empty()) {
        xml::Element devs{"Devices"};
        for (const DeviceDef& d : doc.devices) {
            xml::Element dev{"Device"};
            dev.set_attr("id", d.id);
            dev.set_attr("apps", join_list(d.apps));
            for (const auto& [k, v] : d.extra) {
                dev.set_attr(k, v);
            }
            devs.children.push_back(std::move(dev));
        }
        root.children.push_back(std::move(devs));
    }
    return root;
}

// ---------------------------------------------------------------------------
// Controls

ControlNode parse_control_node(const xml::Element& e) {
    ControlNode n;
    n.group = e.attr_or("controlGroup", e.attr_or("testGroup"));
    n.class_name = e.attr_or("class");
    const std::string index = e.attr_or("index", "0");
    if (!index.empty() && std::all_of(index.begin(), index.end(),
                                      [](unsigned char c) { return std::isdigit(c); })) {
        n.index = std::stoi(index);
    } else {
        throw SchemaError("control node attribute 'index' must be a non-negative integer", e.line);
    }
    n.text = e.attr_or("text");
    n.resource_id = e.attr_or("resource-id");
    n.clickable = e.attr_or("clickable") == "true";
    n.long_clickable = e.attr_or("long-clickable") == "true";
    n.scrollable = e.attr_or("scrollable") == "true";
    n.is_fixed_value = e.attr_or("IsFixedValue") == "true";
    n.pattern_or_value = e.attr_or("PatternOrValue");
    for (const xml::Element& c : e.children) {
        n.children.push_back(parse_control_node(c));
    }
    return n;
}

const ControlNode* find_group_rec(const ControlNode& n, std::string_view group, bool fold_case) {
    const bool hit = fold_case ? lower(n.group) == lower(group) : n.group == group;
    if (!n.group.empty() && hit) {
        return &n;
    }
    for (const ControlNode& c : n.children) {
        if (const ControlNode* found = find_group_rec(c, group, fold_case)) {
            return found;
        }
    }
    return nullptr;
}

void grouped_rec(const ControlNode& n, std::vector<const ControlNode*>& out) {
    if (!n.group.empty()) {
        out.push_back(&n);
    }
    for (const ControlNode& c : n.children) {
        grouped_rec(c, out);
    }
}

} // namespace

const ControlNode* ControlDefinition::find_group(std::string_view group) const {
    if (const ControlNode* exact = find_group_rec(root, group, false)) {
        return exact;
    }
    return find_group_rec(root, group, true);
}

std::vector<const ControlNode*> ControlDefinition::grouped_nodes() const {
    std::vector<const ControlNode*> out;
    grouped_rec(root, out);
    return out;
}

ModelDocument parse_model(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    ModelDocument doc = (first != std::string_view::npos && text[first] == '{')
                            ? parse_model_json(text)
                            : parse_model_xml(text);
    check_document(doc);
    return doc;
}

std::string serialize_model(const ModelDocument& doc) { return xml::serialize(to_xml(doc)); }

std::string serialize_model_json(const ModelDocument& doc) {
    json apps = json::array();
    for (const ApplicationDef& app : doc.applications) {
        json a{{"name", app.name}};
        if (!app.package.empty()) {
            a["package"] = app.package;
        }
        json views = json::array();
        for (const ViewDef& view : app.views) {
            json v{{"name", view.name}};
            if (!view.controls_file.empty()) {
                v["controlsFile"] = view.controls_file;
            }
            if (view.entry) {
                v["entry"] = true;
            }
            json machines = json::array();
            for (const StateMachineDef& sm : view.machines) {
                json m{{"name", sm.name}};
                if (sm.entry) {
                    m["entry"] = true;
                }
                m["states"] = sm.states;
                json transitions = json::array();
                for (const TransitionDef& t : sm.transitions) {
                    json tr{{"ID", t.id}, {"event", t.event}, {"prev", t.prev}, {"next", t.next}};
                    if (!t.through.empty()) {
                        tr["through"] = t.through;
                    }
                    tr["type"] = t.type;
                    if (t.kind != "user") {
                        tr["kind"] = t.kind;
                    }
                    if (!t.channel.empty()) {
                        tr["channel"] = t.channel;
                    }
                    if (!t.action.empty()) {
                        tr["action"] = t.action;
                    }
                    if (t.reuse.has_value()) {
                        tr["reuse"] = *t.reuse;
                    }
                    if (t.auto_return.has_value()) {
                        tr["autoReturn"] = *t.auto_return;
                    }
                    transitions.push_back(std::move(tr));
                }
                m["transitions"] = std::move(transitions);
                machines.push_back(std::move(m));
            }
            v["stateMachines"] = std::move(machines);
            views.push_back(std::move(v));
        }
        a["views"] = std::move(views);
        apps.push_back(std::move(a));
    }
    json out{{"applications", std::move(apps)}};
    if (!doc.devices.empty()) {
        json devices = json::array();
        for (const DeviceDef& d : doc.devices) {
            devices.push_back(json{{"id", d.id}, {"apps", d.apps}});
        }
        out["devices"] = std::move(devices);
    }
    return out.dump(2) + "\n";
}

ControlDefinition parse_controls(std::string_view text) {
    try {
        ControlDefinition def;
        def.root = parse_control_node(xml::parse(text));
        return def;
    } catch (const xml::ParseError& ex) {
        throw SchemaError(ex.what(), 0);
    }
}

bool document_equal(const ModelDocument& a, const ModelDocument& b) {
    // Canonical form erases source positions, so documents read from
    // different formats compare by content.
    return serialize_model(a) == serialize_model(b);
}

std::string model_hash(const ModelDocument& doc) {
    const std::string bytes = serialize_model(doc);
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lowering

namespace {

std::string qualified(const ApplicationDef& a, const ViewDef& v, const StateMachineDef& m) {
    return a.name + "." + v.name + "." + m.name;
}

std::string fresh_state_name(const std::vector<std::string>& states, std::string base) {
    while (std::find(states.begin(), states.end(), base) != states.end()) {
        base.insert(base.begin(), '_');
    }
    return base;
}

int entry_view_index(const ApplicationDef& app) {
    for (size_t v = 0; v < app.views.size(); ++v) {
        if (app.views[v].entry) {
            return static_cast<int>(v);
        }
    }
    return app.views.empty() ? -1 : 0;
}

int entry_machine_index(const ViewDef& view) {
    for (size_t m = 0; m < view.machines.size(); ++m) {
        if (view.machines[m].entry) {
            return static_cast<int>(m);
        }
    }
    return view.machines.empty() ? -1 : 0;
}

const std::set<std::string>& action_vocabulary() {
    static const std::set<std::string> actions{"click", "swipe", "setText", "waitEvent", "back"};
    return actions;
}

} // namespace

BuildResult build_system_model(const ModelDocument& doc,
                               const std::map<std::string, ControlDefinition>& controls,
                               const std::vector<DeviceDef>& device_assignments) {
    BuildResult res;
    SystemModel& sys = res.model;
    auto add = [&](ViolationKind kind, std::string machine, std::string detail,
                   bool warning = false) {
        res.violations.push_back({kind, warning, std::move(machine), std::move(detail)});
    };

    struct PendingCall {
        int app;
        int view;
        std::string machine_id;
        int source_state;
        const TransitionDef* def;
    };
    std::vector<PendingCall> calls;

    // Pass 1: per-machine states and in-machine transitions. Call transitions
    // mark their source as a connection state and fix its return state; the
    // edges themselves need every machine lowered first.
    for (size_t a = 0; a < doc.applications.size(); ++a) {
        const ApplicationDef& app = doc.applications[a];
        for (size_t v = 0; v < app.views.size(); ++v) {
            const ViewDef& view = app.views[v];
            for (const StateMachineDef& smdef : view.machines) {
                ViewStateMachine m;
                m.id = qualified(app, view, smdef);
                m.states = smdef.states;

                const bool needs_init = std::any_of(smdef.transitions.begin(),
                                                    smdef.transitions.end(),
                                                    [](const TransitionDef& t) { return t.prev.empty(); });
                const bool needs_final = std::any_of(smdef.transitions.begin(),
                                                     smdef.transitions.end(),
                                                     [](const TransitionDef& t) { return t.next.empty(); });
                int init_idx = -1;
                int final_idx = -1;
                if (needs_init) {
                    m.states.push_back(fresh_state_name(m.states, "init"));
                    init_idx = static_cast<int>(m.states.size()) - 1;
                    m.initial.push_back(init_idx);
                }
                if (needs_final) {
                    m.states.push_back(fresh_state_name(m.states, "final"));
                    final_idx = static_cast<int>(m.states.size()) - 1;
                    m.final_states.push_back(final_idx);
                }

                for (const TransitionDef& t : smdef.transitions) {
                    const int src = t.prev.empty() ? init_idx : m.state_index(t.prev);
                    const int dst = t.next.empty() ? final_idx : m.state_index(t.next);
                    if (src < 0 || dst < 0) {
                        throw DanglingReference("transition " + std::to_string(t.id) +
                                                    " references an undeclared state",
                                                t.line);
                    }
                    if (t.type == "Simple") {
                        EventLabel ev{t.event,
                                      t.kind == "system" ? EventKind::system : EventKind::user,
                                      {}};
                        m.transitions.push_back({src, std::move(ev), dst});
                        sys.origins[{m.id, src, t.event}] =
                            TransitionOrigin{app.name, view.name, t.id};
                    } else {
                        if (!m.is_connection(src)) {
                            m.connection.push_back(src);
                        }
                        auto it = m.return_of.find(src);
                        if (it != m.return_of.end() && it->second != dst) {
                            add(ViolationKind::ReturnConflict, m.id,
                                "connection state " + m.state_name(src) + " returns to both " +
                                    m.state_name(it->second) + " and " + m.state_name(dst));
                        } else {
                            m.return_of[src] = dst;
                        }
                        calls.push_back({static_cast<int>(a), static_cast<int>(v), m.id, src, &t});
                        if (!t.channel.empty()) {
                            add(ViolationKind::ChannelViolation, m.id,
                                "call transition " + std::to_string(t.id) +
                                    " cannot be a channel end");
                        }
                    }
                }

                sys.machine_meta[m.id] =
                    MachineMeta{app.name, view.name, app.package, view.controls_file};
                sys.machines.push_back(std::move(m));
            }
        }
    }

    // Pass 2: connection edges and call-event attributes.
    struct SeenAttrs {
        std::optional<bool> reuse;
        std::optional<bool> auto_return;
    };
    std::map<std::string, SeenAttrs> seen_attrs;
    for (const PendingCall& pc : calls) {
        const TransitionDef& t = *pc.def;
        std::string target_id;
        if (t.type == "View") {
            auto vr = resolve_view(doc, pc.app, t.through, t.line);
            if (!vr) {
                throw DanglingReference("through=\"" + t.through + "\" names no view", t.line);
            }
            const ApplicationDef& tapp = doc.applications[static_cast<size_t>(vr->app)];
            const ViewDef& tview = tapp.views[static_cast<size_t>(vr->view)];
            const int em = entry_machine_index(tview);
            if (em < 0) {
                add(ViolationKind::ConfigError, pc.machine_id,
                    "view " + tview.name + " has no state machine to enter");
                continue;
            }
            target_id = qualified(tapp, tview, tview.machines[static_cast<size_t>(em)]);
        } else {
            auto mr = resolve_machine(doc, pc.app, pc.view, t.through, t.line);
            if (!mr) {
                throw DanglingReference("through=\"" + t.through + "\" names no state machine",
                                        t.line);
            }
            const ApplicationDef& tapp = doc.applications[static_cast<size_t>(mr->app)];
            const ViewDef& tview = tapp.views[static_cast<size_t>(mr->view)];
            target_id = qualified(tapp, tview, tview.machines[static_cast<size_t>(mr->machine)]);
        }

        const ViewStateMachine* target = sys.machine(target_id);
        const int target_state =
            (target != nullptr && !target->initial.empty()) ? target->initial.front() : -1;
        const std::string call_name = t.event + "#" + t.through;
        sys.connection.edges.push_back({pc.machine_id, pc.source_state,
                                        EventLabel{call_name, EventKind::call, {}}, target_id,
                                        target_state});
        sys.origins[{pc.machine_id, pc.source_state, call_name}] =
            TransitionOrigin{doc.applications[static_cast<size_t>(pc.app)].name,
                             doc.applications[static_cast<size_t>(pc.app)]
                                 .views[static_cast<size_t>(pc.view)]
                                 .name,
                             t.id};

        SeenAttrs& seen = seen_attrs[call_name];
        if (sys.attributes_of(call_name) == nullptr) {
            sys.call_attrs.push_back(
                {call_name, t.reuse.value_or(false), t.auto_return.value_or(true)});
        }
        auto merge = [&](std::optional<bool> given, std::optional<bool>& prior, bool& slot,
                         const char* what) {
            if (!given.has_value()) {
                return;
            }
            if (prior.has_value() && *prior != *given) {
                add(ViolationKind::DuplicateCallAttributes, pc.machine_id,
                    "call event " + call_name + " declares conflicting " + what);
                return;
            }
            prior = given;
            slot = *given;
        };
        CallEventAttributes* rec = nullptr;
        for (CallEventAttributes& cand : sys.call_attrs) {
            if (cand.event_name == call_name) {
                rec = &cand;
            }
        }
        merge(t.reuse, seen.reuse, rec->reuse, "reuse");
        merge(t.auto_return, seen.auto_return, rec->auto_return, "autoReturn");
    }

    // Channels pair a user-kind send with a system-kind receive by name.
    struct End {
        std::string machine;
        std::string event;
    };
    std::map<std::string, std::pair<std::vector<End>, std::vector<End>>> channel_ends;
    {
        size_t mi = 0;
        for (const ApplicationDef& app : doc.applications) {
            for (const ViewDef& view : app.views) {
                for (const StateMachineDef& smdef : view.machines) {
                    const std::string& id = sys.machines[mi].id;
                    for (const TransitionDef& t : smdef.transitions) {
                        if (t.type != "Simple" || t.channel.empty()) {
                            continue;
                        }
                        auto& [sends, recvs] = channel_ends[t.channel];
                        (t.kind == "system" ? recvs : sends).push_back({id, t.event});
                    }
                    ++mi;
                }
            }
        }
    }
    for (const auto& [name, ends] : channel_ends) {
        const auto& [sends, recvs] = ends;
        if (sends.size() == 1 && recvs.size() == 1) {
            sys.channels.push_back(
                {name, sends[0].machine, sends[0].event, recvs[0].machine, recvs[0].event});
        } else {
            add(ViolationKind::ChannelViolation, "",
                "channel " + name + " has " + std::to_string(sends.size()) + " send and " +
                    std::to_string(recvs.size()) + " receive ends (need exactly one of each)");
        }
    }

    // Devices: explicit assignments win over the document; a missing Devices
    // section means one device running everything.
    std::vector<DeviceDef> devices =
        !device_assignments.empty() ? device_assignments : doc.devices;
    if (devices.empty()) {
        DeviceDef all;
        all.id = "dev0";
        for (const ApplicationDef& app : doc.applications) {
            all.apps.push_back(app.name);
        }
        devices.push_back(std::move(all));
    }
    for (const DeviceDef& d : devices) {
        DeviceSpec spec;
        spec.id = d.id;
        for (const std::string& app_name : d.apps) {
            const ApplicationDef* app = nullptr;
            for (const ApplicationDef& cand : doc.applications) {
                if (cand.name == app_name) {
                    app = &cand;
                }
            }
            if (app == nullptr) {
                add(ViolationKind::ConfigError, "",
                    "device " + d.id + " references unknown application " + app_name);
                continue;
            }
            const int ev = entry_view_index(*app);
            if (ev < 0) {
                add(ViolationKind::ConfigError, "", "application " + app_name + " has no views");
                continue;
            }
            const ViewDef& view = app->views[static_cast<size_t>(ev)];
            const int em = entry_machine_index(view);
            if (em < 0) {
                add(ViolationKind::ConfigError, "",
                    "view " + view.name + " of application " + app_name + " has no state machine");
                continue;
            }
            spec.entry_machines.push_back(
                qualified(*app, view, view.machines[static_cast<size_t>(em)]));
        }
        sys.devices.push_back(std::move(spec));
    }

    // Control bindings, one per (machine, event). Without a controls file the
    // defaults keep the JSON pipeline usable; the uiauto emitter insists on a
    // resolvable group.
    {
        size_t mi = 0;
        for (const ApplicationDef& app : doc.applications) {
            for (const ViewDef& view : app.views) {
                auto cit = controls.find(view.name);
                const ControlDefinition* cd = cit == controls.end() ? nullptr : &cit->second;
                for (const StateMachineDef& smdef : view.machines) {
                    const std::string& id = sys.machines[mi].id;
                    for (const TransitionDef& t : smdef.transitions) {
                        auto key = std::pair{id, t.event};
                        if (sys.control_bindings.contains(key)) {
                            continue;
                        }
                        ControlBinding b;
                        b.control_group = t.event;
                        const ControlNode* node = cd ? cd->find_group(t.event) : nullptr;
                        if (node != nullptr) {
                            b.control_group = node->group;
                            b.class_name = node->class_name;
                            b.index = node->index;
                            b.text = node->text;
                        }
                        if (!t.action.empty()) {
                            b.action = t.action;
                            if (!action_vocabulary().contains(t.action)) {
                                add(ViolationKind::NotSupported, id,
                                    "action '" + t.action + "' for event " + t.event +
                                        " is outside the vocabulary");
                            }
                        } else if (t.kind == "system") {
                            b.action = "waitEvent";
                            b.parameter = t.channel;
                        } else if (node != nullptr && node->is_fixed_value) {
                            b.action = "setText";
                            b.parameter = node->pattern_or_value;
                        } else if (node != nullptr && !node->pattern_or_value.empty()) {
                            add(ViolationKind::NotSupported, id,
                                "pattern-based value for group " + node->group +
                                    " (event " + t.event + ")");
                            b.action = "setText";
                        } else if (node != nullptr && node->clickable) {
                            b.action = "click";
                        } else if (node != nullptr && node->scrollable) {
                            b.action = "swipe";
                        } else if (node != nullptr) {
                            add(ViolationKind::BindError, id,
                                "group " + node->group + " for event " + t.event +
                                    " supports no known action",
                                /*warning=*/true);
                            b.action = "click";
                        } else {
                            if (cd != nullptr) {
                                add(ViolationKind::BindError, id,
                                    "no control group matches event " + t.event, /*warning=*/true);
                            }
                            b.action = "click";
                        }
                        sys.control_bindings[key] = std::move(b);
                    }
                    ++mi;
                }
            }
        }
    }

    sys.model_hash = model_hash(doc);

    std::vector<Violation> sem = validate_system(sys);
    res.violations.insert(res.violations.end(), sem.begin(), sem.end());
    return res;
}

} // namespace mbt
