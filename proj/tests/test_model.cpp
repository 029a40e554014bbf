#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "mbt/model.hpp"

using namespace mbt;

namespace {

Transition tr(int source, const std::string& event, int target,
              EventKind kind = EventKind::user) {
    Transition t;
    t.source = source;
    t.target = target;
    t.event.name = event;
    t.event.kind = kind;
    return t;
}

ViewStateMachine well_formed() {
    ViewStateMachine m;
    m.id = "M";
    m.states = {"s0", "s1", "s2", "s3"};
    m.initial = {0};
    m.connection = {1};
    m.final_states = {3};
    m.return_of[1] = 2;
    m.transitions = {tr(0, "a", 1), tr(1, "b", 2), tr(2, "c", 3)};
    return m;
}

bool has_kind(const std::vector<Violation>& vs, ViolationKind kind) {
    return std::any_of(vs.begin(), vs.end(), [kind](const Violation& v) { return v.kind == kind; });
}

bool has_error_kind(const std::vector<Violation>& vs, ViolationKind kind) {
    return std::any_of(vs.begin(), vs.end(),
                       [kind](const Violation& v) { return v.kind == kind && !v.warning; });
}

// Minimal valid system: caller A with connection state calling B.
SystemModel small_system() {
    SystemModel model;
    ViewStateMachine a = well_formed();
    a.id = "A";
    ViewStateMachine b;
    b.id = "B";
    b.states = {"b0", "b1"};
    b.initial = {0};
    b.final_states = {1};
    b.transitions = {tr(0, "w", 1)};
    model.machines = {a, b};
    model.connection.edges.push_back({"A", 1, {"call", EventKind::call, {}}, "B", 0});
    model.call_attrs.push_back({"call", false, true});
    model.devices.push_back({"dev0", {"A"}});
    return model;
}

} // namespace

TEST_CASE("a well-formed machine validates cleanly") {
    CHECK(validate_view_machine(well_formed()).empty());
}

TEST_CASE("initial, connection and final sets must be disjoint") {
    ViewStateMachine m = well_formed();
    m.connection.push_back(0); // initial is also connection
    m.return_of[0] = 1;
    CHECK(has_kind(validate_view_machine(m), ViolationKind::DisjointnessViolation));

    ViewStateMachine n = well_formed();
    n.final_states.push_back(1); // connection is also final
    CHECK(has_kind(validate_view_machine(n), ViolationKind::DisjointnessViolation));
}

TEST_CASE("two transitions on the same state and event break determinism") {
    ViewStateMachine m = well_formed();
    m.transitions.push_back(tr(0, "a", 2));
    CHECK(has_kind(validate_view_machine(m), ViolationKind::DeterminismViolation));
}

TEST_CASE("one event name cannot carry two kinds") {
    ViewStateMachine m = well_formed();
    m.transitions.push_back(tr(2, "a", 3, EventKind::system));
    CHECK(has_kind(validate_view_machine(m), ViolationKind::DeterminismViolation));
}

TEST_CASE("a final state must not evolve") {
    ViewStateMachine m = well_formed();
    m.transitions.push_back(tr(3, "oops", 0));
    CHECK(has_kind(validate_view_machine(m), ViolationKind::FinalStateEvolves));
}

TEST_CASE("call events cannot label in-machine transitions") {
    ViewStateMachine m = well_formed();
    m.transitions.push_back(tr(2, "call", 3, EventKind::call));
    CHECK(has_kind(validate_view_machine(m), ViolationKind::CallEventKindViolation));
}

TEST_CASE("connection states need a return state") {
    ViewStateMachine m = well_formed();
    m.return_of.clear();
    CHECK(has_kind(validate_view_machine(m), ViolationKind::MissingReturn));
}

TEST_CASE("transition endpoints must exist") {
    ViewStateMachine m = well_formed();
    m.transitions.push_back(tr(0, "x", 9));
    CHECK(has_kind(validate_view_machine(m), ViolationKind::DanglingState));
}

TEST_CASE("machines need an initial state; exit-less machines only warn") {
    ViewStateMachine m = well_formed();
    m.initial.clear();
    CHECK(has_kind(validate_view_machine(m), ViolationKind::EmptyInitial));

    ViewStateMachine n;
    n.id = "N";
    n.states = {"s0"};
    n.initial = {0};
    n.transitions = {tr(0, "spin", 0)};
    auto vs = validate_view_machine(n);
    CHECK(has_kind(vs, ViolationKind::NoExit));
    CHECK_FALSE(has_errors(vs));
}

TEST_CASE("a valid system validates with no errors") {
    auto vs = validate_system(small_system());
    CHECK_FALSE(has_errors(vs));
}

TEST_CASE("duplicate machine ids are rejected") {
    SystemModel model = small_system();
    model.machines.push_back(model.machines[1]);
    CHECK(has_error_kind(validate_system(model), ViolationKind::DuplicateMachineId));
}

TEST_CASE("connection edges must leave a connection state and enter an initial state") {
    SystemModel model = small_system();
    model.connection.edges[0].source_state = 0;
    CHECK(has_error_kind(validate_system(model), ViolationKind::ConnectionSourceViolation));

    model = small_system();
    model.connection.edges[0].target_state = 1;
    CHECK(has_error_kind(validate_system(model), ViolationKind::ConnectionTargetViolation));

    model = small_system();
    model.connection.edges[0].source_machine = "Ghost";
    CHECK(has_error_kind(validate_system(model), ViolationKind::ConnectionSourceViolation));

    model = small_system();
    model.connection.edges[0].target_machine = "Ghost";
    CHECK(has_error_kind(validate_system(model), ViolationKind::ConnectionTargetViolation));
}

TEST_CASE("a connection state without an outgoing edge is only a warning") {
    SystemModel model = small_system();
    model.connection.edges.clear();
    auto vs = validate_system(model);
    CHECK(has_kind(vs, ViolationKind::ConnectionSourceViolation));
    CHECK_FALSE(has_errors(vs));
}

TEST_CASE("call events need exactly one attribute record") {
    SystemModel model = small_system();
    model.call_attrs.clear();
    CHECK(has_error_kind(validate_system(model), ViolationKind::MissingCallAttributes));

    model = small_system();
    model.call_attrs.push_back({"call", true, true});
    CHECK(has_error_kind(validate_system(model), ViolationKind::DuplicateCallAttributes));
}

TEST_CASE("edges labelled by non-call events are rejected") {
    SystemModel model = small_system();
    model.connection.edges[0].call_event.kind = EventKind::user;
    CHECK(has_error_kind(validate_system(model), ViolationKind::CallEventKindViolation));
}

TEST_CASE("one call event with several targets is an ambiguity warning") {
    SystemModel model = small_system();
    ConnectionEdge e = model.connection.edges[0];
    e.target_state = 0;
    e.target_machine = "A"; // same event now reaches two machines
    model.connection.edges.push_back(e);
    auto vs = validate_system(model);
    CHECK(has_kind(vs, ViolationKind::AmbiguousConnectionEdge));
}

TEST_CASE("channel bindings are checked end to end") {
    SystemModel model = small_system();
    model.machines[1].transitions.push_back(tr(0, "note", 1, EventKind::system));
    model.channels.push_back({"c", "A", "a", "B", "note"});
    CHECK_FALSE(has_errors(validate_system(model)));

    SUBCASE("unknown machine") {
        model.channels[0].send_machine = "Ghost";
        CHECK(has_error_kind(validate_system(model), ViolationKind::ChannelViolation));
    }
    SUBCASE("send event must exist and be a user event") {
        model.channels[0].send_event = "note_missing";
        CHECK(has_error_kind(validate_system(model), ViolationKind::ChannelViolation));
    }
    SUBCASE("receive event must be a system event") {
        model.channels[0].recv_event = "w"; // user kind
        CHECK(has_error_kind(validate_system(model), ViolationKind::ChannelViolation));
    }
    SUBCASE("send and receive in one machine") {
        model.channels[0].recv_machine = "A";
        CHECK(has_error_kind(validate_system(model), ViolationKind::ChannelViolation));
    }
    SUBCASE("an event can sit in only one binding") {
        model.channels.push_back(model.channels[0]);
        model.channels[1].channel = "c2";
        CHECK(has_error_kind(validate_system(model), ViolationKind::ChannelViolation));
    }
}

TEST_CASE("devices reference known machines, once each") {
    SystemModel model = small_system();
    model.devices.push_back({"dev1", {"Ghost"}});
    CHECK(has_error_kind(validate_system(model), ViolationKind::UnknownDeviceMachine));

    model = small_system();
    model.devices.push_back({"dev0", {"B"}});
    CHECK(has_error_kind(validate_system(model), ViolationKind::DuplicateDeviceId));

    model = small_system();
    model.devices.push_back({"dev1", {}});
    CHECK(has_error_kind(validate_system(model), ViolationKind::ConfigError));
}

TEST_CASE("model accessors resolve ids and names") {
    SystemModel model = small_system();
    CHECK(model.machine_index("A") == 0);
    CHECK(model.machine_index("B") == 1);
    CHECK(model.machine_index("Ghost") == -1);
    CHECK(model.machine("B")->id == "B");
    CHECK(model.machine("Ghost") == nullptr);
    CHECK(model.machines[0].state_index("s2") == 2);
    CHECK(model.machines[0].state_index("nope") == -1);
    CHECK(model.attributes_of("call") != nullptr);
    CHECK(model.attributes_of("nope") == nullptr);
    CHECK(model.device_index("dev0") == 0);
    CHECK(model.device_index("devX") == -1);

    const ViewStateMachine& a = model.machines[0];
    CHECK(a.is_initial(0));
    CHECK(a.is_connection(1));
    CHECK(a.is_final(3));
    CHECK_FALSE(a.is_final(0));
}

TEST_CASE("violation formatting names the machine and the defect") {
    Violation v{ViolationKind::DeterminismViolation, false, "A.V.M", "(s0, a) has more than one target"};
    std::string s = v.format();
    CHECK(s.find("DeterminismViolation") != std::string::npos);
    CHECK(s.find("A.V.M") != std::string::npos);
    CHECK(s.find("more than one target") != std::string::npos);
}
