#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>

#include "json.hpp"
#include "mbt/emitters.hpp"
#include "mbt/model_io.hpp"

using namespace mbt;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "cannot open " << path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string fixture(const std::string& name) {
    return slurp(std::string(MBT_FIXTURE_DIR) + "/" + name);
}

SystemModel load(const std::string& name, bool with_controls = false) {
    ModelDocument doc = parse_model(fixture(name));
    std::map<std::string, ControlDefinition> controls;
    if (with_controls) {
        controls["HomeView"] = parse_controls(fixture("controls/Home.xml"));
        controls["CommentView"] = parse_controls(fixture("controls/Comment.xml"));
        controls["MovieView"] = parse_controls(fixture("controls/Movie.xml"));
    }
    BuildResult built = build_system_model(doc, controls);
    REQUIRE_FALSE(has_errors(built.violations));
    return built.model;
}

ExplorationBound bound_of(int n) {
    ExplorationBound b;
    b.max_transitions_per_device = n;
    return b;
}

const TestCase* case_with_event(const std::vector<TestCase>& cases, const std::string& event) {
    for (const TestCase& tc : cases) {
        for (const TestStep& s : tc.steps) {
            if (s.event && s.event->name == event) return &tc;
        }
    }
    return nullptr;
}

size_t count_occurrences(const std::string& text, const std::string& needle) {
    size_t n = 0;
    for (size_t pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

} // namespace

TEST_CASE("annotate_trace recovers machines and states along a call") {
    SystemModel model = load("facebook_youtube.xml");
    auto res = explore_multi(model, bound_of(6), ReceivePolicy::strict, false);
    const TestCase* tc = case_with_event(res.cases, "Comment#CommentView");
    REQUIRE(tc != nullptr);

    auto ann = annotate_trace(tc->steps, model, ReceivePolicy::strict);
    REQUIRE(ann.has_value());
    REQUIRE(ann->size() == tc->steps.size());

    const ViewStateMachine* home = model.machine("Facebook.HomeView.HomeUpdate");
    for (size_t i = 0; i < tc->steps.size(); ++i) {
        const TestStep& step = tc->steps[i];
        const StepAnnotation& a = (*ann)[i];
        if (step.event && step.event->name == "Comment#CommentView") {
            CHECK(a.machine == "Facebook.HomeView.HomeUpdate");
            // A call annotates with the caller's resume state.
            CHECK(a.target == home->return_of.at(a.source));
        }
        if (step.rule == Rule::R5) {
            CHECK(a.target == -1);
        }
        if (step.event && step.event->name == "WriteText") {
            CHECK(a.machine == "Facebook.CommentView.WriteComment");
        }
    }
}

TEST_CASE("annotate_trace rejects sequences the model cannot perform") {
    SystemModel model = load("messaging.xml");
    std::vector<TestStep> steps;
    TestStep s;
    s.device = "devA";
    s.event = EventLabel{"NoSuchEvent", EventKind::user, {}};
    s.rule = Rule::R1;
    steps.push_back(s);
    CHECK_FALSE(annotate_trace(steps, model, ReceivePolicy::strict).has_value());
}

TEST_CASE("action scripts carry header, bindings and channel parameters") {
    SystemModel model = load("messaging.xml");
    auto res = explore_multi(model, bound_of(2), ReceivePolicy::strict, false);
    REQUIRE(res.cases.size() == 1);

    ActionScript script =
        make_action_script(res.cases[0], model, bound_of(2), ReceivePolicy::strict);
    CHECK(script.model_hash == model.model_hash);
    CHECK(script.bound == 2);
    CHECK(script.policy == "strict");
    CHECK(script.devices == std::vector<std::string>{"devA", "devB"});
    REQUIRE(script.steps.size() == 2);

    CHECK(script.steps[0].device_id == "devA");
    CHECK(script.steps[0].event == "SendPing");
    CHECK(script.steps[0].rule == "R6");

    // The receive lowers to a blocking wait on the channel name.
    CHECK(script.steps[1].device_id == "devB");
    CHECK(script.steps[1].action == "waitEvent");
    CHECK(script.steps[1].parameter == "ping");
    CHECK(script.steps[1].rule == "R7");
}

TEST_CASE("returns become back actions") {
    SystemModel model = load("facebook_youtube.xml", true);
    auto res = explore_multi(model, bound_of(6), ReceivePolicy::strict, false);
    const TestCase* tc = case_with_event(res.cases, "Comment#CommentView");
    REQUIRE(tc != nullptr);

    ActionScript script = make_action_script(*tc, model, bound_of(6), ReceivePolicy::strict);
    bool saw_back = false;
    for (size_t i = 0; i < tc->steps.size(); ++i) {
        if (tc->steps[i].rule == Rule::R5) {
            saw_back = true;
            CHECK(script.steps[i].action == "back");
            CHECK(script.steps[i].event.empty());
            CHECK(script.steps[i].rule == "R5");
        }
    }
    CHECK(saw_back);
}

TEST_CASE("json scripts round-trip and replay against the model") {
    SystemModel model = load("facebook_youtube.xml", true);
    auto res = explore_multi(model, bound_of(6), ReceivePolicy::strict, false);
    REQUIRE_FALSE(res.cases.empty());

    for (const TestCase& tc : res.cases) {
        std::string text = emit_script(tc, model, ScriptFormat::json, bound_of(6),
                                       ReceivePolicy::strict);
        CHECK(text.back() == '\n');

        // Field names are part of the format.
        nlohmann::json j = nlohmann::json::parse(text);
        REQUIRE(j.contains("header"));
        CHECK(j["header"].contains("modelHash"));
        CHECK(j["header"].contains("bound"));
        CHECK(j["header"].contains("policy"));
        CHECK(j["header"].contains("devices"));
        REQUIRE(j.contains("steps"));
        if (!j["steps"].empty()) {
            const auto& st = j["steps"][0];
            CHECK(st.contains("deviceId"));
            CHECK(st.contains("action"));
            CHECK(st.contains("rule"));
            CHECK(st.contains("selector"));
            CHECK(st["selector"].contains("classname"));
            CHECK(st["selector"].contains("index"));
        }

        ActionScript parsed = parse_action_script(text);
        CHECK(parsed.model_hash == model.model_hash);
        CHECK(parsed.steps.size() == tc.steps.size());

        std::string error;
        CHECK_MESSAGE(replay_script(parsed, model, &error), error);
    }
}

TEST_CASE("replay rejects tampered scripts") {
    SystemModel model = load("messaging.xml");
    auto res = explore_multi(model, bound_of(2), ReceivePolicy::strict, false);
    ActionScript script =
        make_action_script(res.cases[0], model, bound_of(2), ReceivePolicy::strict);

    SUBCASE("unknown event") {
        script.steps[0].event = "Bogus";
        std::string error;
        CHECK_FALSE(replay_script(script, model, &error));
        CHECK_FALSE(error.empty());
    }
    SUBCASE("receive before send under the script's strict policy") {
        std::swap(script.steps[0], script.steps[1]);
        CHECK_FALSE(replay_script(script, model));
    }
    SUBCASE("hash of a different model") {
        script.model_hash = "0000000000000000";
        std::string error;
        CHECK_FALSE(replay_script(script, model, &error));
        CHECK(error.find("hash") != std::string::npos);
    }
}

TEST_CASE("malformed script text raises EmitError") {
    CHECK_THROWS_AS(parse_action_script("not json"), EmitError);
    CHECK_THROWS_AS(parse_action_script("{\"steps\": 5}"), EmitError);
}

TEST_CASE("uiauto scripts mirror the control bindings") {
    SystemModel model = load("facebook_youtube.xml", true);
    auto res = explore_multi(model, bound_of(6), ReceivePolicy::strict, false);
    const TestCase* tc = case_with_event(res.cases, "Comment#CommentView");
    REQUIRE(tc != nullptr);

    std::string java = emit_script(*tc, model, ScriptFormat::uiauto, bound_of(6),
                                   ReceivePolicy::strict);

    CHECK(java.find("public class TestDevice1 extends UiAutomatorTestCase") != std::string::npos);
    CHECK(java.find("import com.android.uiautomator.core.UiSelector;") != std::string::npos);
    CHECK(java.find("// Execution order:") != std::string::npos);

    // The Comment step keeps its authored transition identity and selector.
    CHECK(java.find("TestFacebookComment2") != std::string::npos);
    CHECK(java.find("new UiSelector().className(\"android.widget.TextView\")"
                    ".index(1).textContains(\"Comment\")") != std::string::npos);
    CHECK(java.find("// Transition 2 previous S0 next S0 on view HomeView") != std::string::npos);

    // The call into CommentView runs its machine and returns.
    CHECK(java.find("control.setText(\"Check this video!\");") != std::string::npos);
    CHECK(java.find("getUiDevice().pressBack();") != std::string::npos);
}

TEST_CASE("uiauto needs resolvable selectors") {
    SystemModel model = load("facebook_youtube.xml"); // no controls loaded
    auto res = explore_multi(model, bound_of(6), ReceivePolicy::strict, false);
    REQUIRE_FALSE(res.cases.empty());
    CHECK_THROWS_AS(emit_script(res.cases[0], model, ScriptFormat::uiauto, bound_of(6),
                                ReceivePolicy::strict),
                    EmitError);
}

TEST_CASE("out-of-vocabulary actions fail emission") {
    ModelDocument doc = parse_model(fixture("independent.xml"));
    doc.applications[0].views[0].machines[0].transitions[0].action = "rotate";
    BuildResult built = build_system_model(doc);
    auto res = explore_multi(built.model, bound_of(3), ReceivePolicy::strict, false);
    const TestCase* tc = case_with_event(res.cases, "TapA");
    REQUIRE(tc != nullptr);
    CHECK_THROWS_WITH_AS(
        std::ignore = make_action_script(*tc, built.model, bound_of(3), ReceivePolicy::strict),
        doctest::Contains("BindError"), EmitError);
}

TEST_CASE("the PROMELA model is structurally faithful to the fixture") {
    SystemModel model = load("facebook_youtube.xml");
    std::string pml = emit_promela(model, bound_of(6));

    CHECK(pml.find("#define DEVICES 1") != std::string::npos);
    CHECK(pml.find("#define MAX_TR 6") != std::string::npos);
    CHECK(pml.find("#define MAX_BK 8") != std::string::npos);
    CHECK(pml.find("typedef Device {") != std::string::npos);
    CHECK(pml.find("typedef Backstack {") != std::string::npos);
    CHECK(pml.find("#define currentState currentBackstack.states[currentBackstack.index]") !=
          std::string::npos);
    CHECK(pml.find("inline pushToBackstack(device, st) {") != std::string::npos);
    CHECK(pml.find("assert(currentBackstack.index < MAX_BK - 1);") != std::string::npos);
    CHECK(pml.find("inline popFromBackstack(device) {") != std::string::npos);
    CHECK(pml.find("inline transition(device, vw, id) {") != std::string::npos);
    CHECK(pml.find("State_Facebook_HomeView_HomeUpdate_S0") != std::string::npos);
    CHECK(pml.find("VIEW_Facebook_HomeView") != std::string::npos);

    // One do-loop branch per authored transition of HomeUpdate.
    for (int id = 1; id <= 7; ++id) {
        CHECK_MESSAGE(
            pml.find("transition(device, VIEW_Facebook_HomeView, " + std::to_string(id) + ")") !=
                std::string::npos,
            "missing transition " << id);
    }

    // traceCloser plus one proctype per device.
    CHECK(count_occurrences(pml, "active proctype") == 2);
    CHECK(pml.find("active proctype traceCloser()") != std::string::npos);
    CHECK(pml.find("printf(\"TR %d %d %d\\n\", trace_dev[i], trace_view[i], trace_id[i]);") !=
          std::string::npos);
    CHECK(pml.find("printf(\"END_TC\\n\")") != std::string::npos);

    // Every branch guard carries the budget so disabled branches never block.
    size_t guards = count_occurrences(pml, "devices[device].index < MAX_TR");
    CHECK(guards >= 11); // 7 HomeUpdate + 2 WriteComment + 2 ViewingMovie
}

TEST_CASE("the PROMELA model wires channels as counters") {
    SystemModel model = load("messaging.xml");
    std::string pml = emit_promela(model, bound_of(3));

    CHECK(pml.find("#define DEVICES 2") != std::string::npos);
    CHECK(pml.find("byte chan_ping = 0;") != std::string::npos);
    CHECK(pml.find("chan_ping > 0") != std::string::npos);
    CHECK(pml.find("chan_ping++") != std::string::npos);
    CHECK(pml.find("chan_ping--") != std::string::npos);
    CHECK(count_occurrences(pml, "active proctype") == 3);
}

TEST_CASE("PROMELA emission rejects empty models") {
    SystemModel empty;
    CHECK_THROWS_AS(emit_promela(empty, bound_of(3)), EmitError);
}

TEST_CASE("reports render in all three formats") {
    SystemModel model = load("messaging.xml");
    auto res = explore_multi(model, bound_of(2), ReceivePolicy::strict, false);
    GenerationReport report =
        make_report(res, model, bound_of(2), ReceivePolicy::strict, false, 1.23456);

    CHECK(report.devices == 2);
    CHECK(report.transitions == 2);
    CHECK(report.test_cases == 1);
    CHECK(report.policy == "strict");

    SUBCASE("csv") {
        std::string csv = emit_report(report, ReportFormat::csv);
        REQUIRE(csv.find('\n') != std::string::npos);
        std::string header = csv.substr(0, csv.find('\n'));
        CHECK(header ==
              "devices,backstack,transitions,test_cases,time_s,states,state_size_b,memory_mb");
        CHECK(csv.find(",1.235,") != std::string::npos); // time_s rounded to ms
        CHECK(csv.back() == '\n');
    }
    SUBCASE("json") {
        nlohmann::json j = nlohmann::json::parse(emit_report(report, ReportFormat::json));
        CHECK(j["devices"] == 2);
        CHECK(j["transitions"] == 2);
        CHECK(j["test_cases"] == 1);
        CHECK(j["policy"] == "strict");
        CHECK(j.contains("time_s"));
        CHECK(j.contains("states"));
        CHECK(j.contains("memory_mb"));
        CHECK(j.contains("truncated_flows"));
        CHECK(j.contains("cap_hit"));
    }
    SUBCASE("text") {
        std::string text = emit_report(report, ReportFormat::text);
        CHECK(text.find("devices: 2") != std::string::npos);
        CHECK(text.find("test_cases: 1") != std::string::npos);
    }
}
