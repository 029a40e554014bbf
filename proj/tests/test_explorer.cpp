#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mbt/explorer.hpp"
#include "mbt/model_io.hpp"
#include "support.hpp"

using namespace mbt;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "cannot open " << path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

SystemModel load_fixture(const std::string& name) {
    ModelDocument doc = parse_model(slurp(std::string(MBT_FIXTURE_DIR) + "/" + name));
    BuildResult built = build_system_model(doc);
    REQUIRE_FALSE(has_errors(built.violations));
    return built.model;
}

Transition tr(int source, const std::string& event, int target,
              EventKind kind = EventKind::user) {
    Transition t;
    t.source = source;
    t.target = target;
    t.event.name = event;
    t.event.kind = kind;
    return t;
}

ExplorationBound bound_of(int n, bool emit_truncated = false) {
    ExplorationBound b;
    b.max_transitions_per_device = n;
    b.emit_truncated = emit_truncated;
    return b;
}

// One state, one self-loop, no final state: nothing ever completes.
SystemModel loop_model() {
    SystemModel model;
    ViewStateMachine m;
    m.id = "L";
    m.states = {"i"};
    m.initial = {0};
    m.transitions = {tr(0, "a", 0)};
    model.machines = {m};
    model.devices.push_back({"dev0", {"L"}});
    return model;
}

std::vector<std::string> event_names(const TestCase& tc) {
    std::vector<std::string> out;
    for (const TestStep& s : tc.steps) {
        out.push_back(s.event ? s.event->name : "(back)");
    }
    return out;
}

std::map<std::string, std::vector<std::string>> projections(const TestCase& tc) {
    std::map<std::string, std::vector<std::string>> per;
    for (const TestStep& s : tc.steps) {
        per[s.device].push_back(std::string(to_string(s.rule)) + ":" +
                                (s.event ? s.event->name : ""));
    }
    return per;
}

} // namespace

TEST_CASE("flows of a linear machine") {
    ViewStateMachine m;
    m.id = "M";
    m.states = {"s0", "s1", "s2"};
    m.initial = {0};
    m.final_states = {2};
    m.transitions = {tr(0, "a", 1), tr(1, "b", 2)};

    FlowsResult res = flows(m, bound_of(4));
    REQUIRE(res.flows.size() == 1);
    CHECK(res.flows[0].states == std::vector<int>{0, 1, 2});
    CHECK(res.flows[0].events.size() == 2);
    CHECK(res.initials_without_flow.empty());
}

TEST_CASE("flows end at final and connection states but keep extending through connections") {
    ViewStateMachine m;
    m.id = "M";
    m.states = {"s0", "c", "f"};
    m.initial = {0};
    m.connection = {1};
    m.final_states = {2};
    m.return_of[1] = 0;
    m.transitions = {tr(0, "a", 1), tr(1, "b", 2)};

    FlowsResult res = flows(m, bound_of(4));
    // a ends in c; a,b ends in f.
    REQUIRE(res.flows.size() == 2);
    CHECK(res.flows[0].states == std::vector<int>{0, 1});
    CHECK(res.flows[1].states == std::vector<int>{0, 1, 2});
}

TEST_CASE("a bound too small to reach any exit is reported per initial state") {
    ViewStateMachine m;
    m.id = "M";
    m.states = {"s0", "s1", "s2"};
    m.initial = {0};
    m.final_states = {2};
    m.transitions = {tr(0, "a", 1), tr(1, "b", 2)};

    FlowsResult res = flows(m, bound_of(1));
    CHECK(res.flows.empty());
    CHECK(res.initials_without_flow == std::vector<int>{0});
}

TEST_CASE("explore_device on a linear machine yields its single complete case") {
    SystemModel model;
    ViewStateMachine m;
    m.id = "M";
    m.states = {"s0", "s1", "s2"};
    m.initial = {0};
    m.final_states = {2};
    m.transitions = {tr(0, "a", 1), tr(1, "b", 2)};
    model.machines = {m};
    model.devices.push_back({"dev0", {"M"}});

    auto res = explore_device(entry_configurations(model, model.devices[0]), model, bound_of(4));
    REQUIRE(res.cases.size() == 1);
    CHECK(res.cases[0].complete);
    CHECK_FALSE(res.cases[0].truncated);
    CHECK(event_names(res.cases[0]) == std::vector<std::string>{"a", "b"});
    CHECK(res.stats.states_expanded > 0);
    CHECK(res.stats.max_state_bytes > 0);
}

TEST_CASE("the bound cuts unfinished traces; emit_truncated surfaces every prefix") {
    SystemModel model = loop_model();
    auto entries = entry_configurations(model, model.devices[0]);

    SUBCASE("without emit_truncated nothing is emitted") {
        auto res = explore_device(entries, model, bound_of(3));
        CHECK(res.cases.empty());
        CHECK(res.stats.truncated_flows > 0);
    }

    SUBCASE("with emit_truncated the three prefixes appear") {
        auto res = explore_device(entries, model, bound_of(3, true));
        REQUIRE(res.cases.size() == 3);
        for (size_t i = 0; i < 3; ++i) {
            CHECK(res.cases[i].truncated);
            CHECK_FALSE(res.cases[i].complete);
            CHECK(res.cases[i].steps.size() == i + 1);
        }
    }
}

TEST_CASE("explore_multi explores one root per entry combination") {
    SystemModel model = load_fixture("facebook_youtube.xml");
    // dev1 runs both apps, so YouTube-only traces exist alongside Facebook ones.
    auto res = explore_multi(model, bound_of(6), ReceivePolicy::strict, false);
    bool saw_youtube_only = false;
    for (const TestCase& tc : res.cases) {
        if (event_names(tc) == std::vector<std::string>{"PlayMovie", "StopMovie"}) {
            saw_youtube_only = true;
        }
    }
    CHECK(saw_youtube_only);
    CHECK(res.cases.size() == 7);
}

TEST_CASE("strict policy forbids receive-before-send, relaxed permits it") {
    SystemModel model = load_fixture("messaging.xml");

    auto strict = explore_multi(model, bound_of(2), ReceivePolicy::strict, false);
    REQUIRE(strict.cases.size() == 1);
    CHECK(event_names(strict.cases[0]) == std::vector<std::string>{"SendPing", "ReceivePing"});
    CHECK(strict.cases[0].steps[0].rule == Rule::R6);
    CHECK(strict.cases[0].steps[1].rule == Rule::R7);

    auto relaxed = explore_multi(model, bound_of(2), ReceivePolicy::relaxed, false);
    REQUIRE(relaxed.cases.size() == 2);
    std::set<std::vector<std::string>> orders;
    for (const TestCase& tc : relaxed.cases) {
        CHECK(tc.complete);
        orders.insert(event_names(tc));
    }
    CHECK(orders.contains({"SendPing", "ReceivePing"}));
    CHECK(orders.contains({"ReceivePing", "SendPing"}));
}

TEST_CASE("global expansion cap flags the run instead of looping forever") {
    SystemModel model = load_fixture("facebook_youtube.xml");
    ExplorationBound b = bound_of(10);
    b.global_expansion_cap = 50;
    auto res = explore_multi(model, b, ReceivePolicy::strict, false);
    CHECK(res.cap_hit);
}

TEST_CASE("independence: same-device steps and matched channel pairs are dependent") {
    SystemModel model = load_fixture("messaging.xml");
    auto res = explore_multi(model, bound_of(2), ReceivePolicy::strict, false);
    REQUIRE(res.cases.size() == 1);
    IndependenceRelation rel(res.cases[0]);
    CHECK_FALSE(rel.independent(0, 1)); // the send and its matched receive
    CHECK(rel.partner(0) == 1);
    CHECK(rel.partner(1) == 0);
}

TEST_CASE("canonicalize is idempotent and preserves per-device projections") {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        testgen::RandomCase rc = testgen::random_case(seed);
        ExplorationBound b = support::bound_of(rc);
        b.global_expansion_cap = 20000;
        auto res = explore_multi(rc.model, b,
                                 rc.relaxed ? ReceivePolicy::relaxed : ReceivePolicy::strict,
                                 false);
        if (res.cap_hit) continue;
        for (const TestCase& tc : res.cases) {
            TestCase canon = canonicalize(tc);
            CHECK(canonicalize(canon) == canon);
            CHECK(projections(canon) == projections(tc));
            CHECK(canon.steps.size() == tc.steps.size());
            CHECK(canon.complete == tc.complete);

            // Matched send/receive pairs keep their relative order.
            IndependenceRelation rel(tc);
            IndependenceRelation rel2(canon);
            std::vector<int> sends_before_recv_orig, sends_before_recv_canon;
            for (size_t i = 0; i < tc.steps.size(); ++i) {
                if (tc.steps[i].channel >= 0 && tc.steps[i].is_send && rel.partner(i) >= 0) {
                    sends_before_recv_orig.push_back(static_cast<int>(i) < rel.partner(i));
                }
                if (canon.steps[i].channel >= 0 && canon.steps[i].is_send &&
                    rel2.partner(i) >= 0) {
                    sends_before_recv_canon.push_back(static_cast<int>(i) < rel2.partner(i));
                }
            }
            CHECK(sends_before_recv_orig == sends_before_recv_canon);
        }
    }
}

TEST_CASE("reduction keeps exactly the canonical representatives") {
    auto run = [](const SystemModel& model, int bound) {
        auto full = explore_multi(model, bound_of(bound), ReceivePolicy::relaxed, false);
        auto reduced = explore_multi(model, bound_of(bound), ReceivePolicy::relaxed, true);

        std::set<std::vector<TestStep>> canonical;
        for (const TestCase& tc : full.cases) {
            canonical.insert(canonicalize(tc).steps);
        }
        std::set<std::vector<TestStep>> got;
        for (const TestCase& tc : reduced.cases) {
            got.insert(tc.steps);
        }
        CHECK(got == canonical);
        CHECK(reduced.cases.size() <= full.cases.size());
    };
    run(load_fixture("independent.xml"), 3);
    run(load_fixture("messaging.xml"), 2);
}

TEST_CASE("reduction on two independent apps keeps one interleaving") {
    SystemModel model = load_fixture("independent.xml");
    auto full = explore_multi(model, bound_of(3), ReceivePolicy::strict, false);
    auto reduced = explore_multi(model, bound_of(3), ReceivePolicy::strict, true);
    CHECK(full.cases.size() == 3);
    CHECK(reduced.cases.size() == 1);
}

TEST_CASE("explorer output matches the reference enumerator") {
    SUBCASE("fixtures") {
        struct Scenario {
            const char* file;
            int bound;
            bool relaxed;
            bool emit_truncated;
        };
        for (const Scenario& sc : {Scenario{"facebook_youtube.xml", 6, false, false},
                                   Scenario{"facebook_youtube.xml", 4, false, true},
                                   Scenario{"messaging.xml", 2, false, false},
                                   Scenario{"messaging.xml", 3, true, false},
                                   Scenario{"independent.xml", 3, false, false}}) {
            SystemModel model = load_fixture(sc.file);
            auto res = explore_multi(model, bound_of(sc.bound, sc.emit_truncated),
                                     sc.relaxed ? ReceivePolicy::relaxed : ReceivePolicy::strict,
                                     false);
            oracle::Options opt;
            opt.bound = sc.bound;
            opt.relaxed = sc.relaxed;
            opt.emit_truncated = sc.emit_truncated;
            auto want = support::normalize(oracle::enumerate(model, opt));
            auto got = support::normalize(res);
            CHECK_MESSAGE(got == want,
                          sc.file << " bound " << sc.bound << "\nonly explorer:\n"
                                  << support::diff(got, want) << "only oracle:\n"
                                  << support::diff(want, got));
        }
    }

    SUBCASE("random models") {
        int compared = 0;
        for (std::uint64_t seed = 1; seed <= 80 && compared < 50; ++seed) {
            testgen::RandomCase rc = testgen::random_case(seed);
            ExplorationBound b = support::bound_of(rc);
            b.global_expansion_cap = 20000;
            auto res = explore_multi(rc.model, b,
                                     rc.relaxed ? ReceivePolicy::relaxed : ReceivePolicy::strict,
                                     false);
            if (res.cap_hit) continue;
            ++compared;
            auto want = support::normalize(oracle::enumerate(rc.model, support::oracle_options(rc)));
            auto got = support::normalize(res);
            CHECK_MESSAGE(got == want,
                          "seed " << seed << "\nonly explorer:\n" << support::diff(got, want)
                                  << "only oracle:\n" << support::diff(want, got));
        }
        CHECK(compared >= 30);
    }
}

TEST_CASE("job count does not change the result") {
    for (std::uint64_t seed : {3ULL, 7ULL, 11ULL, 19ULL}) {
        testgen::RandomCase rc = testgen::random_case(seed);
        ExplorationBound b = support::bound_of(rc);
        b.global_expansion_cap = 50000;
        ReceivePolicy policy = rc.relaxed ? ReceivePolicy::relaxed : ReceivePolicy::strict;
        auto seq = explore_multi(rc.model, b, policy, false, 1);
        auto par = explore_multi(rc.model, b, policy, false, 4);
        if (seq.cap_hit || par.cap_hit) continue;
        CHECK(seq.cases == par.cases);
    }

    SystemModel model = load_fixture("facebook_youtube.xml");
    auto seq = explore_multi(model, bound_of(6), ReceivePolicy::strict, false, 1);
    auto par = explore_multi(model, bound_of(6), ReceivePolicy::strict, false, 4);
    CHECK(seq.cases == par.cases);
}
