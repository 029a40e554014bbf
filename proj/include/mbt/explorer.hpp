#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mbt/semantics.hpp"

namespace mbt {

/// Depth budget for exploration. `max_transitions_per_device` caps the number
/// of labelled steps each device may take (returns are free: they are not
/// recorded transitions and can never loop). `global_expansion_cap` is a hard
/// stop on expanded search nodes.
struct ExplorationBound {
    int max_transitions_per_device = 10;
    bool require_all_finished = false;
    bool emit_truncated = false;
    std::size_t global_expansion_cap = 10'000'000;
};

/// One step of a generated test case. `event` is empty for R5 return markers,
/// which emitters may surface as a BACK action. `channel`/`is_send` identify
/// message-channel steps.
struct TestStep {
    std::string device;
    std::optional<EventLabel> event;
    Rule rule = Rule::R1;
    int channel = -1;
    bool is_send = false;

    friend auto operator<=>(const TestStep&, const TestStep&) = default;
};

struct TestCase {
    std::vector<TestStep> steps;
    bool complete = false;  // every device finished at a final state
    bool truncated = false; // cut by the bound or stuck before finishing

    friend auto operator<=>(const TestCase&, const TestCase&) = default;
};

/// A path through one view machine from an initial state to a final or
/// connection state.
struct Flow {
    std::vector<int> states;
    std::vector<EventLabel> events;

    friend auto operator<=>(const Flow&, const Flow&) = default;
};

struct FlowsResult {
    std::vector<Flow> flows;
    std::vector<int> initials_without_flow; // BoundTooSmall warnings
};

struct ExplorationStats {
    std::size_t states_expanded = 0;
    std::size_t max_state_bytes = 0;
    std::size_t peak_live_bytes = 0;
    std::size_t max_backstack_depth = 0;
    std::size_t truncated_flows = 0;
};

struct ExplorationResult {
    std::vector<TestCase> cases; // deduplicated, canonically sorted
    ExplorationStats stats;
    bool cap_hit = false;
};

/// All flows of a single view machine with at most
/// `bound.max_transitions_per_device` transitions.
FlowsResult flows(const ViewStateMachine& m, const ExplorationBound& bound);

/// Bounded exhaustive exploration of one device from the given entry
/// configurations. The search tree is pruned only by the depth bound; no
/// visited-state merging happens across traces, so a configuration reached
/// through different prefixes keeps exploring. Deduplication applies to the
/// final step sequences only.
ExplorationResult explore_device(const std::vector<Configuration>& entries,
                                 const SystemModel& model, const ExplorationBound& bound,
                                 const std::string& device_id = "dev0");

/// Interleaved exploration of all devices in the model. Every combination of
/// per-device entry configurations is a search root. With `reduce`, only the
/// canonical representative of each independence-equivalence class is kept.
/// `jobs` splits the search frontier across threads; results are independent
/// of the job count.
ExplorationResult explore_multi(const SystemModel& model, const ExplorationBound& bound,
                                ReceivePolicy policy, bool reduce, int jobs = 1);

/// Independence of step pairs within one test case: steps on different
/// devices are independent unless they are a matched send/receive pair of the
/// same channel instance (k-th send of a channel matches its k-th receive).
class IndependenceRelation {
public:
    explicit IndependenceRelation(const TestCase& tc);

    bool independent(std::size_t i, std::size_t j) const;

    /// Position of the matched counterpart of step i, or -1.
    int partner(std::size_t i) const { return partners_[i]; }

private:
    std::vector<std::string> devices_;
    std::vector<int> partners_;
};

/// Lexicographically least member of the test case's equivalence class under
/// adjacent swaps of independent steps, comparing steps by (device id, step
/// index within the device). Idempotent. Assumes each channel's sends all
/// originate from one device and its receives from one device, which holds
/// for every model whose devices have disjoint machine pools.
TestCase canonicalize(const TestCase& tc);

} // namespace mbt
