#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mbt/model.hpp"

namespace mbt {

/// Identifies a state globally as (machine index, state index) within a
/// SystemModel.
struct StateRef {
    int machine = -1;
    int state = -1;

    friend auto operator<=>(const StateRef&, const StateRef&) = default;
};

/// The state of one device: the current view-machine state plus the stacks of
/// suspended return states and the call events that created them. The two
/// stacks grow and shrink in lockstep.
struct Configuration {
    StateRef current;
    std::vector<StateRef> state_history;
    std::vector<int> event_history; // indices into SystemModel::connection.edges

    friend auto operator<=>(const Configuration&, const Configuration&) = default;
};

/// Composed state of all devices plus the per-channel ledger of sent but not
/// yet consumed messages. In relaxed receive mode a ledger entry may go
/// negative: a receive ran ahead of its send and the debt must be repaid by a
/// later send in the same trace.
struct MultiDeviceState {
    std::vector<Configuration> configs;
    std::vector<int> channel_counts;
    std::vector<bool> finished;

    friend auto operator<=>(const MultiDeviceState&, const MultiDeviceState&) = default;
};

enum class Rule : std::uint8_t { R1, R2, R3, R4, R5, R6, R7 };

std::string_view to_string(Rule rule);

/// Whether receive events require their matching send to be pending (strict,
/// the literal rule) or may run ahead of it (relaxed).
enum class ReceivePolicy { strict, relaxed };

std::string_view to_string(ReceivePolicy policy);

/// One enabled step. `event` is absent exactly for R5, whose conclusion is
/// unlabelled. `channel`/`is_send` are set when the event is bound to a
/// message channel.
struct StepChoice {
    Rule rule = Rule::R1;
    std::optional<EventLabel> event;
    int device = 0;
    int channel = -1;
    bool is_send = false;
};

/// Returns the last state of machine `machine_index` in `history` together
/// with its position, or nullopt when the history holds no such state.
std::optional<std::pair<int, StateRef>> top(const std::vector<StateRef>& history,
                                            int machine_index);

/// All successors of a single-device configuration:
///   R1  in-machine transition,
///   R2  call with reuse=false (push return state and call event),
///   R3  call with reuse=true but no resumable flow in the history,
///   R4  call with reuse=true resuming the last history state of the callee
///       and discarding everything stacked above it,
///   R5  unlabelled return from a final state when the creating call event
///       has auto_return=true.
/// Successors are ordered by (rule, event name, target state) so exploration
/// is reproducible.
std::vector<std::pair<StepChoice, Configuration>> enabled_single(const Configuration& cfg,
                                                                 const SystemModel& model);

/// Interleaves the per-device successors. Channel sends add to the ledger
/// (R6); receives consume from it (R7), gated by `policy`. Steps of finished
/// devices are not offered.
std::vector<std::pair<StepChoice, MultiDeviceState>> enabled_multi(const MultiDeviceState& ms,
                                                                   const SystemModel& model,
                                                                   ReceivePolicy policy);

/// True iff the configuration has no successor. Holds at a final state whose
/// history is empty or whose creating call event has auto_return=false, and
/// at dead-end states without outgoing transitions or edges.
bool is_terminal(const Configuration& cfg, const SystemModel& model);

/// Terminal and resting at a final state; this is the per-device "finish"
/// condition a completed multi-device test case requires of every device.
bool is_finished(const Configuration& cfg, const SystemModel& model);

/// Initial composed state: one entry configuration per device.
MultiDeviceState make_initial(const std::vector<Configuration>& entries, const SystemModel& model);

/// All entry configurations of a device: one per initial state of each of its
/// assigned entry machines.
std::vector<Configuration> entry_configurations(const SystemModel& model, const DeviceSpec& device);

/// Every combination of per-device entry configurations, in document order;
/// each combination is one exploration root. Empty when the model has no
/// devices or some device has no entry configuration.
std::vector<std::vector<Configuration>> entry_combinations(const SystemModel& model);

/// Re-derives the rule tag that justifies `cfg -> next`; used by tests to
/// check rule exclusivity. Returns nullopt if no rule matches.
std::optional<Rule> classify_step(const Configuration& cfg, const Configuration& next,
                                  const std::optional<EventLabel>& event, const SystemModel& model);

/// Canonical binary encoding of a composed state; the report's state-size
/// metric is the length of this encoding.
std::vector<std::uint8_t> encode(const MultiDeviceState& ms);

} // namespace mbt
