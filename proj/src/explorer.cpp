#include "mbt/explorer.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <deque>
#include <map>
#include <thread>
#include <utility>

namespace mbt {

namespace {

/// R5 returns are free; every other rule consumes one unit of the per-device
/// transition budget.
bool labelled(const StepChoice& c) { return c.rule != Rule::R5; }

TestStep make_step(const StepChoice& c, const std::vector<std::string>& device_names) {
    return {device_names[static_cast<size_t>(c.device)], c.event, c.rule, c.channel, c.is_send};
}

/// Deduplicates emitted cases on their step sequence. A sequence seen both as
/// a complete case and as a truncated prefix is kept as complete.
struct CaseSink {
    std::map<std::vector<TestStep>, TestCase> cases;

    void add(const std::vector<TestStep>& steps, bool complete) {
        auto it = cases.find(steps);
        if (it == cases.end()) {
            cases.emplace(steps, TestCase{steps, complete, !complete});
        } else if (complete && !it->second.complete) {
            it->second.complete = true;
            it->second.truncated = false;
        }
    }

    void merge(CaseSink&& other) {
        for (auto& [steps, tc] : other.cases) {
            add(steps, tc.complete);
        }
    }
};

struct Node {
    MultiDeviceState ms;
    std::vector<int> counts; // labelled steps taken per device
    std::vector<TestStep> trace;
    std::size_t enc_bytes = 0;
};

Node make_root(std::vector<Configuration> entries, const SystemModel& model) {
    Node n;
    n.ms = make_initial(entries, model);
    n.counts.assign(entries.size(), 0);
    n.enc_bytes = encode(n.ms).size();
    return n;
}

struct ExpandContext {
    const SystemModel& model;
    const ExplorationBound& bound;
    ReceivePolicy policy;
    const std::vector<std::string>& device_names;
};

/// Emits the node's trace when the emission policy asks for it and returns
/// the in-budget children. Every node of the search tree passes through here
/// exactly once, so the statistics are independent of the visit order.
std::vector<Node> expand_node(const Node& n, const ExpandContext& ctx, CaseSink& sink,
                              ExplorationStats& stats) {
    stats.states_expanded += 1;
    stats.max_state_bytes = std::max(stats.max_state_bytes, n.enc_bytes);
    for (const Configuration& cfg : n.ms.configs) {
        stats.max_backstack_depth = std::max(stats.max_backstack_depth, cfg.state_history.size());
    }

    const bool all_finished =
        std::all_of(n.ms.finished.begin(), n.ms.finished.end(), [](bool f) { return f; });
    const bool debt = std::any_of(n.ms.channel_counts.begin(), n.ms.channel_counts.end(),
                                  [](int c) { return c < 0; });

    if (!n.trace.empty()) {
        if (all_finished && !debt) {
            sink.add(n.trace, true);
        } else if (!all_finished && ctx.bound.emit_truncated && !ctx.bound.require_all_finished) {
            // Truncated output keeps every proper prefix, so an in-flight
            // trace is emitted here even when it still has successors.
            sink.add(n.trace, false);
        }
        // A trace that finished every device while a channel ledger is still
        // negative promised a receive whose send never fired; it is not
        // realizable and is dropped.
    }
    if (all_finished) {
        return {};
    }

    std::vector<Node> children;
    for (auto& [choice, next] : enabled_multi(n.ms, ctx.model, ctx.policy)) {
        if (labelled(choice) &&
            n.counts[static_cast<size_t>(choice.device)] >= ctx.bound.max_transitions_per_device) {
            stats.truncated_flows += 1;
            continue;
        }
        Node child;
        child.ms = std::move(next);
        child.counts = n.counts;
        if (labelled(choice)) {
            child.counts[static_cast<size_t>(choice.device)] += 1;
        }
        child.trace = n.trace;
        child.trace.push_back(make_step(choice, ctx.device_names));
        child.enc_bytes = encode(child.ms).size();
        children.push_back(std::move(child));
    }
    return children;
}

struct Worker {
    CaseSink sink;
    ExplorationStats stats;
    bool cap_hit = false;

    void run(std::vector<Node> roots, const ExpandContext& ctx,
             std::atomic<std::size_t>& expansions) {
        std::vector<Node> stack;
        std::size_t live = 0;
        for (auto it = roots.rbegin(); it != roots.rend(); ++it) {
            live += it->enc_bytes;
            stack.push_back(std::move(*it));
        }
        stats.peak_live_bytes = std::max(stats.peak_live_bytes, live);
        while (!stack.empty()) {
            if (expansions.fetch_add(1) >= ctx.bound.global_expansion_cap) {
                cap_hit = true;
                return;
            }
            Node n = std::move(stack.back());
            stack.pop_back();
            live -= n.enc_bytes;
            std::vector<Node> children = expand_node(n, ctx, sink, stats);
            for (auto it = children.rbegin(); it != children.rend(); ++it) {
                live += it->enc_bytes;
                stack.push_back(std::move(*it));
            }
            stats.peak_live_bytes = std::max(stats.peak_live_bytes, live);
        }
    }
};

ExplorationResult finalize(CaseSink&& sink, ExplorationStats stats, bool cap_hit, bool reduce) {
    if (reduce) {
        CaseSink reduced;
        for (auto& [steps, tc] : sink.cases) {
            TestCase rep = canonicalize(tc);
            reduced.add(rep.steps, rep.complete);
        }
        sink = std::move(reduced);
    }
    ExplorationResult res;
    res.stats = stats;
    res.cap_hit = cap_hit;
    res.cases.reserve(sink.cases.size());
    for (auto& [steps, tc] : sink.cases) {
        res.cases.push_back(std::move(tc));
    }
    return res;
}

} // namespace

FlowsResult flows(const ViewStateMachine& m, const ExplorationBound& bound) {
    FlowsResult res;

    // Outgoing transitions per state, ordered for reproducible traversal.
    std::vector<std::vector<const Transition*>> outgoing(m.states.size());
    for (const Transition& t : m.transitions) {
        outgoing[static_cast<size_t>(t.source)].push_back(&t);
    }
    for (auto& row : outgoing) {
        std::sort(row.begin(), row.end(), [](const Transition* a, const Transition* b) {
            return std::tie(a->event.name, a->target) < std::tie(b->event.name, b->target);
        });
    }

    struct Path {
        std::vector<int> states;
        std::vector<EventLabel> events;
    };
    for (int init : m.initial) {
        const std::size_t before = res.flows.size();
        std::vector<Path> stack;
        stack.push_back({{init}, {}});
        while (!stack.empty()) {
            Path p = std::move(stack.back());
            stack.pop_back();
            const int s = p.states.back();
            // Flows end at final or connection states; paths keep extending
            // through connection states, so one prefix can yield many flows.
            if (m.is_final(s) || m.is_connection(s)) {
                res.flows.push_back({p.states, p.events});
            }
            if (static_cast<int>(p.events.size()) >= bound.max_transitions_per_device) {
                continue;
            }
            const auto& out = outgoing[static_cast<size_t>(s)];
            for (auto it = out.rbegin(); it != out.rend(); ++it) {
                Path q = p;
                q.states.push_back((*it)->target);
                q.events.push_back((*it)->event);
                stack.push_back(std::move(q));
            }
        }
        if (res.flows.size() == before) {
            res.initials_without_flow.push_back(init);
        }
    }
    std::sort(res.flows.begin(), res.flows.end());
    return res;
}

ExplorationResult explore_device(const std::vector<Configuration>& entries,
                                 const SystemModel& model, const ExplorationBound& bound,
                                 const std::string& device_id) {
    std::vector<Node> roots;
    roots.reserve(entries.size());
    for (const Configuration& e : entries) {
        roots.push_back(make_root({e}, model));
    }
    const std::vector<std::string> names{device_id};
    const ExpandContext ctx{model, bound, ReceivePolicy::strict, names};
    std::atomic<std::size_t> expansions{0};
    Worker w;
    w.run(std::move(roots), ctx, expansions);
    return finalize(std::move(w.sink), w.stats, w.cap_hit, false);
}

ExplorationResult explore_multi(const SystemModel& model, const ExplorationBound& bound,
                                ReceivePolicy policy, bool reduce, int jobs) {
    std::vector<std::string> names;
    names.reserve(model.devices.size());
    for (const DeviceSpec& dev : model.devices) {
        names.push_back(dev.id);
    }

    // One root per combination of per-device entry configurations: each
    // device commits to a single entry point for the whole trace.
    std::vector<Node> roots;
    for (std::vector<Configuration>& entries : entry_combinations(model)) {
        roots.push_back(make_root(std::move(entries), model));
    }

    const ExpandContext ctx{model, bound, policy, names};
    std::atomic<std::size_t> expansions{0};
    jobs = std::clamp(jobs, 1, 64);

    if (jobs == 1 || roots.empty()) {
        Worker w;
        w.run(std::move(roots), ctx, expansions);
        return finalize(std::move(w.sink), w.stats, w.cap_hit, reduce);
    }

    // Breadth-first warm-up grows a frontier wide enough to split, then the
    // subtrees run in parallel. Every tree node is still expanded exactly
    // once, so everything except the memory metric matches a sequential run.
    Worker bfs;
    bool cap_hit = false;
    std::deque<Node> frontier;
    std::size_t frontier_bytes = 0;
    for (Node& r : roots) {
        frontier_bytes += r.enc_bytes;
        frontier.push_back(std::move(r));
    }
    const std::size_t target = static_cast<std::size_t>(jobs) * 8;
    while (!frontier.empty() && frontier.size() < target) {
        if (expansions.fetch_add(1) >= ctx.bound.global_expansion_cap) {
            cap_hit = true;
            break;
        }
        Node n = std::move(frontier.front());
        frontier.pop_front();
        frontier_bytes -= n.enc_bytes;
        for (Node& c : expand_node(n, ctx, bfs.sink, bfs.stats)) {
            frontier_bytes += c.enc_bytes;
            frontier.push_back(std::move(c));
        }
        bfs.stats.peak_live_bytes = std::max(bfs.stats.peak_live_bytes, frontier_bytes);
    }

    std::vector<std::vector<Node>> shares(static_cast<std::size_t>(jobs));
    for (std::size_t i = 0; !frontier.empty(); ++i) {
        shares[i % shares.size()].push_back(std::move(frontier.front()));
        frontier.pop_front();
    }
    std::vector<Worker> workers(static_cast<std::size_t>(jobs));
    if (!cap_hit) {
        std::vector<std::thread> threads;
        threads.reserve(workers.size());
        for (std::size_t i = 0; i < workers.size(); ++i) {
            threads.emplace_back([&, i] { workers[i].run(std::move(shares[i]), ctx, expansions); });
        }
        for (std::thread& t : threads) {
            t.join();
        }
    }

    CaseSink sink = std::move(bfs.sink);
    ExplorationStats stats = bfs.stats;
    std::size_t worker_peak_sum = 0;
    for (Worker& w : workers) {
        cap_hit = cap_hit || w.cap_hit;
        sink.merge(std::move(w.sink));
        stats.states_expanded += w.stats.states_expanded;
        stats.max_state_bytes = std::max(stats.max_state_bytes, w.stats.max_state_bytes);
        stats.max_backstack_depth = std::max(stats.max_backstack_depth, w.stats.max_backstack_depth);
        stats.truncated_flows += w.stats.truncated_flows;
        worker_peak_sum += w.stats.peak_live_bytes;
    }
    stats.peak_live_bytes = std::max(stats.peak_live_bytes, worker_peak_sum);
    return finalize(std::move(sink), stats, cap_hit, reduce);
}

IndependenceRelation::IndependenceRelation(const TestCase& tc) {
    const std::size_t n = tc.steps.size();
    devices_.reserve(n);
    partners_.assign(n, -1);
    std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_channel;
    for (std::size_t i = 0; i < n; ++i) {
        const TestStep& s = tc.steps[i];
        devices_.push_back(s.device);
        if (s.channel >= 0) {
            auto& [sends, recvs] = by_channel[s.channel];
            (s.is_send ? sends : recvs).push_back(i);
        }
    }
    for (auto& [channel, lists] : by_channel) {
        auto& [sends, recvs] = lists;
        const std::size_t paired = std::min(sends.size(), recvs.size());
        for (std::size_t k = 0; k < paired; ++k) {
            partners_[sends[k]] = static_cast<int>(recvs[k]);
            partners_[recvs[k]] = static_cast<int>(sends[k]);
        }
    }
}

bool IndependenceRelation::independent(std::size_t i, std::size_t j) const {
    if (i == j || devices_[i] == devices_[j]) {
        return false;
    }
    return partners_[i] != static_cast<int>(j);
}

TestCase canonicalize(const TestCase& tc) {
    const std::size_t n = tc.steps.size();
    IndependenceRelation rel(tc);

    // Per-device step queues keep their original order; matched channel pairs
    // keep their original relative order. The greedy smallest-head pick over
    // this partial order yields the unique lexicographically least member of
    // the equivalence class.
    std::map<std::string, std::vector<std::size_t>> queues;
    for (std::size_t i = 0; i < n; ++i) {
        queues[tc.steps[i].device].push_back(i);
    }
    std::map<std::string, std::size_t> next;
    std::vector<bool> emitted(n, false);

    TestCase out;
    out.complete = tc.complete;
    out.truncated = tc.truncated;
    out.steps.reserve(n);
    for (std::size_t done = 0; done < n; ++done) {
        bool progressed = false;
        for (auto& [device, queue] : queues) {
            std::size_t& p = next[device];
            if (p >= queue.size()) {
                continue;
            }
            const std::size_t head = queue[p];
            const int partner = rel.partner(head);
            if (partner >= 0 && static_cast<std::size_t>(partner) < head &&
                !emitted[static_cast<std::size_t>(partner)]) {
                continue;
            }
            out.steps.push_back(tc.steps[head]);
            emitted[head] = true;
            ++p;
            progressed = true;
            break;
        }
        // Blocked heads always wait on a strictly earlier step of another
        // device, so the smallest pending step is never blocked.
        assert(progressed);
        (void)progressed;
    }
    return out;
}

} // namespace mbt
