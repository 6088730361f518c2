#pragma once

#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace tsc::signal {

struct SignalError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct SignalTiming {
    int min_green_s = 10;
    int max_green_s = 60;
    int transition_s = 3; // yellow + all-red
    int stage_count = 2;
};

enum class SignalEvent { Hold, Switch, Forced, Transition };

std::string_view to_string(SignalEvent e);

/// Stage 0 releases the eastbound approach (through + right), stage 1 the
/// southbound approach (through + left).
///
/// Time advances in whole seconds through tick(). A requested switch starts a
/// transition of `transition_s` non-green seconds; the new stage's green timer
/// starts once the transition ends. When a green reaches `max_green_s` the
/// controller switches on its own, independent of any request.
class SignalController {
public:
    explicit SignalController(SignalTiming timing = {}, int initial_stage = 0);

    const SignalTiming& timing() const { return timing_; }

    /// Stage currently green, or the stage being activated during a transition.
    int active_stage() const { return in_transition() ? pending_stage_ : active_stage_; }
    int elapsed_green_s() const { return elapsed_green_s_; }
    int transition_remaining_s() const { return transition_remaining_s_; }
    bool in_transition() const { return transition_remaining_s_ > 0; }

    /// Stage with green right now; empty during transitions.
    std::optional<int> green_stage() const;

    /// Min/max-green gate applied at a control boundary.
    SignalEvent apply_decision(int requested_stage);

    /// Advances one second. Returns Forced when the max-green limit started a
    /// transition during this tick.
    std::optional<SignalEvent> tick();

    std::vector<double> one_hot_stage() const;
    double elapsed_ratio() const;

    void set_max_green(int seconds);

    // Test hook: place the controller in an arbitrary green state.
    void force_state(int active_stage, int elapsed_green_s);

private:
    void begin_transition(int to_stage);

    SignalTiming timing_;
    int active_stage_ = 0;
    int pending_stage_ = 0;
    int elapsed_green_s_ = 0;
    int transition_remaining_s_ = 0;
};

} // namespace tsc::signal
