#include "tsc/signal.hpp"

#include <algorithm>
#include <string>

namespace tsc::signal {

std::string_view to_string(SignalEvent e) {
    switch (e) {
    case SignalEvent::Hold:
        return "hold";
    case SignalEvent::Switch:
        return "switch";
    case SignalEvent::Forced:
        return "forced";
    case SignalEvent::Transition:
        return "transition";
    }
    return "unknown";
}

SignalController::SignalController(SignalTiming timing, int initial_stage) : timing_(timing) {
    if (timing_.stage_count < 2) {
        throw SignalError("a controller needs at least two stages");
    }
    if (timing_.min_green_s < 0 || timing_.max_green_s < timing_.min_green_s || timing_.max_green_s <= 0) {
        throw SignalError("max green must be positive and not below min green");
    }
    if (timing_.transition_s < 0) {
        throw SignalError("transition time must be non-negative");
    }
    if (initial_stage < 0 || initial_stage >= timing_.stage_count) {
        throw SignalError("initial stage out of range");
    }
    active_stage_ = initial_stage;
    pending_stage_ = initial_stage;
}

std::optional<int> SignalController::green_stage() const {
    if (in_transition()) {
        return std::nullopt;
    }
    return active_stage_;
}

void SignalController::begin_transition(int to_stage) {
    pending_stage_ = to_stage;
    elapsed_green_s_ = 0;
    if (timing_.transition_s == 0) {
        active_stage_ = to_stage;
        return;
    }
    transition_remaining_s_ = timing_.transition_s;
}

SignalEvent SignalController::apply_decision(int requested_stage) {
    if (requested_stage < 0 || requested_stage >= timing_.stage_count) {
        throw SignalError("requested stage " + std::to_string(requested_stage) + " out of range");
    }
    if (in_transition()) {
        return SignalEvent::Transition;
    }
    if (elapsed_green_s_ >= timing_.max_green_s) {
        begin_transition((active_stage_ + 1) % timing_.stage_count);
        return SignalEvent::Forced;
    }
    if (elapsed_green_s_ < timing_.min_green_s) {
        return SignalEvent::Hold;
    }
    if (requested_stage != active_stage_) {
        begin_transition(requested_stage);
        return SignalEvent::Switch;
    }
    return SignalEvent::Hold;
}

std::optional<SignalEvent> SignalController::tick() {
    if (in_transition()) {
        if (--transition_remaining_s_ == 0) {
            active_stage_ = pending_stage_;
            elapsed_green_s_ = 0;
        }
        return std::nullopt;
    }
    ++elapsed_green_s_;
    if (elapsed_green_s_ >= timing_.max_green_s) {
        begin_transition((active_stage_ + 1) % timing_.stage_count);
        return SignalEvent::Forced;
    }
    return std::nullopt;
}

std::vector<double> SignalController::one_hot_stage() const {
    std::vector<double> h(static_cast<std::size_t>(timing_.stage_count), 0.0);
    h[static_cast<std::size_t>(active_stage())] = 1.0;
    return h;
}

double SignalController::elapsed_ratio() const {
    return std::min(1.0, static_cast<double>(elapsed_green_s_) / static_cast<double>(timing_.max_green_s));
}

void SignalController::set_max_green(int seconds) {
    if (seconds < timing_.min_green_s || seconds <= 0) {
        throw SignalError("max green below min green");
    }
    timing_.max_green_s = seconds;
}

void SignalController::force_state(int active_stage, int elapsed_green_s) {
    if (active_stage < 0 || active_stage >= timing_.stage_count || elapsed_green_s < 0) {
        throw SignalError("invalid forced state");
    }
    active_stage_ = active_stage;
    pending_stage_ = active_stage;
    elapsed_green_s_ = elapsed_green_s;
    transition_remaining_s_ = 0;
}

} // namespace tsc::signal
