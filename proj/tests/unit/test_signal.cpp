#include <doctest.h>

#include "tsc/rng.hpp"
#include "tsc/signal.hpp"

using namespace tsc;
using namespace tsc::signal;

TEST_CASE("request ignored below min green") {
    SignalController c;
    c.force_state(0, 5);
    CHECK(c.apply_decision(1) == SignalEvent::Hold);
    CHECK(c.active_stage() == 0);
    CHECK(!c.in_transition());
}

TEST_CASE("max green forces a switch even when the same stage is requested") {
    SignalController c;
    c.force_state(0, 60);
    CHECK(c.apply_decision(0) == SignalEvent::Forced);
    CHECK(c.in_transition());
    CHECK(c.active_stage() == 1);
    CHECK(!c.green_stage());
}

TEST_CASE("same-stage request past min green is a no-op") {
    SignalController c;
    c.force_state(0, 15);
    CHECK(c.apply_decision(0) == SignalEvent::Hold);
    CHECK(!c.in_transition());
    c.tick();
    CHECK(c.elapsed_green_s() == 16);
}

TEST_CASE("switch takes three non-green seconds then resets the timer") {
    SignalController c;
    c.force_state(0, 15);
    CHECK(c.apply_decision(1) == SignalEvent::Switch);
    for (int k = 0; k < 3; ++k) {
        CHECK(!c.green_stage());
        CHECK(c.apply_decision(0) == SignalEvent::Transition);
        c.tick();
    }
    REQUIRE(c.green_stage());
    CHECK(*c.green_stage() == 1);
    CHECK(c.elapsed_green_s() == 0);
}

TEST_CASE("tick forces the switch when green reaches the maximum") {
    SignalController c;
    for (int t = 1; t < 60; ++t) CHECK(!c.tick());
    const auto ev = c.tick();
    REQUIRE(ev);
    CHECK(*ev == SignalEvent::Forced);
}

TEST_CASE("invalid stage and bad max green") {
    SignalController c;
    CHECK_THROWS_AS(c.apply_decision(2), SignalError);
    CHECK_THROWS_AS(c.apply_decision(-1), SignalError);
    CHECK_THROWS_AS(c.set_max_green(5), SignalError);
}

TEST_CASE("one-hot stage and elapsed ratio") {
    SignalController c;
    CHECK(c.one_hot_stage() == std::vector<double>{1.0, 0.0});
    c.force_state(1, 0);
    CHECK(c.one_hot_stage() == std::vector<double>{0.0, 1.0});
    CHECK(c.elapsed_ratio() == 0.0);
    c.force_state(1, 30);
    CHECK(c.elapsed_ratio() == 0.5);
    c.force_state(1, 60);
    CHECK(c.elapsed_ratio() == 1.0);
}

TEST_CASE("event names") {
    CHECK(to_string(SignalEvent::Hold) == "hold");
    CHECK(to_string(SignalEvent::Switch) == "switch");
    CHECK(to_string(SignalEvent::Forced) == "forced");
    CHECK(to_string(SignalEvent::Transition) == "transition");
}

TEST_CASE("random requests keep greens in [10, 60] with 3 s transitions") {
    for (int max_green : {30, 60}) {
        SignalTiming timing;
        timing.max_green_s = max_green;
        SignalController c(timing);
        Rng rng(static_cast<std::uint64_t>(max_green));
        std::vector<int> trace;
        for (int t = 0; t < 20000; ++t) {
            if (t % 5 == 0) c.apply_decision(static_cast<int>(uniform_index(rng, 2)));
            const auto g = c.green_stage();
            trace.push_back(g ? *g : -1);
            double s = 0.0;
            for (double h : c.one_hot_stage()) s += h;
            CHECK(s == 1.0);
            CHECK(c.elapsed_ratio() >= 0.0);
            CHECK(c.elapsed_ratio() <= 1.0);
            c.tick();
        }
        std::vector<std::pair<int, int>> runs; // value, length
        for (int v : trace) {
            if (runs.empty() || runs.back().first != v) runs.push_back({v, 0});
            ++runs.back().second;
        }
        REQUIRE(runs.size() > 10);
        for (std::size_t i = 1; i + 1 < runs.size(); ++i) {
            if (runs[i].first < 0) {
                CHECK(runs[i].second == 3);
                CHECK(runs[i - 1].first != runs[i + 1].first);
            } else {
                CHECK(runs[i].second >= 10);
                CHECK(runs[i].second <= max_green);
            }
        }
    }
}
