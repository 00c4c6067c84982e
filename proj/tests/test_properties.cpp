#include <doctest.h>

#include "properties_battery.hpp"

using namespace stap::test;

// 1000 randomized cases per invariant; the same batteries back the
// acceptance gate.

TEST_CASE("routing probabilities stay normalized") {
    const BatteryResult r = battery_pi_normalization(1000, 2026);
    INFO("failures ", r.failures, " worst ", r.worst);
    CHECK(r.ok());
}

TEST_CASE("top-k keeps exactly k gates") {
    const BatteryResult r = battery_exact_k_gates(1000, 2026);
    INFO("failures ", r.failures);
    CHECK(r.ok());
}

TEST_CASE("scan step sizes respect their clamp range") {
    const BatteryResult r = battery_delta_clamp(1000, 2026);
    INFO("failures ", r.failures, " worst overshoot ", r.worst);
    CHECK(r.ok());
}

TEST_CASE("fusion gates stay on the simplex") {
    const BatteryResult r = battery_gate_simplex(1000, 2026);
    INFO("failures ", r.failures, " worst ", r.worst);
    CHECK(r.ok());
}

TEST_CASE("bank centroids are monotone across partitions") {
    const BatteryResult r = battery_quantile_monotone(1000, 2026);
    INFO("failures ", r.failures, " worst ", r.worst);
    CHECK(r.ok());
}

TEST_CASE("loss terms always add up") {
    const BatteryResult r = battery_loss_additivity(1000, 2026);
    INFO("failures ", r.failures, " worst ", r.worst);
    CHECK(r.ok());
}
