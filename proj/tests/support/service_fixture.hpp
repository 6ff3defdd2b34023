#pragma once

// Store with a main and a calibration episode buffer plus a service on a
// deterministic clock.

#include <atomic>
#include <memory>

#include "hfkit/service.hpp"
#include "hfkit/simulation.hpp"
#include "support/temp_dir.hpp"

namespace hfkit::testing {

struct ServiceFixture {
    TempDir dir{"hfkit-svc"};
    std::shared_ptr<std::atomic<std::int64_t>> ticks = std::make_shared<std::atomic<std::int64_t>>(1000);
    std::unique_ptr<FeedbackService> service;

    explicit ServiceFixture(int per_policy = 5) {
        write_rollout_store(dir.path / "buffers" / "main", "default-8x8", per_policy, 7);
        write_rollout_store(dir.path / "buffers" / "calibration", "default-8x8", 3, 99, "calibration-rollout");
        restart();
    }

    void restart() {
        service.reset();
        ServiceOptions o;
        o.store_dir = dir.path;
        auto t = ticks;
        o.clock = [t] { return t->fetch_add(1); };
        service = std::make_unique<FeedbackService>(o);
    }

    static ExperimentConfig config(const std::string& id, std::set<FeedbackKind> kinds = {FeedbackKind::comparative}) {
        ExperimentConfig c;
        c.experiment_id = id;
        c.buffer = "buffers/main";
        c.enabled_feedback_types = std::move(kinds);
        c.rating_scale = RatingScale{-1.0, 1.0, 0};
        c.reward_model.optimizer.steps = 200;
        c.reward_model.optimizer.lr = 0.5;
        return c;
    }
};

}  // namespace hfkit::testing
