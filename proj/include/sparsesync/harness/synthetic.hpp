#pragma once

// Synthetic trainer: a seeded FP32 model plus a driver that perturbs every
// touched element by eta * |w| * noise, the small relative steps under which
// most updates vanish at the working-precision cast.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "sparsesync/error.hpp"
#include "sparsesync/precision.hpp"
#include "sparsesync/tensor.hpp"
#include "sparsesync/tracking.hpp"

namespace sparsesync::harness {

struct TensorSpec {
    std::string name;
    Shape shape;
    double init_mean = 0.0;
    double init_std = 0.02;
};

struct ModelSpec {
    std::vector<TensorSpec> tensors;
    DType working = DType::BF16;
    std::uint64_t seed = 0;

    void validate() const {
        std::unordered_set<std::string> names;
        for (const auto& t : tensors) {
            if (t.name.empty()) fail(Errc::SpecInvalid, "tensor with empty name");
            if (!names.insert(t.name).second) fail(Errc::SpecInvalid, "duplicate tensor name '" + t.name + "'");
            if (t.shape.empty()) fail(Errc::SpecInvalid, "tensor '" + t.name + "' has no dimensions");
            try {
                shape_numel(t.shape);
            } catch (const SyncError& e) {
                fail(Errc::SpecInvalid, "tensor '" + t.name + "': " + e.what());
            }
            if (!(t.init_std >= 0)) fail(Errc::SpecInvalid, "tensor '" + t.name + "': negative init_std");
        }
    }

    std::uint64_t total_numel() const {
        std::uint64_t n = 0;
        for (const auto& t : tensors) n += shape_numel(t.shape);
        return n;
    }

    /// `count` tensors named layer.NN.weight of shape {rows, cols}.
    static ModelSpec uniform(std::size_t count, std::uint64_t rows, std::uint64_t cols, DType working = DType::BF16,
                             std::uint64_t seed = 0, double init_std = 0.02) {
        ModelSpec s;
        s.working = working;
        s.seed = seed;
        for (std::size_t k = 0; k < count; ++k) {
            char name[48];
            std::snprintf(name, sizeof name, "layer.%02zu.weight", k);
            s.tensors.push_back({name, {rows, cols}, 0.0, init_std});
        }
        return s;
    }
};

enum class NoiseShape { Normal, Uniform };

struct UpdateDriverConfig {
    double eta = 3e-5;             // relative step scale
    double touched_fraction = 1.0; // per-element probability of an update each step
    NoiseShape distribution = NoiseShape::Normal;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(eta >= 0) || !std::isfinite(eta)) fail(Errc::SpecInvalid, "eta must be finite and >= 0");
        if (!(touched_fraction > 0 && touched_fraction <= 1)) fail(Errc::SpecInvalid, "touched fraction must lie in (0, 1]");
    }
};

inline NamedTensors init_master(const ModelSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    NamedTensors out;
    for (const auto& t : spec.tensors) {
        std::normal_distribution<float> dist(static_cast<float>(t.init_mean), static_cast<float>(t.init_std));
        std::vector<float> v(shape_numel(t.shape));
        for (auto& x : v) x = t.init_std > 0 ? dist(rng) : static_cast<float>(t.init_mean);
        out.insert(TensorBuf::from_floats(t.name, DType::FP32, t.shape, v));
    }
    return out;
}

class UpdateDriver {
public:
    explicit UpdateDriver(UpdateDriverConfig cfg) : cfg_(cfg), rng_(cfg.seed) { cfg_.validate(); }

    /// Next FP32 delta for every tensor of `state`.
    MasterUpdate next(const ModelState& state) {
        MasterUpdate upd;
        std::normal_distribution<float> normal(0.0f, 1.0f);
        std::uniform_real_distribution<float> uniform(-1.0f, 1.0f);
        std::bernoulli_distribution touched(cfg_.touched_fraction);
        const float eta = static_cast<float>(cfg_.eta);
        for (const auto& m : state.master) {
            std::vector<float> d(m.numel(), 0.0f);
            for (std::size_t i = 0; i < d.size(); ++i) {
                if (cfg_.touched_fraction < 1.0 && !touched(rng_)) continue;
                const float noise = cfg_.distribution == NoiseShape::Normal ? normal(rng_) : uniform(rng_);
                d[i] = eta * std::fabs(m.value_at(i)) * noise;
            }
            upd.emplace(m.name(), std::move(d));
        }
        return upd;
    }

private:
    UpdateDriverConfig cfg_;
    std::mt19937_64 rng_;
};

/// Trainer loop state: tracked model plus update driver.
class SyntheticTrainer {
public:
    SyntheticTrainer(const ModelSpec& spec, const UpdateDriverConfig& driver)
        : tracker_(ModelState::from_master(init_master(spec), spec.working)), driver_(driver) {}

    const ChangedIndexSet& step() { return tracker_.step(driver_.next(tracker_.state())); }

    Tracker& tracker() noexcept { return tracker_; }
    const ModelState& state() const noexcept { return tracker_.state(); }

private:
    Tracker tracker_;
    UpdateDriver driver_;
};

struct TrainingHistory {
    std::vector<ModelState> states;             // states[0] is the initial model
    std::vector<ChangedIndexSet> step_sets;     // I_t, t = 1..T
    std::vector<ChangedIndexSet> cumulative;    // cumulative set after step t
};

inline TrainingHistory run_synthetic_training(const ModelSpec& spec, const UpdateDriverConfig& driver, std::size_t steps) {
    driver.validate();
    SyntheticTrainer trainer(spec, driver);
    TrainingHistory h;
    h.states.push_back(trainer.state());
    for (std::size_t t = 0; t < steps; ++t) {
        h.step_sets.push_back(trainer.step());
        h.cumulative.push_back(trainer.tracker().cumulative());
        h.states.push_back(trainer.state());
    }
    return h;
}

// JSON model spec ----------------------------------------------------------

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    try {
        s.working = parse_dtype(j.value("working_dtype", std::string("bf16")));
        s.seed = j.value("seed", std::uint64_t{0});
        for (const auto& t : j.at("tensors")) {
            TensorSpec ts;
            ts.name = t.at("name").get<std::string>();
            ts.shape = t.at("shape").get<Shape>();
            ts.init_mean = t.value("init_mean", 0.0);
            ts.init_std = t.value("init_std", 0.02);
            s.tensors.push_back(std::move(ts));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::SpecInvalid, std::string("model spec: ") + e.what());
    }
    s.validate();
    return s;
}

inline nlohmann::json to_json(const ModelSpec& s) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : s.tensors) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"init_mean", t.init_mean}, {"init_std", t.init_std}});
    }
    return {{"working_dtype", std::string(dtype_name(s.working))}, {"seed", s.seed}, {"tensors", tensors}};
}

} // namespace sparsesync::harness
