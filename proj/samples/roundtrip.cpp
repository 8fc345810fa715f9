// Track a few synthetic steps, pack the cumulative change set, apply it to a
// stale copy and check the result byte for byte.

#include <cstdio>

#include "sparsesync/harness/synthetic.hpp"
#include "sparsesync/updater.hpp"

using namespace sparsesync;

int main() {
    auto spec = harness::ModelSpec::uniform(4, 64, 256);
    harness::SyntheticTrainer trainer(spec, {});
    NamedTensors rollout = trainer.state().working;

    for (int t = 0; t < 4; ++t) trainer.step();
    const auto cum = trainer.tracker().take_cumulative();

    const SyncMessage msg = pack_updates(trainer.state(), cum, RoutingPolicy{}, PackOptions{true});
    const Bytes wire = serialize_message(msg);
    apply_update(rollout, deserialize_message(wire));

    const Bytes full = serialize_message(pack_full(trainer.state().working));
    std::printf("changed %llu of %llu elements, %zu bytes sparse vs %zu full, bit-exact: %s\n",
                static_cast<unsigned long long>(total_indices(cum)),
                static_cast<unsigned long long>(rollout.total_numel()), wire.size(), full.size(),
                rollout == trainer.state().working ? "yes" : "no");
    return rollout == trainer.state().working ? 0 : 1;
}
