"""Gaussian BP on a tree: exact marginals after a diameter's worth of rounds."""

import numpy as np

from gabp import EngineConfig, exact, generate_linear, run

# five nodes of mixed dimension on a random tree
model = generate_linear(5, [1, 2, 3, 2, 1], "tree", seed=4)
print("edges:", model.edge_pairs)

result = run(model, EngineConfig(eta=1e-12, max_iter=50, init_seed=0))
print("converged:", result.converged, "after", result.iterations, "rounds")

truth = exact(model)
for belief in result.beliefs:
    err = np.max(np.abs(belief.mean - truth.means[belief.node_id]))
    print(f"node {belief.node_id}: mean {np.round(belief.mean, 4)}  |err| {err:.1e}")

# the posterior should sit near the sampled ground truth
print("ground truth x_1:", np.round(model.ground_truth[1], 4))
