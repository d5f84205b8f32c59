"""Once the information messages settle, the mean messages obey v <- b - Qv."""

import numpy as np

from gabp import EngineConfig, fixed_point_information, generate_linear, run
from gabp.convergence import assemble_q, stack_messages

model = generate_linear(6, [2, 1, 3, 2, 2, 1], "cycle", seed=2)
fp = fixed_point_information(model)
Q, b, order = assemble_q(model, fp)
print("stacked message length:", Q.shape[0])
print("rho(Q) =", np.max(np.abs(np.linalg.eigvals(Q))))

res = run(model, EngineConfig(eta=1e-300, max_iter=15, init_info=dict(fp.f2v), init_seed=3))
traj = [stack_messages(s.v2f, order) for s in res.message_trajectory]
for ell in range(1, len(traj)):
    gap = np.max(np.abs(traj[ell] - (b - Q @ traj[ell - 1])))
    print(f"round {ell:2d}  |v - (b - Qv_prev)| = {gap:.1e}")

# the fixed point of the recursion is what BP converges to
v_star = np.linalg.solve(np.eye(len(b)) + Q, b)
print("distance to fixed point:", np.max(np.abs(traj[-1] - v_star)))
