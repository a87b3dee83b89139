"""Closed-loop Lorenz-63 forecasts from a dense and an LNP-pruned reservoir.

Both share the input projection, so the pruned network is scored on the
same task. Efficiency is valid prediction time per synaptic operation.
"""

from lnpsnn.evaluate import evaluate_network
from lnpsnn.experiment import DeskSetup, base_network, base_reservoir, lorenz_splits, make_task, run_lnp

setup = DeskSetup()
train, test = lorenz_splits(setup)
task = make_task(setup, train, test)

net = base_network(setup, seed=0)
dense_res = base_reservoir(setup, net, train, seed=0)
dense = evaluate_network(dense_res, task)

pruned_net, _ = run_lnp(setup, seed=0, net=net)
sparse = evaluate_network(dense_res.with_net(pruned_net), task, dense_sops=dense.total_sops)

for name, rep, n in (("dense", dense, net), ("LNP", sparse, pruned_net)):
    print(f"{name:>5}: {n.n_alive:3d} neurons {n.n_edges:4d} synapses  VPT {rep.vpt:3d}  "
          f"mean RMSE {rep.extra['mean_rmse']:.3f}  SOPs {rep.total_sops}")
print(f"SOP ratio {sparse.sop_ratio:.2f}, efficiency gain {sparse.efficiency / dense.efficiency:.2f}x")
