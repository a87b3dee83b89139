"""One LNP run on a 200-neuron small-world network, stage by stage.

Each iteration sparsifies synapses from noise covariance and local Lyapunov
exponents, drops low-betweenness neurons and adds delocalizing edges. The
trace shows neuron and synapse counts after every stage.
"""

from lnpsnn.network import clustering_coefficient, generate_small_world
from lnpsnn.pruning import LNPConfig, lnp_pipeline

net = generate_small_world(200, 10, 0.1, weight_scale=0.5, seed=0)
print(f"dense: {net.n_alive} neurons, {net.n_edges} synapses, "
      f"clustering {clustering_coefficient(net):.3f}")

cfg = LNPConfig(iterations=10, sim_steps=5000, burn_in=500, lyap_steps=100, seed=0)
pruned, trace = lnp_pipeline(net, cfg)
for row in trace.rows:
    print(f"iter {row.iteration:2d} {row.step:<10s} neurons {row.neurons:3d} synapses {row.edges:4d}")
print(f"pruned: clustering {clustering_coefficient(pruned):.3f}")
