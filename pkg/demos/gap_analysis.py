"""How much does the reward vary among transitions with similar states?

Collects round-robin and load-extremes ORAN datasets, clusters their states
for several k and prints the mean max-minus-min reward inside a cluster.
"""

from corerl.envs import generate_dataset, make_env, make_policy
from corerl.experts import gap_curve

K_LIST = [10, 50, 100]

for policy in ("round_robin", "extremes"):
    env = make_env("oran")
    ds = generate_dataset(env, make_policy(policy, "oran", env.action_count), 5000, seed=0)
    gaps = gap_curve(ds, K_LIST, seed=0)
    print(f"{policy:12s} mean reward {ds.rewards.mean():+.3f}  gaps "
          + "  ".join(f"k={k}: {g:.3f}" for k, g in gaps))
