"""CQL on a tiny random MDP, compared with the value-iteration optimum."""

import numpy as np

from corerl.cql import CQLConfig, train_cql
from corerl.data import OfflineDataset, Transition

rng = np.random.default_rng(0)
n_s, n_a, gamma = 3, 2, 0.8
P = rng.dirichlet(np.ones(n_s), size=(n_s, n_a))
R = rng.uniform(-1, 1, size=(n_s, n_a))

Q = np.zeros((n_s, n_a))
for _ in range(500):
    Q = R + gamma * P @ Q.max(axis=1)

eye = np.eye(n_s)
trans = [Transition(eye[s], a, R[s, a], eye[rng.choice(n_s, p=P[s, a])], False, i, 0)
         for i, (s, a) in enumerate((s, a) for s in range(n_s) for a in range(n_a) for _ in range(50))]
ds = OfflineDataset.from_transitions(trans, env_id="tabular", state_dim=n_s, action_count=n_a)

for alpha in (0.0, 1.0):
    cfg = CQLConfig(alpha=alpha, gamma=gamma, lr=3e-3, hidden=(32,), batch_norm=False, dropout=0.0,
                    weight_decay=0.0, target_sync_interval=100, train_steps=3000)
    qnet, _ = train_cql(ds, cfg)
    print(f"alpha={alpha}: greedy {[qnet.act(eye[s]) for s in range(n_s)]}, "
          f"mean Q {qnet.q_values(eye).mean():+.3f}")
print(f"value iteration: greedy {Q.argmax(axis=1).tolist()}, mean Q {Q.mean():+.3f}")
