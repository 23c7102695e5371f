"""Expert selection, contrastive CVAE training and reward relabeling on a small ORAN dataset."""

import numpy as np

from corerl.cvae import CvaeConfig, train_cvae
from corerl.envs import generate_dataset, make_env, make_policy
from corerl.experts import kmeans_fit, select_experts, standardize
from corerl.relabel import RelabelConfig, latent_codes, latent_separation, relabel_dataset

env = make_env("oran")
ds = generate_dataset(env, make_policy("round_robin", "oran", env.action_count), 4000, seed=1)

# the best transition of each state cluster is an expert sample
labeling = select_experts(ds, kmeans_fit(standardize(ds.states), 100, seed=1))
print(f"{len(labeling.expert_idx)} experts among {len(ds)} transitions")

for name, cfg in [("contrastive", CvaeConfig(iters=1500)),
                  ("ablation", CvaeConfig(iters=1500, lambda_reg=0.0, lambda_neg=0.0))]:
    model, _ = train_cvae(ds, labeling, cfg, seed=1)
    sep = latent_separation(latent_codes(model, ds.states, ds.actions), labeling.mask())
    print(f"{name:12s} expert/non-expert distance ratio {sep['ratio']:.2f}, "
          f"normalized-distance IQR {sep['iqr']:.3f}")

# rewards move down by tau times the latent distance to the expert centroid
for tau in (0.0, 0.1, 0.3):
    out = relabel_dataset(ds, model, labeling, RelabelConfig(tau=tau))
    print(f"tau={tau:.1f}: mean reward {np.mean(out.dataset.rewards):+.4f}")
