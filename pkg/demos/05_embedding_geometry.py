"""
What the consensus representation looks like
============================================

The classifier reads the concatenation of the two branch embeddings. Here
we train on a small synthetic citation graph, then compare the
representation before and after training. We use a 2-d PCA projection and
a silhouette-style ratio: mean same-class distance over mean other-class
distance.

The 2-d coordinates are written to a TSV file for plotting with any tool.
"""

import numpy as np

from scrl.model import init_params
from scrl.synthetic import contextual_sbm
from scrl.training import TrainConfig, build_model, embed, prepare_inputs, train

ds = contextual_sbm(num_nodes=800, num_features=600, num_classes=4, labels_per_class=20,
                    val_size=200, test_size=400, homophily=0.7, feature_noise=0.8, seed=1)
cfg = TrainConfig(epochs=150, hidden=64, embed=32, lr=1e-3)


def pca2(r):
    r = r - r.mean(axis=0)
    _, _, vt = np.linalg.svd(r, full_matrices=False)
    return r @ vt[:2].T


def class_separation(r, labels):
    d = np.linalg.norm(r[:, None, :] - r[None, :, :], axis=-1)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return d[same].mean() / d[~same].mean()


# %%
# Untrained: random Glorot weights already mix neighbourhoods, but classes
# overlap heavily.
inputs = prepare_inputs(ds, cfg)
untrained = build_model(cfg, ds.num_features, ds.num_classes)
init_params(untrained, np.random.default_rng(0))
before = embed(untrained, inputs)

result = train(ds, cfg, inputs=inputs)
after = embed(result.model, inputs)

test = ds.test
print(f"same/other class distance ratio, test nodes: "
      f"before {class_separation(before[test], ds.labels[test]):.3f}, "
      f"after {class_separation(after[test], ds.labels[test]):.3f} (lower is better)")

# %%
# Which half of the representation carries more class signal?
u = cfg.embed
for name, part in (("topology half", after[:, :u]), ("feature half", after[:, u:])):
    print(f"{name}: ratio {class_separation(part[test], ds.labels[test]):.3f}")

coords = pca2(after)
np.savetxt("embedding_pca.tsv", np.column_stack([np.arange(ds.num_nodes), ds.labels, coords]),
           fmt=["%d", "%d", "%.6f", "%.6f"], delimiter="\t",
           header="node\tlabel\tpc1\tpc2", comments="")
print("wrote embedding_pca.tsv")
