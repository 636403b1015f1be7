"""Small synthetic attributed graphs for tests, demos and timing runs."""

from __future__ import annotations

import numpy as np

from .graph import DatasetBundle, edges_to_adjacency, make_splits


def two_cluster_toy(seed: int = 0, noise: float = 0.3) -> DatasetBundle:
    """12 nodes in two 6-node communities joined by one bridge edge.

    Features (d=5) carry the community signal plus uniform noise. Nodes 0-2
    and 6-8 are labeled for training; the other six are the test set.
    """
    rng = np.random.default_rng(seed)
    edges = []
    for base in (0, 6):
        ring = [(base + i, base + (i + 1) % 6) for i in range(6)]
        chords = [(base, base + 3), (base + 1, base + 4)]
        edges += ring + chords
    edges.append((5, 6))
    edges = np.array([(min(e), max(e)) for e in edges])
    labels = np.array([0] * 6 + [1] * 6)
    centers = np.array([[1.0, 1.0, 0.0, 0.0, 0.2], [0.0, 0.0, 1.0, 1.0, 0.2]])
    features = centers[labels] + noise * rng.random((12, 5))
    return DatasetBundle(
        adjacency=edges_to_adjacency(edges, 12),
        features=features,
        labels=labels,
        train=np.array([0, 1, 2, 6, 7, 8]),
        val=np.array([], dtype=np.int64),
        test=np.array([3, 4, 5, 9, 10, 11]),
        num_classes=2,
        name="two-cluster-toy",
    )


def contextual_sbm(num_nodes: int = 3000, num_classes: int = 6, num_features: int = 3000,
                   avg_degree: float = 3.0, homophily: float = 0.75,
                   words_per_node: int = 32, topic_words: int = 150,
                   feature_noise: float = 0.6, labels_per_class: int = 20,
                   val_size: int = 500, test_size: int = 1000,
                   seed: int = 0) -> DatasetBundle:
    """Citation-network-like graph: planted partition plus sparse binary bag-of-words.

    A fraction ``homophily`` of edges join same-class nodes. Each node draws
    ``words_per_node`` words, each from its class topic with probability
    ``1 - feature_noise`` and uniformly otherwise.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=num_nodes)
    members = [np.flatnonzero(labels == c) for c in range(num_classes)]

    num_edges = int(avg_degree * num_nodes / 2)
    src = rng.integers(0, num_nodes, size=num_edges)
    same = rng.random(num_edges) < homophily
    dst = np.empty(num_edges, dtype=np.int64)
    for i in range(num_edges):
        if same[i]:
            pool = members[labels[src[i]]]
            dst[i] = pool[rng.integers(len(pool))]
        else:
            dst[i] = rng.integers(num_nodes)
    keep = src != dst
    edges = np.unique(np.sort(np.stack([src[keep], dst[keep]], axis=1), axis=1), axis=0)

    topics = [rng.choice(num_features, size=topic_words, replace=False)
              for _ in range(num_classes)]
    features = np.zeros((num_nodes, num_features))
    for i in range(num_nodes):
        from_topic = rng.random(words_per_node) >= feature_noise
        words = np.where(from_topic,
                         rng.choice(topics[labels[i]], size=words_per_node),
                         rng.integers(num_features, size=words_per_node))
        features[i, words] = 1.0

    splits = make_splits(labels, labels_per_class, val_size=val_size, test_size=test_size,
                         seed=seed, num_classes=num_classes)
    return DatasetBundle(
        adjacency=edges_to_adjacency(edges, num_nodes),
        features=features,
        labels=labels,
        train=np.array(splits["train"]),
        val=np.array(splits["val"]),
        test=np.array(splits["test"]),
        num_classes=num_classes,
        name="csbm",
    )
