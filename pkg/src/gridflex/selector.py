"""Participant selection over the household similarity graph.

Spectral clustering of the (symmetrized) attention matrix splits households
into two anonymous groups; a stratified 5%-per-neighborhood-per-cluster query
reveals true accept/reject labels; a semi-supervised GCN with one-hot node
features labels everyone else.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .community import Community
from .errors import (
    DegenerateClusteringError,
    DegenerateSupervisionError,
    DomainError,
    NumericalError,
    UndefinedMetricError,
)
from .forecaster import Hyper, gcn_layer

ROW_SUM_TOL = 1e-6


def check_similarity(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"similarity matrix must be square, got {a.shape}")
    if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
        raise DomainError("similarity entries must lie in [0, 1]")
    if np.any(np.abs(a.sum(axis=1) - 1) > ROW_SUM_TOL):
        raise DomainError("similarity rows must sum to 1")
    return a


@dataclass(frozen=True)
class SelectionGraph:
    household_ids: tuple[str, ...]
    edge_weights: np.ndarray  # (n, n) row-stochastic similarity

    def __post_init__(self):
        check_similarity(self.edge_weights)
        if len(self.household_ids) != self.edge_weights.shape[0]:
            raise DomainError("id count does not match matrix size")


@dataclass(frozen=True)
class SelectionResult:
    household_ids: tuple[str, ...]
    clusters: np.ndarray  # {0, 1} per household
    queried: frozenset[str]
    true_labels: dict[str, bool]  # only for queried households
    predicted: np.ndarray  # bool per household
    accuracy_pct: float  # over non-queried households


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(A + A^T) / 2; exact fixed point for already-symmetric input."""
    a = np.asarray(a, dtype=float)
    return (a + a.T) / 2.0


def normalized_laplacian(a_sym: np.ndarray) -> np.ndarray:
    """L = I - D^{-1/2} A D^{-1/2} for a symmetric non-negative matrix."""
    a_sym = np.asarray(a_sym, dtype=float)
    deg = a_sym.sum(axis=1)
    if np.any(deg <= 0):
        raise DomainError(f"isolated node (zero degree) at index {int(np.argmin(deg))}")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(a_sym.shape[0]) - inv_sqrt[:, None] * a_sym * inv_sqrt[None, :]
    return (lap + lap.T) / 2.0  # kill round-off asymmetry


def spectral_embed(laplacian: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal eigenvectors of the k smallest eigenvalues, ascending.

    Per-column sign fixed by making the largest-magnitude entry positive.
    """
    n = laplacian.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"k={k} outside [1, {n}]")
    try:
        eigvals, eigvecs = np.linalg.eigh(laplacian)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    embed = eigvecs[:, :k].copy()
    for j in range(k):
        pivot = int(np.argmax(np.abs(embed[:, j])))
        if embed[pivot, j] < 0:
            embed[:, j] = -embed[:, j]
    return embed


def kmeans(points: np.ndarray, clusters: int = 2, seed: int = 0,
           max_iter: int = 100, retries: int = 8) -> np.ndarray:
    """Seeded k-means++ initialization plus Lloyd's iteration.

    Re-seeds when a cluster comes out empty; raises after bounded retries.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < clusters:
        raise DegenerateClusteringError(f"{n} points cannot form {clusters} clusters")
    rng = np.random.default_rng(seed)
    for _attempt in range(retries):
        centers = _kmeanspp(points, clusters, rng)
        labels = np.zeros(n, dtype=int)
        for _it in range(max_iter):
            dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = dists.argmin(axis=1)
            if np.array_equal(new_labels, labels) and _it > 0:
                break
            labels = new_labels
            for c in range(clusters):
                mask = labels == c
                if mask.any():
                    centers[c] = points[mask].mean(axis=0)
        if all((labels == c).any() for c in range(clusters)):
            return labels
    raise DegenerateClusteringError("could not produce non-empty clusters")


def _kmeanspp(points: np.ndarray, clusters: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(clusters - 1):
        d2 = np.min(
            [((points - c) ** 2).sum(axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            # All remaining points coincide with a center; pick any.
            centers.append(points[rng.integers(n)])
            continue
        centers.append(points[rng.choice(n, p=d2 / total)])
    return np.stack(centers).astype(float)


def pick_queries(community: Community, clusters: dict[str, int],
                 fraction: float = 0.05, seed: int = 0) -> frozenset[str]:
    """Per neighborhood, per cluster: ceil(fraction * stratum size) uniform picks."""
    rng = np.random.default_rng(seed)
    picked: list[str] = []
    for nb_id in sorted(community.neighborhoods):
        members = community.neighborhoods[nb_id]
        for cluster in sorted({clusters[m] for m in members}):
            stratum = sorted(m for m in members if clusters[m] == cluster)
            count = int(np.ceil(fraction * len(stratum)))
            picked.extend(rng.choice(stratum, size=count, replace=False))
    return frozenset(picked)


def classify(graph: SelectionGraph, labeled: dict[str, bool],
             hyper: Hyper | None = None, seed: int = 0,
             gcn_hidden: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Semi-supervised two-layer GCN node classification with one-hot features.

    Returns (predicted bool labels, accept probabilities). Labeled nodes keep
    their given labels in the output.
    """
    hyper = hyper or Hyper()
    labels = set(labeled.values())
    if labels != {True, False}:
        raise DegenerateSupervisionError("need at least one labeled example per class")
    n = len(graph.household_ids)
    idx = {hid: i for i, hid in enumerate(graph.household_ids)}
    labeled_idx = np.array(sorted(idx[h] for h in labeled))
    y = np.zeros(n, dtype=int)
    for hid, accept in labeled.items():
        y[idx[hid]] = int(accept)

    adj = symmetrize(graph.edge_weights)
    features = np.eye(n)
    rng = np.random.default_rng(seed)
    from .autodiff import parameter

    w1 = parameter(rng, (n, gcn_hidden), n)
    w2 = parameter(rng, (gcn_hidden, 2), gcn_hidden)
    params = [w1, w2]
    cache = [np.zeros_like(p.data) for p in params]

    deg = adj.sum(axis=1) + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    norm = (adj + np.eye(n)) * inv_sqrt[:, None] * inv_sqrt[None, :]

    onehot_targets = np.zeros((labeled_idx.size, 2))
    onehot_targets[np.arange(labeled_idx.size), y[labeled_idx]] = 1.0

    probs_data = None
    for _epoch in range(hyper.epochs):
        for p in params:
            p.grad = None
        h1 = gcn_layer(features, adj, w1)
        logits = Tensor(norm) @ h1 @ w2
        probs = logits.softmax(axis=1)
        picked = probs[labeled_idx, :]
        loss = -(Tensor(onehot_targets) * (picked + 1e-12).log()).sum() * (
            1.0 / labeled_idx.size
        )
        loss.backward()
        for p, c in zip(params, cache):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            c *= hyper.rmsprop_decay
            c += (1 - hyper.rmsprop_decay) * g * g
            p.data -= hyper.learning_rate * g / (np.sqrt(c) + hyper.rmsprop_eps)
        probs_data = probs.data
    predicted = probs_data.argmax(axis=1).astype(bool)
    for hid, accept in labeled.items():
        predicted[idx[hid]] = accept
    return predicted, probs_data[:, 1]


def inject_noise(a: np.ndarray, level_pct: float, seed: int = 0) -> np.ndarray:
    """Add Uniform(0, b) per entry with b = level_pct/100 * mean(A); renormalize rows."""
    a = check_similarity(a)
    if level_pct < 0:
        raise DomainError("noise level must be >= 0")
    if level_pct == 0:
        return a.copy()
    rng = np.random.default_rng(seed)
    b = (level_pct / 100.0) * a.mean()
    noisy = a + rng.uniform(0.0, b, size=a.shape)
    return noisy / noisy.sum(axis=1, keepdims=True)


def evaluate_accuracy(predicted: dict[str, bool], truth: dict[str, bool],
                      queried: frozenset[str]) -> float:
    """Percent agreement over non-queried households."""
    evaluated = [h for h in truth if h not in queried]
    if not evaluated:
        raise UndefinedMetricError("no non-queried households to evaluate")
    correct = sum(predicted[h] == truth[h] for h in evaluated)
    return 100.0 * correct / len(evaluated)


def run_selection(community: Community, similarity: np.ndarray,
                  truth: dict[str, bool], seed: int = 0,
                  fraction: float = 0.05, hyper: Hyper | None = None) -> SelectionResult:
    """Full selection pipeline: spectral clustering, stratified query, GCN labeling."""
    ids = tuple(h.id for h in community.households)
    similarity = check_similarity(similarity)
    a_sym = symmetrize(similarity)
    lap = normalized_laplacian(a_sym)
    embed = spectral_embed(lap, k=2)
    cluster_arr = kmeans(embed, clusters=2, seed=seed)
    clusters = {hid: int(c) for hid, c in zip(ids, cluster_arr)}
    queried = pick_queries(community, clusters, fraction=fraction, seed=seed)
    labeled = {hid: truth[hid] for hid in queried}
    graph = SelectionGraph(ids, similarity)
    try:
        predicted_arr, _scores = classify(graph, labeled, hyper=hyper, seed=seed)
    except DegenerateSupervisionError:
        # All queried households answered alike: predict that label everywhere.
        only = next(iter(labeled.values()))
        predicted_arr = np.full(len(ids), only, dtype=bool)
    predicted = {hid: bool(p) for hid, p in zip(ids, predicted_arr)}
    accuracy = evaluate_accuracy(predicted, truth, queried)
    return SelectionResult(
        household_ids=ids,
        clusters=cluster_arr,
        queried=queried,
        true_labels=labeled,
        predicted=predicted_arr,
        accuracy_pct=accuracy,
    )


def export_selection(result: SelectionResult, truth: dict[str, bool],
                     path: Path | str) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["household_id", "cluster", "queried", "true_label",
                         "predicted_label"])
        for i, hid in enumerate(result.household_ids):
            writer.writerow([
                hid, int(result.clusters[i]), int(hid in result.queried),
                int(truth[hid]), int(result.predicted[i]),
            ])
