"""Regression and latent-space diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .contour import center_chunk, spaced_chunks
from .losses import assign_bin


class EvaluationError(ValueError):
    pass


def r_squared(y_true, y_pred) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise EvaluationError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size < 2:
        raise EvaluationError("r_squared needs at least 2 samples")
    ss_tot = np.sum((y_true - y_true.mean()) ** 2)
    if ss_tot == 0:
        raise EvaluationError("r_squared is undefined for constant targets")
    return float(1.0 - np.sum((y_true - y_pred) ** 2) / ss_tot)


@dataclass
class EmbeddingSet:
    latents: np.ndarray
    bin_labels: np.ndarray
    ratings: np.ndarray
    recording_ids: list

    def __post_init__(self):
        self.latents = np.atleast_2d(np.asarray(self.latents, dtype=np.float64))
        self.bin_labels = np.asarray(self.bin_labels, dtype=int)
        self.ratings = np.asarray(self.ratings, dtype=np.float64)
        self.recording_ids = list(self.recording_ids)
        n = self.latents.shape[0]
        if n < 1 or not (self.bin_labels.shape == self.ratings.shape == (n,) and len(self.recording_ids) == n):
            raise EvaluationError("latents, bin labels, ratings, and ids must have equal non-zero length")

    @classmethod
    def from_ratings(cls, latents, ratings, recording_ids, C):
        return cls(latents, [assign_bin(float(r), C) for r in ratings], ratings, recording_ids)

    def __len__(self):
        return self.latents.shape[0]


@dataclass
class ClusterStats:
    bins: np.ndarray
    centroids: np.ndarray
    scatters: np.ndarray

    @property
    def occupied_bins(self):
        return set(int(b) for b in self.bins)


def cluster_stats(emb: EmbeddingSet) -> ClusterStats:
    """Per-bin centroids and mean member-to-centroid distances, occupied bins only."""
    bins = np.unique(emb.bin_labels)
    if bins.size < 2:
        raise EvaluationError(f"need at least 2 occupied bins, got {bins.size}")
    centroids = np.stack([emb.latents[emb.bin_labels == b].mean(axis=0) for b in bins])
    scatters = np.array([
        np.linalg.norm(emb.latents[emb.bin_labels == b] - c, axis=1).mean() for b, c in zip(bins, centroids)
    ])
    return ClusterStats(bins, centroids, scatters)


def _centroid_distances(centroids):
    diff = centroids[:, None, :] - centroids[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def davies_bouldin(emb: EmbeddingSet) -> float:
    stats = cluster_stats(emb)
    dist = _centroid_distances(stats.centroids)
    k = len(stats.bins)
    off_diag = ~np.eye(k, dtype=bool)
    if np.any(dist[off_diag] == 0):
        raise EvaluationError("coincident centroids for distinct bins; Davies-Bouldin ratio is undefined")
    summed = stats.scatters[:, None] + stats.scatters[None, :]
    ratios = np.where(off_diag, summed / np.where(off_diag, dist, 1.0), -np.inf)
    return float(ratios.max(axis=1).mean())


def centroid_distance_matrix(emb: EmbeddingSet):
    """``(bins, matrix)``: Euclidean distances between occupied-bin centroids."""
    stats = cluster_stats(emb)
    dist = _centroid_distances(stats.centroids)
    dist = (dist + dist.T) / 2
    np.fill_diagonal(dist, 0.0)
    return stats.bins, dist


def max_perplexity(n: int) -> float:
    return (n - 1) / 3


def project_2d(emb: EmbeddingSet, perplexity: float = 30.0, seed: int = 0, max_iter: int = 1000) -> np.ndarray:
    """Exact t-SNE of the latents into the plane with a seeded random init."""
    from sklearn.manifold import TSNE

    n = len(emb)
    if n < 4:
        raise EvaluationError(f"t-SNE needs at least 4 points, got {n}")
    if not 0 < perplexity < max_perplexity(n):
        raise EvaluationError(f"perplexity must lie in (0, {max_perplexity(n):.3f}) for {n} points")
    tsne = TSNE(n_components=2, perplexity=perplexity, method="exact", init="random",
                random_state=seed, max_iter=max_iter)
    return tsne.fit_transform(emb.latents.astype(np.float64))


def eval_chunks(contours, chunk_len, policy="center", n_chunks=5):
    """Deterministic evaluation chunks: ``(batch_tensor, owner_index)``."""
    values, owners = [], []
    for i, contour in enumerate(contours):
        chunks = [center_chunk(contour, chunk_len)] if policy == "center" else spaced_chunks(contour, chunk_len, n_chunks)
        values += [c.values for c in chunks]
        owners += [i] * len(chunks)
    return torch.as_tensor(np.stack(values), dtype=torch.float32), np.asarray(owners)


@torch.no_grad()
def infer(model, contours, chunk_len, policy="center", n_chunks=5):
    """Per-recording latents and ratings in inference mode, averaged over chunks."""
    was_training = model.training
    model.eval()
    try:
        x, owners = eval_chunks(contours, chunk_len, policy, n_chunks)
        z, pred = model(x)
    finally:
        model.train(was_training)
    z, pred = z.double().numpy(), pred.double().numpy()
    n = len(contours)
    if policy == "center":
        return z, pred
    counts = np.bincount(owners, minlength=n)
    z_mean = np.stack([z[owners == i].mean(axis=0) for i in range(n)])
    pred_mean = np.bincount(owners, weights=pred, minlength=n) / counts
    return z_mean, pred_mean


@dataclass
class MetricsBundle:
    r2: float
    mse: float
    davies_bouldin: float | None
    centroid_bins: list
    centroid_distances: list
    embeddings: EmbeddingSet
    predictions: np.ndarray

    def to_dict(self):
        return {
            "r2": self.r2,
            "mse": self.mse,
            "davies_bouldin": self.davies_bouldin,
            "centroid_bins": [int(b) for b in self.centroid_bins],
            "centroid_distances": [[float(v) for v in row] for row in self.centroid_distances],
            "n": len(self.embeddings),
        }


def evaluate_model(model, dataset, ids, criterion, C=5, chunk_len=1000, policy="center", n_chunks=5) -> MetricsBundle:
    contours = [dataset.contours[i] for i in ids]
    ratings = dataset.ratings(ids, criterion)
    z, pred = infer(model, contours, chunk_len, policy, n_chunks)
    emb = EmbeddingSet.from_ratings(z, ratings, ids, C)
    try:
        db = davies_bouldin(emb)
        bins, dist = centroid_distance_matrix(emb)
    except EvaluationError:
        db, bins, dist = None, np.array([]), np.zeros((0, 0))
    return MetricsBundle(
        r2=r_squared(ratings, pred),
        mse=float(np.mean((ratings - pred) ** 2)),
        davies_bouldin=db,
        centroid_bins=list(bins),
        centroid_distances=dist.tolist(),
        embeddings=emb,
        predictions=pred,
    )


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def write_metrics(path, bundle: MetricsBundle):
    return _atomic_write(path, json.dumps(bundle.to_dict(), indent=2, sort_keys=True) + "\n")


def write_embeddings(path, emb: EmbeddingSet):
    """Tab-separated: recording_id, bin, rating, z0..z{d-1}."""
    dims = emb.latents.shape[1]
    lines = ["\t".join(["recording_id", "bin", "rating"] + [f"z{k}" for k in range(dims)])]
    for rid, b, r, z in zip(emb.recording_ids, emb.bin_labels, emb.ratings, emb.latents):
        lines.append("\t".join([rid, str(int(b)), repr(float(r))] + [repr(float(v)) for v in z]))
    return _atomic_write(path, "\n".join(lines) + "\n")


def read_embeddings(path) -> EmbeddingSet:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    fields = [r.split("\t") for r in rows if r]
    return EmbeddingSet(
        [[float(v) for v in f[3:]] for f in fields],
        [int(f[1]) for f in fields],
        [float(f[2]) for f in fields],
        [f[0] for f in fields],
    )


def write_projection(path, points, bins):
    lines = ["x\ty\tbin"] + [f"{float(x)!r}\t{float(y)!r}\t{int(b)}" for (x, y), b in zip(points, bins)]
    return _atomic_write(path, "\n".join(lines) + "\n")


def read_projection(path):
    rows = [r.split("\t") for r in Path(path).read_text(encoding="utf-8").splitlines()[1:] if r]
    return np.array([[float(r[0]), float(r[1])] for r in rows]), np.array([int(r[2]) for r in rows])
