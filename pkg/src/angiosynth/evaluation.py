"""Frechet-distance scoring with a pluggable embedder, condition tables,
and the blinded real/fake study kit.

The default embedder is a fixed seeded random projection of a Lanczos
thumbnail: deterministic and dependency-free, good for property tests and
relative comparisons. Reproducing published absolute FID numbers requires
plugging in a pretrained Inception embedder through the same interface
(any callable image -> vector).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, NumericsError
from .perturb import apply_perturbation, default_condition_specs
from .resample import lanczos_resize


@dataclass(frozen=True)
class EmbeddingStats:
    mean: np.ndarray        # (d,)
    covariance: np.ndarray  # (d, d)
    count: int

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(
            self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        )
        if cov.shape != (self.mean.size, self.mean.size):
            raise InputError(
                f"covariance {cov.shape} does not match mean dim "
                f"{self.mean.size}"
            )
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise InputError("covariance must be symmetric")


class RandomProjectionEmbedder:
    """Lanczos-thumbnail the image, flatten, and project with a fixed
    seeded Gaussian matrix scaled by 1/sqrt(input dim)."""

    def __init__(self, dim=64, seed=0, thumb=64):
        self.dim = dim
        self.seed = seed
        self.thumb = thumb
        self._proj = {}

    def _projection(self, n_in):
        if n_in not in self._proj:
            rng = np.random.default_rng(self.seed)
            self._proj[n_in] = rng.normal(
                0.0, 1.0, (n_in, self.dim)
            ) / np.sqrt(n_in)
        return self._proj[n_in]

    def __call__(self, image):
        small = lanczos_resize(
            np.asarray(image, dtype=np.float64), (self.thumb, self.thumb)
        )
        flat = small.ravel()
        return flat @ self._projection(flat.size)


def embed_set(images, embedder) -> EmbeddingStats:
    """Sample mean and unbiased covariance of the embedded images."""
    if len(images) < 2:
        raise InputError(f"need at least 2 images, got {len(images)}")
    emb = np.stack([np.asarray(embedder(im), dtype=np.float64) for im in images])
    mean = emb.mean(axis=0)
    centered = emb - mean
    cov = centered.T @ centered / (emb.shape[0] - 1)
    return EmbeddingStats(mean=mean, covariance=np.atleast_2d(cov),
                          count=emb.shape[0])


def _psd_eigh(matrix, label):
    sym = (matrix + matrix.T) / 2.0
    try:
        w, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"eigendecomposition failed for {label}") from exc
    return w, v


def _stabilized(cov):
    d = cov.shape[0]
    w, _ = _psd_eigh(cov, "covariance")
    if w.min() < -1e-10 * max(1.0, abs(w.max())):
        ridge = 1e-6 * np.trace(cov) / d
        cov = cov + np.eye(d) * max(ridge, -w.min())
    return cov


def frechet_distance(a: EmbeddingStats, b: EmbeddingStats) -> float:
    """2-Wasserstein distance between Gaussians:
    ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    The cross square root is taken as sqrt(Sa^(1/2) Sb Sa^(1/2)) via
    symmetric eigendecompositions with eigenvalue clamping at zero.
    """
    if a.mean.size != b.mean.size:
        raise InputError(
            f"embedding dims differ: {a.mean.size} vs {b.mean.size}"
        )
    sa = _stabilized(a.covariance)
    sb = _stabilized(b.covariance)
    wa, va = _psd_eigh(sa, "covariance a")
    root_a = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T
    inner = root_a @ sb @ root_a
    wi, _ = _psd_eigh(inner, "cross product")
    trace_sqrt = np.sum(np.sqrt(np.clip(wi, 0.0, None)))
    diff = a.mean - b.mean
    dist = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * trace_sqrt)
    return max(dist, 0.0)


# ---------------------------------------------------------------------------
# perturbation-condition evaluation (the FID table)
# ---------------------------------------------------------------------------


@dataclass
class EvaluationReport:
    scores: dict            # condition -> frechet distance
    deltas: dict            # condition -> score - score["none"]
    errors: dict = field(default_factory=dict)

    def to_json(self, path=None):
        payload = json.dumps(
            {"scores": self.scores, "deltas": self.deltas,
             "errors": self.errors},
            indent=2, sort_keys=True,
        )
        if path is not None:
            Path(path).write_text(payload)
        return payload

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            conditions = list(self.scores)
            writer.writerow(["condition"] + conditions)
            writer.writerow(
                ["frechet"] + [f"{self.scores[c]:.6f}" for c in conditions]
            )
            writer.writerow(
                ["delta_vs_none"]
                + [f"{self.deltas[c]:.6f}" for c in conditions]
            )


def evaluate_conditions(infer_fn, eval_samples, embedder,
                        condition_specs=None) -> EvaluationReport:
    """Frechet distance per perturbation condition.

    infer_fn: fundus crop (S,S,3) -> angiogram (S,S,1). For each
    condition the fundus crops are perturbed, translated, and the
    generated set is scored against the real angiogram crops. A failing
    condition is recorded under errors and the rest continue.
    """
    specs = condition_specs or default_condition_specs()
    real_stats = embed_set([s.angio_crop for s in eval_samples], embedder)
    scores, errors = {}, {}
    for name, spec in specs.items():
        try:
            generated = [
                infer_fn(apply_perturbation(s.fundus_crop, spec))
                for s in eval_samples
            ]
            scores[name] = frechet_distance(
                embed_set(generated, embedder), real_stats
            )
        except Exception as exc:  # keep scoring the remaining conditions
            errors[name] = f"{type(exc).__name__}: {exc}"
    base = scores.get("none")
    deltas = {
        name: (value - base if base is not None else float("nan"))
        for name, value in scores.items()
    }
    return EvaluationReport(scores=scores, deltas=deltas, errors=errors)


# ---------------------------------------------------------------------------
# blinded real/fake study kit
# ---------------------------------------------------------------------------


@dataclass
class StudyKit:
    items: list   # (item_id, image) in presentation order
    key: dict     # item_id -> "real" | "fake", stored separately from items


@dataclass(frozen=True)
class StudyReport:
    fake_correct_rate: float
    real_correct_rate: float
    missed: float
    found: float
    confusion: float

    def rounded(self):
        """Display form with half-up whole-percent missed/found."""
        half_up = lambda x: int(np.floor(x + 0.5))
        return {
            "fake_correct": half_up(self.fake_correct_rate),
            "real_correct": half_up(self.real_correct_rate),
            "missed": half_up(self.missed),
            "found": half_up(self.found),
            "confusion": self.confusion,
        }


def build_study_kit(real_angios, fake_angios, n=40, seed=0) -> StudyKit:
    """Balanced, seeded-shuffled kit of n items with anonymized sequential
    ids; the label key is returned separately."""
    half = n // 2
    if 2 * half != n:
        raise InputError(f"kit size must be even, got {n}")
    if len(real_angios) < half or len(fake_angios) < half:
        raise InputError(
            f"need {half} of each class, have {len(real_angios)} real / "
            f"{len(fake_angios)} fake"
        )
    rng = np.random.default_rng(seed)
    chosen_real = rng.choice(len(real_angios), half, replace=False)
    chosen_fake = rng.choice(len(fake_angios), half, replace=False)
    pool = [(real_angios[i], "real") for i in chosen_real]
    pool += [(fake_angios[i], "fake") for i in chosen_fake]
    order = rng.permutation(n)
    items, key = [], {}
    for pos, idx in enumerate(order):
        image, label = pool[idx]
        item_id = f"item_{pos:03d}"
        items.append((item_id, image))
        key[item_id] = label
    return StudyKit(items=items, key=key)


def score_study(responses, key) -> StudyReport:
    """responses: item_id -> "real" | "fake". All key ids must be covered."""
    missing = sorted(set(key) - set(responses))
    unknown = sorted(set(responses) - set(key))
    if missing or unknown:
        raise InputError(
            f"missing responses: {missing}; unknown ids: {unknown}"
        )
    counts = {"real": [0, 0], "fake": [0, 0]}  # label -> [correct, total]
    for item_id, truth in key.items():
        answer = responses[item_id]
        if answer not in ("real", "fake"):
            raise InputError(f"response for {item_id} must be real/fake")
        counts[truth][1] += 1
        counts[truth][0] += answer == truth
    if not counts["real"][1] or not counts["fake"][1]:
        raise InputError("key must contain both classes")
    fake_correct = 100.0 * counts["fake"][0] / counts["fake"][1]
    real_correct = 100.0 * counts["real"][0] / counts["real"][1]
    missed = ((100.0 - fake_correct) + (100.0 - real_correct)) / 2.0
    return StudyReport(
        fake_correct_rate=fake_correct,
        real_correct_rate=real_correct,
        missed=missed,
        found=100.0 - missed,
        confusion=missed,
    )


def invert_responses(responses):
    flip = {"real": "fake", "fake": "real"}
    return {k: flip[v] for k, v in responses.items()}
