"""Causal mechanisms per stream and ancestral sampling of hybrid models.

Root streams get an empirical marginal (bootstrap pool). Produced streams
get an additive-noise conditional: a regression of the stream on its
parents plus a residual pool that is resampled uniformly at sampling time.
A hybrid model draws each stream from either the OLD-window or the
NEW-window mechanism, which is the machinery the attribution game is built
on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

from .dataset import WindowedDataset, WindowLabel
from .graph import DataflowGraph

LINEAR = "linear"
KNN = "knn"


class MechanismError(ValueError):
    """Fitting or sampling could not proceed (bad shapes, missing data)."""


class RankDeficiencyWarning(UserWarning):
    """Linear design matrix was rank-deficient; minimum-norm fit used."""


@dataclass(frozen=True)
class RootMechanism:
    """Empirical marginal of an external input stream."""

    pool: np.ndarray

    kind = "root_empirical"

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(self.pool, size=size, replace=True)

    def to_diagnostics(self) -> dict:
        return {
            "kind": self.kind,
            "n_train": int(self.pool.size),
            "pool_mean": float(self.pool.mean()),
            "pool_std": float(self.pool.std()),
        }


@dataclass(frozen=True)
class ConditionalMechanism:
    """Additive-noise conditional: value = f(parents) + resampled residual."""

    model: str
    parents: tuple[str, ...]
    residuals: np.ndarray
    coef: np.ndarray | None = None
    intercept: float = 0.0
    train_x: np.ndarray | None = None
    train_y: np.ndarray | None = None
    scales: np.ndarray | None = None
    n_neighbors: int = 0
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    kind = "additive_noise"

    def predict(self, parents: np.ndarray) -> np.ndarray:
        x = np.asarray(parents, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.parents):
            raise MechanismError(
                f"parent matrix must be n x {len(self.parents)}, got shape {x.shape}"
            )
        if self.model == LINEAR:
            return x @ self.coef + self.intercept
        _, idx = self._tree.query(x / self.scales, k=self.n_neighbors)
        if self.n_neighbors == 1:
            idx = idx[:, None]
        return self.train_y[idx].mean(axis=1)

    def draw(self, rng: np.random.Generator, parents: np.ndarray) -> np.ndarray:
        noise = rng.choice(self.residuals, size=parents.shape[0], replace=True)
        return self.predict(parents) + noise

    def to_diagnostics(self) -> dict:
        out = {
            "kind": self.kind,
            "model": self.model,
            "parents": list(self.parents),
            "n_train": int(self.residuals.size),
            "residual_std": float(self.residuals.std()),
        }
        if self.model == LINEAR:
            out["coefficients"] = [float(c) for c in self.coef]
            out["intercept"] = float(self.intercept)
        else:
            out["n_neighbors"] = self.n_neighbors
        return out


Mechanism = RootMechanism | ConditionalMechanism


def fit_root(values: Iterable[float]) -> RootMechanism:
    """Fit the marginal of a root stream; sampling bootstraps the pool."""
    pool = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    if pool.size == 0:
        raise MechanismError("cannot fit a root mechanism on an empty sample")
    return RootMechanism(pool=pool.copy())


def fit_conditional(
    parents: np.ndarray,
    values: Iterable[float],
    model: str = LINEAR,
    parent_names: tuple[str, ...] | None = None,
) -> ConditionalMechanism:
    """Fit an additive-noise conditional of ``values`` given ``parents``.

    LINEAR is least squares with intercept (minimum-norm on rank-deficient
    designs, reported as a :class:`RankDeficiencyWarning`). KNN is
    k-nearest-neighbour regression with k = ceil(sqrt(n)) on per-dimension
    standardised parents; its residuals are computed leave-self-out. The
    residual pool always has one entry per training row.
    """
    x = np.asarray(parents, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    n, k = x.shape
    if k < 1:
        raise MechanismError("at least one parent column required")
    if y.shape != (n,):
        raise MechanismError(f"values must have length {n}")
    if n < max(k + 2, 5):
        raise MechanismError(
            f"need at least {max(k + 2, 5)} rows to fit a conditional on {k} parents, got {n}"
        )
    names = parent_names if parent_names is not None else tuple(f"x{i}" for i in range(k))
    if model == LINEAR:
        design = np.column_stack([np.ones(n), x])
        beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if rank < k + 1:
            warnings.warn(
                f"rank-deficient design ({rank} < {k + 1}); using minimum-norm solution",
                RankDeficiencyWarning,
                stacklevel=2,
            )
        fitted = design @ beta
        return ConditionalMechanism(
            model=LINEAR,
            parents=names,
            residuals=y - fitted,
            coef=beta[1:],
            intercept=float(beta[0]),
        )
    if model == KNN:
        n_neighbors = math.ceil(math.sqrt(n))
        scales = x.std(axis=0)
        scales = np.where(scales > 0, scales, 1.0)
        tree = cKDTree(x / scales)
        # leave-self-out residuals: nearest hit is the training point itself
        _, idx = tree.query(x / scales, k=n_neighbors + 1)
        fitted = y[idx[:, 1:]].mean(axis=1)
        return ConditionalMechanism(
            model=KNN,
            parents=names,
            residuals=y - fitted,
            train_x=x,
            train_y=y,
            scales=scales,
            n_neighbors=n_neighbors,
            _tree=tree,
        )
    raise MechanismError(f"unknown conditional model {model!r}")


@dataclass(frozen=True)
class MechanismSet:
    """One fitted mechanism per analysed stream, tied to a window."""

    graph: DataflowGraph
    window: WindowLabel
    model: str
    mechanisms: dict[str, Mechanism]

    def mechanism(self, s: str) -> Mechanism:
        try:
            return self.mechanisms[s]
        except KeyError:
            raise MechanismError(f"no mechanism fitted for stream {s!r}") from None

    def to_diagnostics(self) -> dict:
        return {
            "window": self.window.value,
            "model": self.model,
            "streams": {s: m.to_diagnostics() for s, m in self.mechanisms.items()},
        }


def fit_mechanism_set(
    graph: DataflowGraph,
    ds: WindowedDataset,
    streams: Iterable[str],
    model: str = LINEAR,
) -> MechanismSet:
    """Fit a mechanism for every stream in ``streams`` from one window.

    Root streams (no parents) get empirical marginals, others additive-noise
    conditionals on their parents in the graph's deterministic parent order.
    The dataset must already be imputed.
    """
    wanted = tuple(streams)
    if ds.has_absent(tuple(s for s in wanted if s in ds.columns)):
        raise MechanismError("dataset contains ABSENT values; impute before fitting")
    fitted: dict[str, Mechanism] = {}
    for s in wanted:
        parents = graph.parent_list(s)
        if not parents:
            fitted[s] = fit_root(ds.column(s))
        else:
            x = np.column_stack([ds.column(p) for p in parents])
            fitted[s] = fit_conditional(x, ds.column(s), model=model, parent_names=parents)
    return MechanismSet(graph=graph, window=ds.window, model=model, mechanisms=fitted)


def sample_hybrid(
    graph: DataflowGraph,
    old: MechanismSet,
    new: MechanismSet,
    replaced: frozenset[str] | set[str],
    n: int,
    seed: int,
    target: str | None = None,
) -> np.ndarray:
    """Draw n target samples from the hybrid structural model.

    Streams are sampled ancestrally in topological order; a stream uses the
    NEW-window mechanism when it belongs to ``replaced`` and the OLD-window
    mechanism otherwise. Pure function of its arguments: the same call
    always returns the same array.
    """
    target = target if target is not None else graph.target
    needed = set(graph.ancestors_of_target(target))
    unknown = set(replaced) - needed
    if unknown:
        raise MechanismError(
            f"replaced streams not in the ancestor set of {target!r}: {sorted(unknown)}"
        )
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    for s in graph.topological_order():
        if s not in needed:
            continue
        mech = (new if s in replaced else old).mechanism(s)
        if isinstance(mech, RootMechanism):
            values[s] = mech.draw(rng, n)
        else:
            x = np.column_stack([values[p] for p in mech.parents])
            values[s] = mech.draw(rng, x)
    return values[target]


def sample_model(
    graph: DataflowGraph,
    mechanisms: MechanismSet,
    n: int,
    seed: int,
    target: str | None = None,
) -> np.ndarray:
    """Ancestral sampling from a single fitted model (no replacements)."""
    return sample_hybrid(graph, mechanisms, mechanisms, frozenset(), n, seed, target=target)
