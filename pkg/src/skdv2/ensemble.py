"""Monte Carlo ensembles, epsilon sweeps with common random numbers.

Paths are split into fixed chunks of consecutive path indices.  Each chunk is
integrated as one batch and every path draws from its own stream keyed by
``(seed, path)``, so results do not depend on how many worker processes run
the chunks.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import SimConfig
from .diagnostics import (COL, RECORD_FIELDS, MomentEstimates, SnapshotDiagnostics,
                          moment_estimators)
from .errors import ConfigError, ConsistencyError, PreconditionError
from .integrator import Engine
from .noise import NoiseStream

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("epsilon", "m", "est_4a", "est_4a_se", "est_4c", "est_4c_se", "blowup_frac")


@dataclass(frozen=True)
class EnsembleConfig:
    paths: int
    sim: SimConfig
    sweep: Optional[Tuple[float, ...]] = None
    workers: int = 1
    chunk_size: int = 128

    def __post_init__(self):
        for name in ("paths", "workers", "chunk_size"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ConfigError(f"ensemble invariant violated: {name} must be a positive integer (got {v})")
        if self.sweep is not None:
            if len(self.sweep) == 0:
                raise ConfigError("ensemble invariant violated: sweep needs at least one epsilon")
            if any(not e > 0 for e in self.sweep):
                raise ConfigError("ensemble invariant violated: sweep epsilons must be positive")

    @classmethod
    def from_sim(cls, sim: SimConfig, paths: Optional[int] = None, workers: Optional[int] = None,
                 sweep: Optional[Sequence[float]] = None) -> "EnsembleConfig":
        return cls(int(sim["ensemble.paths"] if paths is None else paths), sim,
                   None if sweep is None else tuple(float(e) for e in sweep),
                   int(sim["ensemble.workers"] if workers is None else workers),
                   int(sim["ensemble.chunk_size"]))


@dataclass
class _Chunk:
    start: int
    records: np.ndarray
    final_values: np.ndarray
    blown: np.ndarray
    blowup_time: np.ndarray
    w1_max: np.ndarray
    hashes: List[str]
    fields: Optional[np.ndarray]
    times: np.ndarray


def _run_chunk(config_text: str, start: int, stop: int, probes, keep_fields: int) -> _Chunk:
    sim = SimConfig.from_text(config_text)
    g = sim.grid()
    spec = sim.drift_spec()
    noise = sim.noise_model(g)
    eng = Engine(g, spec, noise, sim.stepper())
    diag = SnapshotDiagnostics(g, spec, noise, sim.weight(g), sim.window(), probes)
    u0 = sim.initial_field(g).values
    n = stop - start
    streams = [NoiseStream(sim["seed"], i, noise.modes) for i in range(start, stop)]
    keep = start < keep_fields
    res = eng.run(np.tile(u0, (n, 1)), streams, diagnostics=diag, keep_fields=keep)
    fields = None
    if keep:
        fields = res.fields[: keep_fields - start]
    return _Chunk(start, res.records, res.final_values, res.blown, res.blowup_time, res.w1_max,
                  [s.draw_hash() for s in streams], fields, res.times)


def _json_float(v):
    v = float(v)
    return v if np.isfinite(v) else None


@dataclass
class EnsembleStats:
    """Per-time ensemble statistics plus the raw per-path records."""

    config_text: str
    epsilon: float
    times: np.ndarray
    records: np.ndarray
    final_values: np.ndarray
    blown: np.ndarray
    blowup_time: np.ndarray
    w1_max: np.ndarray
    draw_hashes: List[str]
    fields: Optional[np.ndarray] = None
    mean: np.ndarray = field(init=False)
    variance: np.ndarray = field(init=False)
    se: Optional[np.ndarray] = field(init=False)
    moments: Optional[MomentEstimates] = field(init=False)

    def __post_init__(self):
        rec = self.records[:, :, : len(RECORD_FIELDS)]
        ok = ~self.blown
        n_ok = int(ok.sum())
        good = rec[ok]
        if n_ok == 0:
            self.mean = np.full(rec.shape[1:], np.nan)
            self.variance = np.full(rec.shape[1:], np.nan)
        else:
            self.mean = good.mean(axis=0)
            self.variance = good.var(axis=0, ddof=1) if n_ok > 1 else np.zeros(rec.shape[1:])
        self.se = np.sqrt(self.variance / n_ok) if n_ok > 1 else None
        try:
            self.moments = moment_estimators(self.records, self.times, self.epsilon)
        except PreconditionError:
            self.moments = None

    @property
    def paths(self) -> int:
        return int(self.records.shape[0])

    @property
    def blowup_fraction(self) -> float:
        return float(self.blown.mean())

    def draw_digest(self) -> str:
        h = hashlib.sha256()
        for s in self.draw_hashes:
            h.update(s.encode())
        return h.hexdigest()

    def column_mean(self, name: str) -> np.ndarray:
        return self.mean[:, COL[name]]

    def to_dict(self) -> dict:
        def table(arr):
            if arr is None:
                return None
            return {name: [_json_float(v) for v in arr[:, i]] for i, name in enumerate(RECORD_FIELDS) if name != "t"}

        mom = self.moments.to_dict() if self.moments is not None else None
        return {
            "config": self.config_text,
            "paths": self.paths,
            "epsilon": float(self.epsilon),
            "times": [float(t) for t in self.times],
            "mean": table(self.mean),
            "variance": table(self.variance),
            "se": table(self.se),
            "blowup_fraction": self.blowup_fraction,
            "moments": mom,
            "w1_max_ratio": _json_float(np.max(self.w1_max)) if self.paths else None,
            "draw_digest": self.draw_digest(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"


def _chunks(paths: int, size: int) -> List[Tuple[int, int]]:
    return [(s, min(s + size, paths)) for s in range(0, paths, size)]


def run_ensemble(ens: EnsembleConfig, epsilon: Optional[float] = None,
                 probes: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                 keep_fields: int = 0) -> EnsembleStats:
    """Integrate ``ens.paths`` independent paths and collect statistics.

    Every component is validated before any path starts; an invalid
    configuration raises :class:`ConfigError` without partial output.
    """
    sim = ens.sim
    if epsilon is not None:
        sim = sim.replace(**{"drift.epsilon": float(epsilon)})
    sim.validate()
    eps = float(sim["drift.epsilon"])
    text = sim.to_text()
    jobs = _chunks(ens.paths, ens.chunk_size)
    if ens.workers == 1 or len(jobs) == 1:
        parts = [_run_chunk(text, a, b, probes, keep_fields) for a, b in jobs]
    else:
        with ProcessPoolExecutor(max_workers=ens.workers) as pool:
            futs = [pool.submit(_run_chunk, text, a, b, probes, keep_fields) for a, b in jobs]
            parts = [f.result() for f in futs]
    parts.sort(key=lambda c: c.start)
    fields = [c.fields for c in parts if c.fields is not None]
    stats = EnsembleStats(
        text, eps, parts[0].times,
        np.concatenate([c.records for c in parts]),
        np.concatenate([c.final_values for c in parts]),
        np.concatenate([c.blown for c in parts]),
        np.concatenate([c.blowup_time for c in parts]),
        np.concatenate([c.w1_max for c in parts]),
        [h for c in parts for h in c.hashes],
        np.concatenate(fields) if fields else None,
    )
    if stats.blowup_fraction > 0:
        logger.warning("%d of %d paths blew up", int(stats.blown.sum()), stats.paths)
    return stats


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ""
    return str(v)


@dataclass
class SweepResult:
    rows: List[MomentEstimates]
    blowup: List[float]
    m: Optional[int]
    path_distance: List[float]
    draw_digest: str
    config_text: str
    stats: List[EnsembleStats] = field(repr=False, default_factory=list)

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(line + "\n")
        buf.write(",".join(SWEEP_COLUMNS) + "\n")
        for est, bf in zip(self.rows, self.blowup):
            vals = [est.epsilon, "" if self.m is None else self.m, est.est_4a, est.est_4a_se,
                    est.est_4c, est.est_4c_se, bf]
            buf.write(",".join(_csv_cell(v) for v in vals) + "\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "config": self.config_text,
            "rows": [r.to_dict() for r in self.rows],
            "path_distance": [_json_float(d) for d in self.path_distance],
            "draw_digest": self.draw_digest,
        }


def sweep_epsilon(ens: EnsembleConfig, epsilons: Optional[Sequence[float]] = None) -> SweepResult:
    """Run one ensemble per epsilon on common random numbers.

    ``path_distance[j]`` is the mean L2 distance between final fields of
    sweep entries ``j`` and ``j + 1`` (paths that survived both).
    """
    eps_list = tuple(float(e) for e in (epsilons if epsilons is not None else
                                        (ens.sweep or ens.sim["sweep.epsilons"])))
    EnsembleConfig(ens.paths, ens.sim, eps_list, ens.workers, ens.chunk_size)
    for e in eps_list:
        ens.sim.replace(**{"drift.epsilon": e}).validate()
    runs = [run_ensemble(ens, epsilon=e) for e in eps_list]
    digests = {r.draw_digest() for r in runs}
    if len(digests) != 1:
        raise ConsistencyError("common random numbers broken: draw hashes differ across the sweep")
    rows, blow = [], []
    for e, r in zip(eps_list, runs):
        if r.moments is None:
            rows.append(MomentEstimates(e, np.nan, np.nan, np.nan, np.nan, 0, 1.0))
        else:
            rows.append(r.moments)
        blow.append(r.blowup_fraction)
    h = ens.sim.grid().spacing
    dist = []
    for a, b in zip(runs[:-1], runs[1:]):
        ok = ~(a.blown | b.blown)
        if not np.any(ok):
            dist.append(float("nan"))
            continue
        d = a.final_values[ok] - b.final_values[ok]
        dist.append(float(np.mean(np.sqrt(h * np.sum(d * d, axis=1)))))
    m = int(ens.sim["drift.galerkin_m"]) if ens.sim["drift.variant"] == "galerkin_cutoff" else None
    return SweepResult(rows, blow, m, dist, runs[0].draw_digest(), ens.sim.to_text(), runs)
