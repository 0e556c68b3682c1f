"""Seeded synthetic cohorts with planted profile heterogeneity.

Every random draw comes from a PCG64 stream keyed by ``(seed, stream, index)``
through ``numpy.random.SeedSequence`` spawn keys, so a subject's data do not
depend on how many other subjects are generated or in which order.

Streams: 0 latents, 1 item responses, 2 scrambling, 3 feature noise,
4 subgroup attribute, 100+ cohort-level constants (prototypes, embedding).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ._version import TOOL, __version__
from .scales import (DASS21, FACTORS, ResponseMatrix, ScaleSpec, ValidationError,
                     format_responses, load_responses)

DEFAULT_CORRELATIONS = (
    (1.0, 0.780, 0.777),
    (0.780, 1.0, 0.825),
    (0.777, 0.825, 1.0),
)

# Band occupancy of the three sub-scales in a large adolescent community sample
# (Normal, Mild, Moderate, Severe, Extremely severe).
DEFAULT_BAND_COUNTS = {
    "depression": (6316, 734, 795, 229, 207),
    "anxiety": (5358, 643, 1256, 466, 558),
    "stress": (6807, 668, 494, 243, 69),
}

STREAM_LATENT, STREAM_RESPONSE, STREAM_SCRAMBLE, STREAM_NOISE, STREAM_GROUP = 0, 1, 2, 3, 4
STREAM_PROTOTYPE, STREAM_EMBEDDING = 100, 101

# Log-scale sd of the per-prototype perturbation of item weights.
PROTOTYPE_SPREAD = 0.25


def stream(seed: int, key: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(key, index))))


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 5000
    seed: int = 20240101
    factor_correlations: tuple = DEFAULT_CORRELATIONS
    prototypes_per_band: int = 2
    heterogeneity_rate: float = 0.15
    feature_dim: int = 64
    feature_noise: float = 0.5
    jitter: float = 0.2
    profile_concentration: float = 3.0
    intensity_weight: float = 0.0
    item_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "factor_correlations",
                           tuple(tuple(float(v) for v in row) for row in self.factor_correlations))
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be positive")
        if not 0.0 <= self.heterogeneity_rate <= 1.0:
            raise ValueError("heterogeneity_rate must lie in [0, 1]")
        if self.prototypes_per_band < 1 or self.feature_dim < 1:
            raise ValueError("prototypes_per_band and feature_dim must be positive")
        if self.profile_concentration <= 0:
            raise ValueError("profile_concentration must be positive")
        if self.feature_noise < 0 or self.jitter < 0:
            raise ValueError("feature_noise and jitter must be non-negative")
        cholesky_factor(self.factor_correlations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["factor_correlations"] = [list(r) for r in self.factor_correlations]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "factor_correlations" in d:
            d["factor_correlations"] = tuple(tuple(r) for r in d["factor_correlations"])
        return cls(**d)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def cholesky_factor(corr) -> np.ndarray:
    c = np.asarray(corr, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("correlation matrix must be square")
    if not np.allclose(c, c.T):
        raise ValueError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(c), 1.0):
        raise ValueError("correlation matrix must have unit diagonal")
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        raise ValueError("correlation matrix is not positive definite") from None


def correlated_latents(config: SynthConfig) -> np.ndarray:
    L = cholesky_factor(config.factor_correlations)
    k = L.shape[0]
    e = np.stack([stream(config.seed, STREAM_LATENT, j).standard_normal(k)
                  for j in range(config.n_subjects)])
    return e @ L.T


def band_raw_ranges(spec: ScaleSpec) -> list:
    """Inclusive raw-total interval of each severity band."""
    mult = spec.score_multiplier
    edges = [0] + [-(-c // mult) for c in spec.cutoffs] + [spec.max_raw + 1]
    return [(edges[b], edges[b + 1] - 1) for b in range(5)]


def _waterfill(shape: np.ndarray, total: float, cap: float) -> np.ndarray:
    """Split ``total`` across items proportionally to ``shape`` without exceeding ``cap``."""
    p = np.zeros_like(shape)
    free = np.ones(len(shape), dtype=bool)
    remaining = total
    while remaining > 1e-12 and free.any():
        share = shape * free
        alloc = remaining * share / share.sum()
        over = free & (p + alloc > cap)
        if not over.any():
            p += alloc
            break
        remaining -= (cap - p[over]).sum()
        p[over] = cap
        free &= ~over
    return p


def _round_to_total(x: np.ndarray, total: int, lo: int, hi: int) -> np.ndarray:
    """Integer vector in [lo, hi] with the given sum, nearest to ``x`` by largest remainder."""
    x = np.clip(x, lo, hi)
    row = np.floor(x).astype(np.int64)
    frac = x - row
    diff = total - int(row.sum())
    order = np.argsort(-frac, kind="stable") if diff > 0 else np.argsort(frac, kind="stable")
    step = 1 if diff > 0 else -1
    while diff != 0:
        moved = False
        for i in order:
            if diff == 0:
                break
            if lo <= row[i] + step <= hi:
                row[i] += step
                diff -= step
                moved = True
        if not moved:
            raise ValueError("total not reachable within bounds")
    return row


@dataclass(frozen=True, eq=False)
class ScalePrototypes:
    """Per-band item-emphasis shapes for one scale, fixed per seed."""
    spec: ScaleSpec
    band_quantiles: np.ndarray    # cumulative band probabilities, length 5
    shapes: np.ndarray            # (5, prototypes_per_band, m), rows sum to 1


def make_prototypes(spec: ScaleSpec, band_counts, n_per_band: int, seed: int,
                    scale_index: int = 0, concentration: float = 1.0) -> ScalePrototypes:
    """Band prototypes following an item-difficulty order.

    Each scale gets a seeded difficulty order and items are weighted by
    ``exp(-concentration * rank)``, so easy items saturate first.  Prototypes
    differ by a small multiplicative perturbation of those weights.
    """
    rng = stream(seed, STREAM_PROTOTYPE, scale_index)
    counts = np.asarray(band_counts, dtype=np.float64)
    cum = np.cumsum(counts) / counts.sum()
    m = spec.item_count
    rank = np.empty(m)
    rank[rng.permutation(m)] = np.arange(m)
    log_w = -concentration * rank
    shapes = np.exp(log_w + PROTOTYPE_SPREAD * rng.standard_normal((5, n_per_band, m)))
    shapes /= shapes.sum(axis=2, keepdims=True)
    return ScalePrototypes(spec, cum, shapes)


def responses_from_latent(latent: float, protos: ScalePrototypes, rng: np.random.Generator,
                          jitter: float = 0.2) -> np.ndarray:
    """One item row for a subject whose severity quantile is ``Phi(latent)``.

    The quantile picks the band and the position inside the band's raw-total
    range; a prototype drawn from that band distributes the total over items,
    and per-item Gaussian jitter perturbs the profile before integer rounding
    back to the same total.
    """
    spec = protos.spec
    u = float(ndtr(latent))
    cum = protos.band_quantiles
    band = min(int(np.searchsorted(cum, u, side="right")), 4)
    lo_q = 0.0 if band == 0 else cum[band - 1]
    hi_q = cum[band]
    t = 0.0 if hi_q <= lo_q else min(max((u - lo_q) / (hi_q - lo_q), 0.0), 1.0)
    lo_raw, hi_raw = band_raw_ranges(spec)[band]
    total = min(lo_raw + int(np.floor(t * (hi_raw - lo_raw + 1))), hi_raw)
    k = int(rng.integers(protos.shapes.shape[1]))
    eps = rng.standard_normal(spec.item_count)
    width = spec.likert_max - spec.likert_min
    base = _waterfill(protos.shapes[band, k], total - spec.likert_min * spec.item_count, width)
    return _round_to_total(base + spec.likert_min + jitter * eps, total,
                           spec.likert_min, spec.likert_max)


def _composition_counts(m: int, total: int, width: int) -> list:
    """counts[k][s]: ways to write s as k ordered parts in [0, width]."""
    counts = [[1] + [0] * total]
    for k in range(1, m + 1):
        prev = counts[-1]
        counts.append([sum(prev[s - v] for v in range(min(width, s) + 1)) for s in range(total + 1)])
    return counts


def scramble_profile(row, rng: np.random.Generator, lo: int = 0, hi: int = 3) -> np.ndarray:
    """Uniformly drawn composition of ``sum(row)`` into ``len(row)`` parts in [lo, hi].

    Parts are drawn one at a time with probabilities proportional to the number
    of bounded completions, which is exactly uniform over all compositions.
    """
    row = np.asarray(row, dtype=np.int64)
    m = len(row)
    width = hi - lo
    remaining = int(row.sum()) - m * lo
    counts = _composition_counts(m, remaining, width)
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        k = m - i - 1
        weights = np.array([counts[k][remaining - v] if v <= remaining else 0
                            for v in range(width + 1)], dtype=np.float64)
        v = int(rng.choice(width + 1, p=weights / weights.sum()))
        out[i] = v + lo
        remaining -= v
    return out


@dataclass(frozen=True, eq=False)
class SynthCohort:
    config: SynthConfig | None  # None for cohorts loaded without a generator config
    responses: dict            # factor -> ResponseMatrix
    features: np.ndarray       # (N, d)
    latents: np.ndarray        # (N, 3)
    scrambled: np.ndarray      # (N, 3) bool, one column per factor
    group: np.ndarray          # (N,) int 0/1, seeded attribute for subgroup analysis
    specs: dict = field(default_factory=lambda: dict(DASS21))

    @property
    def subject_ids(self) -> tuple:
        return self.responses[FACTORS[0]].subject_ids

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash if self.config is not None else "none"

    def subset(self, rows) -> "SynthCohort":
        rows = np.asarray(rows, dtype=np.intp)
        return SynthCohort(
            self.config, {f: r.subset(rows) for f, r in self.responses.items()},
            self.features[rows], self.latents[rows], self.scrambled[rows],
            self.group[rows], self.specs)


def one_hot_levels(rows: np.ndarray, lo: int, levels: int) -> np.ndarray:
    """(N, k) integer responses -> (N, k*levels) indicator embedding."""
    rows = np.asarray(rows, dtype=np.int64) - lo
    n, k = rows.shape
    out = np.zeros((n, k * levels))
    out[np.arange(n)[:, None], np.arange(k) * levels + rows] = 1.0
    return out


def embedding_matrix(config: SynthConfig, items_per_scale, levels: int) -> np.ndarray:
    """(d, n_items*levels) map from the one-hot response embedding to features.

    Column (i, l) is ``[l > 0] * (scale_s + item_weight * item_i)
    + intensity_weight * level_(i,l)``, where ``s`` is the scale holding item
    ``i``: a direction shared by all endorsed items of a scale, an item-specific
    endorsement direction and a level-specific direction.
    """
    rng = stream(config.seed, STREAM_EMBEDDING)
    d = config.feature_dim
    n_items = int(sum(items_per_scale))
    shared = rng.standard_normal((d, len(items_per_scale)))
    item = rng.standard_normal((d, n_items))
    level = rng.standard_normal((d, n_items, levels))
    owner = np.repeat(np.arange(len(items_per_scale)), items_per_scale)
    W = config.intensity_weight * level
    W[:, :, 1:] += (shared[:, owner] + config.item_weight * item)[:, :, None]
    return W.reshape(d, n_items * levels)


def gen_cohort(config: SynthConfig, specs: dict | None = None) -> SynthCohort:
    specs = dict(DASS21) if specs is None else dict(specs)
    factors = [f for f in FACTORS if f in specs]
    if len(factors) != len(config.factor_correlations):
        raise ValueError("one scale per correlated factor is required")
    n = config.n_subjects
    latents = correlated_latents(config)
    protos = {
        f: make_prototypes(specs[f], DEFAULT_BAND_COUNTS.get(f, (1, 1, 1, 1, 1)),
                           config.prototypes_per_band, config.seed, i,
                           config.profile_concentration)
        for i, f in enumerate(factors)
    }
    width = len(str(n))
    ids = tuple(f"S{j:0{width}d}" for j in range(n))
    rows = {f: np.zeros((n, specs[f].item_count), dtype=np.int64) for f in factors}
    scrambled = np.zeros((n, len(factors)), dtype=bool)
    for j in range(n):
        r_rng = stream(config.seed, STREAM_RESPONSE, j)
        s_rng = stream(config.seed, STREAM_SCRAMBLE, j)
        for i, f in enumerate(factors):
            spec = specs[f]
            row = responses_from_latent(latents[j, i], protos[f], r_rng, config.jitter)
            if s_rng.random() < config.heterogeneity_rate:
                row = scramble_profile(row, s_rng, spec.likert_min, spec.likert_max)
                scrambled[j, i] = True
            rows[f][j] = row
    phi = np.hstack([one_hot_levels(rows[f], specs[f].likert_min, specs[f].levels)
                     for f in factors])
    levels = {specs[f].levels for f in factors}
    if len(levels) != 1:
        raise ValueError("all scales must share one Likert range")
    W = embedding_matrix(config, [specs[f].item_count for f in factors], levels.pop())
    noise = np.stack([stream(config.seed, STREAM_NOISE, j).standard_normal(config.feature_dim)
                      for j in range(n)])
    features = phi @ W.T + config.feature_noise * noise
    group = np.array([int(stream(config.seed, STREAM_GROUP, j).random() < 0.5)
                      for j in range(n)])
    responses = {f: ResponseMatrix(ids, rows[f]) for f in factors}
    return SynthCohort(config, responses, features, latents, scrambled, group,
                       {f: specs[f] for f in factors})


# ---------------------------------------------------------------- cohort files

def provenance_line(seed, config_hash) -> str:
    return f"{TOOL} {__version__} seed={seed} config_hash={config_hash}"


def _csv_text(header, rows, comment) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cohort_files(cohort: SynthCohort, seed=None) -> dict:
    """File name -> text for the response, feature and ground-truth CSVs plus provenance JSON."""
    seed = cohort.config.seed if seed is None and cohort.config is not None else seed
    comment = provenance_line(seed, cohort.config_hash)
    ids = cohort.subject_ids
    factors = list(cohort.responses)
    out = {f"{f}.csv": format_responses(cohort.responses[f], comment) for f in factors}
    d = cohort.features.shape[1]
    out["features.csv"] = _csv_text(
        ["subject_id"] + [f"f_{i}" for i in range(d)],
        ([s, *(repr(float(v)) for v in row)] for s, row in zip(ids, cohort.features.tolist())),
        comment)
    out["ground_truth.csv"] = _csv_text(
        ["subject_id"] + [f"scrambled_{f}" for f in factors] + [f"latent_{f}" for f in factors]
        + ["group"],
        ([s, *(int(v) for v in sc), *(repr(float(v)) for v in lat), int(g)]
         for s, sc, lat, g in zip(ids, cohort.scrambled.tolist(), cohort.latents.tolist(),
                                  cohort.group.tolist())),
        comment)
    prov = {"tool": TOOL, "version": __version__, "seed": seed,
            "config_hash": cohort.config_hash,
            "config": None if cohort.config is None else cohort.config.to_dict(),
            "n_subjects": cohort.n_subjects,
            "scales": {f: cohort.specs[f].to_dict() for f in factors}}
    out["provenance.json"] = json.dumps(prov, indent=2, sort_keys=True) + "\n"
    return out


def save_cohort(cohort: SynthCohort, out_dir, seed=None) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in cohort_files(cohort, seed).items():
        (out_dir / name).write_text(text, encoding="utf-8")
        written.append(out_dir / name)
    return written


def _read_table(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(ln for ln in fh if not ln.startswith("#")))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    return rows[0], rows[1:]


def _float_table(path, ids, prefix):
    header, rows = _read_table(path)
    cols = [i for i, h in enumerate(header) if i > 0 and h.startswith(prefix)]
    if header[0] != "subject_id" or not cols:
        raise ValidationError(f"{path}: expected subject_id and {prefix}* columns", row=0)
    if [r[0] for r in rows] != list(ids):
        raise ValidationError(f"{path}: subject ids differ from the response files")
    out = np.empty((len(rows), len(cols)))
    for i, r in enumerate(rows, start=1):
        for j, c in enumerate(cols):
            try:
                out[i - 1, j] = float(r[c])
            except (ValueError, IndexError):
                raise ValidationError(f"{path}: non-numeric cell", row=i,
                                      column=header[c]) from None
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{path}: non-finite values")
    return out, [header[c] for c in cols]


def load_cohort(in_dir, specs: dict | None = None) -> SynthCohort:
    """Read a directory written by ``save_cohort``.

    ``ground_truth.csv`` and ``provenance.json`` are optional, so externally
    collected responses plus features can be loaded the same way.
    """
    in_dir = Path(in_dir)
    prov = {}
    if (in_dir / "provenance.json").exists():
        prov = json.loads((in_dir / "provenance.json").read_text(encoding="utf-8"))
    if specs is None:
        specs = ({f: ScaleSpec.from_dict(d) for f, d in prov["scales"].items()}
                 if "scales" in prov else dict(DASS21))
    factors = [f for f in FACTORS if f in specs]
    responses = {f: load_responses(in_dir / f"{f}.csv", specs[f]) for f in factors}
    ids = responses[factors[0]].subject_ids
    for f in factors[1:]:
        if responses[f].subject_ids != ids:
            raise ValidationError(f"{f}.csv: subject ids differ from {factors[0]}.csv")
    features, _ = _float_table(in_dir / "features.csv", ids, "f_")
    n = len(ids)
    scrambled = np.zeros((n, len(factors)), dtype=bool)
    latents = np.full((n, len(factors)), np.nan)
    group = np.zeros(n, dtype=np.int64)
    if (in_dir / "ground_truth.csv").exists():
        table, names = _float_table(in_dir / "ground_truth.csv", ids, "")
        col = {h: table[:, i] for i, h in enumerate(names)}
        for i, f in enumerate(factors):
            scrambled[:, i] = col.get(f"scrambled_{f}", scrambled[:, i]).astype(bool)
            latents[:, i] = col.get(f"latent_{f}", latents[:, i])
        if "group" in col:
            group = col["group"].astype(np.int64)
    config = SynthConfig.from_dict(prov["config"]) if prov.get("config") else None
    return SynthCohort(config, responses, features, latents, scrambled, group,
                       {f: specs[f] for f in factors})
