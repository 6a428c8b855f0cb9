"""Convergence and cost studies: sweeps over R, CSV records, slope fits."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import coeffs
from .coeffs import CoefficientField
from .parabolic import TimeOptions
from .upscale import AdmissibilityWarning, UpscaleResult, periodic_reference_tensor, upscale

__all__ = [
    "SweepConfig",
    "SweepRecord",
    "CSV_HEADER",
    "make_field",
    "run_sweep",
    "write_csv",
    "read_csv",
    "fit_slope",
    "InsufficientPointsError",
    "BenchRow",
    "bench",
    "format_bench",
    "parse_r_list",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("method,R,L,T,q,ko,h,nt,a11,a12,a21,a22,err_fro,dofs,matvecs,walltime_ms,seed")
_COLUMNS = CSV_HEADER.split(",")

COEFFICIENTS = ("gloria", "constant", "laminate", "checkerboard", "lognormal")


def parse_r_list(spec) -> List[float]:
    """``"2:12:2"`` (inclusive) or ``"4,6,9"`` -> sorted list of floats."""
    if isinstance(spec, (list, tuple)):
        return sorted(float(r) for r in spec)
    text = str(spec).strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) == 2:
            parts.append(1.0)
        start, stop, step = parts
        if step <= 0 or stop < start:
            raise ValueError("R range needs start <= stop and a positive step")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + k * step for k in range(n)]
    return sorted(float(p) for p in text.split(",") if p.strip())


@dataclass
class SweepConfig:
    coef: str = "gloria"
    coef_params: Dict[str, float] = field(default_factory=dict)
    methods: Tuple[str, ...] = ("parabolic",)
    R: Tuple[float, ...] = (2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    k_o: float = 2.0 / 3.0
    q: Tuple[int, ...] = (3,)
    n_per_cell: int = 32
    time: TimeOptions = TimeOptions()
    t_reg: Optional[float] = None
    reference: str = "periodic"
    seed: int = 1
    out: Optional[str] = None
    jobs: int = 1
    cg_tol: float = 1e-10
    cg_maxit: Optional[int] = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.R = tuple(float(r) for r in self.R)
        self.q = tuple(int(v) for v in self.q)
        if not self.methods:
            raise ValueError("at least one method is required")
        if any(r < 1 for r in self.R):
            raise ValueError("R values must be >= 1")
        if any(b <= a for a, b in zip(self.R, self.R[1:])):
            raise ValueError("R values must be strictly increasing")
        if self.reference not in ("periodic", "largest_R"):
            raise ValueError("reference must be 'periodic' or 'largest_R'")
        if self.coef not in COEFFICIENTS:
            raise ValueError(f"unknown coefficient {self.coef!r}; choose from {COEFFICIENTS}")


def make_field(name: str, params: Optional[dict] = None, seed: int = 1,
               bounds_box: Optional[float] = None) -> CoefficientField:
    """Coefficient field from a CLI-style name and parameter dict."""
    p = dict(params or {})
    if name == "gloria":
        return coeffs.make_gloria_lebris()
    if name == "constant":
        return coeffs.make_constant(p.get("value", 1.0), int(p.get("dim", 2)))
    if name == "laminate":
        mean, amp = p.get("mean", 2.0), p.get("amp", 1.0)
        return coeffs.make_laminate_1d(lambda x: mean + amp * np.sin(2 * np.pi * x),
                                       dim=int(p.get("dim", 2)), name=f"{mean}+{amp}sin")
    if name == "checkerboard":
        return coeffs.make_checkerboard(p.get("c1", 1.0), p.get("c2", 4.0))
    if name == "lognormal":
        return coeffs.make_lognormal(int(p.get("seed", seed)), int(p.get("n_modes", 64)),
                                     p.get("sigma", 0.5), p.get("corr_len", 0.5),
                                     bounds_box=bounds_box)
    raise ValueError(f"unknown coefficient {name!r}")


@dataclass
class SweepRecord:
    method: str
    R: float
    L: float
    T: float
    q: int
    ko: float
    h: float
    nt: int
    a11: float
    a12: float
    a21: float
    a22: float
    err_fro: float
    dofs: int
    matvecs: int
    walltime_ms: float
    seed: int
    note: str = field(default="", compare=False)

    @property
    def a0(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    def numeric_key(self):
        """All columns except wall time, NaN mapped to None (for determinism checks)."""
        vals = (getattr(self, c) for c in _COLUMNS if c != "walltime_ms")
        return tuple(None if isinstance(v, float) and math.isnan(v) else v for v in vals)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(records: Sequence[SweepRecord], path=None) -> str:
    """Write records (plus ``#`` comment lines for failures); returns the text."""
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    for rec in records:
        if rec.note:
            buf.write(f"# error method={rec.method} R={_fmt(rec.R)} q={rec.q}: {rec.note}\n")
        writer.writerow([_fmt(getattr(rec, c)) for c in _COLUMNS])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


_INT_COLUMNS = {"q", "nt", "dofs", "matvecs", "seed"}


def read_csv(path_or_text) -> List[SweepRecord]:
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        lines = path_or_text.splitlines()
    else:
        with open(path_or_text) as fh:
            lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError("empty CSV")
    if lines[0].strip() != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    out = []
    for row in csv.DictReader(lines):
        kwargs = {}
        for c in _COLUMNS:
            if c == "method":
                kwargs[c] = row[c]
            elif c in _INT_COLUMNS:
                kwargs[c] = int(row[c])
            else:
                kwargs[c] = float(row[c])
        out.append(SweepRecord(**kwargs))
    return out


def _record(res: UpscaleResult, ref: np.ndarray, seed: int) -> SweepRecord:
    a = res.a0
    nan = float("nan")
    return SweepRecord(
        method=res.method, R=float(res.R), L=nan if res.L is None else float(res.L),
        T=nan if res.T is None else float(res.T), q=int(res.q if res.q is not None else -1),
        ko=nan if res.k_o is None else float(res.k_o), h=float(res.h), nt=int(res.n_steps),
        a11=float(a[0, 0]), a12=float(a[0, 1]), a21=float(a[1, 0]), a22=float(a[1, 1]),
        err_fro=float(np.linalg.norm(a - ref)), dofs=int(res.dofs),
        matvecs=int(res.matvec_count), walltime_ms=1000.0 * res.walltime, seed=seed,
    )


def _failed(method, R, q, cfg: SweepConfig, exc: Exception) -> SweepRecord:
    nan = float("nan")
    return SweepRecord(method, float(R), nan, nan, int(q), cfg.k_o, 1.0 / cfg.n_per_cell, 0,
                       nan, nan, nan, nan, nan, 0, 0, 0.0, cfg.seed,
                       note=f"{type(exc).__name__}: {exc}")


_FIELD_CACHE: dict = {}


def _field_for(cfg: SweepConfig) -> CoefficientField:
    key = (cfg.coef, tuple(sorted(cfg.coef_params.items())), cfg.seed, max(cfg.R))
    if key not in _FIELD_CACHE:
        _FIELD_CACHE[key] = make_field(cfg.coef, cfg.coef_params, cfg.seed,
                                       bounds_box=max(cfg.R))
    return _FIELD_CACHE[key]


def _compute(cfg: SweepConfig, method: str, R: float, q: int) -> UpscaleResult:
    f = _field_for(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdmissibilityWarning)
        return upscale(method, f, R, cfg.k_o, q, cfg.n_per_cell, cfg.time, t_reg=cfg.t_reg,
                       tol=cfg.cg_tol, maxit=cfg.cg_maxit)


def _point(args):
    cfg, method, R, q = args
    try:
        return method, R, q, _compute(cfg, method, R, q), None
    except Exception as exc:  # recorded as a NaN row, the sweep continues
        log.warning("sweep point %s R=%g q=%d failed: %s", method, R, q, exc)
        return method, R, q, None, exc


def run_sweep(cfg: SweepConfig) -> List[SweepRecord]:
    """Run every (method, R, q) point and compare against the reference.

    Records are sorted by ``(method, q, R)`` and written to ``cfg.out`` when
    set.  Failing points become NaN rows carrying a ``note``.
    """
    field_ = _field_for(cfg)
    points = [(cfg, m, R, q) for m in cfg.methods for q in cfg.q for R in cfg.R]
    refs: Dict[int, np.ndarray] = {}
    if cfg.reference == "periodic":
        ref = periodic_reference_tensor(field_, cfg.n_per_cell).a0
        refs = {q: ref for q in cfg.q}
    else:
        for q in cfg.q:
            refs[q] = _compute(cfg, "parabolic", max(cfg.R), q).a0

    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_point, points))
    else:
        results = [_point(p) for p in points]

    records = []
    for method, R, q, res, exc in results:
        if res is None:
            records.append(_failed(method, R, q, cfg, exc))
        else:
            records.append(_record(res, refs[q], cfg.seed))
    records.sort(key=lambda r: (r.method, r.q, r.R))
    if cfg.out:
        write_csv(records, cfg.out)
    return records


class InsufficientPointsError(ValueError):
    pass


def fit_slope(records: Iterable[SweepRecord], lo: float = 1e-8, hi: float = 1e-1,
              method: Optional[str] = None, q: Optional[int] = None) -> float:
    """Least-squares slope of log(err_fro) against log(R) inside ``[lo, hi]``."""
    pts = [(r.R, r.err_fro) for r in records
           if (method is None or r.method == method) and (q is None or r.q == q)
           and np.isfinite(r.err_fro) and lo <= r.err_fro <= hi]
    if len(pts) < 3:
        raise InsufficientPointsError("insufficient points in window")
    R, e = np.log(np.array(pts)).T
    return float(np.polyfit(R, e, 1)[0])


@dataclass
class BenchRow:
    tol: float
    method: str
    q: int
    R: Optional[float]
    err_fro: Optional[float]
    dofs: Optional[int]
    matvecs: Optional[int]
    walltime_ms: Optional[float]

    @property
    def reachable(self) -> bool:
        return self.R is not None


def bench(records: Sequence[SweepRecord], tolerances: Sequence[float]) -> List[BenchRow]:
    """Smallest swept R reaching each tolerance, per (method, q)."""
    groups: Dict[Tuple[str, int], List[SweepRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.q), []).append(r)
    rows = []
    for tol in sorted(tolerances, reverse=True):
        for (method, q), recs in sorted(groups.items()):
            hit = next((r for r in sorted(recs, key=lambda r: r.R)
                        if np.isfinite(r.err_fro) and r.err_fro <= tol), None)
            if hit is None:
                rows.append(BenchRow(tol, method, q, None, None, None, None, None))
            else:
                rows.append(BenchRow(tol, method, q, hit.R, hit.err_fro, hit.dofs, hit.matvecs,
                                     hit.walltime_ms))
    return rows


def format_bench(rows: Sequence[BenchRow]) -> Tuple[str, str]:
    """Plain-text table and CSV text for bench rows."""
    head = f"{'tol':>9} {'method':<21} {'q':>2} {'R':>6} {'err':>10} {'dofs':>9} {'matvecs':>9} {'ms':>10}"
    lines = [head]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tol", "method", "q", "R", "err_fro", "dofs", "matvecs", "walltime_ms"])
    for r in rows:
        if r.reachable:
            lines.append(f"{r.tol:9.1e} {r.method:<21} {r.q:>2} {r.R:6g} {r.err_fro:10.3e} "
                         f"{r.dofs:9d} {r.matvecs:9d} {r.walltime_ms:10.1f}")
            w.writerow([_fmt(r.tol), r.method, r.q, _fmt(r.R), _fmt(r.err_fro), r.dofs,
                        r.matvecs, _fmt(r.walltime_ms)])
        else:
            lines.append(f"{r.tol:9.1e} {r.method:<21} {r.q:>2} {'unreachable':>6}")
            w.writerow([_fmt(r.tol), r.method, r.q, "unreachable", "", "", "", ""])
    return "\n".join(lines), buf.getvalue()
