"""Latency and peak-memory scaling study of the seq2seq operators.

Only the mechanism forward is timed or accounted; parameter construction
and input synthesis happen outside the measured region. Every run uses
batch size one.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import psutil

from . import mechanisms as mech
from .accounting import MemoryAccountant
from .core_math import ContractError, Rng
from .mechanisms import ALL_KINDS, ExecutionMode, MechanismConfig, MechanismKind

log = logging.getLogger(__name__)

CSV_HEADER = ["mechanism", "mode", "seq_len", "model_dim", "heads", "repeat", "latency_ms", "peak_bytes"]
FITS_HEADER = ["mechanism", "mode", "slope", "r2", "class"]
DEFAULT_LENGTHS = (512, 1024, 2048, 4096, 8192, 16384)
LINEAR_MAX_SLOPE = 1.25
QUADRATIC_MIN_SLOPE = 1.6
MIN_FIT_POINTS = 4
# fraction of currently available RAM a single forward may plan to use
MEMORY_HEADROOM = 0.8


def sig6(x: float) -> float:
    """Round to the 6 significant digits written to CSV."""
    return float(f"{x:.6g}")


@dataclass(frozen=True)
class BenchRecord:
    mechanism: str
    mode: str
    seq_len: int
    model_dim: int
    heads: int
    repeat: int
    latency_ms: float
    peak_bytes: int

    def __post_init__(self):
        if not self.latency_ms > 0:
            raise ContractError("latency must be positive")
        if self.peak_bytes <= 0:
            raise ContractError("peak_bytes must be positive")

    def row(self) -> list[str]:
        return [self.mechanism, self.mode, str(self.seq_len), str(self.model_dim), str(self.heads),
                str(self.repeat), f"{self.latency_ms:.6g}", str(self.peak_bytes)]


@dataclass(frozen=True)
class BenchFailure:
    mechanism: str
    mode: str
    seq_len: int
    reason: str


@dataclass(frozen=True)
class ScalingFit:
    mechanism: str
    mode: str
    slope: float
    r2: float
    classification: str
    points: int = 0

    def row(self) -> list[str]:
        return [self.mechanism, self.mode, f"{self.slope:.6g}", f"{self.r2:.6g}", self.classification]


@dataclass
class BenchConfig:
    mechanisms: tuple = ALL_KINDS
    mode: str | None = None
    lengths: tuple = DEFAULT_LENGTHS
    model_dim: int = 256
    num_heads: int = 4
    slots: int = 64
    gate_rank: int | None = 16
    repeats: int = 5
    warmup: int = 2
    seed: int = 0
    max_length_cap: int | None = None

    def __post_init__(self):
        self.mechanisms = tuple(MechanismKind.parse(k) for k in self.mechanisms)
        self.lengths = tuple(int(n) for n in self.lengths)
        if any(n < 1 for n in self.lengths):
            raise ContractError("lengths must be positive")
        if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])):
            raise ContractError(f"lengths must be strictly ascending, got {list(self.lengths)}")
        if self.repeats < 3:
            raise ContractError("repeats must be at least 3 for a stable median")
        if self.warmup < 0:
            raise ContractError("warmup must be nonnegative")
        self.mechanism_config()  # validates dims
        for kind in self.mechanisms:
            self.modes_for(kind)

    def mechanism_config(self) -> MechanismConfig:
        return MechanismConfig(model_dim=self.model_dim, num_heads=self.num_heads, slots=self.slots,
                               gate_rank=self.gate_rank, seed=self.seed)

    def modes_for(self, kind) -> tuple[ExecutionMode, ...]:
        """``None``/"auto" picks the mechanism's default, "all" every supported mode."""
        kind = MechanismKind.parse(kind)
        if self.mode in (None, "auto"):
            return (mech.default_mode(kind),)
        if self.mode == "all":
            return mech.SUPPORTED_MODES[kind]
        return (mech.check_mode(kind, self.mode),)


@dataclass
class SweepResult:
    records: list[BenchRecord] = field(default_factory=list)
    failures: list[BenchFailure] = field(default_factory=list)


def workload(rng: Rng, seq_len: int, model_dim: int, index) -> np.ndarray:
    """Input tensor for one run; identical for equal (seed, L, index) across sweeps."""
    return rng.child(f"input/L{seq_len}/{index}").normal((seq_len, model_dim))


def _params(kind, mechanism_config: MechanismConfig):
    return mech.init_params(kind, mechanism_config)


def measure_latency(kind, mode, seq_len: int, model_dim: int, num_heads: int, repeats: int, warmup: int,
                    rng: Rng, slots: int = 64, gate_rank: int | None = 16, params=None) -> list[float]:
    """Wall-clock seconds of ``repeats`` forwards after ``warmup`` unmeasured ones."""
    kind = MechanismKind.parse(kind)
    mode = mech.check_mode(kind, mode)
    if params is None:
        params = _params(kind, MechanismConfig(model_dim, num_heads, slots, gate_rank, rng.seed))
    for i in range(warmup):
        mech.forward(kind, workload(rng, seq_len, model_dim, f"warmup{i}"), params, mode)
    latencies = []
    for i in range(repeats):
        U = workload(rng, seq_len, model_dim, i)
        start = time.perf_counter()
        mech.forward(kind, U, params, mode)
        latencies.append(max(time.perf_counter() - start, 1e-9))
        del U
    return latencies


def measure_peak_memory(kind, mode, seq_len: int, model_dim: int, num_heads: int, rng: Rng, slots: int = 64,
                        gate_rank: int | None = 16, params=None) -> int:
    """High-water mark of accounted scratch bytes during one forward."""
    kind = MechanismKind.parse(kind)
    mode = mech.check_mode(kind, mode)
    if params is None:
        params = _params(kind, MechanismConfig(model_dim, num_heads, slots, gate_rank, rng.seed))
    accountant = MemoryAccountant()
    mech.forward(kind, workload(rng, seq_len, model_dim, "memory"), params, mode, accountant=accountant)
    return accountant.peak


def estimate_peak_bytes(kind, mode, seq_len: int, config: MechanismConfig) -> int:
    """Rough upper bound of the working set, used only to skip runs that would exhaust RAM."""
    kind = MechanismKind.parse(kind)
    mode = mech.check_mode(kind, mode)
    L, d, D = seq_len, config.head_dim, config.model_dim
    inputs = 8 * L * D * 3  # input, output, and the per-head mixing buffer
    if mode is ExecutionMode.RECURRENT:
        return inputs
    if kind is MechanismKind.LIGHTNET:
        return inputs + 8 * L * (d * d + 4 * d)
    return inputs + 8 * L * L + 8 * L * 5 * d


def _available_bytes() -> int:
    return psutil.virtual_memory().available


def run_sweep(config: BenchConfig, progress=None) -> SweepResult:
    """Measure every (mechanism, mode, length); failures are recorded, not raised."""
    result = SweepResult()
    rng = Rng(config.seed).child("bench")
    mcfg = config.mechanism_config()
    for kind in config.mechanisms:
        params = _params(kind, mcfg)
        for mode in config.modes_for(kind):
            quadratic = mode is ExecutionMode.PARALLEL
            blocked = None
            for L in config.lengths:
                if blocked is None and quadratic and config.max_length_cap is not None and L > config.max_length_cap:
                    blocked = f"length cap {config.max_length_cap}"
                if blocked is None:
                    need = estimate_peak_bytes(kind, mode, L, mcfg)
                    if need > MEMORY_HEADROOM * _available_bytes():
                        blocked = f"insufficient memory (needs ~{need / 2**30:.1f} GiB)"
                if blocked is not None:
                    result.failures.append(BenchFailure(kind.value, mode.value, L, blocked))
                    log.warning("skipping %s/%s at L=%d: %s", kind.value, mode.value, L, blocked)
                    continue
                try:
                    # the accounted forward doubles as the first warmup run
                    peak = measure_peak_memory(kind, mode, L, config.model_dim, config.num_heads, rng,
                                               params=params)
                    latencies = measure_latency(kind, mode, L, config.model_dim, config.num_heads,
                                                config.repeats, max(config.warmup - 1, 0), rng, params=params)
                except MemoryError:
                    blocked = "allocation failure"
                    result.failures.append(BenchFailure(kind.value, mode.value, L, blocked))
                    log.warning("allocation failed for %s/%s at L=%d", kind.value, mode.value, L)
                    continue
                for i, seconds in enumerate(latencies):
                    result.records.append(BenchRecord(kind.value, mode.value, L, config.model_dim,
                                                      config.num_heads, i, sig6(seconds * 1e3), peak))
                if progress is not None:
                    progress(kind.value, mode.value, L, float(np.median(latencies)) * 1e3, peak)
    return result


def fit_scaling_exponent(lengths, latencies, mechanism: str = "", mode: str = "") -> ScalingFit:
    """Least-squares slope of log(latency) against log(length)."""
    x = np.log(np.asarray(lengths, dtype=np.float64))
    y = np.asarray(latencies, dtype=np.float64)
    if x.size != y.size:
        raise ContractError("lengths and latencies differ in size")
    if x.size < MIN_FIT_POINTS:
        raise ContractError(f"scaling fit needs at least {MIN_FIT_POINTS} points, got {x.size}")
    if np.any(np.exp(x) <= 0) or np.any(y <= 0):
        raise ContractError("scaling fit needs positive lengths and latencies")
    y = np.log(y)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    resid = y - (y.mean() + slope * xc)
    ss_tot = float(np.dot(y - y.mean(), y - y.mean()))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.dot(resid, resid)) / ss_tot
    return ScalingFit(mechanism, mode, slope, r2, classify_slope(slope), int(x.size))


def classify_slope(slope: float) -> str:
    if slope <= LINEAR_MAX_SLOPE:
        return "linear"
    if slope >= QUADRATIC_MIN_SLOPE:
        return "quadratic"
    return "indeterminate"


def _kind_order(name: str) -> int:
    for i, kind in enumerate(ALL_KINDS):
        if kind.value == name:
            return i
    return len(ALL_KINDS)


def sort_records(records) -> list[BenchRecord]:
    return sorted(records, key=lambda r: (_kind_order(r.mechanism), r.mechanism, r.mode, r.seq_len, r.repeat))


def medians(records) -> dict[tuple[str, str], list[tuple[int, float, float]]]:
    """``(mechanism, mode) -> [(L, median latency ms, median peak bytes), ...]`` by ascending L."""
    groups: dict[tuple[str, str, int], list[BenchRecord]] = {}
    for r in records:
        groups.setdefault((r.mechanism, r.mode, r.seq_len), []).append(r)
    out: dict[tuple[str, str], list[tuple[int, float, float]]] = {}
    for key in sorted(groups, key=lambda k: (_kind_order(k[0]), k[0], k[1], k[2])):
        rows = groups[key]
        out.setdefault(key[:2], []).append((
            key[2],
            float(np.median([r.latency_ms for r in rows])),
            float(np.median([r.peak_bytes for r in rows])),
        ))
    return out


def fits_from_records(records) -> list[ScalingFit]:
    fits = []
    for (name, mode), series in medians(records).items():
        if len(series) < MIN_FIT_POINTS:
            continue
        fits.append(fit_scaling_exponent([s[0] for s in series], [s[1] for s in series], name, mode))
    return fits


def fits_path(path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_fits{path.suffix or '.csv'}")


def _write(path: Path, writer_fn) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer_fn(fh)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_csv(records, fits, path) -> tuple[Path, Path]:
    """Write the raw records and the ``*_fits.csv`` companion; returns both paths."""
    path = Path(path)

    def raw(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in sort_records(records):
            w.writerow(r.row())

    def fitted(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FITS_HEADER)
        for f in sorted(fits, key=lambda f: (_kind_order(f.mechanism), f.mechanism, f.mode)):
            w.writerow(f.row())

    _write(path, raw)
    companion = fits_path(path)
    _write(companion, fitted)
    return path, companion


class CsvFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


def read_csv(path) -> list[BenchRecord]:
    """Parse a file written by :func:`emit_csv`, validating every row."""
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise CsvFormatError(path, 1, f"expected header {','.join(CSV_HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise CsvFormatError(path, lineno, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                rec = BenchRecord(row[0], row[1], int(row[2]), int(row[3]), int(row[4]), int(row[5]),
                                  float(row[6]), int(row[7]))
            except (ValueError, ContractError) as exc:
                raise CsvFormatError(path, lineno, str(exc)) from None
            if not math.isfinite(rec.latency_ms):
                raise CsvFormatError(path, lineno, "latency is not finite")
            records.append(rec)
    return records


PANELS = {
    "a": ("median latency (ms) vs sequence length, all mechanisms", 1, False),
    "b": ("median peak accounted bytes vs sequence length, all mechanisms", 2, False),
    "c": ("median latency (ms) vs sequence length, excluding SA", 1, True),
    "d": ("median peak accounted bytes vs sequence length, excluding SA", 2, True),
}


def panel_path(path, panel: str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_panel_{panel}.dat")


def emit_plot_data(records, path) -> list[Path]:
    """One whitespace-separated series file per figure panel (a-d).

    Series are separated by a blank line and introduced by ``# series:``
    comment lines, so gnuplot's ``index`` or a simple reader can split them.
    """
    if not records:
        raise ContractError("emit_plot_data needs at least one record")
    series = medians(records)
    written = []
    for panel, (title, column, exclude_sa) in PANELS.items():
        unit = "latency_ms" if column == 1 else "peak_bytes"
        chosen = {k: v for k, v in series.items() if not (exclude_sa and k[0] == MechanismKind.SA.value)}

        def body(fh, chosen=chosen, title=title, column=column, unit=unit):
            fh.write(f"# panel {panel}: {title}\n")
            fh.write(f"# columns: seq_len median_{unit}\n")
            if not chosen:
                fh.write("# no series: this panel excludes SA and no other mechanism was measured\n")
            for i, ((name, mode), rows) in enumerate(chosen.items()):
                if i:
                    fh.write("\n")
                fh.write(f"# series: {name} {mode}\n")
                for row in rows:
                    fh.write(f"{row[0]} {row[column]:.6g}\n")

        target = panel_path(path, panel)
        _write(target, body)
        written.append(target)
    return written


def read_plot_data(path) -> dict[tuple[str, str], list[tuple[int, float]]]:
    out: dict[tuple[str, str], list[tuple[int, float]]] = {}
    current = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("# series:"):
            name, mode = line.split(":", 1)[1].split()
            current = out.setdefault((name, mode), [])
        elif line and not line.startswith("#"):
            L, value = line.split()
            current.append((int(L), float(value)))
    return out


@dataclass
class Summary:
    fits: list[ScalingFit]
    ratios: list[dict]
    notes: list[str]


def summarize(records) -> Summary:
    """Fits plus SA-versus-X latency and memory ratios at the largest common length."""
    series = medians(records)
    fits = fits_from_records(records)
    sa = {L: (lat, mem) for key, rows in series.items() if key[0] == MechanismKind.SA.value
          for L, lat, mem in rows}
    ratios = []
    for (name, mode), rows in series.items():
        if name == MechanismKind.SA.value or not sa:
            continue
        common = sorted(set(sa) & {L for L, _, _ in rows})
        if not common:
            continue
        L = common[-1]
        lat, mem = next((lat, mem) for n, lat, mem in rows if n == L)
        ratios.append({"mechanism": name, "mode": mode, "seq_len": L,
                       "latency_ratio": sa[L][0] / lat, "memory_ratio": sa[L][1] / mem})
    notes = []
    for fit in fits:
        if fit.mechanism == MechanismKind.FOX.value:
            notes.append(f"FoX runs here without fused kernels, so it materializes the full score matrix like SA "
                         f"(measured slope {fit.slope:.2f}, {fit.classification}); the small memory footprint "
                         "reported for fused GPU implementations is not reproduced.")
    return Summary(fits, ratios, notes)
