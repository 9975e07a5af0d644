"""Executable property suite behind ``effattn verify``.

Every property returns ``(passed, detail)`` where ``detail`` reports the
measured quantity next to its threshold. Properties carry the set of
mechanisms they concern so a run can be narrowed to one mechanism.
"""

from __future__ import annotations

import hashlib
import subprocess
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import bench
from . import mechanisms as mech
from .core_math import Rng, gaussian_init, layer_norm, matmul, stable_softmax
from .mechanisms import ALL_KINDS, BOUNDED, MechanismConfig, MechanismKind
from .pipeline import (PipelineConfig, init_model, length_adjust, model_forward, streaming_forward,
                       synth_features)
from .pooling import PoolingParams, attention_pool, pooling_weights, predict

SA, RETNET, LIGHTNET, GSA, FOX, KDA = ALL_KINDS


@dataclass(frozen=True)
class Property:
    name: str
    module: str
    kinds: frozenset | None
    check: object
    timing: bool = False
    joint: bool = False  # compares its mechanisms against each other, so never narrowed


@dataclass(frozen=True)
class PropertyResult:
    name: str
    module: str
    status: str
    detail: str

    @property
    def passed(self) -> bool:
        return self.status != "FAIL"


REGISTRY: list[Property] = []


def prop(name, module, kinds=None, timing=False, joint=False):
    def register(fn):
        scope = None if kinds is None else frozenset(kinds)
        REGISTRY.append(Property(name, module, scope, fn, timing, joint))
        return fn
    return register


def probe_params(kind, n: int, **extras) -> mech.MechanismParams:
    """Single-head parameters exposing q, k, v directly.

    Width D = 3n; a token ``[a; b; c]`` projects to q = [a; 0], k = [b; 0],
    v = [c; 0] and W_o is the identity, so the head output's first n
    coordinates are the raw mechanism output. Gate weights are zero, so the
    gates are set by their biases alone (override via ``extras``).
    """
    kind = MechanismKind.parse(kind)
    D = 3 * n
    cfg = MechanismConfig(model_dim=D, num_heads=1, slots=extras.pop("slots", 4), gate_rank=None)
    base = mech.init_params(kind, cfg)

    def select(block):
        w = np.zeros((1, D, D))
        w[0, np.arange(n), block * n + np.arange(n)] = 1.0
        return w

    fields = dict(w_q=select(0), w_k=select(1), w_v=select(2), w_o=np.eye(D))
    if kind is FOX:
        fields["forget_w"] = np.zeros((1, D))
    elif kind is GSA:
        fields["gate_up"] = np.zeros_like(base.gate_up)
    elif kind is KDA:
        fields["decay_up"] = np.zeros_like(base.decay_up)
        fields["beta_w"] = np.zeros((1, D))
    fields.update(extras)
    return replace(base, **fields)


def probe_tokens(q, k, v) -> np.ndarray:
    return np.concatenate([np.atleast_2d(q), np.atleast_2d(k), np.atleast_2d(v)], axis=1)


def _small_config(seed: int, D: int = 32, H: int = 4, slots: int = 8) -> MechanismConfig:
    return MechanismConfig(model_dim=D, num_heads=H, slots=slots, gate_rank=4, seed=seed)


def _modes(kind):
    return mech.SUPPORTED_MODES[MechanismKind.parse(kind)]


# core_math

@prop("softmax_normalization", "core_math")
def _softmax_sums(kinds, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (1, 2, 17, 1000, 100_000):
        x = rng.uniform(-50, 50, n)
        worst = max(worst, abs(stable_softmax(x).sum() - 1.0))
    return worst <= 1e-12, f"max |sum - 1| = {worst:.2e} (<= 1e-12)"


@prop("softmax_shift_invariance", "core_math")
def _softmax_shift(kinds, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=257) * 5
    worst = max(np.abs(stable_softmax(x + c) - stable_softmax(x)).max() for c in (-1e4, -3.7, 0.5, 1e4))
    return worst <= 1e-12, f"max deviation = {worst:.2e} (<= 1e-12)"


@prop("layer_norm_moments", "core_math")
def _layer_norm(kinds, seed):
    x = np.random.default_rng(seed).normal(3.0, 7.0, size=(50, 64))
    y = layer_norm(x, np.ones(64), np.zeros(64))
    mean = np.abs(y.mean(axis=1)).max()
    var = np.abs(y.var(axis=1) - 1.0).max()
    return mean <= 1e-10 and var <= 1e-6, f"max |mean| = {mean:.1e}, max |var - 1| = {var:.1e}"


@prop("matmul_associativity", "core_math")
def _matmul_assoc(kinds, seed):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.normal(size=(32, 32)) for _ in range(3))
    left, right = matmul(A, matmul(B, C)), matmul(matmul(A, B), C)
    rel = np.abs(left - right).max() / np.abs(right).max()
    return rel <= 1e-8, f"relative difference = {rel:.1e} (<= 1e-8)"


_INIT_SNIPPET = (
    "import hashlib, sys\n"
    "from effattn.core_math import Rng, gaussian_init\n"
    "print(hashlib.sha256(gaussian_init(Rng(int(sys.argv[1])), 64, 64, 0.02).tobytes()).hexdigest())\n"
)


@prop("gaussian_init_reproducible", "core_math")
def _init_repro(kinds, seed):
    digests = {
        subprocess.run([sys.executable, "-c", _INIT_SNIPPET, str(seed)], capture_output=True, text=True,
                       check=True).stdout.strip()
        for _ in range(2)
    }
    local = hashlib.sha256(gaussian_init(Rng(seed), 64, 64, 0.02).tobytes()).hexdigest()
    ok = digests == {local}
    return ok, "identical draws across two fresh processes" if ok else f"digests differ: {sorted(digests)}"


# mechanisms

@prop("causality", "mechanisms", ALL_KINDS)
def _causality(kinds, seed, L=64, seeds=10):
    worst = {}
    for kind in kinds:
        for mode in _modes(kind):
            dev = 0.0
            for s in range(seed, seed + seeds):
                params = mech.init_params(kind, _small_config(s))
                rng = np.random.default_rng(s)
                U = rng.normal(size=(L, params.config.model_dim))
                t = int(rng.integers(0, L - 1))
                V = U.copy()
                V[t + 1:] = rng.normal(size=V[t + 1:].shape)
                a = mech.forward(kind, U, params, mode)[: t + 1]
                b = mech.forward(kind, V, params, mode)[: t + 1]
                dev = max(dev, float(np.abs(a - b).max()))
            worst[(kind.value, mode.value)] = dev
    ok = all(v == 0.0 if m == "recurrent" else v <= 1e-10 for (k, m), v in worst.items())
    detail = ", ".join(f"{k}/{m} {v:.1e}" for (k, m), v in worst.items())
    return ok, f"prefix deviation: {detail} (recurrent == 0, parallel <= 1e-10)"


@prop("dual_form_equivalence", "mechanisms", (RETNET, LIGHTNET))
def _dual_form(kinds, seed, seeds=20):
    worst = {}
    for kind in kinds:
        dev = 0.0
        for s in range(seed, seed + seeds):
            L = 512 if s == seed else int(np.random.default_rng(s).integers(64, 513))
            params = mech.init_params(kind, MechanismConfig(model_dim=128, num_heads=2, seed=s))
            U = np.random.default_rng(s).normal(size=(L, 128))
            par = mech.forward(kind, U, params, "parallel")
            rec = mech.forward(kind, U, params, "recurrent")
            dev = max(dev, float(np.abs(par - rec).max() / np.abs(rec).max()))
        worst[kind.value] = dev
    ok = all(v <= 1e-6 for v in worst.values())
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " relative l-inf (<= 1e-6)"


@prop("fold_equivalence", "mechanisms", BOUNDED)
def _fold(kinds, seed, L=64):
    bad = []
    for kind in kinds:
        params = mech.init_params(kind, _small_config(seed))
        U = np.random.default_rng(seed).normal(size=(L, params.config.model_dim))
        folded, _ = mech.fold(kind, U, params)
        if not np.array_equal(folded, mech.forward(kind, U, params, "recurrent")):
            bad.append(kind.value)
    names = ", ".join(k.value for k in kinds)
    return not bad, f"bit-identical for {names}" if not bad else f"mismatch for {', '.join(bad)}"


@prop("fox_sa_reduction", "mechanisms", (FOX, SA), joint=True)
def _fox_sa(kinds, seed, L=256):
    cfg = _small_config(seed, D=64)
    sa = mech.init_params(SA, cfg)
    fox = mech.init_params(FOX, cfg)
    fox = replace(fox, w_q=sa.w_q, w_k=sa.w_k, w_v=sa.w_v, w_o=sa.w_o, forget_b=np.full(4, np.inf))
    U = np.random.default_rng(seed).normal(size=(L, 64))
    dev = float(np.abs(mech.forward(FOX, U, fox) - mech.forward(SA, U, sa)).max())
    return dev <= 1e-12, f"max |fox - sa| = {dev:.1e} (<= 1e-12)"


@prop("bounded_state", "mechanisms", BOUNDED)
def _bounded_state(kinds, seed):
    counts = {}
    for kind in kinds:
        params = mech.init_params(kind, _small_config(seed, D=16, H=2))
        sizes = []
        for L in (16, 4096):
            U = np.random.default_rng(seed).normal(size=(L, 16))
            _, state = mech.fold(kind, U, params)
            sizes.append(state.num_scalars)
        counts[kind.value] = sizes
    ok = all(a == b for a, b in counts.values())
    return ok, ", ".join(f"{k} {a}/{b}" for k, (a, b) in counts.items()) + " scalars at L=16/4096"


@prop("lightnet_convexity", "mechanisms", (LIGHTNET,))
def _convexity(kinds, seed, n=8, L=40):
    rng = np.random.default_rng(seed)
    q = np.abs(rng.normal(size=(L, n)))
    k = rng.normal(size=(L, n)) * 2
    v = rng.normal(size=(L, n))
    out = mech.forward(LIGHTNET, probe_tokens(q, k, v), probe_params(LIGHTNET, n))[:, :n]
    worst_sum, worst_neg, worst_fit = 0.0, 0.0, 0.0
    for t in range(L):
        phi = np.exp(k[: t + 1] - k[: t + 1].max())
        w = phi @ q[t]
        w = w / w.sum()
        worst_sum = max(worst_sum, abs(w.sum() - 1.0))
        worst_neg = min(worst_neg, w.min())
        worst_fit = max(worst_fit, np.abs(w @ v[: t + 1] - out[t]).max())
    ok = worst_neg >= 0 and worst_sum <= 1e-10 and worst_fit <= 1e-10
    return ok, f"min weight {worst_neg:.1e}, |sum-1| {worst_sum:.1e}, |o - sum w v| {worst_fit:.1e}"


@prop("retnet_decay", "mechanisms", (RETNET,))
def _retnet_decay(kinds, seed, n=4, L=12, s=3):
    gamma = 0.8
    params = probe_params(RETNET, n, gamma=np.array([gamma]))
    rng = np.random.default_rng(seed)
    q = np.ones((L, n))
    k = np.zeros((L, n))
    v = np.zeros((L, n))
    k[s], v[s] = rng.normal(size=n), rng.normal(size=n)
    out = mech.forward(RETNET, probe_tokens(q, k, v), params, "recurrent")[:, :n]
    base = np.linalg.norm(out[s])
    dev = max(abs(np.linalg.norm(out[t]) / base - gamma ** (t - s)) for t in range(s, L))
    return dev <= 1e-10, f"max |ratio - gamma^(t-s)| = {dev:.1e} (<= 1e-10)"


@prop("gsa_alpha_zero", "mechanisms", (GSA,))
def _gsa_alpha_zero(kinds, seed, n=4, L=10):
    params = probe_params(GSA, n, gate_b=np.full((1, 4), -np.inf))
    rng = np.random.default_rng(seed)
    q, k, v = (rng.normal(size=(L, n)) for _ in range(3))
    out = mech.forward(GSA, probe_tokens(q, k, v), params)[:, :n]
    dev = float(np.abs(out - v).max())
    return dev <= 1e-12, f"max |o_t - v_t| = {dev:.1e} with closed gates (<= 1e-12)"


@prop("kda_beta_zero", "mechanisms", (KDA,))
def _kda_beta_zero(kinds, seed, L=32):
    params = replace(mech.init_params(KDA, _small_config(seed)), beta_b=np.full(4, -np.inf))
    U = np.random.default_rng(seed).normal(size=(L, 32))
    peak = float(np.abs(mech.forward(KDA, U, params)).max())
    return peak == 0.0, f"max |o_t| = {peak:.1e} with zero write strength (== 0)"


@prop("kda_orthonormal_retrieval", "mechanisms", (KDA,))
def _kda_retrieval(kinds, seed, n=4):
    params = probe_params(KDA, n, decay_b=np.full((1, 3 * n), np.inf), beta_b=np.array([np.inf]))
    rng = np.random.default_rng(seed)
    # signed permutation rows: orthonormal with no rounding in k or its norm
    basis = np.eye(n)[rng.permutation(n)] * rng.choice([-1.0, 1.0], size=(n, 1))
    k = basis[:2]
    v = rng.normal(size=(2, n))
    q = np.stack([rng.normal(size=n), k[0]])
    out = mech.forward(KDA, probe_tokens(q, k, v), params)[1, :n]
    dev = float(np.abs(out - v[0]).max())
    return dev == 0.0, f"max |o_2 - v_1| = {dev:.1e} (exact)"


@prop("determinism", "mechanisms", ALL_KINDS)
def _determinism(kinds, seed, L=48):
    bad = []
    for kind in kinds:
        for mode in _modes(kind):
            outs = []
            for _ in range(2):
                params = mech.init_params(kind, _small_config(seed))
                U = Rng(seed).child("determinism").normal((L, 32))
                outs.append(mech.forward(kind, U, params, mode))
            if not np.array_equal(*outs):
                bad.append(f"{kind.value}/{mode.value}")
    return not bad, "bit-identical repeated forwards" if not bad else f"differs: {', '.join(bad)}"


@prop("parameter_parity", "mechanisms", ALL_KINDS)
def _parity(kinds, seed):
    cfg = MechanismConfig(model_dim=256, num_heads=4, slots=64)
    counts = {k.value: mech.param_count(k, cfg) for k in ALL_KINDS}
    ratio = max(counts.values()) / min(counts.values())
    return ratio <= 1.15, f"max/min = {ratio:.4f} (<= 1.15) over {counts}"


# pooling head

@prop("pooling_weights", "pooling_head")
def _pool_weights(kinds, seed):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(200, 16)) * 3
    w = pooling_weights(H, PoolingParams(rng.normal(size=16)))
    s = abs(w.sum() - 1.0)
    mean_dev = np.abs(attention_pool(H, PoolingParams(np.zeros(16))) - H.mean(axis=0)).max()
    example = attention_pool(np.eye(2), PoolingParams(np.array([np.sqrt(2) * np.log(3), 0.0])))
    exact = bool(np.array_equal(example, [0.75, 0.25]))
    ok = s <= 1e-12 and mean_dev <= 1e-12 and exact
    return ok, f"|sum-1| {s:.1e}, zero-query mean dev {mean_dev:.1e}, worked example {example.tolist()}"


@prop("pooling_convex_hull", "pooling_head")
def _pool_hull(kinds, seed):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(64, 16))
    params = PoolingParams(rng.normal(size=16) * 4)
    c = attention_pool(H, params)
    inside = bool(np.all(H.min(axis=0) <= c) and np.all(c <= H.max(axis=0)))
    perm = rng.permutation(64)
    dev = float(np.abs(attention_pool(H[perm], params) - c).max())
    return inside and dev <= 1e-12, f"inside column bounds: {inside}; permutation deviation {dev:.1e}"


@prop("predict_invariance", "pooling_head")
def _predict_inv(kinds, seed):
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(50):
        z = rng.normal(size=8)
        base = predict(z)
        ok &= predict(z + rng.normal() * 10) == base and predict(z * rng.uniform(0.01, 100)) == base
    return ok, "argmax unchanged under shift and positive scaling"


# pipeline

@prop("streaming_equals_batch", "pipeline", BOUNDED)
def _streaming(kinds, seed):
    bad = []
    for kind in kinds:
        cfg = PipelineConfig(speech_len=12, text_len=5, model_dim=32, mechanism=kind,
                             mechanism_config=_small_config(seed), seed=seed)
        params = init_model(cfg)
        rng = Rng(seed)
        S, E = synth_features(rng.child("S"), 12, 32), synth_features(rng.child("E"), 5, 32)
        if not np.array_equal(model_forward(S, E, cfg, params)[0], streaming_forward(S, E, cfg, params)[0]):
            bad.append(kind.value)
    return not bad, "streaming logits bit-identical to batch" if not bad else f"differs: {', '.join(bad)}"


@prop("length_adjust_no_fabrication", "pipeline")
def _length_adjust(kinds, seed):
    rng = Rng(seed)
    seq = np.random.default_rng(seed).normal(size=(9, 4))
    rows = {r.tobytes() for r in seq}
    ok = True
    for target in (1, 4, 9, 13, 30):
        out = length_adjust(seq, target, rng.child(str(target)))
        ok &= out.shape == (target, 4) and all(r.tobytes() in rows for r in out)
    return ok, "every output row copies an input row"


@prop("end_to_end_determinism", "pipeline", ALL_KINDS)
def _e2e(kinds, seed):
    bad = []
    for kind in kinds:
        logits = []
        for _ in range(2):
            cfg = PipelineConfig(speech_len=10, text_len=4, model_dim=32, mechanism=kind,
                                 mechanism_config=_small_config(seed), seed=seed)
            rng = Rng(seed)
            S, E = synth_features(rng.child("S"), 10, 32), synth_features(rng.child("E"), 4, 32)
            logits.append(model_forward(S, E, cfg, init_model(cfg))[0])
        if not np.array_equal(*logits):
            bad.append(kind.value)
    return not bad, "logits fixed by (seed, config)" if not bad else f"differs: {', '.join(bad)}"


# bench

def _peak(kind, L, seed, D=256, H=4):
    return bench.measure_peak_memory(kind, None, L, D, H, Rng(seed))


@prop("memory_sa_quadratic", "bench", (SA,))
def _mem_sa(kinds, seed):
    peaks = [_peak(SA, L, seed) for L in (1024, 2048, 4096)]
    ratios = [b / a for a, b in zip(peaks, peaks[1:])]
    ok = all(3.5 <= r <= 4.5 for r in ratios)
    return ok, f"peak growth per doubling {', '.join(f'{r:.2f}' for r in ratios)} (in [3.5, 4.5])"


@prop("memory_bounded_vs_sa", "bench", ALL_KINDS)
def _mem_gap(kinds, seed, L=8192):
    targets = [k for k in kinds if k in BOUNDED]
    if not targets:
        return True, "no bounded mechanism selected"
    sa = _peak(SA, L, seed)
    ratios = {k.value: sa / _peak(k, L, seed) for k in targets}
    ok = all(r >= 10 for r in ratios.values())
    return ok, "SA/X peak at L=8192: " + ", ".join(f"{k} {r:.0f}x" for k, r in ratios.items()) + " (>= 10)"


@prop("memory_retnet_flat", "bench", (RETNET,))
def _mem_flat(kinds, seed):
    a, b = (bench.measure_peak_memory(RETNET, "recurrent", L, 256, 4, Rng(seed)) for L in (1024, 8192))
    change = abs(b - a) / a
    return change <= 0.10, f"recurrent peak {a} B at L=1024 vs {b} B at L=8192 ({change:.1%} <= 10%)"


@prop("csv_determinism", "bench")
def _csv_det(kinds, seed):
    records = [bench.BenchRecord(k.value, mech.default_mode(k).value, L, 32, 4, r, 1.0 + L * 1e-3 + r, 100 + L)
               for k in reversed(ALL_KINDS) for L in (64, 32) for r in range(3)]
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp, "a.csv"), Path(tmp, "b.csv")
        bench.emit_csv(records, bench.fits_from_records(records), a)
        bench.emit_csv(list(reversed(records)), bench.fits_from_records(records), b)
        same = a.read_bytes() == b.read_bytes()
    return same, "identical records give byte-identical CSV" if same else "CSV bytes differ"


@prop("report_reproduces_fits", "bench")
def _report_fits(kinds, seed):
    rng = np.random.default_rng(seed)
    records = [bench.BenchRecord(k.value, mech.default_mode(k).value, L, 32, 4, r,
                                 bench.sig6(L ** (2.0 if k in (SA, FOX) else 1.0) * rng.uniform(0.9, 1.1) / 1e3),
                                 L * 8)
               for k in ALL_KINDS for L in (256, 512, 1024, 2048) for r in range(3)]
    fits = bench.fits_from_records(records)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp, "run.csv")
        bench.emit_csv(records, fits, path)
        again = bench.fits_from_records(bench.read_csv(path))
    dev = max(max(abs(a.slope - b.slope), abs(a.r2 - b.r2)) for a, b in zip(fits, again))
    ok = len(fits) == len(again) and dev <= 1e-9
    return ok, f"max fit deviation after CSV round trip {dev:.1e} (<= 1e-9)"


def _timing_sweep(kinds, seed):
    cfg = bench.BenchConfig(mechanisms=kinds, lengths=(1024, 2048, 4096, 8192, 16384), seed=seed)
    return bench.run_sweep(cfg).records


@prop("scaling_separation", "bench", (SA, FOX, RETNET, LIGHTNET, GSA, KDA), timing=True)
def _scaling(kinds, seed):
    fits = bench.fits_from_records(_timing_sweep(kinds, seed))
    ok = True
    for f in fits:
        target = f.slope >= 1.6 if f.mode == "parallel" else f.slope <= 1.25
        ok &= bool(target and f.r2 >= 0.95)
    ok &= len(fits) == len(kinds)
    return ok, ", ".join(f"{f.mechanism} slope {f.slope:.2f} r2 {f.r2:.3f}" for f in fits)


@prop("latency_ratio_sa_kda", "bench", (SA, KDA), timing=True, joint=True)
def _latency_ratio(kinds, seed):
    summary = bench.summarize(_timing_sweep((SA, KDA), seed))
    ratio = next((r for r in summary.ratios if r["mechanism"] == KDA.value), None)
    if ratio is None:
        return False, "no common length completed"
    return ratio["latency_ratio"] >= 4, f"SA/KDA = {ratio['latency_ratio']:.2f} at L={ratio['seq_len']} (>= 4)"


def run_properties(mechanism=None, seed: int = 0, include_timing: bool = False, stream=None):
    """Run the registry (optionally narrowed to one mechanism) and report each result."""
    only = None if mechanism is None else MechanismKind.parse(mechanism)
    results = []
    for p in REGISTRY:
        if only is not None and (p.kinds is None or only not in p.kinds):
            continue
        if only is not None and not p.joint:
            kinds = (only,)
        else:
            kinds = tuple(k for k in ALL_KINDS if p.kinds is not None and k in p.kinds)
        if p.timing and not include_timing:
            result = PropertyResult(p.name, p.module, "SKIP", "timing property; pass --include-timing to run")
        else:
            try:
                passed, detail = p.check(kinds, seed)
                result = PropertyResult(p.name, p.module, "PASS" if passed else "FAIL", detail)
            except Exception as exc:  # a crashing property is a failing property
                result = PropertyResult(p.name, p.module, "FAIL", f"{type(exc).__name__}: {exc}")
        results.append(result)
        if stream is not None:
            print(f"{result.status:4} {result.module}/{result.name}: {result.detail}", file=stream, flush=True)
    return results
