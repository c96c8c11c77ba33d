"""Seeded Monte Carlo sampling of mu-random walks on the free group.

The vectorized engine advances many paths at once. Each path's position is
kept as a stack of packed letters (one int8 per letter), so the stack
pointer is exactly the word length t_k and boundary prefixes are stack
segments that stop changing. Winding is additive over steps and never needs
reduction. Every random draw is a pure function of (master seed, path
index, step index), so results are independent of batching and worker
count, and the scalar reference sampler reproduces the engine bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import StabilizationFailure
from .freegroup import Projection, Word, array_to_word, letters_to_array
from .measures import StepMeasure
from .rng import counter_choice, counter_uniforms, derive_key, mix_seed
from .treeboundary import BoundaryWord, FiniteSource

_SENTINEL = np.int64(2**62)


@dataclass(frozen=True)
class StoppingSpec:
    """First-exit thresholds: tau_s = inf{k : t_k >= s * lambda_ref}."""

    thresholds: tuple[float, ...]
    lambda_ref: float

    def __post_init__(self):
        ts = self.thresholds
        if any(b <= a for a, b in zip(ts, ts[1:])) or any(t <= 0 for t in ts):
            raise ValueError("thresholds must be positive and increasing")

    def radii(self) -> np.ndarray:
        """Integer radii: smallest integer t with t >= s * lambda_ref."""
        return np.array(
            [math.ceil(s * self.lambda_ref - 1e-9) for s in self.thresholds], dtype=np.int64
        )


@dataclass(frozen=True)
class WalkPlan:
    """Everything needed to reproduce a batch of tree-model walks."""

    measure: StepMeasure
    projection: Projection
    horizon: int
    n_paths: int
    master_seed: int
    checkpoints: tuple[int, ...] = ()
    ray_grid: tuple[int, ...] = ()
    stopping: StoppingSpec | None = None
    n_reference_points: int = 0
    cap_rate: float | None = None  # stabilization cap (lambda - 3 sd) per step
    store_history: bool = False
    store_boundary: bool = False
    forward_sigma: bool = False
    batch_paths: int = 4096

    def __post_init__(self):
        if self.checkpoints and (
            any(c < 1 or c > self.horizon for c in self.checkpoints)
            or list(self.checkpoints) != sorted(set(self.checkpoints))
        ):
            raise ValueError("checkpoints must be increasing step indices within the horizon")
        if self.ray_grid and list(self.ray_grid) != sorted(set(self.ray_grid)):
            raise ValueError("ray grid must be increasing")

    @property
    def buffer_len(self) -> int:
        return self.horizon * self.measure.max_word_length + 1

    def walk_key(self) -> np.uint64:
        return derive_key(self.master_seed, "walk")

    def reference_letters(self) -> np.ndarray:
        """Deterministic bank of boundary words used as reference points."""
        return make_reference_words(
            self.master_seed, self.measure.k, self.n_reference_points, self.buffer_len
        )


def make_reference_words(master_seed: int, k: int, count: int, length: int) -> np.ndarray:
    """Uniform non-backtracking infinite-word prefixes, shape (count, length)."""
    refs = np.zeros((count, length), dtype=np.int8)
    if count == 0:
        return refs
    alphabet = np.array([s * i for i in range(1, k + 1) for s in (1, -1)], dtype=np.int8)
    pos = np.empty(2 * k + 1, dtype=np.int64)  # alphabet index of each letter
    for j, a in enumerate(alphabet):
        pos[k + int(a)] = j
    key = derive_key(master_seed, "reference-points")
    rows = np.arange(count, dtype=np.uint64)
    first = (counter_uniforms(key, rows, 0) * 2 * k).astype(np.int64)
    refs[:, 0] = alphabet[first]
    for t in range(1, length):
        u = counter_uniforms(key, rows, t)
        j = (u * (2 * k - 1)).astype(np.int64)
        forbidden = pos[k - refs[:, t - 1].astype(np.int64)]  # index of the inverse letter
        j = j + (j >= forbidden)
        refs[:, t] = alphabet[j]
    return refs


def _compile_measure(measure: StepMeasure, projection: Projection):
    n_atoms = len(measure.atoms)
    max_len = measure.max_word_length
    letters = np.zeros((n_atoms, max_len), dtype=np.int8)
    lens = np.zeros(n_atoms, dtype=np.int64)
    winds = np.zeros((n_atoms, projection.d), dtype=np.int64)
    for i, w in enumerate(measure.atoms):
        arr = letters_to_array(w)
        letters[i, : len(arr)] = arr
        lens[i] = len(arr)
        from .freegroup import abelianize

        winds[i] = abelianize(w, projection)
    return letters, lens, winds, measure.cdf()


def _run_batch(plan: WalkPlan, lo: int, hi: int) -> dict:
    """Advance paths lo..hi-1 to the horizon; pure function of the plan."""
    P = hi - lo
    k = plan.measure.k
    d = plan.projection.d
    L = plan.buffer_len
    atom_letters, atom_len, atom_wind, cdf = _compile_measure(plan.measure, plan.projection)
    max_len = atom_letters.shape[1]
    key = plan.walk_key()
    path_ids = np.arange(lo, hi, dtype=np.uint64)
    rows = np.arange(P)

    buf = np.zeros((P, L), dtype=np.int8)
    sp = np.zeros(P, dtype=np.int64)
    wind = np.zeros((P, d), dtype=np.int64)

    refs = plan.reference_letters()
    R = refs.shape[0]
    cps = np.zeros((R, P), dtype=np.int64)

    cps_list = list(plan.checkpoints)
    C = len(cps_list)
    t_cp = np.zeros((P, C), dtype=np.int64)
    wind_cp = np.zeros((P, C, d), dtype=np.int64)
    sigma_cp = np.zeros((P, C, R), dtype=np.int64)
    sigma_fwd_cp = np.zeros((P, C, R), dtype=np.int64) if plan.forward_sigma else None
    next_cp = 0

    if plan.stopping is not None:
        radii = plan.stopping.radii()
        S = radii.size
        radii_pad = np.concatenate([radii, [_SENTINEL]])
        nti = np.zeros(P, dtype=np.int64)
        tau = np.full((P, S), -1, dtype=np.int64)
        t_tau = np.zeros((P, S), dtype=np.int64)
        wind_tau = np.zeros((P, S, d), dtype=np.int64)
    else:
        S = 0
        tau = np.zeros((P, 0), dtype=np.int64)
        t_tau = np.zeros((P, 0), dtype=np.int64)
        wind_tau = np.zeros((P, 0, d), dtype=np.int64)

    hist = np.zeros((P, plan.horizon + 1), dtype=np.int32) if plan.store_history else None

    window = max(64, plan.horizon // 10)
    win_start = max(0, plan.horizon - window)
    minwin = np.full(P, _SENTINEL, dtype=np.int64)

    for step in range(plan.horizon):
        ai = counter_choice(key, path_ids, step, cdf)
        wind += atom_wind[ai]
        for j in range(max_len):
            lett = atom_letters[ai, j]
            act = lett != 0
            top = buf[rows, np.maximum(sp - 1, 0)]
            cancel = act & (sp > 0) & (top == -lett)
            if cancel.any():
                sp -= cancel
                if R:
                    np.minimum(cps, sp[None, :], out=cps)
            push = act & ~cancel
            if push.any():
                for r in range(R):
                    at_top = push & (cps[r] == sp)
                    if at_top.any():
                        match = at_top & (refs[r][np.minimum(sp, L - 1)] == lett)
                        cps[r] += match
                buf[rows[push], sp[push]] = lett[push]
                sp += push
        if S:
            hit = sp >= radii_pad[nti]
            while hit.any():
                rh = rows[hit]
                th = nti[hit]
                tau[rh, th] = step + 1
                t_tau[rh, th] = sp[hit]
                wind_tau[rh, th] = wind[hit]
                nti[hit] += 1
                hit = sp >= radii_pad[nti]
        if hist is not None:
            hist[:, step + 1] = sp
        if step + 1 >= win_start:
            np.minimum(minwin, sp, out=minwin)
        if next_cp < C and step + 1 == cps_list[next_cp]:
            t_cp[:, next_cp] = sp
            wind_cp[:, next_cp] = wind
            sigma_cp[:, next_cp] = (sp[:, None] - 2 * cps.T) if R else 0
            if sigma_fwd_cp is not None and R:
                sigma_fwd_cp[:, next_cp] = sp[:, None] - 2 * _suffix_match(buf, sp, refs, rows).T
            next_cp += 1

    cap = int(plan.cap_rate * plan.horizon) if plan.cap_rate else L
    conf = np.minimum(minwin, cap)

    grid = np.array(plan.ray_grid, dtype=np.int64)
    ray_wind = _prefix_windings(buf, grid, plan.projection) if grid.size else np.zeros((P, 0, d), np.int64)
    ray_ok = conf[:, None] >= grid[None, :] if grid.size else np.zeros((P, 0), bool)

    out = dict(
        t_cp=t_cp, wind_cp=wind_cp, sigma_cp=sigma_cp, sigma_fwd_cp=sigma_fwd_cp,
        tau=tau, t_tau=t_tau, wind_tau=wind_tau,
        conf=conf, ray_wind=ray_wind, ray_ok=ray_ok,
        final_t=sp.copy(), final_wind=wind.copy(), hist=hist,
    )
    if plan.store_boundary:
        out["boundary"] = [buf[i, : conf[i]].copy() for i in range(P)]
    return out


def _suffix_match(buf: np.ndarray, sp: np.ndarray, refs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Common prefix length of each inverted position word with each reference."""
    R = refs.shape[0]
    P = sp.size
    out = np.zeros((R, P), dtype=np.int64)
    for r in range(R):
        alive = np.ones(P, dtype=bool)
        j = 0
        while j < 64:
            pos = sp - 1 - j
            ok = alive & (pos >= 0)
            if not ok.any():
                break
            cond = ok & (buf[rows, np.maximum(pos, 0)] == -refs[r, j])
            out[r] += cond
            alive = cond
            j += 1
    return out


def _prefix_windings(buf: np.ndarray, grid: np.ndarray, projection: Projection) -> np.ndarray:
    """Winding of the length-t stack prefixes at the grid times, exactly."""
    P = buf.shape[0]
    d = projection.d
    k = projection.k
    table = projection.letter_table()  # (2k+1, d)
    if np.abs(table).max() > 127:
        raise ValueError("projection entries must fit in int8 for the fast path")
    luts = [table[:, c].astype(np.int8) for c in range(d)]
    out = np.zeros((P, grid.size, d), dtype=np.int64)
    acc = np.zeros((P, d), dtype=np.int64)
    prev = 0
    for gi, t in enumerate(grid):
        for c0 in range(prev, int(t), 512):
            c1 = min(int(t), c0 + 512)
            seg = buf[:, c0:c1].astype(np.int16) + k
            for c in range(d):
                acc[:, c] += luts[c][seg].sum(axis=1, dtype=np.int64)
        out[:, gi] = acc
        prev = int(t)
    return out


@dataclass
class MomentAccumulator:
    """Associative, exact accumulator over per-path endpoint statistics."""

    count: int = 0
    sum_t: int = 0
    sum_t2: int = 0
    sum_wind: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sum_outer: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))

    @classmethod
    def from_arrays(cls, t: np.ndarray, wind: np.ndarray) -> "MomentAccumulator":
        return cls(
            count=int(t.size),
            sum_t=int(t.sum()),
            sum_t2=int((t.astype(object) ** 2).sum()),
            sum_wind=wind.sum(axis=0).astype(np.int64),
            sum_outer=(wind.T @ wind).astype(np.int64),
        )

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        return MomentAccumulator(
            count=self.count + other.count,
            sum_t=self.sum_t + other.sum_t,
            sum_t2=self.sum_t2 + other.sum_t2,
            sum_wind=self.sum_wind + other.sum_wind,
            sum_outer=self.sum_outer + other.sum_outer,
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MomentAccumulator)
            and self.count == other.count
            and self.sum_t == other.sum_t
            and self.sum_t2 == other.sum_t2
            and np.array_equal(self.sum_wind, other.sum_wind)
            and np.array_equal(self.sum_outer, other.sum_outer)
        )


@dataclass
class WalkDataset:
    """Batch simulation output; all arrays are indexed by path."""

    plan: WalkPlan
    t_checkpoint: np.ndarray          # (P, C)
    wind_checkpoint: np.ndarray       # (P, C, d)
    sigma_checkpoint: np.ndarray      # (P, C, R): sigma(w_k^{-1}, x_r)
    sigma_forward: np.ndarray | None  # (P, C, R): sigma(w_k, x_r)
    tau: np.ndarray                   # (P, S), -1 when not hit
    t_at_tau: np.ndarray
    wind_at_tau: np.ndarray
    conf_len: np.ndarray              # (P,)
    ray_wind: np.ndarray              # (P, T, d)
    ray_ok: np.ndarray                # (P, T)
    final_t: np.ndarray
    final_wind: np.ndarray
    t_history: np.ndarray | None
    boundary_prefixes: list[np.ndarray] | None
    accumulator: MomentAccumulator

    @property
    def n_paths(self) -> int:
        return self.final_t.size

    @property
    def checkpoint_steps(self) -> np.ndarray:
        return np.array(self.plan.checkpoints, dtype=np.int64)

    @property
    def ray_grid(self) -> np.ndarray:
        return np.array(self.plan.ray_grid, dtype=np.int64)

    @property
    def censored(self) -> np.ndarray:
        return self.tau < 0

    def martingale_at_checkpoints(self, ref_index: int, e_nu: np.ndarray) -> np.ndarray:
        """M_k = pi(w_k) - sigma(w_k^{-1}, x_ref) * e_nu at the checkpoints."""
        sig = self.sigma_checkpoint[:, :, ref_index].astype(np.float64)
        return self.wind_checkpoint.astype(np.float64) - sig[:, :, None] * np.asarray(e_nu)[None, None, :]

    def digest(self) -> str:
        h = hashlib.sha256()
        meta = dict(
            measure=self.plan.measure.name or "custom",
            horizon=self.plan.horizon,
            n_paths=self.plan.n_paths,
            seed=self.plan.master_seed,
            checkpoints=list(self.plan.checkpoints),
            ray_grid=list(self.plan.ray_grid),
        )
        h.update(json.dumps(meta, sort_keys=True).encode())
        for arr in (
            self.t_checkpoint, self.wind_checkpoint, self.sigma_checkpoint,
            self.tau, self.t_at_tau, self.wind_at_tau, self.conf_len,
            self.ray_wind, self.ray_ok, self.final_t, self.final_wind,
        ):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _assemble(plan: WalkPlan, parts: list[dict]) -> WalkDataset:
    cat = lambda name: np.concatenate([p[name] for p in parts], axis=0)
    sigma_fwd = cat("sigma_fwd_cp") if parts[0]["sigma_fwd_cp"] is not None else None
    hist = cat("hist") if parts[0]["hist"] is not None else None
    boundary = None
    if plan.store_boundary:
        boundary = [arr for p in parts for arr in p["boundary"]]
    final_t = cat("final_t")
    final_wind = cat("final_wind")
    acc = MomentAccumulator.from_arrays(final_t, final_wind)
    return WalkDataset(
        plan=plan,
        t_checkpoint=cat("t_cp"),
        wind_checkpoint=cat("wind_cp"),
        sigma_checkpoint=cat("sigma_cp"),
        sigma_forward=sigma_fwd,
        tau=cat("tau"),
        t_at_tau=cat("t_tau"),
        wind_at_tau=cat("wind_tau"),
        conf_len=cat("conf"),
        ray_wind=cat("ray_wind"),
        ray_ok=cat("ray_ok"),
        final_t=final_t,
        final_wind=final_wind,
        t_history=hist,
        boundary_prefixes=boundary,
        accumulator=acc,
    )


def batch_run(plan: WalkPlan, workers: int = 1) -> WalkDataset:
    """Run all paths of the plan; the result is identical for any worker count."""
    bounds = list(range(0, plan.n_paths, plan.batch_paths)) + [plan.n_paths]
    jobs = [(lo, hi) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
    if workers <= 1 or len(jobs) == 1:
        parts = [_run_batch(plan, lo, hi) for lo, hi in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_batch, plan, lo, hi) for lo, hi in jobs]
            parts = [f.result() for f in futures]
    return _assemble(plan, parts)


def extend_ray_coverage(dataset: WalkDataset, max_doublings: int = 2) -> WalkDataset:
    """Re-simulate paths whose confirmed prefix is shorter than the ray grid.

    Doubling the horizon replays the same per-(path, step) draws, so the
    first half of the extended walk is the original walk; only the
    stabilized prefix and ray windings are refreshed.
    """
    plan = dataset.plan
    if not plan.ray_grid:
        return dataset
    need = int(max(plan.ray_grid))
    for doubling in range(1, max_doublings + 1):
        deficient = np.nonzero(dataset.conf_len < need)[0]
        if deficient.size == 0:
            return dataset
        long_plan = replace(plan, horizon=plan.horizon * 2**doubling, checkpoints=(), stopping=None,
                            n_reference_points=0, store_history=False, store_boundary=False)
        for lo in range(0, deficient.size, plan.batch_paths):
            idx = deficient[lo : lo + plan.batch_paths]
            # contiguous runs keep the batch call simple; fall back per path
            for i in idx:
                part = _run_batch(long_plan, int(i), int(i) + 1)
                dataset.conf_len[i] = part["conf"][0]
                dataset.ray_wind[i] = part["ray_wind"][0]
                dataset.ray_ok[i] = part["ray_ok"][0]
    if (dataset.conf_len < need).any():
        bad = int((dataset.conf_len < need).sum())
        raise StabilizationFailure(
            f"{bad} paths failed to stabilize a prefix of length {need} after {max_doublings} doublings"
        )
    return dataset


# --- scalar reference sampler ----------------------------------------------

@dataclass
class PathRecord:
    """One seeded path with checkpoints and stopping-time hits."""

    seed: int
    master_seed: int
    path_index: int
    horizon: int
    checkpoints: list[tuple[int, Word, int, np.ndarray]]  # (k, w_k, t_k, winding)
    stopping_hits: dict[float, tuple[int, int, np.ndarray]]  # s -> (tau, t, winding)
    censored_thresholds: list[float]
    confirmed_prefix: Word
    final_word: Word


def sample_path(
    measure: StepMeasure,
    projection: Projection,
    horizon: int,
    master_seed: int,
    path_index: int = 0,
    stopping: StoppingSpec | None = None,
    checkpoints: Sequence[int] = (),
    cap_rate: float | None = None,
) -> PathRecord:
    """Pure-Python single path; draws exactly the engine's random stream."""
    key = derive_key(master_seed, "walk")
    cdf = measure.cdf()
    atoms = [letters_to_array(w) for w in measure.atoms]
    from .freegroup import abelianize

    winds = [abelianize(w, projection) for w in measure.atoms]
    stack: list[int] = []
    wind = np.zeros(projection.d, dtype=np.int64)
    radii = stopping.radii() if stopping is not None else np.zeros(0, dtype=np.int64)
    nti = 0
    hits: dict[float, tuple[int, int, np.ndarray]] = {}
    cps_set = set(checkpoints)
    cp_records = []
    history = [0]
    for step in range(horizon):
        u = counter_uniforms(key, path_index, step)
        ai = int(np.searchsorted(cdf, u, side="right"))
        wind = wind + winds[ai]
        for a in atoms[ai]:
            a = int(a)
            if stack and stack[-1] == -a:
                stack.pop()
            else:
                stack.append(a)
        t = len(stack)
        history.append(t)
        while nti < radii.size and t >= radii[nti]:
            hits[stopping.thresholds[nti]] = (step + 1, t, wind.copy())
            nti += 1
        if step + 1 in cps_set:
            cp_records.append((step + 1, Word(tuple(stack), _reduced=True), t, wind.copy()))
    censored = list(stopping.thresholds[nti:]) if stopping is not None else []
    window = max(64, horizon // 10)
    conf = min(history[max(0, horizon - window) :])
    if cap_rate:
        conf = min(conf, int(cap_rate * horizon))
    return PathRecord(
        seed=mix_seed(master_seed, path_index),
        master_seed=master_seed,
        path_index=path_index,
        horizon=horizon,
        checkpoints=cp_records,
        stopping_hits=hits,
        censored_thresholds=censored,
        confirmed_prefix=Word(tuple(stack[:conf]), _reduced=True),
        final_word=Word(tuple(stack), _reduced=True),
    )


class _WalkContinuation:
    """Letter source that replays a seeded walk at growing horizons."""

    def __init__(self, measure: StepMeasure, projection: Projection, master_seed: int,
                 path_index: int, horizon: int, cap_rate: float | None, max_doublings: int = 2):
        self.measure = measure
        self.projection = projection
        self.master_seed = master_seed
        self.path_index = path_index
        self.horizon = horizon
        self.cap_rate = cap_rate
        self.max_doublings = max_doublings
        self._letters: tuple[int, ...] = ()

    def letters_upto(self, n: int) -> Sequence[int]:
        doublings = 0
        horizon = self.horizon
        while len(self._letters) < n:
            if doublings > self.max_doublings:
                raise StabilizationFailure(
                    f"prefix stuck at {len(self._letters)} < {n} letters after "
                    f"{self.max_doublings} horizon doublings"
                )
            rec = sample_path(self.measure, self.projection, horizon,
                              self.master_seed, self.path_index, cap_rate=self.cap_rate)
            got = rec.confirmed_prefix.letters
            if got[: len(self._letters)] != self._letters:
                raise StabilizationFailure("replayed prefix contradicts confirmed letters")
            self._letters = got
            horizon *= 2
            doublings += 1
        return self._letters[:n]


def limit_boundary_point(record: PathRecord, measure: StepMeasure,
                         projection: Projection, cap_rate: float | None = None) -> BoundaryWord:
    """Boundary point of the path: confirmed prefix plus seeded continuation."""
    source = _WalkContinuation(
        measure, projection, record.master_seed, record.path_index, record.horizon, cap_rate
    )
    return BoundaryWord(source, label=f"walk[{record.path_index}]")


def boundary_from_prefix(letters: np.ndarray | Sequence[int], label: str = "") -> BoundaryWord:
    """Finite-stock boundary point (exhausts explicitly)."""
    arr = [int(a) for a in letters]
    return BoundaryWord(FiniteSource(arr), label=label)


def make_boundary_bank(measure: StepMeasure, projection: Projection, count: int,
                       horizon: int, master_seed: int, cap_rate: float | None,
                       stream: str = "bank") -> list[np.ndarray]:
    """Confirmed boundary prefixes of seeded walks, as packed-letter arrays.

    Used for harmonic-measure sample banks (frozen across estimators for
    variance reduction and reproducibility).
    """
    plan = WalkPlan(
        measure=measure, projection=projection, horizon=horizon, n_paths=count,
        master_seed=int(derive_key(master_seed, stream)), cap_rate=cap_rate,
        store_boundary=True, batch_paths=min(count, 4096),
    )
    ds = batch_run(plan)
    return ds.boundary_prefixes
