"""Streaming first-exit machinery for window-crossing (gambler's ruin) runs.

Exit trials need paths far longer than the checkpointed datasets, so the
runners here never materialize full series: increments are generated in
blocks, scanned for the first barrier crossing, and exited paths are
dropped from the active set. Results are identical to scanning the full
series because every draw is counter-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StabilizationFailure
from .freegroup import Projection, abelianize
from .measures import StepMeasure
from .rng import counter_uniform_block, derive_key

_BIG = np.int64(2**62)


@dataclass
class ExitReport:
    """Aggregate outcome of a window-exit trial on [-lower_abs, upper]."""

    lower: float  # negative barrier (e.g. -k_s)
    upper: float  # positive barrier (l_s)
    horizon: int
    exit_side: np.ndarray   # (P,) +1 upper, -1 lower, 0 censored
    exit_time: np.ndarray   # (P,) series index of first crossing, -1 censored
    exit_value: np.ndarray  # (P,)
    violated: int = 0       # paths dropped by a stabilization violation

    @property
    def n_paths(self) -> int:
        return self.exit_side.size

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(self.exit_side == 0))

    @property
    def upper_fraction(self) -> float:
        exited = self.exit_side != 0
        if not exited.any():
            return float("nan")
        return float(np.mean(self.exit_side[exited] > 0))

    @property
    def upper_fraction_se(self) -> float:
        n = int(np.sum(self.exit_side != 0))
        if n == 0:
            return float("nan")
        p = self.upper_fraction
        return float(np.sqrt(max(p * (1 - p), 1e-12) / n))


class FirstExitScanner:
    """Tracks, per path, the first time a running series leaves (lower, upper)."""

    def __init__(self, n_paths: int, lower: float, upper: float):
        if not (lower < 0 < upper):
            raise ValueError("need lower < 0 < upper")
        self.lower = lower
        self.upper = upper
        self.side = np.zeros(n_paths, dtype=np.int8)
        self.time = np.full(n_paths, -1, dtype=np.int64)
        self.value = np.zeros(n_paths, dtype=np.float64)

    def update(self, rows: np.ndarray, chunk: np.ndarray, valid: np.ndarray, start: np.ndarray) -> np.ndarray:
        """Scan a chunk of series values for paths `rows`.

        chunk[i, j] is the series value at index start[i] + j + 1; valid masks
        ragged rows. Returns the boolean mask (within rows) of paths that
        exited in this chunk.
        """
        hi = valid & (chunk >= self.upper)
        lo = valid & (chunk <= self.lower)
        hit = hi | lo
        has = hit.any(axis=1)
        if not has.any():
            return has
        first = np.where(has, hit.argmax(axis=1), 0)
        sub = np.nonzero(has)[0]
        g = rows[sub]
        j = first[sub]
        self.time[g] = start[sub] + j + 1
        vals = chunk[sub, j]
        self.value[g] = vals
        self.side[g] = np.where(vals >= self.upper, 1, -1)
        return has


def _phi_letter_table(projection: Projection, functional: np.ndarray) -> np.ndarray:
    """phi(pi(letter)) for letters -k..k (index shifted by k)."""
    table = projection.letter_table().astype(np.float64)  # (2k+1, d)
    return table @ np.asarray(functional, dtype=np.float64)


def iid_functional_exits(
    measure: StepMeasure,
    projection: Projection,
    functional: np.ndarray,
    lower: float,
    upper: float,
    n_paths: int,
    master_seed: int,
    horizon: int,
    block: int = 4096,
    batch_paths: int = 20_000,
) -> ExitReport:
    """First exit of the i.i.d. sum phi(pi(b_1)) + ... + phi(pi(b_n)).

    This is the centered martingale fast path: when the recentering vector
    vanishes, the walk-side martingale is exactly the additive winding, so
    no word arithmetic is needed.
    """
    phi = np.asarray(functional, dtype=np.float64)
    incr = np.array([float(abelianize(w, projection) @ phi) for w in measure.atoms])
    cdf = measure.cdf()
    key = derive_key(master_seed, "exit-iid")
    scanner = FirstExitScanner(n_paths, lower, upper)
    for lo_b in range(0, n_paths, batch_paths):
        hi_b = min(n_paths, lo_b + batch_paths)
        rows = np.arange(lo_b, hi_b, dtype=np.int64)
        offset = np.zeros(rows.size, dtype=np.float64)
        step0 = 0
        while rows.size and step0 < horizon:
            nsteps = min(block, horizon - step0)
            u = counter_uniform_block(key, rows.astype(np.uint64), np.arange(step0, step0 + nsteps))
            ai = np.searchsorted(cdf, u.ravel(), side="right").reshape(u.shape)
            cums = offset[:, None] + np.cumsum(incr[ai], axis=1)
            start = np.full(rows.size, step0, dtype=np.int64)
            exited = scanner.update(rows, cums, np.ones_like(cums, dtype=bool), start)
            keep = ~exited
            rows = rows[keep]
            offset = cums[keep, -1]
            step0 += nsteps
    return ExitReport(lower=lower, upper=upper, horizon=horizon,
                      exit_side=scanner.side, exit_time=scanner.time, exit_value=scanner.value)


def series_first_exits(series: list[np.ndarray] | np.ndarray, lower: float, upper: float,
                       horizon: int) -> ExitReport:
    """First exits of in-memory series (each a 1-d array of values at 1,2,...)."""
    if isinstance(series, np.ndarray) and series.ndim == 2:
        series = list(series)
    scanner = FirstExitScanner(len(series), lower, upper)
    for i, s in enumerate(series):
        s = np.asarray(s, dtype=np.float64)[:horizon]
        scanner.update(np.array([i]), s[None, :], np.ones((1, s.size), dtype=bool),
                       np.array([0], dtype=np.int64))
    return ExitReport(lower=lower, upper=upper, horizon=horizon,
                      exit_side=scanner.side, exit_time=scanner.time, exit_value=scanner.value)


def stream_ray_exits(
    measure: StepMeasure,
    projection: Projection,
    functional: np.ndarray,
    lower: float,
    upper: float,
    n_paths: int,
    master_seed: int,
    ray_horizon: int,
    window: int = 512,
    batch_paths: int = 8192,
    max_violation_fraction: float = 1e-3,
) -> ExitReport:
    """First exit of the projected boundary-ray winding phi(pi(prefix_t(xi))).

    The walk runs with a compacting letter stack: after each `window`-step
    segment, letters below the segment minimum of the word length are
    treated as stabilized ray letters and fed to the exit scanner, then the
    buffer is compacted. A later dip below already-emitted letters is a
    stabilization violation; such paths are excluded and counted, and more
    than `max_violation_fraction` of them aborts the run.
    """
    k = measure.k
    d = projection.d
    phi_lut = _phi_letter_table(projection, functional)
    atom_letters, atom_len, cdf = _compile_letters(measure)
    max_len = atom_letters.shape[1]
    key = derive_key(master_seed, "walk")  # same stream as the main engine
    scanner = FirstExitScanner(n_paths, lower, upper)
    violated_total = 0

    for lo_b in range(0, n_paths, batch_paths):
        hi_b = min(n_paths, lo_b + batch_paths)
        rows = np.arange(lo_b, hi_b, dtype=np.int64)  # global path ids
        A = rows.size
        buf_len = 3 * window * max_len + 64
        buf = np.zeros((A, buf_len), dtype=np.int8)
        sp = np.zeros(A, dtype=np.int64)          # local stack pointer
        base = np.zeros(A, dtype=np.int64)        # absolute index of buf[:, 0]
        emitted = np.zeros(A, dtype=np.int64)     # absolute letters emitted
        offset = np.zeros(A, dtype=np.float64)    # phi-winding at emitted letters
        step = 0
        step_cap = 1000 + 40 * ray_horizon  # generous: rate of escape >= 1/20 assumed
        while rows.size and step < step_cap:
            # one segment of `window` steps
            arange_a = np.arange(rows.size)
            minabs = base + sp
            for s_off in range(window):
                u = counter_uniform_block(key, rows.astype(np.uint64),
                                          np.array([step + s_off]))[:, 0]
                ai = np.searchsorted(cdf, u, side="right")
                for j in range(max_len):
                    lett = atom_letters[ai, j]
                    act = lett != 0
                    top = buf[arange_a, np.maximum(sp - 1, 0)]
                    cancel = act & (sp > 0) & (top == -lett)
                    sp -= cancel
                    push = act & ~cancel
                    if push.any():
                        buf[arange_a[push], sp[push]] = lett[push]
                        sp += push
                np.minimum(minabs, base + sp, out=minabs)
            step += window

            # stabilization check and emission
            bad = minabs < emitted
            if bad.any():
                violated_total += int(bad.sum())
                scanner.side[rows[bad]] = 0
                keepm = ~bad
                rows, buf, sp, base, emitted, offset, minabs = (
                    rows[keepm], buf[keepm], sp[keepm], base[keepm],
                    emitted[keepm], offset[keepm], minabs[keepm],
                )
                if not rows.size:
                    break
            stable = np.minimum(minabs, ray_horizon)  # never emit past the cap
            emit_len = np.maximum(stable - emitted, 0)
            E = int(emit_len.max()) if emit_len.size else 0
            if E > 0:
                arange_a = np.arange(rows.size)
                cols = (emitted - base)[:, None] + np.arange(E)[None, :]
                panel = buf[arange_a[:, None], np.minimum(cols, buf_len - 1)]
                valid = np.arange(E)[None, :] < emit_len[:, None]
                vals = phi_lut[panel.astype(np.int16) + k] * valid
                cums = offset[:, None] + np.cumsum(vals, axis=1)
                exited = scanner.update(rows, cums, valid, emitted)
                offset = np.where(emit_len > 0, cums[np.arange(rows.size), np.maximum(emit_len - 1, 0)], offset)
                emitted = emitted + emit_len
            keepm = (scanner.side[rows] == 0) & (emitted < ray_horizon)
            rows, buf, sp, base, emitted, offset = (
                rows[keepm], buf[keepm], sp[keepm], base[keepm], emitted[keepm], offset[keepm],
            )
            if not rows.size:
                break
            # compact: drop letters below `emitted`
            shift = emitted - base
            if shift.max(initial=0) > 0:
                K = int((sp - shift).max())
                idx = shift[:, None] + np.arange(max(K, 1))[None, :]
                buf[:, : max(K, 1)] = np.take_along_axis(buf, np.minimum(idx, buf_len - 1), axis=1)
                sp = sp - shift
                base = emitted.copy()
            if int(sp.max(initial=0)) + window * max_len + 8 > buf_len:
                grown = np.zeros((rows.size, buf_len * 2), dtype=np.int8)
                grown[:, :buf_len] = buf
                buf = grown
                buf_len *= 2

    if violated_total > max_violation_fraction * n_paths:
        raise StabilizationFailure(
            f"{violated_total} paths dipped below emitted prefixes (window={window})"
        )
    return ExitReport(lower=lower, upper=upper, horizon=ray_horizon,
                      exit_side=scanner.side, exit_time=scanner.time,
                      exit_value=scanner.value, violated=violated_total)


def _compile_letters(measure: StepMeasure):
    from .freegroup import letters_to_array

    n_atoms = len(measure.atoms)
    max_len = measure.max_word_length
    letters = np.zeros((n_atoms, max_len), dtype=np.int8)
    lens = np.zeros(n_atoms, dtype=np.int64)
    for i, w in enumerate(measure.atoms):
        arr = letters_to_array(w)
        letters[i, : len(arr)] = arr
        lens[i] = len(arr)
    return letters, lens, measure.cdf()
