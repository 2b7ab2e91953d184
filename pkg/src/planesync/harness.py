"""Experiment runner: single runs, Monte Carlo campaigns, coin-model checks.

A scenario bundles the system parameters with an adversary choice, an
initial-state policy, and run-control knobs.  run_once simulates one seed
and reports when (if ever) the clock ensemble stabilizes; run_monte_carlo
fans seeds out over worker processes, joins them in seed order, and reduces
the results to a summary with one-sided binomial lower confidence bounds
against the theoretical floors.  The coin-model mode replays only the coin
tosses and lifetime bookkeeping, isolating the probabilistic claim from the
protocol dynamics.
"""

from __future__ import annotations

import math
import os
from bisect import bisect_left, bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from random import Random
from typing import Optional

from scipy.stats import beta

from .adversaries import make_adversary
from .errors import ConfigurationError
from .params import (
    Resolved,
    SystemParams,
    TTSchedule,
    load_system_config,
    parse_schedule_section,
    parse_system_section,
    resolve,
    validate,
)
from .simnet import World, derive_seed, sync_check

__all__ = [
    "Scenario",
    "reference_scenario",
    "RunResult",
    "StatsSummary",
    "CoinModelSummary",
    "run_once",
    "run_monte_carlo",
    "lemma1_coin_model",
    "resync_points",
    "lower_confidence_bound",
]


# ---- scenario ----------------------------------------------------------------


_ADVERSARY_KEYS = {"name", "params"}
_RUN_KEYS = {"horizon", "confirm", "stop_after_confirm", "trace", "eps0_check"}


@dataclass(frozen=True)
class Scenario:
    """Everything one experiment needs besides the seed."""

    params: SystemParams
    sched: TTSchedule
    adversary: str = "silent"
    adversary_params: dict = field(default_factory=dict)
    init: str = "random"
    horizon: int = 1000                 # max simulated windows
    confirm: Optional[int] = None       # consecutive good windows; default g0+1
    stop_after_confirm: bool = True
    eps0_check: Optional[int] = None    # precision bound checked; default eps0
    trace_level: str = "off"

    def __post_init__(self) -> None:
        report = validate(self.params, self.sched)
        if not report.ok:
            raise ConfigurationError(f"scenario rejected: {report}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1: {self.horizon}")
        if self.confirm is not None and self.confirm < 1:
            raise ConfigurationError(f"confirm must be >= 1: {self.confirm}")

    @property
    def resolved(self) -> Resolved:
        return resolve(self.params, self.sched)

    def confirm_windows(self, rp: Resolved) -> int:
        return self.confirm if self.confirm is not None else rp.dv.g0 + 1

    @classmethod
    def from_doc(cls, doc: dict, strict: bool = True, **overrides) -> "Scenario":
        params = parse_system_section(doc.get("system", {}), strict=strict)
        sched = parse_schedule_section(doc.get("schedule", {}), strict=strict)
        kwargs: dict = {"params": params, "sched": sched}
        adv = doc.get("adversary", {})
        if adv:
            unknown = set(adv) - _ADVERSARY_KEYS
            if unknown and strict:
                raise ConfigurationError(f"unknown adversary keys: {sorted(unknown)}")
            kwargs["adversary"] = adv.get("name", "silent")
            kwargs["adversary_params"] = dict(adv.get("params") or {})
        if "init" in doc:
            kwargs["init"] = doc["init"]
        run = doc.get("run", {})
        if run:
            unknown = set(run) - _RUN_KEYS
            if unknown and strict:
                raise ConfigurationError(f"unknown run keys: {sorted(unknown)}")
            if run.get("horizon") is not None:
                kwargs["horizon"] = int(run["horizon"])
            if run.get("confirm") is not None:
                kwargs["confirm"] = int(run["confirm"])
            if run.get("stop_after_confirm") is not None:
                kwargs["stop_after_confirm"] = bool(run["stop_after_confirm"])
            if run.get("eps0_check") is not None:
                kwargs["eps0_check"] = int(run["eps0_check"])
            if run.get("trace") is not None:
                kwargs["trace_level"] = run["trace"]
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: Optional[str] = None, strict: bool = True,
                  **overrides) -> "Scenario":
        _params, _sched, doc = load_system_config(path, strict=strict)
        return cls.from_doc(doc, strict=strict, **overrides)


def reference_scenario(**overrides) -> Scenario:
    """The desk-scale reference setup, mirrored in scenarios/reference.yaml.

    T0 is chosen so the full cycle T = T0 + eps2 = 128 divides tau_max; a
    nonuniform wrap cycle trips the accuracy filters once per revolution.
    """
    params = SystemParams(
        n0=4, n1=3, f0=1, f1=1, tau_max=4096,
        T_H=Fraction(1), rho=Fraction(1, 1000), d_max=Fraction(2),
        T0=74, a0=3, eps_rnd=Fraction(1, 2),
    )
    sched = TTSchedule(vc_send=(6, 10), mc_recv=(14, 24),
                       c_send=(30, 34), c_recv=(38, 48))
    kwargs: dict = {"params": params, "sched": sched}
    kwargs.update(overrides)
    return Scenario(**kwargs)


# ---- per-run result ----------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    """Outcome of one seeded simulation.

    stabilization_window is the first window index from which the verdict
    held for the full confirmation horizon; absent means the run exhausted
    its horizon without ever confirming.
    """

    seed: int
    stabilization_window: Optional[int]
    windows_run: int
    max_precision: int                       # worst pairwise deviation, ticks
    max_precision_after_stb: Optional[int]   # same, from stabilization on
    n_violations: int                        # windows failing the verdict
    first_violation: Optional[int]
    resync_point_count: int
    attempts: int                            # resync points before stabilization
    successes: int                           # attempts confirmed within g0+1 windows
    resync_windows: int                      # windows containing >= 1 resync point
    trace_path: Optional[str] = None         # file name, relative to the result

    def to_record(self) -> dict:
        return asdict(self)


def resync_points(toss_log: list[tuple[int, int, int, int]],
                  nodes: list[int],
                  initial_gl: dict[int, int],
                  t_end: Optional[int] = None) -> list[tuple[int, int]]:
    """Extract resynchronization points from a coin-toss log.

    A log entry is (time, node, coin, lifetime_after).  Time t is a point
    iff some node tosses a head at t while some other node held lifetime 0
    going into t and its first toss strictly after t is a tail (so its
    lifetime stays 0 through the exchanging window containing that toss).
    Head tosses whose witness cannot be confirmed inside the log (no later
    toss) are not counted.
    """
    times: dict[int, list[int]] = {q: [] for q in nodes}
    coins: dict[int, list[int]] = {q: [] for q in nodes}
    lifes: dict[int, list[int]] = {q: [] for q in nodes}
    for t, q, b, gl in toss_log:
        if q in times:
            times[q].append(t)
            coins[q].append(b)
            lifes[q].append(gl)
    points: list[tuple[int, int]] = []
    for t, p, b, _gl in toss_log:
        if b != 1 or p not in times:
            continue
        if t_end is not None and t > t_end:
            break
        for q in nodes:
            if q == p:
                continue
            i = bisect_left(times[q], t)
            prev_gl = lifes[q][i - 1] if i > 0 else initial_gl[q]
            j = bisect_right(times[q], t)
            if prev_gl == 0 and j < len(times[q]) and coins[q][j] == 0:
                points.append((t, p))
                break
    return points


def run_once(sc: Scenario, seed: int, trace_path: Optional[str] = None) -> RunResult:
    """Simulate one seed; see RunResult for the verdict semantics."""
    rp = sc.resolved
    level = sc.trace_level if trace_path is None else \
        (sc.trace_level if sc.trace_level != "off" else "core")
    world = World(rp, make_adversary(sc.adversary, sc.adversary_params),
                  seed=seed, init_policy=sc.init, trace_level=level)
    initial_gl = {p: world.mws[p].grand_life for p in world.honest_planes}
    confirm = sc.confirm_windows(rp)
    g0 = rp.dv.g0

    run_len = 0
    stab: Optional[int] = None
    max_dev = 0
    max_dev_stb: Optional[int] = None
    n_viol = 0
    first_viol: Optional[int] = None
    windows_run = 0
    devs: list[int] = []

    for k in range(sc.horizon):
        world.run_until_window(k + 1)
        ok, dev = sync_check(world.qap_tracks(), k * world.window,
                             (k + 1) * world.window, rp, world.L,
                             eps0=sc.eps0_check)
        windows_run = k + 1
        devs.append(dev)
        max_dev = max(max_dev, dev)
        if ok:
            run_len += 1
            if stab is None and run_len == confirm:
                stab = k - confirm + 1
                if sc.stop_after_confirm:
                    break
        else:
            run_len = 0
            n_viol += 1
            if first_viol is None:
                first_viol = k
    if stab is not None:
        max_dev_stb = max(devs[stab:])

    points = resync_points(world.toss_log, world.honest_planes, initial_gl)
    attempts = successes = 0
    for t, _p in points:
        w = t // world.window
        if stab is not None and w >= stab:
            continue
        attempts += 1
        if stab is not None and stab <= w + g0 + 1:
            successes += 1
    resync_windows = len({t // world.window for t, _p in points})

    if trace_path is not None:
        with open(trace_path, "w") as f:
            f.write(world.trace.to_jsonl())

    return RunResult(
        seed=seed,
        stabilization_window=stab,
        windows_run=windows_run,
        max_precision=max_dev,
        max_precision_after_stb=max_dev_stb,
        n_violations=n_viol,
        first_violation=first_viol,
        resync_point_count=len(points),
        attempts=attempts,
        successes=successes,
        resync_windows=resync_windows,
        trace_path=os.path.basename(trace_path) if trace_path else None,
    )


# ---- statistics ----------------------------------------------------------------


def lower_confidence_bound(k: int, n: int, alpha: float = 0.01) -> float:
    """One-sided Clopper-Pearson lower bound on a binomial proportion."""
    if n <= 0 or k <= 0:
        return 0.0
    if k >= n:
        return float(alpha ** (1.0 / n))
    return float(beta.ppf(alpha, k, n - k + 1))


@dataclass(frozen=True)
class StatsSummary:
    """Campaign reduction; a pure function of the set of RunResults."""

    n_runs: int
    n_stabilized: int
    all_stabilized: bool
    stab_mean: Optional[float]
    stab_max: Optional[int]
    stab_mean_bound: float          # 2/q1_bound + g0, windows
    stab_mean_ok: bool              # mean within the bound with 20% slack
    attempts: int
    successes: int
    attempt_freq: Optional[float]
    attempt_freq_lcb: float
    q1_bound: float
    attempt_freq_ok: bool           # lcb >= q1_bound (vacuous without attempts)
    resync_windows: int
    windows_total: int
    resync_window_freq: float
    max_precision_after_stb: Optional[int]
    n_violations: int
    incomplete: bool = False
    failed_seeds: tuple[int, ...] = ()

    def to_record(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("runs", self.n_runs),
            ("stabilized", self.n_stabilized),
            ("all stabilized", self.all_stabilized),
            ("mean stabilization window", self.stab_mean),
            ("max stabilization window", self.stab_max),
            ("mean bound (2/q1 + g0)", f"{self.stab_mean_bound:.1f}"),
            ("mean within bound", self.stab_mean_ok),
            ("resync attempts", self.attempts),
            ("confirmed attempts", self.successes),
            ("attempt frequency", self.attempt_freq),
            ("attempt frequency lcb (a=0.01)", f"{self.attempt_freq_lcb:.6f}"),
            ("theoretical q1 bound", f"{self.q1_bound:.6f}"),
            ("attempt bound satisfied", self.attempt_freq_ok),
            ("windows with resync point", f"{self.resync_windows}/{self.windows_total}"),
            ("per-window resync frequency", f"{self.resync_window_freq:.4f}"),
            ("max precision after stabilization", self.max_precision_after_stb),
            ("violation windows", self.n_violations),
            ("incomplete", self.incomplete),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def summarize(results: list[RunResult], rp: Resolved, alpha: float = 0.01,
              incomplete: bool = False,
              failed_seeds: tuple[int, ...] = ()) -> StatsSummary:
    results = sorted(results, key=lambda r: r.seed)
    stabs = [r.stabilization_window for r in results if r.stabilization_window is not None]
    attempts = sum(r.attempts for r in results)
    successes = sum(r.successes for r in results)
    q1 = float(rp.dv.q1_bound)
    lcb = lower_confidence_bound(successes, attempts, alpha)
    mean_bound = float(2 / rp.dv.q1_bound + rp.dv.g0) if rp.dv.q1_bound > 0 else math.inf
    stab_mean = sum(stabs) / len(stabs) if stabs else None
    devs = [r.max_precision_after_stb for r in results
            if r.max_precision_after_stb is not None]
    windows_total = sum(r.windows_run for r in results)
    resync_windows = sum(r.resync_windows for r in results)
    return StatsSummary(
        n_runs=len(results),
        n_stabilized=len(stabs),
        all_stabilized=len(stabs) == len(results) and not incomplete,
        stab_mean=stab_mean,
        stab_max=max(stabs) if stabs else None,
        stab_mean_bound=mean_bound,
        stab_mean_ok=stab_mean is not None and stab_mean <= mean_bound * 1.2,
        attempts=attempts,
        successes=successes,
        attempt_freq=successes / attempts if attempts else None,
        attempt_freq_lcb=lcb,
        q1_bound=q1,
        attempt_freq_ok=attempts == 0 or lcb >= q1,
        resync_windows=resync_windows,
        windows_total=windows_total,
        resync_window_freq=resync_windows / windows_total if windows_total else 0.0,
        max_precision_after_stb=max(devs) if devs else None,
        n_violations=sum(r.n_violations for r in results),
        incomplete=incomplete,
        failed_seeds=failed_seeds,
    )


def _mc_worker(args: tuple) -> RunResult:
    sc, seed = args
    return run_once(sc, seed)


def run_monte_carlo(sc: Scenario, seeds: list[int], alpha: float = 0.01,
                    jobs: int = 1) -> tuple[StatsSummary, list[RunResult]]:
    """Independent runs, one per seed, joined in seed order.

    A run that raises is recorded in failed_seeds and marks the campaign
    incomplete rather than aborting the others.
    """
    if len(seeds) != len(set(seeds)):
        raise ConfigurationError("duplicate seeds in campaign")
    rp = sc.resolved
    results: list[RunResult] = []
    failed: list[int] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [(s, ex.submit(_mc_worker, (sc, s))) for s in seeds]
            for s, fut in futs:
                try:
                    results.append(fut.result())
                except Exception:
                    failed.append(s)
    else:
        for s in seeds:
            try:
                results.append(_mc_worker((sc, s)))
            except Exception:
                failed.append(s)
    summary = summarize(results, rp, alpha=alpha,
                        incomplete=bool(failed), failed_seeds=tuple(failed))
    return summary, results


# ---- coin-model mode -----------------------------------------------------------


@dataclass(frozen=True)
class CoinModelSummary:
    n_windows: int
    windows_with_point: int
    freq: float
    freq_lcb: float
    bound: float                # 2*q0*(1-q0)^g0
    ok: bool

    def to_record(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        return "\n".join([
            f"windows                 {self.n_windows}",
            f"windows with point      {self.windows_with_point}",
            f"frequency               {self.freq:.4f}",
            f"frequency lcb (a=0.01)  {self.freq_lcb:.4f}",
            f"theoretical bound       {self.bound:.4f}",
            f"bound satisfied         {self.ok}",
        ])


def lemma1_coin_model(rp: Resolved, n_windows: int, seed: int,
                      n_nodes: Optional[int] = None,
                      alpha: float = 0.01) -> CoinModelSummary:
    """Coin tosses and lifetime bookkeeping only, no network.

    Each of the nonfaulty coin holders tosses once per cycle of T ticks at
    a random phase; a window is T_max ticks.  The per-window frequency of
    resynchronization points is compared against its theoretical floor.
    """
    if n_windows < 1:
        raise ConfigurationError(f"need at least one window: {n_windows}")
    n = (rp.n1 - rp.f1) if n_nodes is None else n_nodes
    if n < 2:
        raise ConfigurationError(f"coin model needs >= 2 nodes: {n}")
    g0, q0, T = rp.dv.g0, rp.dv.q0, rp.T
    t_max = rp.dv.T_max  # ticks, Fraction
    horizon = math.ceil(t_max * n_windows)

    rng = Random(derive_seed(seed, "coin-model"))
    q0f = float(q0)
    toss_log: list[tuple[int, int, int, int]] = []
    events: list[tuple[int, int]] = []
    for node in range(n):
        phase = rng.randrange(T)
        events.extend((t, node) for t in range(phase, horizon, T))
    events.sort()
    gl = {node: 0 for node in range(n)}
    for t, node in events:
        b = 1 if rng.random() < q0f else 0
        gl[node] = g0 if b else max(gl[node] - 1, 0)
        toss_log.append((t, node, b, gl[node]))

    points = resync_points(toss_log, list(range(n)), {q: 0 for q in range(n)})
    hit = {int(Fraction(t) / t_max) for t, _ in points}
    hit = {w for w in hit if w < n_windows}
    k = len(hit)
    bound = float(2 * q0 * (1 - q0) ** g0)
    lcb = lower_confidence_bound(k, n_windows, alpha)
    return CoinModelSummary(
        n_windows=n_windows,
        windows_with_point=k,
        freq=k / n_windows,
        freq_lcb=lcb,
        bound=bound,
        ok=lcb >= bound,
    )
