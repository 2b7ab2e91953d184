"""Deterministic discrete-event simulator for the plane-synchronized network.

Time is exact: every event instant is an integer count of "subticks", where
one simulated time unit equals `World.L` subticks.  L is the least common
multiple of the denominators of every rational quantity that can enter a
timestamp (tick periods, slot skews, delivery delays), so no rounding ever
occurs and runs are bit-reproducible across platforms.

Hardware clocks never tick event-by-event.  Each clock is a closed-form
staircase (reference instant, constant period, initial reading); slot
boundaries, SIG instants, and watchdogs are computed directly on that
staircase, which keeps the event count per round small regardless of how
many ticks elapse.

Round structure: a master switch emits a SIG when its adjusted clock hits a
multiple of T while idle.  The SIG gives every member of the plane (the
switch itself plus each terminal's per-plane interface) a round anchor
offset by a bounded skew; TT-slot boundaries then ride on each member's own
tick progression.  Messages arriving before their receive slot opens are
buffered and processed at slot begin; arrivals after slot end are dropped.
"""

from __future__ import annotations

import heapq
import json
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from random import Random
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, SimulationError
from .ftcore import Mat
from .params import Resolved
from .protocol import (
    MesState,
    MwsState,
    TTMessageUp,
    mes_on_begin_vc_send,
    mes_on_clock_msg,
    mes_on_end_c_recv,
    mws_on_begin_c_send,
    mws_on_end_c_send,
    mws_on_end_mc_recv,
)
from .ring import wrap_add, wrap_sub

__all__ = [
    "Engine",
    "HardwareClock",
    "ClockTrack",
    "World",
    "Trace",
    "sync_check",
    "next_sig_tick",
    "derive_seed",
    "DRIFT_DENOM",
    "QUANT",
]

# Event-kind processing order at equal instants.  Slot handlers run before
# the SIG check of the same tick (a completed round may re-arm immediately);
# deliveries at a boundary instant land in the freshly opened round.
K_SLOT = 0
K_WATCHDOG = 1
K_SIG = 2
K_DELIVER = 3
K_ADV = 4

DRIFT_DENOM = 1_000_000   # tick periods are T_H * k / DRIFT_DENOM
QUANT = 16                # skew/delay/phase quantization steps


def derive_seed(master: int, tag: str) -> int:
    """Platform-stable child seed for an independent random stream."""
    import hashlib

    digest = hashlib.sha256(f"{master}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class Engine:
    """Min-heap event loop over integer subtick timestamps.

    Tie-break at equal instants: (node rank, kind rank, insertion sequence),
    independent of insertion interleaving.
    """

    def __init__(self) -> None:
        self._heap: list = []
        self._seq = 0
        self.now = 0

    def schedule(self, t: int, node_rank: int, kind: int, fn: Callable[[], None]) -> dict:
        if t < self.now:
            raise SimulationError(f"event scheduled in the past: {t} < {self.now}")
        handle = {"cancelled": False}
        heapq.heappush(self._heap, (t, node_rank, kind, self._seq, fn, handle))
        self._seq += 1
        return handle

    def run_until(self, t_end: int) -> None:
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            t, _rank, _kind, _seq, fn, handle = heapq.heappop(heap)
            if handle["cancelled"]:
                continue
            self.now = t
            fn()
        if self.now < t_end:
            self.now = t_end


@dataclass
class HardwareClock:
    """Constant-rate tick staircase: reading h0 at tick 0, tick k at
    t_ref + k*period (subticks)."""

    t_ref: int
    period: int
    h0: int
    tau: int

    def ticks_at(self, t: int) -> int:
        return (t - self.t_ref) // self.period

    def h_at(self, t: int) -> int:
        return (self.h0 + self.ticks_at(t)) % self.tau

    def time_of_tick(self, k: int) -> int:
        return self.t_ref + k * self.period


@dataclass
class ClockTrack:
    """Sampling view of one node's adjusted clock: the hardware staircase
    plus the step function of applied offsets."""

    clock: HardwareClock
    offset0: int
    jump_times: list[int] = field(default_factory=list)
    jump_offsets: list[int] = field(default_factory=list)
    jump_cum: list[int] = field(default_factory=list)  # signed cumulative shift

    def record(self, t: int, old: int, new: int) -> None:
        tau = self.clock.tau
        delta = (new - old) % tau
        if delta > tau // 2:
            delta -= tau
        prev = self.jump_cum[-1] if self.jump_cum else 0
        self.jump_times.append(t)
        self.jump_offsets.append(new)
        self.jump_cum.append(prev + delta)

    def offset_at(self, t: int, side: str = "right") -> int:
        idx = (bisect_right if side == "right" else bisect_left)(self.jump_times, t)
        return self.jump_offsets[idx - 1] if idx else self.offset0

    def value_at(self, t: int, side: str = "right") -> int:
        return (self.clock.h_at(t) + self.offset_at(t, side)) % self.clock.tau


def next_sig_tick(base: int, k_min: int, tau: int, T: int) -> int:
    """Smallest tick k >= k_min with (base + k) mod tau a multiple of T,
    where base is the clock reading plus offset at tick 0."""
    best = None
    for v in range(0, ((tau - 1) // T) * T + 1, T):
        k = k_min + (v - base - k_min) % tau
        if best is None or k < best:
            best = k
    return best


class Trace:
    """Chronological event record; exports line-delimited JSON with a stable
    field order so identical runs produce identical bytes."""

    def __init__(self, level: str = "core") -> None:
        if level not in ("off", "core", "full"):
            raise ConfigurationError(f"unknown trace level {level!r}")
        self.level = level
        self.records: list[dict] = []

    def add(self, core: bool, **rec) -> None:
        if self.level == "off" or (self.level == "core" and not core):
            return
        self.records.append(rec)

    def to_jsonl(self) -> str:
        def default(o):
            if isinstance(o, Fraction):
                return f"{o.numerator}/{o.denominator}"
            raise TypeError(type(o))

        return "".join(
            json.dumps(r, sort_keys=True, separators=(",", ":"), default=default) + "\n"
            for r in self.records
        )


@dataclass
class _PlaneRound:
    version: int
    anchor: int
    b_mc: int
    e_mc: int
    closed: bool = False
    buffer: list = field(default_factory=list)
    senders: set = field(default_factory=set)


@dataclass
class _MesRound:
    version: int
    anchor: int
    b_cr: int
    e_cr: int
    closed: bool = False
    buffer: list = field(default_factory=list)


class World:
    """One simulated system: nodes, clocks, round machinery, adversary."""

    def __init__(self, rp: Resolved, adversary, seed: int, init_policy: str = "random",
                 trace_level: str = "core",
                 faulty_planes: Optional[set[int]] = None,
                 faulty_mes: Optional[set[int]] = None) -> None:
        self.rp = rp
        self.seed = seed
        self.engine = Engine()
        self.trace = Trace(trace_level)
        self.adversary = adversary

        n0, n1 = rp.n0, rp.n1
        self.faulty_planes = set(range(n1 - rp.f1, n1)) if faulty_planes is None else set(faulty_planes)
        self.faulty_mes = set(range(n0 - rp.f0, n0)) if faulty_mes is None else set(faulty_mes)
        if len(self.faulty_planes) > rp.f1 or len(self.faulty_mes) > rp.f0:
            raise ConfigurationError("fault assignment exceeds the fault budget")
        self.honest_planes = [p for p in range(n1) if p not in self.faulty_planes]
        self.honest_mes = [i for i in range(n0) if i not in self.faulty_mes]

        self.init_rng = Random(derive_seed(seed, "init"))
        self.adv_rng = Random(derive_seed(seed, "adversary"))
        self.coin_rng = {p: Random(derive_seed(seed, f"coin:{p}")) for p in self.honest_planes}

        # Adversary-chosen per-node rates and tick phases, then the global
        # subtick scale from every rational that can enter a timestamp.
        self._eps_rnd = rp.dv.eps_rnd  # simulated time units, Fraction
        adversary.bind(self)
        periods: dict = {}
        phases: dict = {}
        for key in self._node_keys():
            periods[key] = self._quantize_period(adversary.choose_period(key))
            phases[key] = Fraction(adversary.choose_phase(key) % QUANT, QUANT)
        atoms = [rp.sys.T_H, Fraction(rp.sys.T_H, QUANT), Fraction(rp.sys.d_max, QUANT)]
        if self._eps_rnd > 0:
            atoms.append(Fraction(self._eps_rnd, QUANT))
        atoms.extend(periods.values())
        atoms.extend(p * q for p, q in zip(periods.values(), phases.values()))
        self.L = math.lcm(*(a.denominator for a in atoms))

        def scaled(x: Fraction) -> int:
            v = x * self.L
            assert v.denominator == 1
            return int(v)

        self.scaled = scaled
        self.THL = scaled(rp.sys.T_H)
        self.skew_quantum = scaled(Fraction(self._eps_rnd, QUANT)) if self._eps_rnd > 0 else 0
        self.delay_quantum = scaled(Fraction(rp.sys.d_max, QUANT))
        self.min_delay_k = max(1, -(-scaled(rp.sys.min_delay) // self.delay_quantum)) \
            if rp.sys.min_delay > 0 else 1
        # Observation-window length in subticks, rounded up to the grid.
        self.window = math.ceil(rp.dv.T_max * rp.sys.T_H * self.L)

        tau = rp.tau_max
        self.clocks: dict = {}
        self.tracks: dict = {}
        for key in self._node_keys():
            h0 = self.init_rng.randrange(tau)
            t_ref = -scaled(periods[key] * phases[key])
            self.clocks[key] = HardwareClock(t_ref=t_ref, period=scaled(periods[key]),
                                             h0=h0, tau=tau)

        self.mws: dict[int, MwsState] = {}
        self.mes: dict[int, MesState] = {}
        self.plane_round: dict[int, _PlaneRound] = {}
        self.mes_round: dict[tuple[int, int], _MesRound] = {
            (i, p): _MesRound(0, -1, -1, -1, closed=True)
            for i in self.honest_mes for p in range(n1)
        }
        self._watchdog: dict[int, Optional[dict]] = {p: None for p in self.honest_planes}
        self._round_no: dict[int, int] = {p: 0 for p in range(n1)}

        # Per-run logs consumed by the harness and tests.
        self.toss_log: list[tuple[int, int, int, int]] = []   # (t, plane, b, gl_after)
        self.stb_log: list[tuple[int, int, bool]] = []        # (t, plane, e_stb)
        self.sig_log: list[tuple[int, int]] = []              # (t, plane)
        self.warnings: list[str] = []

        self._init_states(init_policy)
        adversary.setup()
        for p in self.honest_planes:
            self._arm_initial(p)

    # ---- construction helpers -------------------------------------------

    def _node_keys(self):
        for p in range(self.rp.n1):
            yield ("mws", p)
        for i in range(self.rp.n0):
            yield ("mes", i)

    def _quantize_period(self, period: Fraction) -> Fraction:
        rp = self.rp
        lo = (1 - rp.rho) * rp.sys.T_H
        hi = (1 + rp.rho) * rp.sys.T_H
        snapped = rp.sys.T_H * Fraction(round(Fraction(period, rp.sys.T_H) * DRIFT_DENOM),
                                        DRIFT_DENOM)
        clamped = min(max(snapped, lo), hi)
        if clamped != period:
            self.warnings.append(f"period {period} adjusted to {clamped}")
        return clamped

    def _init_states(self, policy: str) -> None:
        rp, tau, rng = self.rp, self.rp.tau_max, self.init_rng
        if policy == "synchronized":
            # Start on a SIG boundary with records that look exactly like the
            # aftermath of a completed previous round: the last distributed
            # value was one cycle behind the upcoming one, received at the
            # usual point of the slot schedule.
            T = rp.T % tau
            c_init = (rp.T * rng.randrange(tau // rp.T)) % tau
            # A plane's first SIG may anchor one or more cycles past c_init
            # depending on its tick phase; records must sit exactly one cycle
            # behind that anchor or the first accuracy check fails.
            anchor_c: dict[int, int] = {}
            for p in range(rp.n1):
                clk = self.clocks[("mws", p)]
                k0 = clk.ticks_at(0)
                if clk.time_of_tick(k0) < 0:
                    k0 += 1
                k = next_sig_tick(c_init, k0, tau, T)
                anchor_c[p] = (c_init + k) % tau
            for p in self.honest_planes:
                clk = self.clocks[("mws", p)]
                off = wrap_sub(c_init, clk.h0, tau)
                self.mws[p] = MwsState(tau_max=tau, clock_offset=off, c_tilde_old=off)
            for i in self.honest_mes:
                clk = self.clocks[("mes", i)]
                off = wrap_sub(c_init, clk.h0, tau)
                st = MesState(n1=rp.n1, clock_offset=off)
                for q in range(rp.n1):
                    rec_lag = wrap_sub(
                        wrap_add(wrap_sub(anchor_c[q], T, tau), rp.sched.c_send[1] % tau, tau),
                        c_init, tau)
                    st.m_rec[q] = wrap_add(c_init, rec_lag, tau)
                    st.h_rec[q] = wrap_add(clk.h0, rec_lag, tau)
                    st.c_tilde[q] = off
                    st.prev_m[q] = wrap_sub(st.m_rec[q], T, tau)
                    st.prev_h[q] = wrap_sub(st.h_rec[q], T, tau)
                    st.acc[q] = rp.a0
                self.mes[i] = st
        elif policy == "random":
            for p in self.honest_planes:
                tau_idl = tau if rng.random() < 0.5 else rng.randrange(tau)
                self.mws[p] = MwsState(
                    tau_max=tau,
                    clock_offset=rng.randrange(tau),
                    grand_life=rng.randrange(rp.dv.g0 + 1),
                    b_coin=rng.randrange(2),
                    tau_idl=tau_idl,
                    c_tilde_old=rng.randrange(tau),
                )
            for i in self.honest_mes:
                st = MesState(n1=rp.n1, clock_offset=rng.randrange(tau))
                for q in range(rp.n1):
                    if rng.random() < 0.5:
                        st.m_rec[q] = rng.randrange(tau)
                        st.h_rec[q] = rng.randrange(tau)
                        st.c_tilde[q] = wrap_sub(st.m_rec[q], st.h_rec[q], tau)
                        st.acc[q] = rng.randrange(rp.a0 + 1)
                        if rng.random() < 0.5:
                            st.prev_m[q] = rng.randrange(tau)
                            st.prev_h[q] = rng.randrange(tau)
                self.mes[i] = st
        else:
            raise ConfigurationError(f"unknown initial-state policy {policy!r}")

        for p in self.honest_planes:
            self.tracks[("mws", p)] = ClockTrack(self.clocks[("mws", p)],
                                                 self.mws[p].clock_offset)
        for i in self.honest_mes:
            self.tracks[("mes", i)] = ClockTrack(self.clocks[("mes", i)],
                                                 self.mes[i].clock_offset)

    def _arm_initial(self, p: int) -> None:
        st = self.mws[p]
        clk = self.clocks[("mws", p)]
        k0 = clk.ticks_at(0)
        if clk.time_of_tick(k0) < 0:
            k0 += 1
        if st.idle:
            self._schedule_sig(p, k0)
        else:
            # Mid-round start: the watchdog rescues the plane once the
            # hardware clock walks past tau_idl.
            d0 = wrap_sub(st.tau_idl, (clk.h0 + k0) % clk.tau, clk.tau)
            k_fire = k0 if d0 > self.rp.sys.T0 else k0 + d0 + 1
            self._watchdog[p] = self.engine.schedule(
                clk.time_of_tick(k_fire), p, K_WATCHDOG, lambda p=p: self._on_watchdog(p))

    # ---- small utilities --------------------------------------------------

    def rank(self, key) -> int:
        return key[1] if key[0] == "mws" else self.rp.n1 + key[1]

    def read_clock(self, key, t: Optional[int] = None) -> int:
        t = self.engine.now if t is None else t
        clk = self.clocks[key]
        state = self.mws[key[1]] if key[0] == "mws" else self.mes[key[1]]
        return (clk.h_at(t) + state.clock_offset) % clk.tau

    def _skew(self, i: int, p: int) -> int:
        if self.skew_quantum == 0:
            return 0
        k = self.adversary.choose_skew(i, p)
        return min(max(int(k), 0), QUANT) * self.skew_quantum

    def _delay(self, sender, p: int) -> int:
        k = self.adversary.choose_delay(sender, p)
        return min(max(int(k), self.min_delay_k), QUANT) * self.delay_quantum

    def _record_adjust(self, key, old: int, new: int) -> None:
        self.tracks[key].record(self.engine.now, old, new)
        self.trace.add(True, ev="adjust", t=self.engine.now, node=list(key),
                       old=old, new=new)

    # ---- plane (MWS) round machinery --------------------------------------

    def _schedule_sig(self, p: int, k_min: int) -> None:
        st = self.mws[p]
        clk = self.clocks[("mws", p)]
        base = (clk.h0 + st.clock_offset) % clk.tau
        k = next_sig_tick(base, k_min, clk.tau, self.rp.T % clk.tau)
        self.engine.schedule(clk.time_of_tick(k), p, K_SIG, lambda: self._on_sig(p))

    def _on_sig(self, p: int) -> None:
        st = self.mws[p]
        if not st.idle:
            return
        t = self.engine.now
        clk = self.clocks[("mws", p)]
        h = clk.h_at(t)
        st.tau_idl = wrap_add(h, self.rp.sys.T0 % clk.tau, clk.tau)
        self.sig_log.append((t, p))
        self.trace.add(True, ev="sig", t=t, plane=p, c=(h + st.clock_offset) % clk.tau)
        self._round_no[p] += 1

        k = clk.ticks_at(t)
        sc = self.rp.sched
        rnd = _PlaneRound(
            version=self._round_no[p], anchor=t,
            b_mc=clk.time_of_tick(k + sc.mc_recv[0]),
            e_mc=clk.time_of_tick(k + sc.mc_recv[1]),
        )
        self.plane_round[p] = rnd
        v = rnd.version
        eng = self.engine
        eng.schedule(rnd.b_mc, p, K_SLOT, lambda: self._on_begin_mc(p, v))
        eng.schedule(rnd.e_mc, p, K_SLOT, lambda: self._on_end_mc(p, v))
        eng.schedule(clk.time_of_tick(k + sc.c_send[0]), p, K_SLOT,
                     lambda: self._on_begin_cs(p, v))
        eng.schedule(clk.time_of_tick(k + sc.c_send[1]), p, K_SLOT,
                     lambda: self._on_end_cs(p, v))
        self._watchdog[p] = eng.schedule(
            clk.time_of_tick(k + self.rp.sys.T0 + 1), p, K_WATCHDOG,
            lambda: self._on_watchdog(p))

        self._start_member_rounds(p, t)
        self.adversary.on_sig(p, t)

    def _start_member_rounds(self, p: int, t_sig: int) -> None:
        """Give every terminal a skewed anchor for plane p's new round."""
        sc = self.rp.sched
        for i in range(self.rp.n0):
            anchor = t_sig + self._skew(i, p)
            if i in self.faulty_mes:
                self.adversary.faulty_mes_round(i, p, anchor)
                continue
            clk = self.clocks[("mes", i)]
            rnd = self.mes_round[(i, p)]
            rnd.version += 1
            v = rnd.version
            rnd.anchor = anchor
            rnd.b_cr = anchor + sc.c_recv[0] * clk.period
            rnd.e_cr = anchor + sc.c_recv[1] * clk.period
            rnd.closed = False
            rnd.buffer = []
            rank = self.rank(("mes", i))
            eng = self.engine
            eng.schedule(anchor + sc.vc_send[0] * clk.period, rank, K_SLOT,
                         lambda i=i, p=p, v=v: self._on_begin_vc(i, p, v))
            eng.schedule(rnd.b_cr, rank, K_SLOT,
                         lambda i=i, p=p, v=v: self._on_begin_cr(i, p, v))
            eng.schedule(rnd.e_cr, rank, K_SLOT,
                         lambda i=i, p=p, v=v: self._on_end_cr(i, p, v))

    def _on_watchdog(self, p: int) -> None:
        st = self.mws[p]
        st.tau_idl = st.tau_max
        self.trace.add(True, ev="watchdog", t=self.engine.now, plane=p)
        clk = self.clocks[("mws", p)]
        self._schedule_sig(p, clk.ticks_at(self.engine.now))

    def _on_begin_mc(self, p: int, v: int) -> None:
        rnd = self.plane_round.get(p)
        if rnd is None or rnd.version != v:
            return
        st = self.mws[p]
        st.C_mat = Mat.empty(self.rp.n1, self.rp.n0)
        st.A_mat = Mat.empty(self.rp.n1, self.rp.n0)
        st.M_mat = Mat.empty(self.rp.n1, self.rp.n0)
        for send_t, sender, msg in rnd.buffer:
            self._ingest_up(p, rnd, sender, msg)
        rnd.buffer = []

    def _on_end_mc(self, p: int, v: int) -> None:
        rnd = self.plane_round.get(p)
        if rnd is None or rnd.version != v:
            return
        rnd.closed = True
        st = self.mws[p]
        h = self.clocks[("mws", p)].h_at(self.engine.now)
        summary = mws_on_end_mc_recv(st, h, self.coin_rng[p], self.rp)
        t = self.engine.now
        self.toss_log.append((t, p, st.b_coin, st.grand_life))
        self.stb_log.append((t, p, summary.stb))
        self.trace.add(True, ev="round", t=t, plane=p, b=st.b_coin,
                       gl=st.grand_life, stb=summary.stb, branch=summary.branch,
                       c_new=st.c_new)

    def _on_begin_cs(self, p: int, v: int) -> None:
        rnd = self.plane_round.get(p)
        if rnd is None or rnd.version != v:
            return
        msg = mws_on_begin_c_send(self.mws[p])
        if msg is None:
            return
        t = self.engine.now
        for i in range(self.rp.n0):
            if i in self.faulty_mes:
                continue
            arrival = t + self._delay(("mws", p), p)
            self.trace.add(False, ev="send_down", t=t, plane=p, to=i, m=msg.m_p,
                           arrival=arrival)
            self.engine.schedule(arrival, self.rank(("mes", i)), K_DELIVER,
                                 lambda i=i, p=p, m=msg.m_p: self._deliver_down(p, i, m))

    def _on_end_cs(self, p: int, v: int) -> None:
        rnd = self.plane_round.get(p)
        if rnd is None or rnd.version != v:
            return
        st = self.mws[p]
        clk = self.clocks[("mws", p)]
        old = st.clock_offset
        mws_on_end_c_send(st, clk.h_at(self.engine.now), self.rp)
        if self._watchdog[p] is not None:
            self._watchdog[p]["cancelled"] = True
            self._watchdog[p] = None
        self._record_adjust(("mws", p), old, st.clock_offset)
        if st.idle:
            self._schedule_sig(p, clk.ticks_at(self.engine.now))

    # ---- terminal (MES) round machinery ------------------------------------

    def _on_begin_vc(self, i: int, p: int, v: int) -> None:
        rnd = self.mes_round[(i, p)]
        if rnd.version != v:
            return
        t = self.engine.now
        h = self.clocks[("mes", i)].h_at(t)
        msg = mes_on_begin_vc_send(self.mes[i], i, h, self.rp)
        self.send_up(i, p, msg, t)

    def send_up(self, i: int, p: int, msg: TTMessageUp, send_t: int) -> None:
        if p in self.faulty_planes:
            self.adversary.on_up_to_faulty(i, p, msg, send_t)
            return
        arrival = send_t + self._delay(("mes", i), p)
        self.trace.add(False, ev="send_up", t=send_t, mes=i, plane=p, arrival=arrival)
        self.engine.schedule(arrival, self.rank(("mws", p)), K_DELIVER,
                             lambda: self._deliver_up(p, send_t, i, msg))

    def _deliver_up(self, p: int, send_t: int, i: int, msg: TTMessageUp) -> None:
        rnd = self.plane_round.get(p)
        if rnd is None:
            return
        # TT isolation at the plane boundary: the send instant must lie in
        # the policed image of the upward slot for the current round.
        sc = self.rp.sched
        T_H, rho = self.rp.sys.T_H, self.rp.rho
        lo = rnd.anchor + math.floor((sc.vc_send[0] * (1 - rho) * T_H - self._eps_rnd) * self.L)
        hi = rnd.anchor + math.ceil((sc.vc_send[1] * (1 + rho) * T_H + self._eps_rnd) * self.L)
        if not (lo <= send_t <= hi):
            self.trace.add(False, ev="drop_up", t=self.engine.now, plane=p, mes=i,
                           why="outside policed slot")
            return
        now = self.engine.now
        if now < rnd.b_mc:
            rnd.buffer.append((send_t, i, msg))
        elif not rnd.closed:
            self._ingest_up(p, rnd, i, msg)
        else:
            self.trace.add(False, ev="drop_up", t=now, plane=p, mes=i, why="late")

    def _ingest_up(self, p: int, rnd: _PlaneRound, i: int, msg: TTMessageUp) -> None:
        if i in rnd.senders:
            return
        rnd.senders.add(i)
        st = self.mws[p]
        for q in range(self.rp.n1):
            st.C_mat.entries[q][i] = msg.c_vec[q]
            st.A_mat.entries[q][i] = msg.a_vec[q]
            st.M_mat.entries[q][i] = msg.m_vec[q]

    def _deliver_down(self, p: int, i: int, m: int) -> None:
        rnd = self.mes_round[(i, p)]
        now = self.engine.now
        if rnd.closed or now < rnd.anchor:
            self.trace.add(False, ev="drop_down", t=now, plane=p, mes=i, why="no round")
            return
        if now < rnd.b_cr:
            rnd.buffer.append(m)
        elif now <= rnd.e_cr:
            self._ingest_down(i, p, m)
        else:
            self.trace.add(False, ev="drop_down", t=now, plane=p, mes=i, why="late")

    def _ingest_down(self, i: int, p: int, m: int) -> None:
        h = self.clocks[("mes", i)].h_at(self.engine.now)
        mes_on_clock_msg(self.mes[i], p, m, h, self.rp)
        self.trace.add(False, ev="recv_down", t=self.engine.now, mes=i, plane=p, m=m)

    def _on_begin_cr(self, i: int, p: int, v: int) -> None:
        rnd = self.mes_round[(i, p)]
        if rnd.version != v:
            return
        for m in rnd.buffer:
            self._ingest_down(i, p, m)
        rnd.buffer = []

    def _on_end_cr(self, i: int, p: int, v: int) -> None:
        rnd = self.mes_round[(i, p)]
        if rnd.version != v:
            return
        rnd.closed = True
        st = self.mes[i]
        old = st.clock_offset
        mes_on_end_c_recv(st, self.clocks[("mes", i)].h_at(self.engine.now), self.rp)
        self._record_adjust(("mes", i), old, st.clock_offset)

    # ---- adversary-facing hooks for faulty components ----------------------

    def faulty_sig(self, p: int, t_sig: int) -> None:
        """A faulty plane starts a round: terminals get anchors as usual, but
        the plane side is entirely adversary-driven."""
        if p not in self.faulty_planes:
            raise SimulationError("faulty_sig on a nonfaulty plane")
        self._round_no[p] += 1
        self.trace.add(True, ev="sig", t=t_sig, plane=p, c=None)
        self._start_member_rounds(p, t_sig)

    def adv_deliver_down(self, p: int, i: int, m: int, arrival: int) -> None:
        if p not in self.faulty_planes:
            raise SimulationError("adversarial delivery from a nonfaulty plane")
        if i in self.faulty_mes:
            return
        arrival = max(arrival, self.engine.now)
        self.engine.schedule(arrival, self.rank(("mes", i)), K_DELIVER,
                             lambda: self._deliver_down(p, i, m % self.rp.tau_max))

    def adv_send_up(self, i: int, p: int, msg: TTMessageUp, send_t: int) -> None:
        if i not in self.faulty_mes:
            raise SimulationError("adversarial upward send from a nonfaulty terminal")
        if p in self.faulty_planes:
            return
        arrival = max(send_t, self.engine.now) + self._delay(("mes", i), p)
        self.engine.schedule(arrival, self.rank(("mws", p)), K_DELIVER,
                             lambda: self._deliver_up(p, send_t, i, msg))

    def schedule_adv(self, t: int, fn: Callable[[], None]) -> dict:
        return self.engine.schedule(max(t, self.engine.now),
                                    self.rp.n1 + self.rp.n0, K_ADV, fn)

    # ---- runs ---------------------------------------------------------------

    def run_until_window(self, w: int) -> None:
        self.engine.run_until(w * self.window)

    def qap_tracks(self) -> list[ClockTrack]:
        keys = [("mws", p) for p in self.honest_planes] + \
               [("mes", i) for i in self.honest_mes]
        return [self.tracks[k] for k in keys]


# ---- synchronization verdicts ----------------------------------------------


def _samples(t1: int, t2: int, THL: int, tracks: list[ClockTrack]) -> np.ndarray:
    grid = np.arange(-(-t1 // THL) * THL, t2 + 1, THL, dtype=np.int64)
    extra = [t for tr in tracks
             for t in tr.jump_times[bisect_left(tr.jump_times, t1):
                                    bisect_right(tr.jump_times, t2)]]
    if extra:
        return np.unique(np.concatenate([grid, np.array(extra, dtype=np.int64)]))
    return grid


def _values(tr: ClockTrack, ts: np.ndarray, side: str) -> np.ndarray:
    clk = tr.clock
    ticks = (ts - clk.t_ref) // clk.period
    offs = np.concatenate([[tr.offset0], np.array(tr.jump_offsets, dtype=np.int64)]) \
        if tr.jump_times else np.array([tr.offset0], dtype=np.int64)
    jt = np.array(tr.jump_times, dtype=np.int64)
    idx = np.searchsorted(jt, ts, side=side)
    return (clk.h0 + ticks + offs[idx]) % clk.tau


def _cums(tr: ClockTrack, ts: np.ndarray, side: str) -> np.ndarray:
    cum = np.concatenate([[0], np.array(tr.jump_cum, dtype=np.int64)]) \
        if tr.jump_times else np.array([0], dtype=np.int64)
    jt = np.array(tr.jump_times, dtype=np.int64)
    idx = np.searchsorted(jt, ts, side=side)
    clk = tr.clock
    return (ts - clk.t_ref) // clk.period + cum[idx]


def sync_check(tracks: list[ClockTrack], t1: int, t2: int, rp: Resolved, L: int,
               eps0: Optional[int] = None) -> tuple[bool, int]:
    """Verdict of the two synchronization conditions over [t1, t2] subticks.

    Precision: every pair of clocks stays within eps0 ring distance at every
    sample (grid of period T_H plus both sides of each adjustment).
    Rate accuracy: per clock, elapsed ticks between samples at most T_max
    apart deviate from elapsed time by no more than rho*elapsed + eps0;
    evaluated exactly on integer-scaled samples over T_max-aligned and
    half-shifted spans so every pair within T_max/2 is covered and no pair
    beyond T_max is ever required.

    Returns (verdict, max precision deviation seen in ticks).
    """
    if t1 > t2:
        raise ConfigurationError("empty check interval")
    eps0 = rp.eps0 if eps0 is None else eps0
    tau = rp.tau_max
    THL = int(rp.sys.T_H * L)
    ts = _samples(t1, t2, THL, tracks)
    if ts.size == 0:
        return True, 0

    max_dev = 0
    if len(tracks) > 1:
        for side in ("left", "right"):
            V = np.stack([_values(tr, ts, side) for tr in tracks])
            for a in range(len(tracks)):
                d = (V[a] - V[a + 1:]) % tau
                d = np.minimum(d, tau - d)
                if d.size:
                    max_dev = max(max_dev, int(d.max()))
        if max_dev > eps0:
            return False, max_dev

    # Rate condition, exact integer arithmetic: scale by T_H*L and by the
    # denominator of rho so both sides are integers.
    pr, qr = rp.rho.numerator, rp.rho.denominator
    bound = eps0 * THL * qr
    delta = math.ceil(rp.dv.T_max * rp.sys.T_H * L)
    starts = list(range(t1, t2, delta))
    starts += [s + delta // 2 for s in starts]
    for tr in tracks:
        u_l = _cums(tr, ts, "left")
        u_r = _cums(tr, ts, "right")
        for s0 in starts:
            m = (ts >= s0) & (ts <= min(s0 + delta, t2))
            if m.sum() < 2:
                continue
            s_rel = ts[m] - s0
            # Interleave pre/post readings at each instant, pre first.
            u = np.empty(2 * int(m.sum()), dtype=np.int64)
            u[0::2], u[1::2] = u_l[m], u_r[m]
            u -= u[0]
            s2 = np.repeat(s_rel, 2)
            e = u * (THL * qr) - s2 * (qr + pr)
            f = -u * (THL * qr) + s2 * (qr - pr)
            if int((e - np.minimum.accumulate(e)).max()) > bound:
                return False, max_dev
            if int((f - np.minimum.accumulate(f)).max()) > bound:
                return False, max_dev
    return True, max_dev
