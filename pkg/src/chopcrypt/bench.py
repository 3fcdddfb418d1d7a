"""Benchmark engines: ping-pong, multi-pair windowed bandwidth, encryption rig.

Measurement protocol: every configuration is run repeatedly (at least 10
runs for transfer benchmarks, 5 for encryption, capped at 100) until the
run-to-run standard deviation is within 5% of the mean, falling back to a
99% confidence interval within 1% of the mean. Desk-scale repetition counts
are the default; --paper-reps restores full-scale counts (10000/1000
ping-pongs, 500000 encryptions, 100 multi-pair rounds).
"""

from __future__ import annotations

import csv
import math
import secrets
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import TransportError
from .pipeline import recv_pipelined, send_message
from .profiles import Profile, with_ranks
from .segcrypt import SMALL_THRESHOLD, ChopPlan, KeyPairing, make_nonce
from .transport import FRAME_ACK, FRAME_HEADER, FRAME_RAW, channel_pair
from .tuner import plan_message

MODES = ("unencrypted", "naive", "chopped")
CSV_COLUMNS = (
    "scenario",
    "size_bytes",
    "threads",
    "k",
    "mode",
    "reps",
    "median_us",
    "stddev_us",
    "throughput_mbs",
)
_Z99 = 2.5758  # two-sided 99% normal quantile


@dataclass(frozen=True)
class BenchSample:
    scenario: str
    size_bytes: int
    threads: int
    k: int
    mode: str
    reps: int
    median_us: float
    stddev_us: float
    throughput_mbs: float

    def as_csv_row(self) -> list:
        return [
            self.scenario,
            str(self.size_bytes),
            str(self.threads),
            str(self.k),
            self.mode,
            str(self.reps),
            f"{self.median_us:.6f}",
            f"{self.stddev_us:.6f}",
            f"{self.throughput_mbs:.3f}",
        ]


def write_csv(rows, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv_row())


def stable_runs(
    sample_fn,
    min_runs: int = 10,
    max_runs: int = 100,
    rel_sd: float = 0.05,
    ci_rel: float = 0.01,
) -> list:
    """Collect runs until stddev <= rel_sd*mean or the 99% CI <= ci_rel*mean."""
    runs = []
    while True:
        runs.append(sample_fn())
        n = len(runs)
        if n < max(min_runs, 2):
            continue
        mean = statistics.fmean(runs)
        sd = statistics.stdev(runs)
        if sd <= rel_sd * mean:
            break
        if _Z99 * sd / math.sqrt(n) <= ci_rel * mean:
            break
        if n >= max_runs:
            break
    return runs


def plan_for(mode: str, size: int, profile: Profile, live: int = 0):
    """Plan used by a bench sender; None means the small direct path."""
    if size < SMALL_THRESHOLD:
        return None
    if mode == "naive":
        return ChopPlan(1, 1, size, 1)
    return plan_message(size, profile.system, live)


def _summarize(
    scenario: str, size: int, plan, mode: str, reps: int, runs_us: list
) -> BenchSample:
    median_us = statistics.median(runs_us)
    sd = statistics.stdev(runs_us) if len(runs_us) > 1 else 0.0
    return BenchSample(
        scenario=scenario,
        size_bytes=size,
        threads=plan.eff_threads if plan else 1,
        k=plan.k if plan else 1,
        mode=mode,
        reps=reps,
        median_us=median_us,
        stddev_us=sd,
        throughput_mbs=size / median_us if median_us > 0 else 0.0,
    )


# -- ping-pong -------------------------------------------------------------


def serve_echo(channel, keys: KeyPairing, mode: str = "chopped", profile: Profile = None):
    """Echo every incoming message until the peer closes the connection."""
    while True:
        try:
            frame = channel.recv_frame()
        except TransportError:
            return
        if frame is None:
            return
        frame_type, index, payload = frame
        if frame_type == FRAME_RAW:
            channel.wait([channel.send_async(FRAME_RAW, index, payload, block=True)])
        elif frame_type == FRAME_HEADER:
            msg = recv_pipelined(channel, keys, first_frame=frame)
            send_message(channel, keys, msg, plan_for(mode, len(msg), profile))
        elif frame_type == FRAME_ACK:
            continue
        else:
            raise TransportError(f"echo server got unexpected frame type {frame_type:#x}")


def pingpong_reps(size: int, paper_reps: bool, reps) -> int:
    if reps:
        return reps
    if paper_reps:
        return 10000 if size < 1048576 else 1000
    return 50


def run_pingpong(
    channel,
    keys: KeyPairing,
    sizes,
    mode: str,
    profile: Profile,
    reps: int = None,
    paper_reps: bool = False,
    min_runs: int = 10,
    max_runs: int = 100,
):
    """Client half of the ping-pong benchmark; returns (rows, plans by size)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rows = []
    plans = {}
    for size in sizes:
        msg = secrets.token_bytes(size)
        n = pingpong_reps(size, paper_reps, reps)
        plan = plan_for(mode, size, profile) if mode != "unencrypted" else None
        plans[size] = plan

        if mode == "unencrypted":

            def round_trip():
                channel.wait([channel.send_async(FRAME_RAW, 0, msg, block=True)])
                frame = channel.recv_frame()
                if frame is None:
                    raise TransportError("echo peer closed mid-benchmark")

        else:

            def round_trip():
                send_message(channel, keys, msg, plan)
                echoed = recv_pipelined(channel, keys)
                if len(echoed) != size:
                    raise TransportError("echo length mismatch")

        round_trip()  # warm-up and sanity

        def one_run() -> float:
            t0 = time.perf_counter()
            for _ in range(n):
                round_trip()
            return (time.perf_counter() - t0) / n / 2 * 1e6  # one-way us

        runs = stable_runs(one_run, min_runs, max_runs)
        rows.append(_summarize("pingpong", size, plan, mode, n, runs))
    return rows, plans


def run_pingpong_loopback(
    sizes,
    mode: str,
    profile: Profile,
    keys: KeyPairing = None,
    reps: int = None,
    paper_reps: bool = False,
    min_runs: int = 10,
    max_runs: int = 100,
):
    """Self-contained ping-pong over an in-process channel pair."""
    keys = keys or KeyPairing.generate()
    client, server = channel_pair()
    echo = threading.Thread(
        target=serve_echo, args=(server, keys, mode, profile), daemon=True
    )
    echo.start()
    try:
        return run_pingpong(
            client, keys, sizes, mode, profile, reps, paper_reps, min_runs, max_runs
        )
    finally:
        client.close()
        echo.join(timeout=10)
        server.close()


# -- multi-pair windowed bandwidth ------------------------------------------


def _multipair_sender(channel, keys, msg, mode, profile, rounds, window, plans_out):
    for _ in range(rounds):
        tickets = []
        for i in range(window):
            if mode == "unencrypted":
                tickets.append(channel.send_async(FRAME_RAW, i + 1, msg, block=True))
            else:
                plan = plan_for(mode, len(msg), profile, live=channel.outstanding_sends)
                plans_out.append(plan)
                report = send_message(channel, keys, msg, plan, wait=False)
                tickets.extend(report.tickets)
        channel.wait(tickets)
        frame = channel.recv_frame()
        if frame is None or frame[0] != FRAME_ACK:
            raise TransportError("expected a round acknowledgement")


def _multipair_receiver(channel, keys, mode, rounds, window):
    for _ in range(rounds):
        for _ in range(window):
            if mode == "unencrypted":
                frame = channel.recv_frame()
                if frame is None or frame[0] != FRAME_RAW:
                    raise TransportError("expected a raw frame")
            else:
                recv_pipelined(channel, keys)
        channel.wait([channel.send_async(FRAME_ACK, 0, b"", block=True)])


def run_multipair(
    pairs: int,
    size: int,
    mode: str,
    profile: Profile,
    keys: KeyPairing = None,
    rounds: int = 2,
    window: int = 64,
    paper_reps: bool = False,
):
    """OSU-style multi-pair bandwidth: each pair posts `window` sends per round.

    Every pair runs on its own connection; ranks_per_node is set to the pair
    count so the thread budget shrinks as pairs are added. Returns
    (rows, plans per pair).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if paper_reps:
        rounds = 100
    keys = keys or KeyPairing.generate()
    profile = with_ranks(profile, pairs)
    msg = secrets.token_bytes(size)
    channels = [channel_pair() for _ in range(pairs)]
    plans = [[] for _ in range(pairs)]
    errors = []

    def guard(fn, *args):
        try:
            fn(*args)
        except Exception as exc:  # surface worker failures to the caller
            errors.append(exc)

    threads = []
    for p in range(pairs):
        tx, rx = channels[p]
        threads.append(
            threading.Thread(
                target=guard,
                args=(_multipair_sender, tx, keys, msg, mode, profile, rounds, window, plans[p]),
            )
        )
        threads.append(
            threading.Thread(target=guard, args=(_multipair_receiver, rx, keys, mode, rounds, window))
        )
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - t0
    for tx, rx in channels:
        tx.close()
        rx.close()
    if errors:
        raise errors[0]

    messages = pairs * rounds * window
    per_msg_us = elapsed / messages * 1e6
    plan0 = next((p for p in plans[0] if p is not None), None) if plans and plans[0] else None
    aggregate_mbs = messages * size / (elapsed * 1e6)
    row = BenchSample(
        scenario="multipair",
        size_bytes=size,
        threads=plan0.eff_threads if plan0 else 1,
        k=plan0.k if plan0 else 1,
        mode=mode,
        reps=messages,
        median_us=per_msg_us,
        stddev_us=0.0,
        throughput_mbs=aggregate_mbs,
    )
    return [row], plans


# -- encryption throughput rig ----------------------------------------------


def _raw_parallel_encrypt(aead: AESGCM, msg: bytes, t: int, pool) -> None:
    """Chop msg into t segments and seal them on t lanes (timing kernel)."""
    s = math.ceil(len(msg) / t)
    count = math.ceil(len(msg) / s)

    def seal(i: int) -> bytes:
        return aead.encrypt(make_nonce(i, i == count), msg[(i - 1) * s : i * s], None)

    if pool is None or count == 1:
        for i in range(1, count + 1):
            seal(i)
    else:
        list(pool.map(seal, range(1, count + 1)))


def run_encbench(
    sizes,
    lanes,
    reps: int = None,
    paper_reps: bool = False,
    min_runs: int = 5,
    max_runs: int = 50,
):
    """Multi-lane encryption throughput over (size, lane count) grid."""
    aead = AESGCM(secrets.token_bytes(16))  # throwaway benchmark key
    rows = []
    n = 500000 if paper_reps else (reps or 64)
    for size in sizes:
        msg = secrets.token_bytes(size)
        for t in lanes:
            pool = ThreadPoolExecutor(t) if t > 1 else None
            try:
                _raw_parallel_encrypt(aead, msg, t, pool)  # warm-up

                def one_run() -> float:
                    t0 = time.perf_counter()
                    for _ in range(n):
                        _raw_parallel_encrypt(aead, msg, t, pool)
                    return (time.perf_counter() - t0) / n * 1e6  # per-op us

                runs = stable_runs(one_run, min_runs, max_runs)
            finally:
                if pool is not None:
                    pool.shutdown()
            plan = ChopPlan(1, t, math.ceil(size / t), t)
            rows.append(_summarize("encbench", size, plan, "enc", n, runs))
    return rows
