"""chopcrypt-bench: benchmarks, model fitting/prediction, tuning and demos."""

from __future__ import annotations

import argparse
import sys
import threading

from . import adversary, bench, keyexchange, perfmodel, profiles, transport, tuner
from .errors import (
    ChopCryptError,
    FitError,
    HandshakeTimeout,
    PlanError,
    PolicyError,
    TransportError,
)
from .pipeline import recv_pipelined, send_message
from .segcrypt import KeyPairing

EXIT_OK = 0
EXIT_FIT_POLICY = 2
EXIT_TRANSPORT = 3
EXIT_SECURITY = 4


def _parse_ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_address(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _emit_rows(rows, csv_out: str):
    bench.write_csv(rows, sys.stdout)
    if csv_out:
        with open(csv_out, "w", newline="") as fh:
            bench.write_csv(rows, fh)


def _log_plans(plans):
    if isinstance(plans, dict):
        items = plans.items()
    else:
        items = enumerate(plans)
    for key, plan in items:
        if plan is None:
            print(f"# plan {key}: small path", file=sys.stderr)
        else:
            print(
                f"# plan {key}: k={plan.k} t={plan.t} seg_size={plan.seg_size} "
                f"eff_threads={plan.eff_threads}",
                file=sys.stderr,
            )


def cmd_pingpong(args) -> int:
    profile = profiles.get_profile(args.profile)
    sizes = args.sizes or [args.size]
    if args.bind:
        listener = transport.listen(_parse_address(args.bind))
        print(f"# listening on {listener.address[0]}:{listener.address[1]}", file=sys.stderr)
        with listener, listener.accept(max_inflight=args.max_inflight) as channel:
            keys = keyexchange.run_handshake_coordinator([channel])
            bench.serve_echo(channel, keys, args.mode, profile)
        return EXIT_OK
    if args.connect:
        with transport.connect(
            _parse_address(args.connect), max_inflight=args.max_inflight
        ) as channel:
            keys = keyexchange.run_handshake_peer(channel)
            rows, plans = bench.run_pingpong(
                channel, keys, sizes, args.mode, profile, args.reps, args.paper_reps
            )
    else:
        rows, plans = bench.run_pingpong_loopback(
            sizes, args.mode, profile, reps=args.reps, paper_reps=args.paper_reps
        )
    _log_plans(plans)
    _emit_rows(rows, args.csv_out)
    return EXIT_OK


def cmd_multipair(args) -> int:
    profile = profiles.get_profile(args.profile)
    rows, plans = bench.run_multipair(
        args.pairs,
        args.size,
        args.mode,
        profile,
        rounds=args.reps or 2,
        paper_reps=args.paper_reps,
    )
    for pair_index, pair_plans in enumerate(plans):
        ks = [p.k if p else 0 for p in pair_plans]
        if ks:
            print(f"# pair {pair_index} plan k sequence: {ks}", file=sys.stderr)
    _emit_rows(rows, args.csv_out)
    return EXIT_OK


def cmd_encbench(args) -> int:
    rows = bench.run_encbench(
        args.sizes or [args.size], args.lanes, args.reps, args.paper_reps
    )
    _emit_rows(rows, args.csv_out)
    return EXIT_OK


def cmd_fit(args) -> int:
    rows = perfmodel.load_samples_csv(args.csv_in)
    if args.kind == "hockney":
        fitted = perfmodel.fit_hockney_profile(
            perfmodel.hockney_samples(rows), args.eager_threshold
        )
        for regime, params in fitted.items():
            print(f"[comm.{regime}]")
            print(f"alpha_us = {params.alpha_comm!r}")
            print(f"beta_us_per_byte = {params.beta_comm!r}")
            print(f"eager_threshold = {params.eager_threshold}")
            print()
    else:
        fitted = perfmodel.fit_maxrate(perfmodel.maxrate_samples(rows))
        for tier, params in fitted.items():
            print(f"[enc.{tier}]")
            print(f"alpha_us = {params.alpha_enc!r}")
            print(f"a_rate = {params.a_rate!r}")
            print(f"b_rate = {params.b_rate!r}")
            print()
    return EXIT_OK


def cmd_predict(args) -> int:
    profile = profiles.get_profile(args.profile)
    value = perfmodel.t_total(args.size, args.k, args.t, profile.require_perf())
    print(f"{value:.6f}")
    return EXIT_OK


def cmd_tune(args) -> int:
    profile = profiles.get_profile(args.profile)
    plan = tuner.plan_message(args.size, profile.system, args.live)
    print(
        f"k={plan.k} t={plan.t} seg_size={plan.seg_size} eff_threads={plan.eff_threads}"
    )
    return EXIT_OK


def cmd_handshake_demo(args) -> int:
    listener = transport.listen(("127.0.0.1", 0))
    address = listener.address
    pairings = [None] * args.peers
    failures = []

    def peer(rank: int):
        try:
            with transport.connect(address) as channel:
                pairings[rank] = keyexchange.run_handshake_peer(channel, timeout=args.timeout)
        except Exception as exc:
            failures.append(exc)

    workers = [threading.Thread(target=peer, args=(rank,)) for rank in range(args.peers)]
    for w in workers:
        w.start()
    channels = [listener.accept(timeout=args.timeout) for _ in range(args.peers)]
    coordinator_pairing = keyexchange.run_handshake_coordinator(channels, timeout=args.timeout)
    for w in workers:
        w.join()
    for ch in channels:
        ch.close()
    listener.close()
    if failures:
        raise failures[0]

    all_match = all(p == coordinator_pairing for p in pairings)
    print(f"peers={args.peers} identical_keys={all_match}")

    # one encrypted round trip between two participants proves the keys work
    keys = pairings[0]
    a, b = transport.channel_pair()
    msg = b"post-handshake ping" * 64
    echo = threading.Thread(
        target=lambda: send_message(b, keys, recv_pipelined(b, keys)), daemon=True
    )
    echo.start()
    send_message(a, keys, msg)
    ok = recv_pipelined(a, keys) == msg
    echo.join(timeout=10)
    a.close()
    b.close()
    print(f"encrypted_roundtrip={ok}")
    return EXIT_OK if (all_match and ok) else 1


def cmd_attack_demo(args) -> int:
    results = adversary.forgery_demo()
    print(f"shared-key receiver accepted forgery: {results['shared']['accepted']}")
    print(
        "separated-key receiver rejected forgery: "
        f"{not results['separated']['accepted']} "
        f"(error={results['separated']['error']})"
    )
    if results["separated"]["accepted"]:
        print("UNEXPECTED: forgery accepted despite key separation", file=sys.stderr)
        return EXIT_SECURITY
    if not results["shared"]["accepted"]:
        print("demo broken: forgery failed against the shared-key receiver", file=sys.stderr)
        return 1
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chopcrypt-bench",
        description="Benchmarks and tooling for chopped, pipelined authenticated encryption.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_transport=True):
        p.add_argument("--size", type=int, default=4194304, help="message size in bytes")
        p.add_argument("--sizes", type=_parse_ints, default=None, help="comma-separated sizes")
        p.add_argument("--mode", choices=bench.MODES, default="chopped")
        p.add_argument("--profile", default="reference-cluster")
        p.add_argument("--reps", type=int, default=None, help="repetitions per run")
        p.add_argument("--paper-reps", action="store_true", help="full-scale repetition counts")
        p.add_argument("--csv-out", default=None)
        if with_transport:
            p.add_argument("--bind", default=None, help="host:port to serve on")
            p.add_argument("--connect", default=None, help="host:port to connect to")
            p.add_argument("--max-inflight", type=int, default=transport.DEFAULT_MAX_INFLIGHT)

    p = sub.add_parser("pingpong", help="round-trip latency/throughput")
    add_common(p)
    p.set_defaults(fn=cmd_pingpong)

    p = sub.add_parser("multipair", help="windowed multi-pair bandwidth")
    add_common(p, with_transport=False)
    p.add_argument("--pairs", type=int, default=1)
    p.set_defaults(fn=cmd_multipair)

    p = sub.add_parser("encbench", help="multi-lane encryption throughput")
    add_common(p, with_transport=False)
    p.add_argument("--lanes", type=_parse_ints, default=[1, 2, 4, 8])
    p.set_defaults(fn=cmd_encbench)

    p = sub.add_parser("fit", help="fit model parameters from a benchmark CSV")
    p.add_argument("--csv-in", required=True)
    p.add_argument("--kind", choices=("hockney", "maxrate"), required=True)
    p.add_argument("--eager-threshold", type=int, default=perfmodel.DEFAULT_EAGER_THRESHOLD)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("predict", help="model round-trip time for (size, k, t)")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--profile", default="reference-cluster")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("tune", help="pick (k, t, threads) for a message size")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--profile", default="reference-cluster")
    p.add_argument("--live", type=int, default=0, help="outstanding sends right now")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("handshake-demo", help="coordinator key distribution over loopback")
    p.add_argument("--peers", type=int, default=4)
    p.add_argument("--timeout", type=float, default=keyexchange.HANDSHAKE_TIMEOUT)
    p.set_defaults(fn=cmd_handshake_demo)

    p = sub.add_parser("attack-demo", help="key-separation forgery demonstration")
    p.set_defaults(fn=cmd_attack_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FitError, PolicyError, PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT_POLICY
    except (TransportError, HandshakeTimeout) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ChopCryptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
