"""Named profiles bundling tuner facts and fitted model parameters.

Profiles serialize as flat INI text so fitted parameters can round-trip
through files. Built-ins: "reference-cluster" (the measured 32-hyperthread
InfiniBand host whose tables ship with this package, alias "noleland"),
"bridges" (tuner tables only), and "local" (this machine, no fitted model).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace

from .errors import PolicyError
from .perfmodel import (
    DEFAULT_EAGER_THRESHOLD,
    REGIMES,
    TIERS,
    CommParams,
    EncParams,
    PerfParams,
)
from .tuner import (
    BRIDGES_T_TABLE,
    NOLELAND_T_TABLE,
    SystemProfile,
    bridges_profile,
    local_profile,
    noleland_profile,
)


@dataclass(frozen=True)
class Profile:
    name: str
    system: SystemProfile
    perf: "PerfParams | None" = None

    def require_perf(self) -> PerfParams:
        if self.perf is None:
            raise PolicyError(f"profile {self.name!r} carries no fitted model parameters")
        return self.perf


REFERENCE_PERF = PerfParams(
    comm={
        "eager": CommParams(5.54, 7.29e-5, "eager"),
        "rendezvous": CommParams(5.75, 7.86e-5, "rendezvous"),
    },
    enc={
        "small": EncParams(4.278, 5265.0, 843.0, "small"),
        "moderate": EncParams(4.643, 6072.0, 4106.0, "moderate"),
        "large": EncParams(5.07, 5893.0, 5769.0, "large"),
    },
    name="reference-cluster",
)


def _builtin(name: str) -> Profile:
    key = name.lower()
    if key in ("reference-cluster", "paper-tables", "noleland"):
        return Profile(key, noleland_profile(), REFERENCE_PERF)
    if key == "bridges":
        return Profile("bridges", bridges_profile(), None)
    if key == "local":
        return Profile("local", local_profile(), None)
    raise PolicyError(f"unknown builtin profile {name!r}")


BUILTIN_NAMES = ("reference-cluster", "noleland", "bridges", "local")


def get_profile(name_or_path: str) -> Profile:
    """Resolve a builtin profile name, else load the argument as an INI path."""
    try:
        return _builtin(name_or_path)
    except PolicyError:
        pass
    try:
        return load_profile(name_or_path)
    except OSError as exc:
        raise PolicyError(f"no builtin or readable profile {name_or_path!r}: {exc}") from exc


def with_ranks(profile: Profile, ranks_per_node: int) -> Profile:
    return replace(profile, system=replace(profile.system, ranks_per_node=ranks_per_node))


def _encode_t_table(table) -> str:
    return ",".join(f"{floor}:{t}" for floor, t in table)


def _decode_t_table(text: str) -> tuple:
    entries = []
    for item in text.split(","):
        floor, t = item.strip().split(":")
        entries.append((int(floor), int(t)))
    return tuple(entries)


def dump_profile(profile: Profile) -> str:
    cp = configparser.ConfigParser()
    cp["profile"] = {"name": profile.name}
    sys_p = profile.system
    cp["system"] = {
        "name": sys_p.name,
        "total_hyperthreads": str(sys_p.total_hyperthreads),
        "ranks_per_node": str(sys_p.ranks_per_node),
        "comm_reserved": str(sys_p.comm_reserved),
        "t_table": _encode_t_table(sys_p.t_table),
        "chunk_divisor_kib": str(sys_p.chunk_divisor_kib),
        "outstanding_cap": str(sys_p.outstanding_cap),
        "max_inflight": str(sys_p.max_inflight),
    }
    if profile.perf is not None:
        for regime in REGIMES:
            row = profile.perf.comm[regime]
            cp[f"comm.{regime}"] = {
                "alpha_us": repr(row.alpha_comm),
                "beta_us_per_byte": repr(row.beta_comm),
                "eager_threshold": str(row.eager_threshold),
            }
        for tier in TIERS:
            row = profile.perf.enc[tier]
            cp[f"enc.{tier}"] = {
                "alpha_us": repr(row.alpha_enc),
                "a_rate": repr(row.a_rate),
                "b_rate": repr(row.b_rate),
            }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_profile(text: str) -> Profile:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    name = cp.get("profile", "name", fallback="unnamed")
    sysec = cp["system"]
    system = SystemProfile(
        name=sysec.get("name", name),
        total_hyperthreads=sysec.getint("total_hyperthreads"),
        ranks_per_node=sysec.getint("ranks_per_node", 1),
        comm_reserved=sysec.getint("comm_reserved", 2),
        t_table=_decode_t_table(sysec.get("t_table", _encode_t_table(NOLELAND_T_TABLE))),
        chunk_divisor_kib=sysec.getint("chunk_divisor_kib", 512),
        outstanding_cap=sysec.getint("outstanding_cap", 64),
        max_inflight=sysec.getint("max_inflight", 128),
    )
    perf = None
    if all(cp.has_section(f"comm.{r}") for r in REGIMES) and all(
        cp.has_section(f"enc.{t}") for t in TIERS
    ):
        comm = {}
        for regime in REGIMES:
            sec = cp[f"comm.{regime}"]
            comm[regime] = CommParams(
                sec.getfloat("alpha_us"),
                sec.getfloat("beta_us_per_byte"),
                regime,
                sec.getint("eager_threshold", DEFAULT_EAGER_THRESHOLD),
            )
        enc = {}
        for tier in TIERS:
            sec = cp[f"enc.{tier}"]
            enc[tier] = EncParams(
                sec.getfloat("alpha_us"), sec.getfloat("a_rate"), sec.getfloat("b_rate"), tier
            )
        perf = PerfParams(comm, enc, name)
    return Profile(name, system, perf)


def load_profile(path) -> Profile:
    with open(path) as fh:
        return parse_profile(fh.read())


def save_profile(profile: Profile, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_profile(profile))


__all__ = [
    "Profile",
    "REFERENCE_PERF",
    "BUILTIN_NAMES",
    "BRIDGES_T_TABLE",
    "NOLELAND_T_TABLE",
    "get_profile",
    "with_ranks",
    "dump_profile",
    "parse_profile",
    "load_profile",
    "save_profile",
]
