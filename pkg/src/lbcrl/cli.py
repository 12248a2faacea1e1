"""Command-line harness: ``run``, ``gen-env`` and ``verify``.

Run configs use the same ``key=value`` format as env spec files. Keys:

    algorithm   end_to_end_fqi | end_to_end_ocp | fqi | ocp | spanner_only | subspace_only
    env         path to an env spec file (relative to the config file), or
    env.<key>   inline env spec fields, e.g. ``env.kind=hidden_subspace``
    env_per_seed  true -> each run seed also replaces the env seed
    eps, delta, mode, scale, c0, c1, c2, T, lam, n_phase2
    seeds       comma-separated list
    out_dir     output directory
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import statistics
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import EnvSpec, LinearReward, make_env, truncate_features, verify_lbc
from .fqi import fqi
from .ocp import ocp_run
from .pipeline import (
    Knobs,
    compute_spanner_fqi,
    end_to_end_fqi,
    end_to_end_ocp,
    schedule,
    suboptimality,
)
from .rollout import RngStream
from .subspace_cover import subspace_cover

ALGORITHMS = ("end_to_end_fqi", "end_to_end_ocp", "fqi", "ocp", "spanner_only", "subspace_only")
CSV_HEADER = ["seed", "suboptimality", "wall_time_ms", "phase1_dims"]
LBC_TOL = 1e-8
SIG_DIGITS = 12


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    env: EnvSpec
    algorithm: str = "end_to_end_fqi"
    eps: float = 0.15
    delta: float = 0.1
    knobs: Knobs = field(default_factory=Knobs)
    seeds: list = field(default_factory=lambda: [0])
    out_dir: Path = Path("runs")
    env_per_seed: bool = False

    def validate(self) -> "RunConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for s in self.seeds:
            if not 0 <= s < 2**64:
                raise ConfigError(f"seed {s} is not a 64-bit unsigned integer")
        if not 0 < self.eps < 1 or not 0 < self.delta < 1:
            raise ConfigError("eps and delta must lie in (0, 1)")
        if self.knobs.mode not in ("theory", "practical") or not 0 < self.knobs.scale <= 1:
            raise ConfigError("mode must be theory|practical and scale in (0, 1]")
        return self


_KNOB_TYPES = {f.name: f.type for f in dataclasses.fields(Knobs)}


def _parse_bool(val: str) -> bool:
    low = val.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValueError(val)


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    env_lines, env_path = [], None
    top: dict = {}
    knobs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key.startswith("env."):
                env_lines.append(f"{key[4:]}={val}")
            elif key == "env":
                env_path = base_dir / val
            elif key == "algorithm":
                top[key] = val
            elif key in ("eps", "delta"):
                top[key] = float(val)
            elif key == "seeds":
                top[key] = [int(s) for s in val.split(",") if s.strip()]
            elif key == "out_dir":
                top[key] = base_dir / val
            elif key == "env_per_seed":
                top[key] = _parse_bool(val)
            elif key in _KNOB_TYPES:
                kind = _KNOB_TYPES[key]
                if key == "n_phase2":
                    knobs[key] = None if val.lower() == "none" else int(val)
                else:
                    knobs[key] = val if kind == "str" else int(val) if kind == "int" else float(val)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    if (env_path is None) == (not env_lines):
        raise ConfigError("give exactly one of 'env=<path>' or inline 'env.<key>=' lines")
    try:
        env = EnvSpec.read(env_path) if env_path is not None else EnvSpec.from_text("\n".join(env_lines))
    except OSError as exc:
        raise ConfigError(f"cannot read env spec: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad env spec: {exc}") from exc
    return RunConfig(env=env, knobs=Knobs(**knobs), **top).validate()


# ---------------------------------------------------------------------------
# Report formatting
# ---------------------------------------------------------------------------


def _round(x):
    if isinstance(x, dict):
        return {str(k): _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, np.ndarray):
        return _round(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.{SIG_DIGITS}g}")
    if isinstance(x, Path):
        return str(x)
    return x


def format_report(report: dict) -> str:
    """Deterministic JSON: sorted keys, floats at 12 significant digits."""
    return json.dumps(_round(report), sort_keys=True, indent=2) + "\n"


def _fmt(x: float) -> str:
    return f"{x:.{SIG_DIGITS}g}"


# ---------------------------------------------------------------------------
# Algorithms
# ---------------------------------------------------------------------------


def run_one(cfg: RunConfig, seed: int, record_time: bool = False) -> dict:
    spec = replace(cfg.env, seed=seed) if cfg.env_per_seed else cfg.env
    mdp = make_env(spec)
    rng = RngStream(seed).generator()
    knobs = cfg.knobs
    if cfg.algorithm == "end_to_end_fqi":
        return end_to_end_fqi(mdp, cfg.eps, cfg.delta, knobs, rng, seed=seed, record_time=record_time)[1]
    if cfg.algorithm == "end_to_end_ocp":
        return end_to_end_ocp(mdp, cfg.eps, cfg.delta, knobs, rng, seed=seed, record_time=record_time)[1]

    start = time.perf_counter()
    sched = schedule(cfg.eps, cfg.delta, mdp.d, mdp.H, knobs.mode, knobs.scale, knobs.c1)
    true_reward = LinearReward(mdp.reward_params)
    phase1 = {"dims": None, "psi_sizes": None, "spanner_iterations": None, "oracle_calls": None}
    sub = None
    if cfg.algorithm == "ocp":
        pi = ocp_run(mdp, true_reward, 1.0, knobs.T, rng)
        sub = suboptimality(mdp, pi)
    elif cfg.algorithm in ("fqi", "spanner_only"):
        out = compute_spanner_fqi(mdp, cfg.eps, cfg.delta, sched, rng)
        phase1 = {
            "dims": [s.dim for s in out.subspaces],
            "psi_sizes": [len(c) for c in out.covers],
            "spanner_iterations": out.diagnostics["spanner_iterations"],
            "oracle_calls": out.diagnostics["oracle_calls"],
        }
        if cfg.algorithm == "fqi":
            pi = fqi(mdp, mdp.H - 1, true_reward, out.covers, sched.n_fqi, rng)
            sub = suboptimality(mdp, pi)
    else:
        covers: list = []
        dims = []
        for h in range(mdp.H):
            res = subspace_cover(mdp, h, covers, cfg.eps, cfg.delta / (4 * mdp.H), sched, rng)
            covers.append(res.policies)
            dims.append(res.subspace.dim)
        phase1["dims"] = dims
        phase1["psi_sizes"] = [len(c) for c in covers]
    elapsed = (time.perf_counter() - start) * 1e3
    return {
        "env_spec": dataclasses.asdict(spec),
        "schedule": sched.to_dict(),
        "knobs": knobs.to_dict(),
        "phase1": phase1,
        "phase2": None,
        "suboptimality_exact": sub,
        "wall_time_ms": elapsed if record_time else None,
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _say(args, *msg):
    if not getattr(args, "quiet", False):
        print(*msg)


def cmd_run(args) -> int:
    try:
        path = Path(args.config)
        cfg = parse_config(path.read_text(), path.parent)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    updates: dict = {}
    knob_updates: dict = {}
    if args.seed:
        updates["seeds"] = list(args.seed)
    if args.out:
        updates["out_dir"] = Path(args.out)
    if args.mode:
        knob_updates["mode"] = args.mode
    if args.scale is not None:
        knob_updates["scale"] = args.scale
    try:
        cfg = replace(cfg, knobs=replace(cfg.knobs, **knob_updates), **updates).validate()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for seed in cfg.seeds:
            t0 = time.perf_counter()
            report = run_one(cfg, seed, record_time=args.record_time)
            wall = (time.perf_counter() - t0) * 1e3
            (out / f"report_seed{seed}.json").write_text(format_report(report))
            rows.append((seed, report["suboptimality_exact"], wall, report["phase1"]["dims"]))
            _say(args, f"seed {seed}: suboptimality={report['suboptimality_exact']}")
        write_csv(out / "summary.csv", rows)
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"error: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def write_csv(path: Path, rows) -> None:
    """Per-seed rows followed by ``mean`` and ``std`` footer rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for seed, sub, wall, dims in rows:
            w.writerow([seed, "" if sub is None else _fmt(sub), _fmt(wall), "" if dims is None else ";".join(map(str, dims))])
        subs = [r[1] for r in rows if r[1] is not None]
        walls = [r[2] for r in rows]

        def agg(fn, xs):
            return _fmt(fn(xs)) if xs else ""

        sd = lambda xs: statistics.stdev(xs) if len(xs) > 1 else 0.0  # noqa: E731
        w.writerow(["mean", agg(statistics.fmean, subs), agg(statistics.fmean, walls), ""])
        w.writerow(["std", agg(sd, subs), agg(sd, walls), ""])


def cmd_gen_env(args) -> int:
    try:
        spec = EnvSpec(
            kind=args.kind,
            d=args.d,
            H=args.H,
            num_states=args.num_states,
            num_actions=args.num_actions,
            seed=args.seed if args.seed else 0,
            reward_noise_scale=args.noise_scale,
            hidden_fraction=args.hidden_fraction,
        ).validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        spec.write(args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 1
    _say(args, f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    try:
        spec = EnvSpec.read(args.env)
    except OSError as exc:
        print(f"error: cannot read env spec: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: bad env spec: {exc}", file=sys.stderr)
        return 2
    try:
        mdp = make_env(spec)
        if args.truncate is not None:
            mdp = truncate_features(mdp, args.truncate)
        resid = verify_lbc(mdp, args.probes, LBC_TOL, RngStream(spec.seed, 1).generator())
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"max_residual={_fmt(resid)}")
    return 0 if resid <= LBC_TOL else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lbcrl", description="Reward-free exploration experiments on deterministic LBC MDPs.")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config over one or more seeds")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, action="append", help="repeatable; overrides the config's seeds")
    r.add_argument("--out", help="output directory; overrides out_dir")
    r.add_argument("--mode", choices=("theory", "practical"))
    r.add_argument("--scale", type=float)
    r.add_argument("--record-time", action="store_true", help="store wall time in the report JSON (breaks byte-identity)")
    r.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen-env", help="write an env spec file")
    g.add_argument("--kind", default="rotated_tabular")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--H", type=int, required=True)
    g.add_argument("--num-states", type=int, required=True)
    g.add_argument("--num-actions", type=int, required=True)
    g.add_argument("--seed", type=int, action="append")
    g.add_argument("--noise-scale", type=float, default=0.5)
    g.add_argument("--hidden-fraction", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gen_env)

    v = sub.add_parser("verify", help="check linear Bellman completeness of an env")
    v.add_argument("env")
    v.add_argument("--probes", type=int, default=20)
    v.add_argument("--truncate", type=int, help="keep only the first K feature coordinates (negative control)")
    v.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "gen-env" and args.seed:
        if len(args.seed) > 1:
            print("error: gen-env takes a single --seed", file=sys.stderr)
            return 2
        args.seed = args.seed[0]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
