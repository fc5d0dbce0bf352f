"""
Command-line front end.

Exit codes: 0 success, 1 configuration or CFL error, 2 floor or mean-zero
abort during integration, 3 run completed but its pass criterion failed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from zmlim import __version__
from zmlim.config import ExperimentConfig, dump_config, load_config, parse_config
from zmlim.errors import ConfigError, FloorViolation, NonZeroMean
from zmlim.fields import ScalarField, sobolev_norm, write_snapshot
from zmlim.harness import (
    build_initial_data,
    resonance_average_check,
    run_convergence_sweep,
    stepper_config,
)
from zmlim.integrators import integrate_limit, integrate_scaled

log = logging.getLogger("zmlim")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_FAILED = 0, 1, 2, 3
AVG_TOL = 1e-8


def default_config_text() -> str:
    return resources.files("zmlim").joinpath("data/default.cfg").read_text(encoding="utf-8")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config(default_config_text())
    if args.seed is not None:
        cfg.data.seed = args.seed
    if args.eps_list:
        try:
            cfg.sweep.eps_list = tuple(float(x) for x in args.eps_list.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"bad --eps-list {args.eps_list!r}") from exc
    return cfg.validate()


def write_manifest(out: Path, cfg: ExperimentConfig, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    header = [
        f"zmlim {__version__} run manifest",
        f"command: {command}",
        f"created: {now}",
        f"numpy: {np.__version__}",
        "layout: manifest.cfg, *.csv, snapshots/<field>.snap",
        "re-run with: zmlim " + command + " --config manifest.cfg",
    ]
    (out / "manifest.cfg").write_text(dump_config(cfg, header), encoding="utf-8")


class _SnapshotSink:
    """Appends scalar fields to ``snapshots/<name>.snap`` streams."""

    def __init__(self, out: Path):
        self.dir = out / "snapshots"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.handles = {}

    def write(self, field: ScalarField, t: float) -> None:
        fh = self.handles.get(field.name)
        if fh is None:
            fh = self.handles[field.name] = open(self.dir / f"{field.name}.snap", "wb")
        write_snapshot(fh, field, t)

    def write_vector(self, vec, name: str, t: float) -> None:
        for j, comp in enumerate(vec.components, 1):
            self.write(comp.renamed(f"{name}_{j}"), t)

    def close(self) -> None:
        for fh in self.handles.values():
            fh.close()


def cmd_run_scaled(cfg: ExperimentConfig, out: Path) -> int:
    eps = cfg.run.eps
    state, _, _ = build_initial_data(cfg, eps)
    sink = _SnapshotSink(out)

    def snap(t, st):
        sink.write(st.sigma.renamed("sigma"), t)
        sink.write_vector(st.u, "u", t)
        sink.write(st.T.renamed("T"), t)

    try:
        traj = integrate_scaled(state, stepper_config(cfg), on_snapshot=snap)
    finally:
        sink.close()
    traj.write_diagnostics(out / "diagnostics.csv")
    return EXIT_OK


def _run_limit(cfg: ExperimentConfig, out: Path, which: str) -> int:
    _, slow, osc = build_initial_data(cfg, cfg.run.eps)
    sink = _SnapshotSink(out)
    rows = []
    g = slow.grid
    s = cfg.model.s

    def snap(t, st):
        sl, p = st
        if which == "limit":
            sink.write_vector(sl.v, "v", t)
            sink.write(sl.T.renamed("T"), t)
            sink.write(sl.Pi.renamed("Pi"), t)
            div_v = float(np.max(np.abs(g.ifft(g.div_hat(sl.v.spectrum)))))
            rows.append((t, div_v, sl.T.min(), sobolev_norm(sl.v, s), sobolev_norm(sl.T - sl.T.mean(), s)))
        else:
            sink.write(p.q.renamed("q"), t)
            sink.write(p.phi.renamed("phi"), t)
            rows.append((t, sobolev_norm(p.q, s + 1), sobolev_norm(p.phi, s + 1)))

    try:
        integrate_limit(slow, osc, stepper_config(cfg), heating=cfg.model.oscillation_heating,
                        on_snapshot=snap)
    finally:
        sink.close()
    cols = (("t", "max_div_v", "min_T", "Hs_v", "Hs_T") if which == "limit"
            else ("t", "Hs1_q", "Hs1_phi"))
    _write_rows(out / f"{which}_diagnostics.csv", cols, rows)
    return EXIT_OK


def _write_rows(path: Path, cols, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(format(float(x), ".17g") for x in r) + "\n")


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    res = run_convergence_sweep(cfg)
    res.write_csv(out)
    for k, v in res.slopes.items():
        print(f"{k}: slope {v:.3f} {'pass' if res.passed[k] else 'FAIL'}")
    if not res.all_pass:
        print("sweep: not all rates reached the required slope", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_avg_check(cfg: ExperimentConfig, out: Path) -> int:
    _, slow, osc = build_initial_data(cfg, cfg.run.eps)
    r = resonance_average_check(slow, osc, 64)
    print(f"resonance average residual: {r:.3e}")
    (out / "avg_check.txt").write_text(f"{format(r, '.17g')}\n", encoding="utf-8")
    return EXIT_OK if r <= AVG_TOL else EXIT_FAILED


COMMANDS = {
    "run-scaled": cmd_run_scaled,
    "run-limit": lambda cfg, out: _run_limit(cfg, out, "limit"),
    "run-osc": lambda cfg, out: _run_limit(cfg, out, "osc"),
    "sweep": cmd_sweep,
    "avg-check": cmd_avg_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zmlim", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"zmlim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None,
                        help="config file (default: the shipped default.cfg)")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override data.seed")
        sp.add_argument("--eps-list", type=str, default=None,
                        help='override sweep.eps_list, e.g. "0.1,0.05,0.025"')
    sub.add_parser("print-config", help="print the default configuration")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ZMLIM_LOGLEVEL", "WARNING"),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "print-config":
        sys.stdout.write(default_config_text())
        return EXIT_OK
    out = Path(args.out or os.path.join("zmlim-out", args.command))
    try:
        cfg = _load(args)
        write_manifest(out, cfg, args.command)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"zmlim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloorViolation, NonZeroMean, FloatingPointError) as exc:
        print(f"zmlim: run aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
