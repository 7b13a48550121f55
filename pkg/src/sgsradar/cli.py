"""Command-line harness: synth | solve | spectrum | kkt | experiment.

Exit codes: 0 success, 2 bad configuration or input, 3 iteration cap hit,
4 numeric failure, 5 degenerate estimate.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import music
from .csvio import read_csv, write_csv
from .diagnostics import kkt_residuals
from .scene import (OfdmConfig, PathClass, ReceivedData, Scene, SceneRanges,
                    scene_random, synthesize_received)
from .solver import ALGORITHMS, HISTORY_HEADER, SolverParams, SolverState, SolveStatus

EXIT_OK, EXIT_CONFIG, EXIT_MAX_ITER, EXIT_NUMERIC, EXIT_DEGENERATE = 0, 2, 3, 4, 5

EXIT_FOR_STATUS = {SolveStatus.CONVERGED: EXIT_OK, SolveStatus.MAX_ITER: EXIT_MAX_ITER,
                   SolveStatus.NUMERIC_FAILURE: EXIT_NUMERIC}

EXPERIMENT_HEADER = ["ber", "mode", "tol_or_step", "algorithm", "seed", "time_s", "eta_max", "obj",
                     "iters", "n_tar", "n_true", "status"]

RECEIVED_HEADER = ["index", "re_r", "im_r", "re_shat", "im_shat", "m", "n"]


class ConfigError(Exception):
    pass


# -- configuration ------------------------------------------------------------

def load_config(path: str | Path) -> dict:
    """Read a JSON config; the bare name ``desk`` selects the bundled desk-scale file."""
    try:
        if str(path) == "desk":
            text = resources.files("sgsradar").joinpath("configs/desk.json").read_text()
        else:
            text = Path(path).read_text()
        cfg = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return cfg


def scene_from_config(cfg: dict, seed: int | None = None) -> tuple[Scene, OfdmConfig]:
    """Build a scene from ``{"ofdm": ..., "scene": ...}``.

    ``scene`` either lists explicit ``paths`` or gives ``n_targets`` and
    ``n_clutter`` for random placement.
    """
    try:
        ofdm = OfdmConfig.from_dict(cfg["ofdm"])
        sc = dict(cfg.get("scene", {}))
        if seed is not None:
            sc["seed"] = seed
        if "paths" in sc:
            sc.setdefault("rng_seed", sc.pop("seed", 0))
            sc.setdefault("noise_sigma", 0.0)
            sc.setdefault("ber", 0.0)
            return Scene.from_dict(sc), ofdm
        scene = scene_random(int(sc.get("n_targets", 3)), int(sc.get("n_clutter", 0)), ofdm,
                             rng=int(sc.get("seed", 0)), ranges=SceneRanges.from_dict(sc.get("ranges", {})),
                             noise_sigma=float(sc.get("noise_sigma", 0.0)), ber=float(sc.get("ber", 0.0)))
        return scene, ofdm
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scene config: {exc!r}") from exc


def solver_params(cfg: dict, tol: float | None = None, steps: int | None = None) -> SolverParams:
    try:
        d = dict(cfg.get("solver", {}))
        if tol is not None:
            d["tol"] = tol
        if steps is not None:
            d["fixed_steps"] = steps
        return SolverParams.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver config: {exc}") from exc


def music_params(cfg: dict) -> music.MusicParams:
    try:
        return music.MusicParams.from_dict(cfg.get("music", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid music config: {exc}") from exc


def _algorithm(name: str) -> str:
    return "sgs_admm" if name in ("sgs", "sgs_admm") else name


# -- file formats ---------------------------------------------------------------

def write_received(out: Path, data: ReceivedData, config: Any = None, seed: Any = None) -> None:
    M = data.M
    rows = ([k, data.r[k].real, data.r[k].imag, data.s_hat[k].real, data.s_hat[k].imag, k % M, k // M]
            for k in range(data.r.size))
    write_csv(out, RECEIVED_HEADER, rows, config, seed)


def read_received(path: Path) -> ReceivedData:
    header, rows = read_csv(path)
    if header != RECEIVED_HEADER:
        raise ConfigError(f"{path} is not a received-data CSV")
    a = np.array(rows, dtype=float)
    M, N = int(a[:, 5].max()) + 1, int(a[:, 6].max()) + 1
    return ReceivedData(r=a[:, 1] + 1j * a[:, 2], s_hat=a[:, 3] + 1j * a[:, 4], M=M, N=N)


def _truth_doc(scene: Scene, ofdm: OfdmConfig, data: ReceivedData) -> dict:
    return {"ofdm": ofdm.to_dict(), "scene": scene.to_dict(),
            "normalized": [{"phi": p.phi, "psi": p.psi, "alpha": [p.alpha.real, p.alpha.imag],
                            "class": p.kind.value} for p in data.truth.paths]}


def save_state(path: Path, state: SolverState, data: ReceivedData, ofdm: OfdmConfig, meta: dict) -> None:
    np.savez(path, e=state.e, g=state.g, z=state.z, eps=state.eps, U=state.U, Theta=state.Theta,
             beta=state.beta, Gamma=state.Gamma, r=data.r, s_hat=data.s_hat,
             ofdm=json.dumps(ofdm.to_dict()), meta=json.dumps(meta))


def load_state(path: Path) -> tuple[SolverState, ReceivedData, OfdmConfig, dict]:
    try:
        with np.load(path) as f:
            state = SolverState(e=f["e"], g=f["g"], z=f["z"], eps=float(f["eps"]), U=f["U"],
                                Theta=f["Theta"], beta=f["beta"], Gamma=f["Gamma"])
            ofdm = OfdmConfig.from_dict(json.loads(str(f["ofdm"])))
            data = ReceivedData(r=f["r"], s_hat=f["s_hat"], M=ofdm.M, N=ofdm.N)
            meta = json.loads(str(f["meta"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read solution {path}: {exc}") from exc
    return state, data, ofdm, meta


def _resolve(path: str, name: str) -> Path:
    p = Path(path)
    return p / name if p.is_dir() else p


# -- commands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    scene, ofdm = scene_from_config(cfg, args.seed)
    data = synthesize_received(scene, ofdm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_received(out / "received.csv", data, cfg, scene.rng_seed)
    (out / "truth.json").write_text(json.dumps(_truth_doc(scene, ofdm, data), indent=2, sort_keys=True) + "\n")
    counts = ", ".join(f"{scene.count(k)} {k.value}" for k in PathClass)
    print(f"scene: {len(scene.paths)} paths ({counts}); M={ofdm.M} N={ofdm.N} ber={scene.ber} seed={scene.rng_seed}")
    return EXIT_OK


def _data_and_ofdm(data_path: str, cfg: dict) -> tuple[ReceivedData, OfdmConfig]:
    received = _resolve(data_path, "received.csv")
    if not received.exists():
        raise ConfigError(f"missing data file {received}")
    data = read_received(received)
    truth = received.parent / "truth.json"
    if "ofdm" in cfg:
        ofdm = OfdmConfig.from_dict(cfg["ofdm"])
    elif truth.exists():
        ofdm = OfdmConfig.from_dict(json.loads(truth.read_text())["ofdm"])
    else:
        ofdm = OfdmConfig(data.M, data.N)
    if (ofdm.M, ofdm.N) != data.dims:
        raise ConfigError(f"config dims {(ofdm.M, ofdm.N)} disagree with data dims {data.dims}")
    return data, ofdm


def cmd_solve(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    params = solver_params(cfg, args.tol, args.steps)
    data, ofdm = _data_and_ofdm(args.data, cfg)
    name = _algorithm(args.algorithm)
    sol = ALGORITHMS[name](data, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "history.csv", HISTORY_HEADER, sol.history_rows(), params.to_dict(), None)
    meta = {"algorithm": name, "status": sol.status.value, "iterations": sol.iterations,
            "params": params.to_dict()}
    save_state(out / "state.npz", sol.state, data, ofdm, meta)
    eta = sol.final.eta_max if sol.final else float("nan")
    print(f"{name}: {sol.status.value} after {sol.iterations} iterations, eta_max={eta:.3e}")
    if args.steps is not None and sol.status is SolveStatus.MAX_ITER:
        return EXIT_OK  # the requested step count was the goal
    return EXIT_FOR_STATUS[sol.status]


def cmd_spectrum(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    mp = music_params(cfg)
    state, data, ofdm, meta = load_state(_resolve(args.solution, "state.npz"))
    try:
        z_fit = music.debiased_response(data.r, data.s_hat, state.e)
        report = music.estimate_paths(state.U, z_fit, ofdm, mp, keep_spectrum=True)
    except music.DegenerateEstimate as exc:
        print(f"degenerate estimate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    music.write_spectrum_csv(out / "spectrum.csv", report.spectrum, mp.to_dict())
    music.write_range_velocity_csv(out / "range_velocity.csv", report.spectrum, ofdm, mp.to_dict())
    write_csv(out / "peaks.csv", music.PEAK_HEADER, music.peak_rows(report, ofdm), mp.to_dict())
    print(f"model order {report.model_order}: {report.k_hat} peaks, {report.n_tar} targets")
    return EXIT_OK


def cmd_kkt(args) -> int:
    state, data, ofdm, meta = load_state(_resolve(args.solution, "state.npz"))
    params = SolverParams.from_dict(meta.get("params", {}))
    lam, mu = params.weights(ofdm.M, ofdm.N)
    rows = []
    for variant in ("verbatim", "structured"):
        rep = kkt_residuals(state, data, lam, mu, variant=variant)
        rows.append([variant, *rep.etas, rep.eta_max, rep.objective])
        print(f"{variant:>10}: " + " ".join(f"eta{i + 1}={v:.3e}" for i, v in enumerate(rep.etas))
              + f" eta_max={rep.eta_max:.3e} obj={rep.objective:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "kkt.csv", ["variant", "eta1", "eta2", "eta3", "eta4", "eta5", "eta6", "eta_max", "obj"],
                  rows, params.to_dict())
    return EXIT_OK


# -- experiments -----------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """Grid of (BER, seed, tol or fixed step, algorithm) cells on one scene layout."""

    base: dict
    bers: tuple[float, ...] = (0.0,)
    seeds: tuple[int, ...] = (0,)
    tols: tuple[float, ...] = ()
    steps: tuple[int, ...] = ()
    algorithms: tuple[str, ...] = ("sgs_admm", "admm")
    workers: int = 1
    tables: dict = field(default_factory=lambda: {"steps": "table1.csv", "tol": "table2.csv"})

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("experiment needs at least one algorithm")
        bad = [a for a in self.algorithms if _algorithm(a) not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithms {bad}")
        if any(not 0.0 <= b <= 0.5 for b in self.bers):
            raise ConfigError("BER values must lie in [0, 0.5]")
        if not self.tols and not self.steps:
            raise ConfigError("experiment needs a tol list or a fixed-step list")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        try:
            return cls(base={k: d[k] for k in ("ofdm", "scene", "solver", "music") if k in d},
                       bers=tuple(float(b) for b in d.get("bers", [0.0])),
                       seeds=tuple(int(s) for s in d.get("seeds", [0])),
                       tols=tuple(float(t) for t in d.get("tols", [])),
                       steps=tuple(int(s) for s in d.get("steps", [])),
                       algorithms=tuple(_algorithm(a) for a in d.get("algorithms", ["sgs_admm", "admm"])),
                       workers=int(d.get("workers", 1)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment spec: {exc}") from exc

    def cells(self, mode: str) -> list[tuple]:
        values = self.tols if mode == "tol" else self.steps
        return [(ber, mode, v, alg, seed) for ber in self.bers for v in values
                for alg in self.algorithms for seed in self.seeds]


def run_cell(base: dict, ber: float, mode: str, value: float, algorithm: str, seed: int) -> list:
    """Synthesize, solve, estimate and score one experiment cell.

    Failures are recorded in the ``status`` column instead of raised.
    """
    cfg = {**base, "scene": {**base.get("scene", {}), "ber": ber}}
    scene, ofdm = scene_from_config(cfg, seed)
    data = synthesize_received(scene, ofdm)
    if mode == "tol":
        params = solver_params(cfg, tol=value)
    else:
        params = solver_params(cfg, steps=int(value))
    t0 = time.perf_counter()
    sol = ALGORITHMS[algorithm](data, params)
    elapsed = time.perf_counter() - t0
    status = sol.status.value
    n_tar = 0
    if sol.status is not SolveStatus.NUMERIC_FAILURE:
        try:
            z_fit = music.debiased_response(data.r, data.s_hat, sol.state.e)
            n_tar = music.estimate_paths(sol.state.U, z_fit, ofdm, music_params(cfg)).n_tar
        except music.DegenerateEstimate:
            status = "degenerate_estimate"
    last = sol.final
    eta = last.eta_max if last else float("nan")
    obj = last.obj if last else float("nan")
    return [ber, mode, value, algorithm, seed, elapsed, eta, obj, sol.iterations, n_tar,
            scene.count(PathClass.TARGET), status]


def _run_cell_tuple(args: tuple) -> list:
    return run_cell(*args)


def run_experiment(spec: ExperimentSpec, mode: str) -> list[list]:
    jobs = [(spec.base, *cell) for cell in spec.cells(mode)]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            return list(pool.map(_run_cell_tuple, jobs))
    return [run_cell(*job) for job in jobs]


def cmd_experiment(args) -> int:
    raw = load_config(args.config)
    spec = ExperimentSpec.from_dict(raw)
    if args.workers is not None:
        spec = ExperimentSpec(**{**spec.__dict__, "workers": args.workers})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for mode, values in (("steps", spec.steps), ("tol", spec.tols)):
        if not values:
            continue
        rows = run_experiment(spec, mode)
        path = out / spec.tables[mode]
        write_csv(path, EXPERIMENT_HEADER, rows, raw, list(spec.seeds))
        print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgsradar", description="Delay-Doppler estimation for OFDM passive radar")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate received data and ground truth from a scene config")
    p.add_argument("--config", required=True, help="scene JSON, or 'desk' for the bundled config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the scene seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="run a solver on received data")
    p.add_argument("data", help="directory holding received.csv, or the CSV itself")
    p.add_argument("--config", help="JSON with optional 'solver' and 'ofdm' sections")
    p.add_argument("--out", required=True)
    p.add_argument("--algorithm", choices=["sgs", "sgs_admm", "admm"], default="sgs")
    p.add_argument("--tol", type=float)
    p.add_argument("--steps", type=int, help="run exactly this many iterations")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("spectrum", help="MUSIC spectrum and classified peaks from a solution")
    p.add_argument("solution", help="directory holding state.npz, or the archive itself")
    p.add_argument("--config", help="JSON with an optional 'music' section")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("kkt", help="print KKT residuals of a solution")
    p.add_argument("solution")
    p.add_argument("--out", help="also write kkt.csv here")
    p.set_defaults(func=cmd_kkt)

    p = sub.add_parser("experiment", help="batch comparison over BER, tolerances and fixed steps")
    p.add_argument("--config", required=True, help="experiment JSON (scene config plus sweep lists)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, help="worker processes (overrides the experiment file)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
