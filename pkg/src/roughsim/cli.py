"""Config-driven experiment runner writing CSV artifacts plus a manifest.

Each subcommand maps onto one engine.  Configs are INI files with typed
sections; unknown sections or keys are hard errors so a typo in a grid
never silently burns hours.  Grid points run isolated (optionally in a
process pool) and failures of single points are recorded in the manifest
without aborting their siblings.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .classical import kink_temperature_scan
from .dmrg import fit_bkt, kink_scan
from .exact import (
    hamiltonian_spectrum,
    product_statevector,
    term_sum_matvec,
    temperature_from_spectrum,
)
from .lattice import build_square_lattice, build_tree_layout
from .models import (
    KinkSpec,
    ModelParams,
    SOSParams,
    bulk_decoupled_hamiltonian,
    domain_wall_product_state,
    observable_domain_wall,
    observable_imbalance,
    sos_flat_state,
    sos_hamiltonian,
    sos_roughness_observable,
    tfim_hamiltonian,
)
from .network import mps_product_state, ttn_product_state
from .selftest import run_selftest
from .tdvp import EvolutionRun, evolve
from .tensor_core import TruncationSpec
from .timeseries import (
    EvolutionConfig,
    ScanResult,
    TimeSeries,
    file_sha256,
    read_manifest,
    write_manifest,
)

_REQUIRED = object()

# column order of the documented evolution schema; extras keep their
# natural order after these
_EVOLVE_COLUMNS = (
    "imbalance",
    "D",
    "D_x",
    "K",
    "K_bulk",
    "K_M",
    "roughness",
    "entropy_root",
    "energy",
    "norm",
)


class ConfigError(ValueError):
    """Bad experiment config; message carries section/key diagnostics."""


def _parse_bool(raw: str) -> bool:
    val = raw.strip().lower()
    if val in ("1", "true", "on", "yes"):
        return True
    if val in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_PARSERS = {
    "int": int,
    "float": float,
    "str": lambda s: s.strip(),
    "bool": _parse_bool,
    "floats": lambda s: [float(x) for x in s.split(",") if x.strip()],
    "ints": lambda s: [int(x) for x in s.split(",") if x.strip()],
}

_EVOLUTION_KEYS = {
    "dt": ("float", 0.1),
    "t_max": ("float", 10.0),
    "chi": ("ints", _REQUIRED),
    "krylov_tol": ("float", 1e-10),
    "krylov_m_max": ("int", 40),
    "stride": ("int", 1),
    "svd_cutoff": ("float", 1e-12),
    "pad_noise": ("float", 1e-12),
}

_SCHEMAS: dict[str, dict[str, dict[str, tuple]]] = {
    "evolve-2d": {
        "run": {"kind": ("str", _REQUIRED), "label": ("str", "evolve2d")},
        "model": {
            "lx": ("int", _REQUIRED),
            "ly": ("int", _REQUIRED),
            "g": ("floats", _REQUIRED),
            "j": ("float", 1.0),
        },
        "evolution": _EVOLUTION_KEYS,
        "observables": {
            "kink": ("bool", True),
            "kink_alpha": ("float", 1.0),
            "kink_l": ("int", 0),
            "companion": ("bool", True),
            "entropy": ("bool", True),
        },
    },
    "evolve-sos": {
        "run": {"kind": ("str", _REQUIRED), "label": ("str", "evolvesos")},
        "model": {
            "lx": ("int", _REQUIRED),
            "n_max": ("int", _REQUIRED),
            "g": ("floats", _REQUIRED),
            "j": ("float", 1.0),
        },
        "evolution": _EVOLUTION_KEYS,
        "observables": {
            "kink": ("bool", True),
            "kink_alpha": ("float", 1.0),
            "kink_l": ("int", 0),
            "roughness": ("bool", True),
            "entropy": ("bool", True),
        },
    },
    "gs-scan": {
        "run": {"kind": ("str", _REQUIRED), "label": ("str", "gsscan")},
        "model": {
            "lx": ("int", _REQUIRED),
            "n_max": ("ints", _REQUIRED),
            "g": ("floats", _REQUIRED),
            "j": ("float", 1.0),
        },
        "dmrg": {
            "chi": ("int", 64),
            "max_sweeps": ("int", 16),
            "energy_tol": ("float", 1e-10),
        },
    },
    "classical-scan": {
        "run": {"kind": ("str", _REQUIRED), "label": ("str", "classicalscan")},
        "model": {
            "m": ("int", _REQUIRED),
            "alpha": ("float", 1.0),
            "lx": ("ints", _REQUIRED),
            "j": ("float", 1.0),
        },
        "grid": {"t": ("floats", _REQUIRED)},
    },
    "fit-bkt": {
        "run": {"kind": ("str", _REQUIRED), "label": ("str", "bktfit")},
        "input": {"csv": ("str", _REQUIRED), "n_max": ("int", _REQUIRED)},
        "window": {"g_min": ("float", _REQUIRED), "g_max": ("float", _REQUIRED)},
    },
    "efftemp": {
        "run": {"kind": ("str", _REQUIRED), "label": ("str", "efftemp")},
        "model": {
            "lx": ("int", _REQUIRED),
            "ly": ("int", _REQUIRED),
            "g": ("floats", _REQUIRED),
            "j": ("float", 1.0),
        },
        "solve": {"tol": ("float", 1e-6)},
    },
}

# grid-valued keys that must be non-empty, per command
_GRID_KEYS = {
    "evolve-2d": (("model", "g"), ("evolution", "chi")),
    "evolve-sos": (("model", "g"), ("evolution", "chi")),
    "gs-scan": (("model", "g"), ("model", "n_max")),
    "classical-scan": (("model", "lx"), ("grid", "t")),
    "fit-bkt": (),
    "efftemp": (("model", "g"),),
}


def load_config(path, kind: str) -> dict:
    """Parse and validate an INI config against the schema for `kind`."""
    schema = _SCHEMAS[kind]
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    conf: dict[str, dict] = {}
    for section in parser.sections():
        if section not in schema:
            raise ConfigError(f"[{section}]: unknown section for {kind}")
        conf[section] = {}
        for key, raw in parser[section].items():
            if key not in schema[section]:
                raise ConfigError(f"[{section}] {key}: unknown key for {kind}")
            typ, _ = schema[section][key]
            try:
                conf[section][key] = _PARSERS[typ](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    for section, keys in schema.items():
        sect = conf.setdefault(section, {})
        for key, (typ, default) in keys.items():
            if key not in sect:
                if default is _REQUIRED:
                    raise ConfigError(f"[{section}] {key}: required key missing")
                sect[key] = default
    declared = conf["run"]["kind"]
    if declared != kind:
        raise ConfigError(f"[run] kind: config says {declared!r}, command is {kind!r}")
    for section, key in _GRID_KEYS[kind]:
        if not conf[section][key]:
            raise ConfigError(f"[{section}] {key}: grid must be non-empty")
    return conf


def _ordered_columns(ts: TimeSeries) -> TimeSeries:
    cols = {k: ts.columns[k] for k in _EVOLVE_COLUMNS if k in ts.columns}
    cols.update({k: v for k, v in ts.columns.items() if k not in cols})
    return TimeSeries(ts.times, cols, ts.meta)


def _progress(label: str, t0: float):
    def hook(row: dict):
        keys = [k for k in ("imbalance", "K", "roughness") if k in row]
        shown = " ".join(f"{k}={row[k]:.4f}" for k in keys)
        print(
            f"[{label}] t={row['t']:g} {shown} elapsed={time.time() - t0:.0f}s",
            file=sys.stderr,
            flush=True,
        )

    return hook


def _evolution_config(ev: dict, chi: int) -> EvolutionConfig:
    trunc = TruncationSpec(chi_max=chi, cutoff=ev["svd_cutoff"])
    return EvolutionConfig(
        dt=ev["dt"],
        t_max=ev["t_max"],
        krylov_m_max=ev["krylov_m_max"],
        krylov_tol=ev["krylov_tol"],
        stride=ev["stride"],
        truncation=trunc,
    )


def _kink_spec(obs: dict, full_width: int) -> KinkSpec | None:
    if not obs["kink"]:
        return None
    l = obs["kink_l"] or full_width
    return KinkSpec(alpha=obs["kink_alpha"], l=l)


def run_point(kind: str, conf: dict, g: float, chi: int, out_dir: str) -> dict:
    """Execute one grid point and write its CSV; returns a manifest entry."""
    label = conf["run"]["label"]
    name = f"{label}_g{g:g}_chi{chi}.csv"
    stamp = f"{label} g={g:g} chi={chi}"
    ev, obs_conf = conf["evolution"], conf["observables"]
    cfg = _evolution_config(ev, chi)
    meta = {
        "kind": kind,
        "label": label,
        "g": g,
        "j": conf["model"]["j"],
        "chi": chi,
    }

    if kind == "evolve-2d":
        lx, ly = conf["model"]["lx"], conf["model"]["ly"]
        lat = build_square_lattice(lx, ly)
        params = ModelParams(g=g, j=conf["model"]["j"])
        ham = tfim_hamiltonian(lat, params)
        state = ttn_product_state(
            build_tree_layout(lat),
            domain_wall_product_state(lat),
            cfg.truncation,
            pad_noise=ev["pad_noise"],
        )
        observables = {
            "imbalance": observable_imbalance(lat),
            "D": observable_domain_wall(lat),
            "D_x": observable_domain_wall(lat, "columns_only"),
        }
        kink = _kink_spec(obs_conf, lx)
        companion = None
        if kink is not None and obs_conf["companion"]:
            companion = bulk_decoupled_hamiltonian(lat, params)
        meta.update(lx=lx, ly=ly)
    else:
        params = SOSParams(
            lx=conf["model"]["lx"],
            n_max=conf["model"]["n_max"],
            g=g,
            j=conf["model"]["j"],
        )
        ham = sos_hamiltonian(params)
        state = mps_product_state(
            [params.dim] * params.lx,
            sos_flat_state(params),
            cfg.truncation,
            pad_noise=ev["pad_noise"],
        )
        observables = {}
        if obs_conf["roughness"]:
            observables["roughness"] = sos_roughness_observable(params)
        kink = _kink_spec(obs_conf, params.lx)
        companion = None
        meta.update(lx=params.lx, n_max=params.n_max)

    run = EvolutionRun(
        hamiltonian=ham,
        config=cfg,
        observables=observables,
        kink=kink,
        companion=companion,
        entropy=obs_conf["entropy"],
        on_row=_progress(stamp, time.time()),
        meta=meta,
    )
    ts = _ordered_columns(evolve(state, run))
    path = Path(out_dir) / name
    ts.to_csv(path)
    return {
        "file": name,
        "sha256": file_sha256(path),
        "params": {"g": g, "chi": chi},
    }


def _grid(conf: dict) -> list[tuple[float, int]]:
    return [(g, chi) for g in conf["model"]["g"] for chi in conf["evolution"]["chi"]]


def _completed_from_resume(resume_path, out_dir: Path) -> dict[str, dict]:
    """Entries of a previous manifest whose files still verify."""
    if resume_path is None:
        return {}
    done = {}
    for entry in read_manifest(resume_path).get("outputs", []):
        path = out_dir / entry["file"]
        if path.exists() and file_sha256(path) == entry["sha256"]:
            done[entry["file"]] = entry
    return done


def run_evolve(kind: str, args) -> int:
    conf = load_config(args.config, kind)
    out_dir = Path(os.environ.get("ROUGHSIM_OUT") or args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = conf["run"]["label"]
    points = _grid(conf)
    done = _completed_from_resume(args.resume, out_dir)

    outputs, failures = [], []
    pending = []
    for g, chi in points:
        name = f"{label}_g{g:g}_chi{chi}.csv"
        if name in done:
            print(f"[{label}] skip g={g:g} chi={chi} (resume)", file=sys.stderr)
            outputs.append(done[name])
        else:
            pending.append((g, chi))

    if args.workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futs = {
                pool.submit(run_point, kind, conf, g, chi, str(out_dir)): (g, chi)
                for g, chi in pending
            }
            for fut, (g, chi) in futs.items():
                try:
                    outputs.append(fut.result())
                except Exception as exc:
                    failures.append({"params": {"g": g, "chi": chi}, "error": repr(exc)})
    else:
        for g, chi in pending:
            try:
                outputs.append(run_point(kind, conf, g, chi, str(out_dir)))
            except Exception as exc:
                failures.append({"params": {"g": g, "chi": chi}, "error": repr(exc)})

    outputs.sort(key=lambda e: e["file"])
    echo = {"command": kind, "seed": args.seed, **conf}
    write_manifest(out_dir / f"{label}.manifest.json", echo, outputs, failures)
    for fail in failures:
        print(f"FAILED {fail['params']}: {fail['error']}", file=sys.stderr)
    return 1 if failures else 0


def _scan_progress(label: str, t0: float):
    def hook(row: dict):
        print(
            f"[{label}] g={row['g']:g} n_max={row['n_max']} K={row['K']:.4f}"
            f" elapsed={time.time() - t0:.0f}s",
            file=sys.stderr,
            flush=True,
        )

    return hook


def _run_gs_scan(conf: dict) -> ScanResult:
    model, dm = conf["model"], conf["dmrg"]
    return kink_scan(
        model["lx"],
        model["g"],
        model["n_max"],
        dm["chi"],
        j=model["j"],
        max_sweeps=dm["max_sweeps"],
        energy_tol=dm["energy_tol"],
        progress=_scan_progress(conf["run"]["label"], time.time()),
    )


def _run_classical_scan(conf: dict) -> ScanResult:
    model = conf["model"]
    return kink_temperature_scan(
        model["m"], model["alpha"], model["lx"], conf["grid"]["t"], j=model["j"]
    )


def _run_fit_bkt(conf: dict) -> ScanResult:
    src = conf["input"]["csv"]
    n_max = conf["input"]["n_max"]
    rows = ScanResult.from_csv(src).rows(n_max=n_max)
    if rows["g"].size == 0:
        raise ConfigError(f"[input] n_max: no rows with n_max={n_max} in {src}")
    good = np.isfinite(rows["xi"])
    fit = fit_bkt(
        rows["g"][good],
        rows["xi"][good],
        window=(conf["window"]["g_min"], conf["window"]["g_max"]),
    )
    print(
        f"g_r={fit.g_r:.6f} b={fit.b:.6f} xi_0={fit.xi_0:.6g}"
        f" residual_norm={fit.residual_norm:.3g}",
        flush=True,
    )
    table = {
        "g_r": [fit.g_r],
        "b": [fit.b],
        "xi_0": [fit.xi_0],
        "residual_norm": [fit.residual_norm],
        "window_lo": [fit.window[0]],
        "window_hi": [fit.window[1]],
        "n_max": [n_max],
    }
    meta = {"source": Path(src).name, "n_points": int(fit.g.size)}
    return ScanResult({k: np.asarray(v, dtype=float) for k, v in table.items()}, meta)


def _run_efftemp(conf: dict) -> ScanResult:
    model = conf["model"]
    lat = build_square_lattice(model["lx"], model["ly"])
    dw = domain_wall_product_state(lat)
    v0 = product_statevector([dw[s] for s in range(lat.n_sites)])
    cols: dict[str, list] = {
        k: [] for k in ("g", "e_init", "e_ground", "e_inf", "t_cross")
    }
    for g in sorted(model["g"]):
        ham = tfim_hamiltonian(lat, ModelParams(g=g, j=model["j"]))
        lam = hamiltonian_spectrum(ham)
        e_init = float(np.real(np.vdot(v0, term_sum_matvec(ham)(v0))))
        cols["g"].append(g)
        cols["e_init"].append(e_init)
        cols["e_ground"].append(float(lam.min()))
        cols["e_inf"].append(float(lam.mean()))
        cols["t_cross"].append(
            temperature_from_spectrum(lam, e_init, tol=conf["solve"]["tol"])
        )
    table = {k: np.asarray(v, dtype=float) for k, v in cols.items()}
    return ScanResult(table, {"lx": model["lx"], "ly": model["ly"], "j": model["j"]})


# single-CSV commands; grid points inside a scan warm-start each other,
# so these run in-process regardless of --workers
_TABLE_ENGINES = {
    "gs-scan": _run_gs_scan,
    "classical-scan": _run_classical_scan,
    "fit-bkt": _run_fit_bkt,
    "efftemp": _run_efftemp,
}


def run_table(kind: str, args) -> int:
    conf = load_config(args.config, kind)
    out_dir = Path(os.environ.get("ROUGHSIM_OUT") or args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = conf["run"]["label"]
    name = f"{label}.csv"
    done = _completed_from_resume(args.resume, out_dir)

    outputs, failures = [], []
    if name in done:
        print(f"[{label}] skip (resume)", file=sys.stderr)
        outputs.append(done[name])
    else:
        try:
            scan = _TABLE_ENGINES[kind](conf)
            path = out_dir / name
            scan.to_csv(path)
            outputs.append({"file": name, "sha256": file_sha256(path), "params": {}})
        except ConfigError:
            raise
        except Exception as exc:
            failures.append({"params": {}, "error": repr(exc)})

    echo = {"command": kind, "seed": args.seed, **conf}
    write_manifest(out_dir / f"{label}.manifest.json", echo, outputs, failures)
    for fail in failures:
        print(f"FAILED {fail['params']}: {fail['error']}", file=sys.stderr)
    return 1 if failures else 0


def _add_common(sub):
    sub.add_argument("--config", required=True, help="INI experiment config")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--seed", type=int, default=0, help="reserved; echoed to manifest")
    sub.add_argument("--resume", default=None, help="manifest of a previous run")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="roughsim",
        description="interface-roughening simulations: evolution, scans, fits",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for kind in ("evolve-2d", "evolve-sos", *_TABLE_ENGINES):
        _add_common(subs.add_parser(kind))
    subs.add_parser("selftest", help="run the library invariant checks")
    args = parser.parse_args(argv)
    if args.command == "selftest":
        return 1 if run_selftest() else 0
    try:
        if args.command in _TABLE_ENGINES:
            return run_table(args.command, args)
        return run_evolve(args.command, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
