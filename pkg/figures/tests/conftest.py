import json

import numpy as np
import pytest


def write_artifact(path, schema, meta, columns):
    """Write a CSV in the simulation package's artifact format."""
    names = list(columns)
    if schema == "roughsim-timeseries-1":
        col_field = {n: "" for n in names}
    else:
        col_field = names
    header = json.dumps(
        {"columns": col_field, "meta": meta, "schema": schema}, sort_keys=True
    )
    rows = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    lines = [f"# {header}", ",".join(names)]
    for row in rows:
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def fake_evolution(path, g, chi, lx=8, ly=8, n=9):
    t = np.linspace(0.0, 2.0, n)
    decay = np.exp(-g * t)
    cols = {
        "t": t,
        "imbalance": decay,
        "D": lx + t,
        "D_x": lx + 0.1 * t,
        "K": 0.9 * decay + 0.05,
        "K_bulk": np.full(n, 0.95),
        "K_M": (0.9 * decay + 0.05) / 0.95,
        "entropy_root": 0.2 * t,
        "energy": np.full(n, -2.0 * lx * ly / 2),
        "norm": np.ones(n),
    }
    meta = {"kind": "evolve-2d", "g": g, "chi": chi, "lx": lx, "ly": ly,
            "dt": 0.25, "j": 1.0}
    return write_artifact(path, "roughsim-timeseries-1", meta, cols)


def fake_chain(path, g, chi, lx=8, n=9):
    t = np.linspace(0.0, 2.0, n)
    cols = {
        "t": t,
        "K": 0.9 * np.exp(-g * t) + 0.08,
        "roughness": 0.3 * t,
        "entropy_root": 0.1 * t,
        "energy": np.zeros(n),
        "norm": np.ones(n),
    }
    meta = {"kind": "evolve-sos", "g": g, "chi": chi, "lx": lx, "n_max": 4,
            "dt": 0.25, "j": 1.0}
    return write_artifact(path, "roughsim-timeseries-1", meta, cols)


def fake_gs_scan(path):
    g = np.tile([0.8, 1.0, 1.2, 1.4], 2)
    n_max = np.repeat([4.0, 6.0], 4)
    k = np.concatenate([[0.9, 0.8, 0.7, 0.65], [0.92, 0.78, 0.55, 0.45]])
    n = g.size
    cols = {
        "g": g,
        "n_max": n_max,
        "energy": -1.0 - 0.5 * g,
        "K": k,
        "xi": np.full(n, 3.0),
        "xi_residual": np.full(n, 1e-3),
        "converged": np.ones(n),
        "max_truncation": np.full(n, 1e-9),
        "dE_dg": np.full(n, -0.5),
        "d2E_dg2": np.zeros(n),
    }
    meta = {"lx": 64, "chi": 48, "j": 1.0}
    return write_artifact(path, "roughsim-scan-1", meta, cols)


def fake_classical_scan(path):
    sizes, temps = [500.0, 2000.0], [0.1, 0.2, 0.3, 0.4]
    rows = {n: [] for n in ("lx", "T", "q", "m", "alpha", "K_exact",
                            "K_asymptotic", "T_R_numeric", "T_R_analytic")}
    for i, lx in enumerate(sizes):
        for t in temps:
            q = float(np.exp(-2.0 / t))
            rows["lx"].append(lx)
            rows["T"].append(t)
            rows["q"].append(q)
            rows["m"].append(200.0)
            rows["alpha"].append(1.0)
            rows["K_exact"].append(float(np.exp(-0.92 * q * lx)))
            rows["K_asymptotic"].append(float(np.exp(-0.9194 * q * lx)))
            rows["T_R_numeric"].append(0.31 - 0.05 * i)
            rows["T_R_analytic"].append(0.308 - 0.05 * i)
    meta = {"alpha": 1.0, "j": 1.0, "m": 200,
            "m_convergence_max_diff": 2.4e-3}
    return write_artifact(path, "roughsim-scan-1", meta, rows)


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    """A directory holding every default artifact the recipes expect."""
    root = tmp_path_factory.mktemp("data")
    fake_evolution(root / "plateau8_g0.5_chi64.csv", g=0.5, chi=64)
    fake_evolution(root / "plateau8hi_g0.5_chi128.csv", g=0.5, chi=128)
    fake_evolution(root / "quench8_g2.5_chi128.csv", g=2.5, chi=128)
    for g, tag in ((0.25, "0.25"), (0.5, "0.5"), (0.75, "0.75")):
        fake_evolution(root / f"kinkratio8_g{tag}_chi64.csv", g=g, chi=64)
        fake_chain(root / f"soskink8_g{tag}_chi64.csv", g=g, chi=64)
    fake_gs_scan(root / "gskink64.csv")
    fake_classical_scan(root / "classical.csv")
    return root
