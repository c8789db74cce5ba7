"""Configuration files, output artifacts and the ``krmcf`` command line.

Configuration is line oriented ``key = value`` text with ``#`` comments.
Initial data are arithmetic expressions in the grid coordinates ``x, y`` (on
the torus) or ``theta`` (on the sphere, rotationally symmetric data).
"""

import argparse
import ast
import math
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .ambient import ProductKahlerAmbient
from .base_geometry import ConformalSurfaceMetric, normalize_area
from .errors import ParseError, ValidationError
from .flow import SERIES, FlowState, Scenario, run
from .grid import PeriodicGrid
from .immersion import GraphImmersion

REQUIRED = ("base", "r", "grid", "T", "f1", "f2")

_FUNCS = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "sqrt": np.sqrt,
          "log": np.log, "tanh": np.tanh, "cosh": np.cosh, "sinh": np.sinh, "abs": np.abs}
_CONSTS = {"pi": math.pi, "e": math.e}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant, ast.Load,
          ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


@dataclass
class RunConfig:
    """Validated contents of a configuration file (see ``README.md``)."""

    base: str
    r: float
    grid: int
    T: float
    f1: str
    f2: str
    name: str = "scenario"
    u1: str = "0"
    u2: str = "0"
    winding: tuple = (0.0, 0.0, 0.0, 0.0)
    samples: int = 20
    dt_factor: float = 1.0
    method: str = None
    snapshots: int = 0
    seed: int = 0
    perturb: float = 0.0
    probe: str = "off"
    probe_t0: float = None
    probe_radius: float = None
    residual_tol: float = 1e-2
    max_abs_cos_tol: float = None
    min_cos_drop_tol: float = None
    out: str = "out"
    source: str = field(default="<text>", repr=False)


def _check_expression(text, names, line):
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"line {line}: malformed expression {text!r}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ParseError(f"line {line}: unsupported syntax in {text!r}")
        if isinstance(node, ast.Name) and node.id not in names and node.id not in _FUNCS \
                and node.id not in _CONSTS:
            raise ParseError(f"line {line}: unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ParseError(f"line {line}: only elementary functions may be called")
    return text


def evaluate_expression(text, env):
    """Evaluate a validated expression on coordinate arrays."""
    code = compile(ast.parse(text, mode="eval"), "<expr>", "eval")
    ns = dict(_FUNCS)
    ns.update(_CONSTS)
    ns.update(env)
    return np.asarray(eval(code, {"__builtins__": {}}, ns), dtype=float)


def _to_float(key, value, line):
    try:
        x = float(value)
    except ValueError as exc:
        raise ParseError(f"line {line}: {key} expects a number, got {value!r}") from exc
    if not math.isfinite(x):
        raise ValidationError(f"line {line}: {key} must be finite")
    return x


def _to_int(key, value, line):
    try:
        return int(value)
    except ValueError as exc:
        raise ParseError(f"line {line}: {key} expects an integer, got {value!r}") from exc


def parse_config(text, source="<text>"):
    """Parse and validate configuration text into a :class:`RunConfig`.

    Raises
    ------
    ParseError
        Malformed lines, duplicate or unknown keys, bad literals.
    ValidationError
        Values outside their admissible range or missing required keys.
    """
    known = {f.name for f in fields(RunConfig)} - {"source"}
    raw = {}
    where = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if not key or not value:
            raise ParseError(f"line {lineno}: empty key or value")
        if key not in known:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ParseError(f"line {lineno}: duplicate key {key!r} (first on line {where[key]})")
        raw[key] = value
        where[key] = lineno
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ValidationError(f"missing required keys: {', '.join(missing)}")

    vals = {"source": source}
    for key, value in raw.items():
        ln = where[key]
        if key in ("r", "T", "dt_factor", "perturb", "probe_t0", "probe_radius", "residual_tol",
                   "max_abs_cos_tol", "min_cos_drop_tol"):
            vals[key] = _to_float(key, value, ln)
        elif key in ("grid", "samples", "snapshots", "seed"):
            vals[key] = _to_int(key, value, ln)
        elif key == "winding":
            parts = value.split()
            if len(parts) != 4:
                raise ParseError(f"line {ln}: winding expects four numbers")
            vals[key] = tuple(_to_float(key, p, ln) for p in parts)
        else:
            vals[key] = value
    cfg = RunConfig(**vals)
    _validate(cfg, where)
    return cfg


def _validate(cfg, where):
    def fail(key, msg):
        ln = where.get(key)
        raise ValidationError(f"line {ln}: {msg}" if ln else msg)

    if cfg.base not in ("flat", "round"):
        fail("base", "base must be 'flat' or 'round'")
    n = cfg.grid
    if not (16 <= n <= 512 and n & (n - 1) == 0):
        fail("grid", "grid must be even power of two in [16,512]")
    if cfg.T <= 0:
        fail("T", "T must be positive")
    if cfg.r not in (0.0, 2.0):
        fail("r", "r must be 0 or 2")
    if (cfg.base == "flat") != (cfg.r == 0.0):
        fail("r", "r must equal the average scalar curvature: 0 for flat, 2 for round factors")
    if cfg.samples < 2:
        fail("samples", "samples must be at least 2 (t = 0 and t = T)")
    if cfg.snapshots < 0 or cfg.snapshots > cfg.samples:
        fail("snapshots", "snapshots must lie in [0, samples]")
    if cfg.dt_factor <= 0:
        fail("dt_factor", "dt_factor must be positive")
    if cfg.method is None:
        cfg.method = "fd" if cfg.base == "flat" else "spectral"
    if cfg.method not in ("fd", "spectral"):
        fail("method", "method must be 'fd' or 'spectral'")
    if cfg.probe not in ("off", "angle", "gauge", "none"):
        fail("probe", "probe must be one of off, angle, gauge, none")
    if cfg.probe != "off" and (cfg.probe_t0 is None or cfg.probe_t0 <= 0):
        fail("probe_t0", "an enabled probe needs probe_t0 > 0")
    if cfg.perturb < 0:
        fail("perturb", "perturb must be nonnegative")
    if cfg.residual_tol <= 0:
        fail("residual_tol", "residual_tol must be positive")
    names = ("theta",) if cfg.base == "round" else ("x", "y")
    for key in ("u1", "u2", "f1", "f2"):
        _check_expression(getattr(cfg, key), names, where.get(key, 0))


def load_config(path_or_name):
    """Read a configuration file, or a shipped scenario by name."""
    p = Path(path_or_name)
    if not p.exists():
        name = p.name if p.suffix == ".cfg" else p.name + ".cfg"
        ref = resources.files("krmcf").joinpath("scenarios", name)
        if not ref.is_file():
            raise FileNotFoundError(f"no such configuration file or shipped scenario: {path_or_name}")
        return parse_config(ref.read_text(encoding="utf-8"), source=str(name))
    return parse_config(p.read_text(encoding="utf-8"), source=str(p))


def shipped_scenarios():
    """Names of the scenario files bundled with the package."""
    folder = resources.files("krmcf").joinpath("scenarios")
    return sorted(e.name[:-4] for e in folder.iterdir() if e.name.endswith(".cfg"))


# scenario construction -------------------------------------------------------

def _coordinates(grid):
    X, Y = grid.coords()
    return {"theta": X} if grid.is_sphere else {"x": X, "y": Y}


def _field(expr, grid, what):
    env = _coordinates(grid)
    val = np.broadcast_to(evaluate_expression(expr, env), grid.shape).astype(float)
    if not np.all(np.isfinite(val)):
        raise ValidationError(f"{what} = {expr!r} is not finite on the grid")
    return val


def _check_symmetry(expr, grid, parity, what, tol=1e-9):
    """Periodicity on tori; reflection parity about both poles on spheres."""
    env = _coordinates(grid)
    base = evaluate_expression(expr, env)
    scale = 1.0 + float(np.max(np.abs(base)))
    if grid.is_sphere:
        th = env["theta"]
        images = [(evaluate_expression(expr, {"theta": -th}), parity),
                  (evaluate_expression(expr, {"theta": 2 * np.pi - th}), parity)]
        msg = "must be {} under reflection through the poles"
    else:
        x, y = env["x"], env["y"]
        images = [(evaluate_expression(expr, {"x": x + 2 * np.pi, "y": y}), 1.0),
                  (evaluate_expression(expr, {"x": x, "y": y + 2 * np.pi}), 1.0)]
        msg = "must be 2*pi periodic in x and y"
    for img, s in images:
        if np.max(np.abs(img - s * base)) > tol * scale:
            raise ValidationError(f"{what} = {expr!r} " + msg.format("odd" if s < 0 else "even"))


def _perturbation(grid, rng, amplitude, modes=2):
    """Random low-mode trigonometric perturbation with the grid's symmetry."""
    env = _coordinates(grid)
    out = np.zeros(grid.shape)
    if grid.is_sphere:
        for k in range(1, modes + 1):
            out += rng.normal() * np.cos(k * env["theta"])
    else:
        for kx in range(-modes, modes + 1):
            for ky in range(0, modes + 1):
                if ky == 0 and kx <= 0:
                    continue
                ph = kx * env["x"] + ky * env["y"]
                out += rng.normal() * np.cos(ph) + rng.normal() * np.sin(ph)
    peak = np.max(np.abs(out))
    return amplitude * out / peak if peak > 0 else out


def initial_state(cfg, grid_size=None):
    """Initial :class:`FlowState` for ``cfg`` (optionally at another grid size)."""
    n = grid_size or cfg.grid
    make = ConformalSurfaceMetric.flat if cfg.base == "flat" else ConformalSurfaceMetric.round
    kw = {"method": cfg.method}
    probe_metric = make(n, **kw)
    grid = probe_metric.grid
    winding = np.asarray(cfg.winding, dtype=float).reshape(2, 2)
    surf = GraphImmersion.graph(grid, np.zeros((2,) + grid.shape), winding)
    par = surf.component_parity[2:]
    for key, s in (("u1", 1.0), ("u2", 1.0), ("f1", par[0]), ("f2", par[1])):
        _check_symmetry(getattr(cfg, key), grid, s, key)
    u1 = _field(cfg.u1, grid, "u1")
    u2 = _field(cfg.u2, grid, "u2")
    f = np.stack([_field(cfg.f1, grid, "f1"), _field(cfg.f2, grid, "f2")])
    if cfg.perturb > 0:
        rng = np.random.default_rng(cfg.seed)
        for c in range(2):
            if par[c] > 0 or not grid.is_sphere:
                f[c] = f[c] + _perturbation(grid, rng, cfg.perturb)
    m1, m2 = make(n, u=u1, **kw), make(n, u=u2, **kw)
    if cfg.base == "round":
        m1, m2 = normalize_area(m1), normalize_area(m2)
    ambient = ProductKahlerAmbient(m1, m2)
    return FlowState(0.0, ambient, GraphImmersion.graph(grid, f, winding))


def build_scenario(cfg, grid_size=None, keep_states=False):
    """Assemble a :class:`Scenario` (and monotonicity probe) from a config."""
    from .diagnostics import MonotonicityProbe

    state = initial_state(cfg, grid_size)
    probe = None
    if cfg.probe != "off":
        try:
            probe = MonotonicityProbe.at_max_curvature(state, cfg.probe_t0, cfg.probe_radius, cfg.probe)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    return Scenario(cfg.name, state, cfg.T, samples=cfg.samples, dt_factor=cfg.dt_factor,
                    probe=probe, snapshots=cfg.snapshots, keep_states=keep_states)


# output artifacts --------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def write_series(traj, path):
    """Write the sampled series as CSV with 17 significant digits."""
    cols = ["t"] + list(SERIES)
    has_phi = len(traj.phi) > 0
    if has_phi:
        cols.append(f"phi_{traj.phi_weight or 'probe'}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for k, t in enumerate(traj.times):
            row = [t] + [traj.series[c][k] for c in SERIES]
            if has_phi:
                row.append(traj.phi[k])
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def read_series(path):
    """Read a series CSV into a dict of float arrays."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, ndmin=1)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}


def snapshot_name(t):
    return f"snap_{t:.6f}.dat"


def write_snapshot(path, t, fields_):
    """ASCII snapshot: ``#`` header, then one row per grid point (row-major)."""
    names = list(fields_)
    arrs = [np.asarray(fields_[k], dtype=float) for k in names]
    shape = arrs[0].shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# krmcf snapshot\n")
        fh.write(f"# time {_fmt(t)}\n")
        fh.write(f"# shape {shape[0]} {shape[1]}\n")
        fh.write("# fields " + " ".join(names) + "\n")
        table = np.stack([a.reshape(-1) for a in arrs], axis=1)
        for row in table:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(t, {name: array})``."""
    t = shape = names = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            parts = line[1:].split()
            if parts[:1] == ["time"]:
                t = float(parts[1])
            elif parts[:1] == ["shape"]:
                shape = (int(parts[1]), int(parts[2]))
            elif parts[:1] == ["fields"]:
                names = parts[1:]
    if t is None or shape is None or names is None:
        raise ParseError(f"{path}: incomplete snapshot header")
    table = np.loadtxt(path, comments="#", ndmin=2)
    return t, {k: table[:, i].reshape(shape) for i, k in enumerate(names)}


def colormap():
    """Fixed 256-entry blue-green-red ramp, ``uint8`` array of shape (256, 3)."""
    k = np.arange(256)
    return np.stack([k, 255 - np.abs(2 * k - 255), 255 - k], axis=1).astype(np.uint8)


def write_ppm(path, values, width=None):
    """Binary P6 heat map of a 2-D array, rows = first axis.

    Values are mapped linearly from ``[min, max]`` onto :func:`colormap`;
    constant fields map to entry 0.  Single-column fields (rotationally
    symmetric data) are repeated to ``width`` columns.
    """
    a = np.asarray(values, dtype=float)
    if a.shape[1] == 1:
        a = np.repeat(a, width or 2 * a.shape[0], axis=1)
    lo, hi = float(np.min(a)), float(np.max(a))
    idx = np.zeros(a.shape, dtype=int) if hi <= lo else \
        np.clip(((a - lo) / (hi - lo) * 256).astype(int), 0, 255)
    img = colormap()[idx]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path):
    """Read a P6 image written by :func:`write_ppm` as ``(h, w, 3) uint8``."""
    with open(path, "rb") as fh:
        data = fh.read()
    header = data.split(b"\n", 3)
    if header[0] != b"P6":
        raise ParseError(f"{path}: not a binary PPM")
    w, h = (int(s) for s in header[1].split())
    return np.frombuffer(header[3], dtype=np.uint8).reshape(h, w, 3)


def write_outputs(traj, out):
    """Write ``series.csv``, snapshots and heat maps under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_series(traj, out / "series.csv")
    written = [out / "series.csv"]
    for t, flds in traj.snapshots:
        p = out / snapshot_name(t)
        write_snapshot(p, t, flds)
        written.append(p)
        for key in ("cos_alpha", "A2"):
            q = out / f"{key}_{t:.6f}.ppm"
            write_ppm(q, flds[key])
            written.append(q)
    return written


# commands ----------------------------------------------------------------------

EXIT_OK, EXIT_VALIDATION, EXIT_BLOWUP, EXIT_ACCEPTANCE = 0, 2, 3, 4


def _say(msg):
    print(msg, flush=True)


def _override(cfg, snapshots=None, seed=None, out=None):
    changes = {}
    if snapshots is not None:
        changes["snapshots"] = snapshots
    if seed is not None:
        changes["seed"] = seed
    if out is not None:
        changes["out"] = out
    if not changes:
        return cfg
    text = "\n".join(f"{f.name} = {_cfg_value(getattr(cfg, f.name))}"
                     for f in fields(RunConfig)
                     if f.name != "source" and getattr(cfg, f.name) is not None
                     and f.name not in changes)
    text += "\n" + "\n".join(f"{k} = {_cfg_value(v)}" for k, v in changes.items())
    return parse_config(text, source=cfg.source)


def _cfg_value(v):
    if isinstance(v, tuple):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return _fmt(v)
    return str(v)


def _run_exit(traj):
    _say(f"termination: {traj.cause} at t={_fmt(traj.final_time)}"
         + (f" ({traj.message})" if traj.message else ""))
    return EXIT_OK if traj.completed else EXIT_BLOWUP


def cmd_run(cfg, out=None):
    """Integrate the scenario and write the output artifacts."""
    out = Path(out or cfg.out)
    sc = build_scenario(cfg)
    traj = run(sc)
    for p in write_outputs(traj, out):
        _say(f"wrote {p}")
    return _run_exit(traj)


def verify_checks(cfg, traj, residuals):
    """Named pass/fail checks of a verification run: ``[(name, ok, detail)]``."""
    from .diagnostics import inequality_suite

    checks = []
    for rep in residuals:
        checks.append((f"residual {rep.name}", rep.linf <= cfg.residual_tol,
                       f"linf={rep.linf:.3e} tol={cfg.residual_tol:.1e}"))
    worst = {}
    for s in traj.states:
        for key, verdict in inequality_suite(s).items():
            if key not in worst or verdict.worst_margin + verdict.tolerance < \
                    worst[key].worst_margin + worst[key].tolerance:
                worst[key] = verdict
    for key, verdict in worst.items():
        checks.append((f"inequality {key}", verdict.holds,
                       f"worst margin={verdict.worst_margin:.3e} tol={verdict.tolerance:.1e}"))
    if cfg.max_abs_cos_tol is not None:
        m = float(np.max(traj.column("max_abs_cos_alpha")))
        checks.append(("lagrangian preserved", m <= cfg.max_abs_cos_tol,
                       f"max|cos a|={m:.3e} tol={cfg.max_abs_cos_tol:.1e}"))
    if cfg.min_cos_drop_tol is not None:
        c = traj.column("min_cos_alpha")
        drop = float(c[0] - np.min(c))
        checks.append(("symplectic preserved", drop <= cfg.min_cos_drop_tol,
                       f"drop of min cos a={drop:.3e} tol={cfg.min_cos_drop_tol:.1e}"))
    return checks


def cmd_verify(cfg, out=None):
    """Run with residual and inequality checks; exit 4 on any failure."""
    from .diagnostics import residual_suite

    out = Path(out or cfg.out)
    sc = build_scenario(cfg, keep_states=True)
    residuals = residual_suite(sc.initial)
    traj = run(sc)
    write_outputs(traj, out)
    checks = verify_checks(cfg, traj, residuals)
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}: {detail}" for name, ok, detail in checks]
    (out / "verify.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        _say(line)
    code = _run_exit(traj)
    if code != EXIT_OK:
        return code
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_ACCEPTANCE


def convergence_levels(grid, levels):
    """Grid sizes ending at ``grid`` halving downwards, shifted up to stay >= 16."""
    coarsest = max(16, grid >> (levels - 1))
    sizes = [coarsest << k for k in range(levels)]
    if sizes[-1] > 512:
        raise ValidationError("convergence levels exceed the largest grid (512)")
    return sizes


def convergence_table(cfg, levels):
    """Residual reports of every identity at each refinement level."""
    from .diagnostics import residual_suite, with_orders

    by_name = {}
    for n in convergence_levels(cfg.grid, levels):
        for rep in residual_suite(initial_state(cfg, n)):
            by_name.setdefault(rep.name, []).append(rep)
    return {k: with_orders(v) for k, v in by_name.items()}


def cmd_convergence(cfg, levels=3, out=None):
    """Write ``convergence.csv`` with norms and observed orders per identity."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    table = convergence_table(cfg, levels)
    path = out / "convergence.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("identity,grid,dt,linf,l2,order\n")
        for name, reps in table.items():
            for rep in reps:
                order = "" if rep.order is None else _fmt(rep.order)
                fh.write(f"{name},{rep.grid_size},{_fmt(rep.dt)},{_fmt(rep.linf)},"
                         f"{_fmt(rep.l2)},{order}\n")
                _say(f"{name:>8s} n={rep.grid_size:4d} linf={rep.linf:.3e} "
                     f"order={'-' if rep.order is None else format(rep.order, '.2f')}")
    _say(f"wrote {path}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="krmcf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "verify", "convergence"):
        p = sub.add_parser(name)
        p.add_argument("config", help="configuration file or shipped scenario name")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--snapshots", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        if name == "convergence":
            p.add_argument("--levels", type=int, default=3)
    args = parser.parse_args(argv)
    try:
        cfg = _override(load_config(args.config), args.snapshots, args.seed)
        if args.command == "run":
            return cmd_run(cfg, args.out)
        if args.command == "verify":
            return cmd_verify(cfg, args.out)
        if args.levels < 2:
            raise ValidationError("--levels must be at least 2")
        return cmd_convergence(cfg, args.levels, args.out)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"krmcf: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
