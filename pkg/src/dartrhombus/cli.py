"""Command-line front end: ``dartrhombus <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .lattice import CELL_BONDS, Activities, Bond, CellCoord, ScattererWeights, build_torus

OUTDIR_ENV = "DARTRHOMBUS_OUTDIR"


class ConfigError(ValueError):
    """A precondition on the run configuration failed."""


@dataclass
class RunConfig:
    z: tuple[float, float, float] = (1.0, 1.0, 1.0)
    torus: tuple[int, int] = (8, 8)
    steps: int = 100
    burn_in: int = 1
    seed: int = 0
    seeds: int = 1
    quad_order: int = 64
    tol: float = 1e-6
    cutoff: int = 6
    kmax: int = 6
    lmax: int = 6
    h: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    x: int = 0
    y: int = 0
    p1: int | None = None
    p2: int | None = None
    bond_a: tuple[int, int] = (1, 2)
    bond_b: tuple[int, int] = (2, 3)
    offset: tuple[int, int] = (0, 0)
    grid: int = 24
    q: tuple = ()
    bits: int = 16
    out: str | None = None
    format: str = "json"


# fields that change results, per command
RELEVANT = {
    "phase": ("z", "tol"),
    "free-energy": ("z", "quad_order", "tol"),
    "densities": ("z", "quad_order"),
    "coupling": ("z", "quad_order", "x", "y", "p1", "p2"),
    "pair": ("z", "quad_order", "bond_a", "bond_b", "offset"),
    "bragg": ("z", "quad_order", "kmax", "lmax", "h"),
    "diffuse": ("z", "quad_order", "cutoff", "h", "grid", "q"),
    "sample": ("z", "torus", "steps", "burn_in", "seed"),
    "diffract": ("z", "torus", "steps", "burn_in", "seed", "seeds", "h", "bits", "quad_order"),
    "oracle": ("z", "torus"),
}


# --------------------------------------------------------------- parsing

def _floats(s: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {len(vals)}")
    return vals


def _ints(s: str, n: int) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} integers, got {len(vals)}")
    return vals


def _complexes(s: str) -> tuple:
    try:
        vals = tuple(complex(v.replace(" ", "")) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 6 comma-separated (complex) strengths, got {s!r}")
    if len(vals) != 6:
        raise argparse.ArgumentTypeError("expected 6 strengths: h_rho1..3, h_sigma1..3")
    return tuple(v.real if v.imag == 0 else v for v in vals)


def _qlist(s: str) -> tuple:
    pts = []
    for item in s.split(";"):
        pts.append(_floats(item, 2))
    return tuple(pts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dartrhombus", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, help: str, *opts: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
        sp.add_argument("--out", help="output file (or prefix for multi-file commands)")
        sp.add_argument("--z", type=lambda s: _floats(s, 3), help="activities z1,z2,z3")
        for o in opts:
            OPTIONS[o](sp)
        return sp

    add("phase", "classify activities as generic or critical", "tol", "format")
    add("free-energy", "free energy per cell", "quad_order", "tol", "format")
    add("densities", "tile densities", "quad_order")
    add("coupling", "inverse Kasteleyn coupling block", "quad_order", "x", "y", "p1", "p2")
    add("pair", "joint occupation probability of two bonds", "quad_order", "bond_a", "bond_b", "offset")
    add("bragg", "Bragg peak table (CSV)", "quad_order", "kmax", "lmax", "h")
    add("diffuse", "diffuse intensity (CSV)", "quad_order", "cutoff", "h", "grid", "q")
    add("sample", "draw a random tiling", "torus", "steps", "burn_in", "seed")
    add("diffract", "seed-averaged FFT diffraction", "torus", "steps", "burn_in", "seed", "seeds",
        "h", "bits", "quad_order")
    add("oracle", "exact enumeration and Pfaffian partition function", "torus")
    return p


OPTIONS = {
    "tol": lambda sp: sp.add_argument("--tol", type=float),
    "format": lambda sp: sp.add_argument("--format", choices=["json", "text"]),
    "quad_order": lambda sp: sp.add_argument("--quad-order", dest="quad_order", type=int),
    "x": lambda sp: sp.add_argument("--x", type=int),
    "y": lambda sp: sp.add_argument("--y", type=int),
    "p1": lambda sp: sp.add_argument("--p1", type=int),
    "p2": lambda sp: sp.add_argument("--p2", type=int),
    "bond_a": lambda sp: sp.add_argument("--bond-a", dest="bond_a", type=lambda s: _ints(s, 2)),
    "bond_b": lambda sp: sp.add_argument("--bond-b", dest="bond_b", type=lambda s: _ints(s, 2)),
    "offset": lambda sp: sp.add_argument("--offset", type=lambda s: _ints(s, 2)),
    "kmax": lambda sp: sp.add_argument("--kmax", type=int),
    "lmax": lambda sp: sp.add_argument("--lmax", type=int),
    "h": lambda sp: sp.add_argument("--h", type=_complexes),
    "cutoff": lambda sp: sp.add_argument("--cutoff", type=int),
    "grid": lambda sp: sp.add_argument("--grid", type=int, help="q points per reciprocal axis"),
    "q": lambda sp: sp.add_argument("--q", type=_qlist, help="explicit points 'qx,qy;qx,qy'"),
    "torus": lambda sp: sp.add_argument("--torus", type=lambda s: _ints(s, 2), help="m,n"),
    "steps": lambda sp: sp.add_argument("--steps", type=int, help="measured sweeps"),
    "burn_in": lambda sp: sp.add_argument("--burn-in", dest="burn_in", type=int),
    "seed": lambda sp: sp.add_argument("--seed", type=int),
    "seeds": lambda sp: sp.add_argument("--seeds", type=int, help="independent chains"),
    "bits": lambda sp: sp.add_argument("--bits", type=int, choices=[8, 16]),
}


def _from_json(d: dict) -> dict:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    out = {}
    for k, v in d.items():
        if k == "h":
            v = tuple(complex(*x) if isinstance(x, list) else x for x in v)
        elif k == "q":
            v = tuple(tuple(x) for x in v)
        elif isinstance(v, list):
            v = tuple(v)
        out[k] = v
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    vals: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                vals.update(_from_json(json.load(fh)))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config file: {err}")
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            vals[f.name] = v
    if "h" in vals:
        vals["h"] = tuple(_strength(v) for v in vals["h"])
    if "z" in vals:
        vals["z"] = tuple(float(v) for v in vals["z"])
    cfg = RunConfig(**vals)
    validate(cfg, args.command)
    return cfg


def _strength(v):
    v = complex(v)
    return v.real if v.imag == 0 else v


def validate(cfg: RunConfig, command: str) -> None:
    z = cfg.z
    if len(z) != 3 or not all(isinstance(v, (int, float)) and math.isfinite(v) and v > 0 for v in z):
        raise ConfigError(f"activities must be three positive finite numbers, got {z}")
    need = RELEVANT[command]
    if "torus" in need and (len(cfg.torus) != 2 or min(cfg.torus) < 2):
        raise ConfigError(f"torus needs m, n >= 2, got {cfg.torus}")
    if "steps" in need and (cfg.steps < 0 or cfg.burn_in < 0):
        raise ConfigError("steps and burn_in must be non-negative")
    if "seeds" in need and cfg.seeds < 1:
        raise ConfigError("seeds must be >= 1")
    if "quad_order" in need and (cfg.quad_order < 4 or cfg.quad_order % 2):
        raise ConfigError("quad_order must be an even integer >= 4")
    if "cutoff" in need and cfg.cutoff < 1:
        raise ConfigError("cutoff must be >= 1")
    if "kmax" in need and (cfg.kmax < 0 or cfg.lmax < 0):
        raise ConfigError("kmax and lmax must be non-negative")
    if "h" in need and len(cfg.h) != 6:
        raise ConfigError("h needs six strengths")
    if "tol" in need and not cfg.tol > 0:
        raise ConfigError("tol must be positive")
    if "grid" in need and cfg.grid < 1:
        raise ConfigError("grid must be >= 1")
    for name in ("p1", "p2"):
        v = getattr(cfg, name)
        if name in need and v is not None and not 1 <= v <= 6:
            raise ConfigError(f"{name} must be a site 1..6")
    if "bond_a" in need:
        for b in (cfg.bond_a, cfg.bond_b):
            _cell_bond(b)


def _cell_bond(pair) -> int:
    for cb in CELL_BONDS:
        if {cb.site1, cb.site2} == set(pair):
            return cb.index
    raise ConfigError(f"({pair[0]},{pair[1]}) is not a cell bond")


# ------------------------------------------------------------- metadata

def _jsonable(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def metadata(cfg: RunConfig, command: str) -> dict:
    rel = {k: _jsonable(getattr(cfg, k)) for k in RELEVANT[command]}
    canon = json.dumps({"command": command, **rel}, sort_keys=True, separators=(",", ":"))
    return {"tool": "dartrhombus", "version": __version__, "command": command,
            "config": {k: _jsonable(v) for k, v in dataclasses.asdict(cfg).items()},
            "config_hash": hashlib.sha256(canon.encode()).hexdigest()[:16]}


def _header(meta: dict) -> str:
    return "# " + json.dumps(meta, sort_keys=True) + "\n"


def read_header(text: str) -> dict:
    first = text.splitlines()[0]
    if not first.startswith("# "):
        raise ValueError("no metadata header")
    return json.loads(first[2:])


def _default_path(cfg: RunConfig, name: str) -> str:
    base = cfg.out or os.path.join(os.environ.get(OUTDIR_ENV, "."), name)
    return base


def write_atomic(path: str, data: str | bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _emit(cfg: RunConfig, text: str, out: io.TextIOBase) -> None:
    if cfg.out:
        write_atomic(cfg.out, text)
    else:
        out.write(text)


def _num(x: float) -> float:
    # json writes repr(), which already round-trips doubles
    return float(x)


def _dump_json(obj: dict) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


# -------------------------------------------------------------- commands

def cmd_phase(cfg: RunConfig, out) -> int:
    from .spectral import classify_phase
    r = classify_phase(Activities.of(cfg.z), tol=cfg.tol)
    data = {"classification": r.classification, "onsager_gap": _num(r.onsager_gap),
            "kasteleyn_gap": _num(r.kasteleyn_gap), "min_det": _num(r.min_det),
            "is_critical": r.is_critical}
    if cfg.format == "text":
        out.write(f"{r.classification} onsager_gap={r.onsager_gap:.17g} kasteleyn_gap={r.kasteleyn_gap:.17g}\n")
    else:
        _emit(cfg, _dump_json({"meta": metadata(cfg, "phase"), **data}), out)
    return 0


def cmd_free_energy(cfg: RunConfig, out) -> int:
    from .spectral import free_energy
    f = free_energy(Activities.of(cfg.z), cfg.quad_order, tol=cfg.tol)
    if cfg.format == "text":
        out.write(f"{f:.17g}\n")
    else:
        _emit(cfg, _dump_json({"meta": metadata(cfg, "free-energy"), "free_energy": f}), out)
    return 0


def cmd_densities(cfg: RunConfig, out) -> int:
    from .correlations import tile_densities
    d = tile_densities(Activities.of(cfg.z), cfg.quad_order)
    data = {"meta": metadata(cfg, "densities"), "rho": list(d.rho), "sigma": list(d.sigma),
            "rhombus_fraction": d.rhombus_fraction, "dart_fraction": d.dart_fraction,
            "violations": d.violations()}
    _emit(cfg, _dump_json(data), out)
    return 0


def cmd_coupling(cfg: RunConfig, out) -> int:
    from .spectral import coupling_table
    tab = coupling_table(Activities.of(cfg.z), cfg.quad_order)
    blk = tab.block(cfg.x, cfg.y)
    data = {"meta": metadata(cfg, "coupling"), "x": cfg.x, "y": cfg.y,
            "aliasing_error": tab.aliasing_error}
    if cfg.p1 is not None and cfg.p2 is not None:
        data["value"] = float(blk[cfg.p1 - 1, cfg.p2 - 1])
    else:
        data["block"] = blk.tolist()
    _emit(cfg, _dump_json(data), out)
    return 0


def cmd_pair(cfg: RunConfig, out) -> int:
    from .correlations import pair_probability
    a = Bond(CellCoord(0, 0), CELL_BONDS[_cell_bond(cfg.bond_a)])
    b = Bond(CellCoord(0, 0), CELL_BONDS[_cell_bond(cfg.bond_b)])
    r = pair_probability(Activities.of(cfg.z), a, b, CellCoord(*cfg.offset), cfg.quad_order)
    _emit(cfg, _dump_json({"meta": metadata(cfg, "pair"), "value": r.value, "product": r.product,
                           "fluctuation": r.fluctuation}), out)
    return 0


def cmd_bragg(cfg: RunConfig, out) -> int:
    from .correlations import tile_densities
    from .spectrum import bragg_peaks, write_peaks_csv
    d = tile_densities(Activities.of(cfg.z), cfg.quad_order)
    buf = io.StringIO()
    buf.write(_header(metadata(cfg, "bragg")))
    write_peaks_csv(bragg_peaks(cfg.kmax, cfg.lmax, d, ScattererWeights.of(list(cfg.h))), buf)
    _emit(cfg, buf.getvalue(), out)
    return 0


def cmd_diffuse(cfg: RunConfig, out) -> int:
    from .lattice import E1_STAR, E2_STAR
    from .spectrum import diffuse_intensity, write_diffuse_csv
    if cfg.q:
        qs = np.array(cfg.q, dtype=float)
    else:
        k = np.arange(cfg.grid) / cfg.grid
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        qs = np.outer(k1.ravel(), E1_STAR) + np.outer(k2.ravel(), E2_STAR)
    samples = diffuse_intensity(Activities.of(cfg.z), ScattererWeights.of(list(cfg.h)), qs,
                                cutoff=cfg.cutoff, quad_order=cfg.quad_order)
    if not isinstance(samples, list):
        samples = [samples]
    buf = io.StringIO()
    buf.write(_header(metadata(cfg, "diffuse")))
    write_diffuse_csv(samples, buf)
    _emit(cfg, buf.getvalue(), out)
    return 0


def cmd_sample(cfg: RunConfig, out) -> int:
    from .sampler import SamplerConfig, empirical_densities, sample, to_tiling
    m, n = cfg.torus
    conf = sample(Activities.of(cfg.z), m, n,
                  SamplerConfig(steps=cfg.steps, seed=cfg.seed, burn_in=cfg.burn_in))
    conf.validate()
    tiling = to_tiling(conf)
    meta = metadata(cfg, "sample")
    prefix = _default_path(cfg, "sample")
    write_atomic(prefix + ".tiles", _header(meta) + tiling.dump())
    write_atomic(prefix + ".dimers", _header(meta) + conf.dump())
    d = empirical_densities(tiling)
    out.write(json.dumps({"tiles": prefix + ".tiles", "dimers": prefix + ".dimers",
                          "winding_sector": conf.winding_sector(),
                          "rho": list(d.rho), "sigma": list(d.sigma)}) + "\n")
    return 0


def cmd_diffract(cfg: RunConfig, out) -> int:
    from .correlations import tile_densities
    from .numdiff import (average_images, compare_bragg, fft_diffraction, parseval_residual,
                          scatter_points, write_image_csv, write_pgm)
    from .sampler import WormSampler, to_tiling
    from .spectrum import bragg_peaks
    m, n = cfg.torus
    z = Activities.of(cfg.z)
    h = ScattererWeights.of(list(cfg.h))
    g = build_torus(m, n)
    images, parseval = [], 0.0
    for s in range(cfg.seeds):
        w = WormSampler(z, g, seed=cfg.seed + s)
        w.sweep(cfg.burn_in + cfg.steps)
        pts = scatter_points(to_tiling(w.configuration()), h)
        img = fft_diffraction(pts)
        parseval = max(parseval, parseval_residual(img, pts))
        images.append(img)
    img = average_images(images)
    d = tile_densities(z, cfg.quad_order)
    rep = compare_bragg(img, bragg_peaks(6, 6, d, h))
    meta = metadata(cfg, "diffract")
    prefix = _default_path(cfg, "diffract")
    write_pgm(img, prefix + ".pgm", bits=cfg.bits)
    buf = io.StringIO()
    buf.write(_header(meta))
    write_image_csv(img, buf)
    write_atomic(prefix + ".csv", buf.getvalue())
    report = {"meta": meta, "bragg_max_rel_error": rep.max_rel_error, "tolerance": rep.tolerance,
              "passed": rep.passed, "degenerate": rep.degenerate,
              "background_mean": rep.background_mean, "parseval_residual": parseval,
              "peaks": [list(r) for r in rep.rows]}
    write_atomic(prefix + ".json", _dump_json(report))
    out.write(json.dumps({"image": prefix + ".pgm", "csv": prefix + ".csv", "report": prefix + ".json",
                          "passed": rep.passed, "bragg_max_rel_error": rep.max_rel_error}) + "\n")
    return 0 if rep.passed else 4


def cmd_oracle(cfg: RunConfig, out) -> int:
    from .oracle import enumerate_matchings, finite_torus_Z
    m, n = cfg.torus
    z = Activities.of(cfg.z)
    g = build_torus(m, n)
    res = enumerate_matchings(g, z)
    data = {"meta": metadata(cfg, "oracle"), "m": m, "n": n, "z": list(z.as_tuple()),
            "Z": res.Z, "Z_pfaffian": finite_torus_Z(m, n, z), "count": res.count,
            "marginals": res.bond_marginals.tolist()}
    _emit(cfg, _dump_json(data), out)
    return 0


COMMANDS = {
    "phase": cmd_phase, "free-energy": cmd_free_energy, "densities": cmd_densities,
    "coupling": cmd_coupling, "pair": cmd_pair, "bragg": cmd_bragg, "diffuse": cmd_diffuse,
    "sample": cmd_sample, "diffract": cmd_diffract, "oracle": cmd_oracle,
}


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # let "--z -1,1,1" reach validation instead of being read as an option
    for i in range(len(argv) - 1):
        if argv[i] in ("--z", "--h", "--q") and argv[i + 1].startswith("-"):
            argv[i:i + 2] = [f"{argv[i]}={argv[i + 1]}", ""]
    argv = [a for a in argv if a != ""]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
    except (ConfigError, TypeError, ValueError) as err:
        print(f"dartrhombus: invalid configuration: {err}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, out)
    except (ValueError, ArithmeticError, RuntimeError, OSError) as err:
        print(f"dartrhombus: {args.command} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
