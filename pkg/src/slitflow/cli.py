"""Command-line front end: ``slitflow <subcommand> --config cfg.json``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.  Every output
file is written to a temporary name and renamed into place.  Identical
(config, seed) pairs give byte-identical CSV and JSON.

CSV columns per subcommand:

* kernel:    x, y, im_psi                        (field sampled on the configured grid)
* trace:     t, y_1..y_N, x_1..x_N, xr_1..xr_N, xi, a
* hcap:      t, hcap, a, rel_err
* skle:      path, seed, t_end, xi_end, qv, stop_reason
* transform: t, xi_img, a_img, h0, h1, h2, residual   (plus reparam.csv: tc, xi_check)
* locality:  tc, path_0..path_{M-1}              (only with "emit_paths": true)
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile

import jsonschema
import numpy as np

from . import geometry, loewner, skle, transform
from .bmd_kernel import b_bmd, b_vector, eval_psi, solve_kernel
from .errors import NumericalError, SlitflowError, ValidationError
from .locality import LocalityConfig, run_locality

log = logging.getLogger("slitflow")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_SLITS = {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}}
_POINTS = {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}
_AXIS = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_DRIVER = {
    "type": "object", "additionalProperties": False, "required": ["kind"],
    "properties": {"kind": {"enum": ["constant", "linear", "sqrt", "sampled"]},
                   "xi0": _NUM, "slope": _NUM, "c": _NUM, "adot": _POS,
                   "t": {"type": "array", "items": _NUM}, "xi": {"type": "array", "items": _NUM}},
}
_TRACE_PROPS = {"slits": _SLITS, "driver": _DRIVER, "T": {"type": "number", "minimum": 0},
                "max_step": _POS, "probes": _POINTS, "hull_points": {"type": "integer", "minimum": 2}}
_SKLE_PROPS = {"slits": _SLITS, "xi0": _NUM, "kappa": {"type": "number", "minimum": 0},
               "drift": {"enum": ["zero", "bmd"]}, "dt": _POS, "T": {"type": "number", "minimum": 0},
               "n_paths": {"type": "integer", "minimum": 1}, "workers": {"type": "integer", "minimum": 1},
               "seed": {"type": "integer", "minimum": 0}}


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


SCHEMAS = {
    "kernel": _obj({"slits": _SLITS, "xi0": _NUM, "resolution": {"type": "integer", "minimum": 2},
                    "grid": _obj({"x": _AXIS, "y": _AXIS}, ["x", "y"]), "probes": _POINTS,
                    "h": _POS}, ["slits"]),
    "trace": _obj(_TRACE_PROPS, ["slits", "driver", "T"]),
    "hcap": _obj(dict(_TRACE_PROPS, times={"type": "array", "items": _NUM}), ["slits", "driver", "T"]),
    "skle": _obj(_SKLE_PROPS, ["slits", "T"]),
    "transform": _obj({"trace": _obj(_TRACE_PROPS, ["slits", "driver", "T"]),
                       "skle": _obj(_SKLE_PROPS, ["slits", "T"]),
                       "keep": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                       "margin": _POS, "grid_points": {"type": "integer", "minimum": 2}}),
    "locality": _obj({"slits": _SLITS, "xi0": _NUM, "kappa": _POS, "drift": {"enum": ["zero", "bmd"]},
                      "dt": _POS, "n_paths": {"type": "integer", "minimum": 2}, "cap": _POS,
                      "mode": {"enum": ["common", "stopped"]}, "margin": _POS,
                      "source_factor": {"type": "number", "minimum": 1},
                      "checkpoints": {"type": "array", "items": _POS, "minItems": 1},
                      "n_increments": {"type": "integer", "minimum": 1},
                      "min_survival": _POS, "workers": {"type": "integer", "minimum": 1},
                      "emit_paths": {"type": "boolean"}, "seed": {"type": "integer", "minimum": 0}},
                     ["slits"]),
}
SCHEMAS["transform"]["oneOf"] = [{"required": ["trace"]}, {"required": ["skle"]}]


# -- output helpers ------------------------------------------------------------------

def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("nan" if v != v else ("inf" if v > 0 else "-inf"))
    return v


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) for v in r])
    return buf.getvalue()


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if math.isfinite(v) else None
    if isinstance(o, complex):
        return [o.real, o.imag]
    return o


def _json(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _svg(slits, hull=None, xi=None, size=480):
    """Slits as segments, hull as a polyline, the driver as a tick on the axis."""
    pts = [complex(a, c) for a, c in zip(slits.x, slits.y)] + [complex(b, c) for b, c in zip(slits.xr, slits.y)]
    if hull is not None:
        pts += list(hull)
    if xi is not None:
        pts.append(complex(xi, 0.0))
    pts = np.array(pts + [0j, 1j])
    x0, x1 = pts.real.min() - 0.5, pts.real.max() + 0.5
    y1 = pts.imag.max() + 0.5
    sc = size / max(x1 - x0, y1 + 0.5)

    def p(z):
        return f"{(z.real - x0) * sc:.2f},{(y1 - z.imag) * sc:.2f}"

    w, h = (x1 - x0) * sc, (y1 + 0.5) * sc
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}">',
           f'<line x1="0" y1="{y1 * sc:.2f}" x2="{w:.2f}" y2="{y1 * sc:.2f}" stroke="gray"/>']
    for a, b, c in zip(slits.x, slits.xr, slits.y):
        za, zb = p(complex(a, c)).split(","), p(complex(b, c)).split(",")
        out.append(f'<line x1="{za[0]}" y1="{za[1]}" x2="{zb[0]}" y2="{zb[1]}" stroke="black" stroke-width="2"/>')
    if hull is not None and len(hull) > 1:
        out.append('<polyline fill="none" stroke="firebrick" points="' + " ".join(p(z) for z in hull) + '"/>')
    if xi is not None:
        u = p(complex(xi, 0.0)).split(",")
        out.append(f'<line x1="{u[0]}" y1="{float(u[1]) - 6:.2f}" x2="{u[0]}" y2="{float(u[1]) + 6:.2f}" stroke="navy"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- config helpers ------------------------------------------------------------------

def _slits(cfg):
    s = geometry.make_slits(*[tuple(v) for v in cfg["slits"]])
    if s.n_slits:
        geometry.require_valid(s, "cli")
    return s


def _driver(d, T):
    kind = d["kind"]
    adot = d.get("adot", 2.0)
    if kind == "constant":
        return loewner.DrivingSpec.constant(d.get("xi0", 0.0), T, adot)
    if kind == "linear":
        return loewner.DrivingSpec.linear(d.get("xi0", 0.0), d.get("slope", 0.0), T, adot)
    if kind == "sqrt":
        return loewner.DrivingSpec.sqrt(d.get("xi0", 0.0), d.get("c", 0.0), T, adot)
    if "t" not in d or "xi" not in d:
        raise ValidationError("cli: sampled driver needs 't' and 'xi' arrays")
    drv = loewner.DrivingSpec.sampled(d["t"], d["xi"], adot)
    if abs(drv.T - T) > 1e-12:
        raise ValidationError("cli: sampled driver must end at T")
    return drv


def _trace_run(cfg):
    s = _slits(cfg)
    drv = _driver(cfg["driver"], float(cfg["T"]))
    opts = loewner.EvolveOptions(**({"max_step": cfg["max_step"]} if "max_step" in cfg else {}))
    probes = [complex(a, b) for a, b in cfg.get("probes", [])]
    return loewner.evolve(s, drv, probes, opts)


def _trace_rows(traj):
    n = traj.n_slits
    header = ["t"] + [f"y_{j + 1}" for j in range(n)] + [f"x_{j + 1}" for j in range(n)] \
        + [f"xr_{j + 1}" for j in range(n)] + ["xi", "a"]
    rows = [[traj.t[k], *traj.s[k], traj.xi[k], traj.a[k]] for k in range(len(traj.t))]
    return header, rows


def _skle_cfg(cfg):
    s = _slits(cfg)
    coeffs = skle.CoefficientPair.sle(cfg.get("kappa", 6.0), cfg.get("drift", "bmd" if s.n_slits else "zero"))
    return skle.EnsembleConfig(s, cfg.get("xi0", 0.0), coeffs, cfg.get("dt", 1e-4), cfg["T"])


# -- subcommands ---------------------------------------------------------------------

def cmd_kernel(cfg, args):
    s = _slits(cfg)
    xi0 = float(cfg.get("xi0", 0.0))
    gx = cfg.get("grid", {"x": [-2, 2, 41], "y": [0.1, 2, 20]})
    xs = np.linspace(gx["x"][0], gx["x"][1], int(gx["x"][2]))
    ys = np.linspace(gx["y"][0], gx["y"][1], int(gx["y"][2]))
    X, Y = np.meshgrid(xs, ys)
    Z = (X + 1j * Y).ravel()
    probes = np.array([complex(a, b) for a, b in cfg.get("probes", [])], dtype=complex)
    summary = {"module": "bmd_kernel", "backend": args.backend, "xi0": xi0, "slits": cfg["slits"]}
    if args.backend == "grid":
        from .grid_oracle import grid_kernel
        gk = grid_kernel(s, xi0, h=cfg.get("h"))
        keep = np.array([geometry.dist_to_slits(s, z) > 1e-12 if s.n_slits else True for z in Z])
        vals = np.full(len(Z), np.nan)
        vals[keep] = gk.im_psi(Z[keep])
        summary.update(h=gk.h, half_width=gk.half_width, c=gk.c.tolist(),
                       probes={f"{z.real:g}{z.imag:+g}i": gk.im_psi(z) for z in probes})
    else:
        sol = solve_kernel(s, xi0, resolution=cfg.get("resolution"), adaptive=True, strict=True)
        keep = np.array([geometry.dist_to_slits(s, z) > 1e-12 if s.n_slits else True for z in Z])
        vals = np.full(len(Z), np.nan)
        vals[keep] = eval_psi(sol, Z[keep]).imag
        summary.update(resolution=sol.resolution, residual=sol.residual, c=np.asarray(sol.c).tolist(),
                       b_bmd=b_bmd(sol),
                       b_vector=np.asarray(b_vector(s, xi0)).tolist() if s.n_slits else [],
                       probes={f"{z.real:g}{z.imag:+g}i": float(eval_psi(sol, z).imag) for z in probes})
    rows = [(z.real, z.imag, v) for z, v in zip(Z, vals)]
    out = {"kernel.csv": _csv(["x", "y", "im_psi"], rows), "kernel.json": _json(summary)}
    if args.svg:
        out["kernel.svg"] = _svg(s, xi=xi0)
    return out


def cmd_trace(cfg, args):
    traj = _trace_run(cfg)
    header, rows = _trace_rows(traj)
    summary = {"module": "loewner", "steps": len(traj.t) - 1, "t_end": traj.t_end,
               "lifetime": list(traj.lifetime) if traj.lifetime else None,
               "probes": [[complex(z).real, complex(z).imag] for z in traj.probe_values[-1]]}
    out = {"trace.csv": _csv(header, rows), "trace.json": _json(summary)}
    if args.svg:
        hull = loewner.trace_hull(traj, n_points=cfg.get("hull_points", 64)).polyline
        out["trace.svg"] = _svg(traj.slits(len(traj.t) - 1) if traj.n_slits else traj.s0, hull, traj.xi[-1])
    return out


def cmd_hcap(cfg, args):
    traj = _trace_run(cfg)
    times = cfg.get("times", [traj.t_end])
    rows = []
    for t in times:
        if not 0 < t <= traj.t_end:
            raise ValidationError(f"cli: hcap time {t} outside (0, {traj.t_end}]")
        a = float(np.interp(t, traj.t, traj.a))
        hc = loewner.hcap_farfield(traj, t)
        rows.append((t, hc, a, hc / a - 1.0))
    out = {"hcap.csv": _csv(["t", "hcap", "a", "rel_err"], rows),
           "hcap.json": _json({"module": "loewner", "max_rel_err": max(abs(r[3]) for r in rows)})}
    if args.svg:
        hull = loewner.trace_hull(traj, n_points=cfg.get("hull_points", 64)).polyline
        out["hcap.svg"] = _svg(traj.s0, hull, traj.xi[-1])
    return out


def cmd_skle(cfg, args):
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    ens = _skle_cfg(cfg)
    n = int(cfg.get("n_paths", 1))
    res = skle.run_paths(ens, n, seed, skle._summary, cfg.get("workers", 1))
    rows = []
    for i, (r, err) in enumerate(res):
        if r is None:
            rows.append((i, skle.path_seed(seed, i), float("nan"), float("nan"), float("nan"), err))
        else:
            rows.append((i, skle.path_seed(seed, i), r[0], ens.xi0 + r[1], r[2], r[3] or ""))
    rep = skle.ensemble(ens, n, seed, cfg.get("workers", 1)) if n > 1 else None
    summary = {"module": "skle", "master_seed": seed, "n_paths": n,
               "report": rep.as_dict() if rep else None}
    out = {"skle.csv": _csv(["path", "seed", "t_end", "xi_end", "qv", "stop_reason"], rows),
           "skle.json": _json(summary)}
    if args.svg:
        p = skle.sample_path(ens.s0, ens.xi0, ens.coeffs, ens.dt, ens.T, skle.path_seed(seed, 0))
        hull = loewner.trace_hull(p.traj, n_points=64).polyline if p.t_end > 0 else None
        out["skle.svg"] = _svg(ens.s0, hull, p.xi[-1])
    return out


def cmd_transform(cfg, args):
    if "trace" in cfg:
        src = _trace_run(cfg["trace"])
        seed = None
    else:
        seed = args.seed if args.seed is not None else cfg["skle"].get("seed", 0)
        ens = _skle_cfg(cfg["skle"])
        src = skle.sample_path(ens.s0, ens.xi0, ens.coeffs, ens.dt, ens.T, skle.path_seed(seed, 0))
    opts = transform.CoEvolveOptions(**({"margin": cfg["margin"]} if "margin" in cfg else {}))
    co = transform.co_evolve(src, keep=tuple(cfg.get("keep", ())), opts=opts)
    rows = [(co.t[k], co.xi_img[k], co.a_img[k], *co.jets[k], co.residuals[k]) for k in range(len(co.t))]
    npts = cfg.get("grid_points", 101)
    rp = transform.reparametrize(co, np.linspace(0.0, co.a_img[-1] / 2.0, npts))
    summary = {"module": "transform", "keep": list(co.keep), "T_V": co.T_V, "stop_reason": co.stop_reason,
               "refreshes": co.refreshes, "max_residual": float(np.max(co.residuals)),
               "a_img_end": co.a_img[-1], "seed": seed}
    out = {"transform.csv": _csv(["t", "xi_img", "a_img", "h0", "h1", "h2", "residual"], rows),
           "reparam.csv": _csv(["tc", "xi_check"], zip(rp.tc, rp.xi)),
           "transform.json": _json(summary)}
    if args.svg:
        traj = getattr(src, "traj", src)
        hull = loewner.trace_hull(traj, co.t[-1], n_points=64).polyline if co.t[-1] > 0 else None
        out["transform.svg"] = _svg(traj.s0, hull, traj.xi[len(co.t) - 1])
    return out


def cmd_locality(cfg, args):
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    kw = {k: v for k, v in cfg.items() if k not in ("slits", "emit_paths", "seed")}
    if "checkpoints" in kw:
        kw["checkpoints"] = tuple(kw["checkpoints"])
    lc = LocalityConfig(_slits(cfg), **kw)
    rep = run_locality(lc, seed)
    out = {"locality.json": _json(rep.as_dict())}
    if cfg.get("emit_paths"):
        header = ["tc"] + [f"path_{i}" for i in range(len(rep.paths))]
        out["locality.csv"] = _csv(header, np.column_stack([rep.grid, rep.paths.T]).tolist())
    if args.svg:
        out["locality.svg"] = _svg(lc.slits, xi=lc.xi0)
    return out


COMMANDS = {"kernel": cmd_kernel, "trace": cmd_trace, "hcap": cmd_hcap, "skle": cmd_skle,
            "transform": cmd_transform, "locality": cmd_locality}


def _u64(v):
    n = int(v)
    if not 0 <= n < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return n


def build_parser():
    ap = argparse.ArgumentParser(prog="slitflow", description="Komatu-Loewner chains on slit domains.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the config)")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--svg", action="store_true", help="also write a static SVG rendering")
    ap.add_argument("--backend", choices=["bie", "grid"], default="bie",
                    help="kernel solver (grid: finite-difference oracle, kernel subcommand only)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_config(command, path):
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as exc:
        raise ValidationError(f"cli: cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"cli: config is not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"cli: {command} config invalid at {where}: {exc.message}") from exc
    return cfg


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config)
        if args.backend == "grid" and args.command != "kernel":
            raise ValidationError("cli: --backend grid is only available for the kernel subcommand")
        outputs = COMMANDS[args.command](cfg, args)
        for name, text in outputs.items():
            _atomic_write(os.path.join(args.out, name), text)
    except (ValidationError, jsonschema.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except SlitflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name in sorted(outputs):
        print(os.path.join(args.out, name))
    return 0
