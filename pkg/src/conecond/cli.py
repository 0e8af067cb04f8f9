"""Command-line interface: model validation, band structure export,
Fermi-point reports, conductivity runs, and the identity-verification suite.

Output conventions
------------------
* JSON for machine-readable reports, CSV for sequences, SVG for band plots.
* All physical values are in natural units (e = hbar = 1); every JSON
  payload carries a ``units`` note saying so.
* JSON is byte-deterministic for identical configuration: field order is
  fixed by construction order and floats are written with 17 significant
  digits ('%.17g'), so identical runs produce identical bytes.

Exit codes: 0 ok; 1 configuration error; 2 validation/verification failure;
3 conductivity sequence not converged (report still emitted); 4 numerical
error (degeneracies, unresolvable grids, contour failures, ...).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from .bloch import (
    HoppingConflict,
    HoppingModel,
    ModelFormatError,
    covariance_defect,
    d2h_at,
    dh_at,
    h_at,
    load_model,
    preset_haldane,
    preset_qwz,
)
from .cones import (
    BandCrossingRegion,
    EpsilonTooLarge,
    NoConvergence,
    NotConical,
    characterize_cones,
    check_cone_condition,
    find_fermi_points,
    fit_cone,
    is_quantizing,
)
from .kubo import (
    DegeneratePoint,
    Gapless,
    GridPolicy,
    GridTooCoarse,
    NotConverged,
    TwoBandIsolationFailed,
    closed_form_report,
    default_eta_sequence,
    fjl_eta,
    fjj_sing,
    ftilde_jj,
    richardson_extrapolate,
    schwinger,
    sigma_kubo,
    zeta_jj,
)
from .lattice import wrap_fractional
from .spectra import (
    AllBandsOnOneSide,
    EigenvalueOnContour,
    GapTooSmall,
    NotHermitian,
    SingularResolvent,
)

__all__ = ["ConfigParse", "RunConfig", "main"]

UNITS_NOTE = "natural units (e = hbar = 1)"

_CONFIG_ERRORS = (ModelFormatError,)
_NUMERICAL_ERRORS = (
    DegeneratePoint,
    GridTooCoarse,
    TwoBandIsolationFailed,
    Gapless,
    EpsilonTooLarge,
    NotConical,
    NoConvergence,
    BandCrossingRegion,
    AllBandsOnOneSide,
    NotHermitian,
    EigenvalueOnContour,
    SingularResolvent,
    GapTooSmall,
)


class ConfigParse(ValueError):
    """Command line / configuration could not be parsed or is out of range."""


# -- deterministic serialization ----------------------------------------------

def _json_value(v, indent: int) -> str:
    pad = "  " * indent
    if isinstance(v, bool):                      # bool before int: bool is int
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if not np.isfinite(f):
            raise ValueError("non-finite value in JSON report")
        return "%.17g" % f
    if v is None:
        return "null"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, np.ndarray):
        v = v.tolist()
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = ",\n".join(
            f'{pad}  {json.dumps(str(k))}: {_json_value(val, indent + 1)}'
            for k, val in v.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(v, (list, tuple)):
        if not len(v):
            return "[]"
        items = ",\n".join(
            f"{pad}  {_json_value(val, indent + 1)}" for val in v
        )
        return "[\n" + items + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(v)!r}")


def json_report(payload: dict) -> str:
    """Serialize with fixed field order and '%.17g' floats (byte-stable)."""
    return _json_value(payload, 0) + "\n"


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- configuration -------------------------------------------------------------

_PRESETS = {
    "haldane": (preset_haldane, {"t1": 1.0, "t2": 0.1, "phi": 0.0, "M": 0.0}),
    "qwz": (preset_qwz, {"u": -2.0, "v1": 1.0, "v2": 1.0}),
}


@dataclass
class RunConfig:
    """Validated run options shared by the commands."""

    model: HoppingModel
    model_label: str
    grid: int = 96
    eta_seq: list | None = None
    eps: float | None = None
    directions: tuple = ((1, 1), (2, 2))
    method: str = "closed"
    path: list | None = None
    samples: int = 64
    out: str | None = None
    svg: str | None = None
    csv: str | None = None

    def __post_init__(self):
        if self.grid < 8:
            raise ConfigParse("--grid must be at least 8")
        if self.samples < 2:
            raise ConfigParse("--samples must be at least 2")
        if self.eps is not None and not self.eps > 0:
            raise ConfigParse("--eps must be positive")
        if self.eta_seq is not None:
            if any(e <= 0 for e in self.eta_seq):
                raise ConfigParse("--eta-seq values must be positive")
            for a, b in zip(self.eta_seq, self.eta_seq[1:]):
                if abs(a - 2.0 * b) > 1e-9 * a:
                    raise ConfigParse(
                        "--eta-seq must descend by halving (each value twice "
                        "the next)"
                    )


def _parse_params(text: str | None) -> dict:
    out = {}
    if not text:
        return out
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ConfigParse(f"--params entry {item!r} is not key=value")
        key, _, val = item.partition("=")
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise ConfigParse(f"--params value for {key!r} is not a number") from exc
    return out


def _parse_directions(text: str) -> tuple:
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if item not in ("11", "22", "12", "21"):
            raise ConfigParse(
                f"--directions entry {item!r} must be one of 11, 22, 12, 21"
            )
        pairs.append((int(item[0]), int(item[1])))
    if not pairs:
        raise ConfigParse("--directions is empty")
    return tuple(pairs)


def _parse_path(text: str) -> list:
    waypoints = []
    for chunk in text.split(";"):
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ConfigParse(f"--path waypoint {chunk!r} is not 'f1,f2'")
        try:
            waypoints.append(np.array([float(parts[0]), float(parts[1])]))
        except ValueError as exc:
            raise ConfigParse(f"--path waypoint {chunk!r} is not numeric") from exc
    if len(waypoints) < 2:
        raise ConfigParse("--path needs at least two waypoints")
    return waypoints


def _build_model(args) -> tuple:
    if bool(args.model) == bool(args.preset):
        raise ConfigParse("specify exactly one of --model FILE or --preset NAME")
    if args.model:
        return load_model(args.model), f"file:{args.model}"
    name = args.preset.lower()
    if name not in _PRESETS:
        raise ConfigParse(
            f"unknown preset {args.preset!r} (available: {', '.join(sorted(_PRESETS))})"
        )
    factory, defaults = _PRESETS[name]
    params = dict(defaults)
    overrides = _parse_params(args.params)
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigParse(
            f"unknown parameter(s) {sorted(unknown)} for preset {name!r} "
            f"(accepted: {sorted(defaults)})"
        )
    params.update(overrides)
    label = f"preset:{name}(" + ",".join(
        f"{k}={params[k]:g}" for k in defaults
    ) + ")"
    return factory(**params), label


def _config_from_args(args) -> RunConfig:
    model, label = _build_model(args)
    eta_seq = None
    if getattr(args, "eta_seq", None):
        try:
            eta_seq = [float(x) for x in args.eta_seq.split(",")]
        except ValueError as exc:
            raise ConfigParse("--eta-seq must be comma-separated numbers") from exc
    return RunConfig(
        model=model,
        model_label=label,
        grid=args.grid,
        eta_seq=eta_seq,
        eps=getattr(args, "eps", None),
        directions=_parse_directions(getattr(args, "directions", None) or "11,22"),
        method=getattr(args, "method", "closed"),
        path=_parse_path(args.path) if getattr(args, "path", None) else None,
        samples=getattr(args, "samples", 64),
        out=args.out,
        svg=getattr(args, "svg", None),
        csv=getattr(args, "csv", None),
    )


# -- validate ------------------------------------------------------------------

def _random_momenta(model: HoppingModel, count: int, seed: int = 7) -> np.ndarray:
    rng = np.random.default_rng(seed)
    frac = rng.uniform(-0.5, 0.5, size=(count, 2))
    return frac @ model.lattice.dual_matrix.T


def _run_validation_checks(model: HoppingModel) -> list:
    checks = []
    ks = _random_momenta(model, 100)

    H = model.h_batch(ks)
    herm = float(
        max(np.linalg.norm(h - h.conj().T, 2) / max(np.linalg.norm(h, 2), 1e-300)
            for h in H)
    )
    checks.append(("hermiticity_at_k", herm < 1e-12, herm, 1e-12))

    cov = 0.0
    for k in ks[:5]:
        for (m1, m2) in ((1, 0), (0, 1), (1, 1), (2, -1)):
            cov = max(cov, covariance_defect(model, k, m1, m2))
    checks.append(("dual_covariance", cov < 1e-10, cov, 1e-10))

    step = 1e-6
    fd_err = 0.0
    scale = max(1.0, float(np.abs(H).max()))
    for k in ks[:20]:
        for j, e in ((1, np.array([step, 0.0])), (2, np.array([0.0, step]))):
            fd = (h_at(model, k + e) - h_at(model, k - e)) / (2 * step)
            fd_err = max(fd_err, float(np.abs(fd - dh_at(model, k, j)).max()) / scale)
    checks.append(("derivative_consistency", fd_err < 1e-5, fd_err, 1e-5))

    fd2_err = 0.0
    sym_err = 0.0
    for k in ks[:20]:
        for j, e in ((1, np.array([step, 0.0])), (2, np.array([0.0, step]))):
            for l in (1, 2):
                fd = (dh_at(model, k + e, l) - dh_at(model, k - e, l)) / (2 * step)
                fd2_err = max(
                    fd2_err, float(np.abs(fd - d2h_at(model, k, j, l)).max()) / scale
                )
        sym = np.abs(d2h_at(model, k, 1, 2) - d2h_at(model, k, 2, 1)).max()
        sym_err = max(sym_err, float(sym))
    checks.append(("second_derivative_consistency", fd2_err < 1e-5, fd2_err, 1e-5))
    checks.append(("second_derivative_symmetry", sym_err == 0.0, sym_err, 0.0))

    per_err = 0.0
    espread = max(1.0, float(np.abs(np.linalg.eigvalsh(H)).max()))
    for k in ks[:20]:
        w0 = np.linalg.eigvalsh(h_at(model, k))
        for G in (model.lattice.b1, model.lattice.b2):
            w1 = np.linalg.eigvalsh(h_at(model, k + G))
            per_err = max(per_err, float(np.abs(w1 - w0).max()) / espread)
    checks.append(("spectrum_periodicity", per_err < 1e-10, per_err, 1e-10))
    return checks


def cmd_validate(cfg: RunConfig, pairing_failure: str | None = None) -> int:
    checks = [
        {
            "name": "hermiticity_pairing",
            "pass": pairing_failure is None,
            "measured": pairing_failure if pairing_failure else "all partners match",
            "tolerance": "1e-12 entrywise",
        }
    ]
    if pairing_failure is None:
        for name, ok, measured, tol in _run_validation_checks(cfg.model):
            checks.append(
                {"name": name, "pass": bool(ok), "measured": measured,
                 "tolerance": tol}
            )
    all_pass = all(c["pass"] for c in checks)
    report = {
        "command": "validate",
        "model": cfg.model_label,
        "units": UNITS_NOTE,
        "all_pass": all_pass,
        "checks": checks,
    }
    _emit(json_report(report), cfg.out)
    return 0 if all_pass else 2


# -- bands ---------------------------------------------------------------------

def _band_path(model: HoppingModel, waypoints_frac, samples: int):
    lat = model.lattice
    pts_cart = [lat.from_fractional(w) for w in waypoints_frac]
    ks, arcs = [], []
    arc = 0.0
    for a, b in zip(pts_cart, pts_cart[1:]):
        seg = np.linspace(0.0, 1.0, samples, endpoint=False)
        for t in seg:
            k = a + t * (b - a)
            ks.append(k)
            arcs.append(arc + t * np.linalg.norm(b - a))
        arc += float(np.linalg.norm(b - a))
    ks.append(pts_cart[-1])
    arcs.append(arc)
    ks = np.asarray(ks)
    energies = np.linalg.eigvalsh(model.h_batch(ks))
    return np.asarray(arcs), ks, energies


def _bands_csv(arcs, ks, energies) -> str:
    n_bands = energies.shape[1]
    header = "arclength,k1,k2," + ",".join(
        f"lambda_{i + 1}" for i in range(n_bands)
    )
    lines = [header]
    for a, k, row in zip(arcs, ks, energies):
        vals = [a, k[0], k[1], *row]
        lines.append(",".join("%.17g" % v for v in vals))
    return "\n".join(lines) + "\n"


def _bands_svg(arcs, energies, mu: float) -> str:
    width, height, ml, mr, mt, mb = 800.0, 500.0, 60.0, 20.0, 20.0, 40.0
    lo = min(float(energies.min()), mu)
    hi = max(float(energies.max()), mu)
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - pad, hi + pad
    x0, x1 = float(arcs[0]), float(arcs[-1])

    def sx(a):
        return ml + (a - x0) / (x1 - x0) * (width - ml - mr)

    def sy(e):
        return mt + (hi - e) / (hi - lo) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:g} {height:g}">',
        f'<rect width="{width:g}" height="{height:g}" fill="white"/>',
        f'<line x1="{ml:g}" y1="{sy(lo):.2f}" x2="{ml:g}" y2="{sy(hi):.2f}" '
        'stroke="black" stroke-width="1"/>',
        f'<line x1="{sx(x0):.2f}" y1="{height - mb:g}" x2="{sx(x1):.2f}" '
        f'y2="{height - mb:g}" stroke="black" stroke-width="1"/>',
    ]
    for i in range(energies.shape[1]):
        pts = " ".join(
            f"{sx(a):.2f},{sy(e):.2f}" for a, e in zip(arcs, energies[:, i])
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="#1f4e8c" '
            'stroke-width="1.5"/>'
        )
    parts.append(
        f'<line x1="{ml:g}" y1="{sy(mu):.2f}" x2="{width - mr:g}" y2="{sy(mu):.2f}" '
        'stroke="#c03030" stroke-width="1" stroke-dasharray="6,4"/>'
    )
    parts.append(
        f'<text x="{width - mr - 4:g}" y="{sy(mu) - 5:.2f}" text-anchor="end" '
        'font-family="monospace" font-size="12" fill="#c03030">mu</text>'
    )
    for e in (lo + pad, hi - pad):
        parts.append(
            f'<text x="{ml - 6:g}" y="{sy(e) + 4:.2f}" text-anchor="end" '
            f'font-family="monospace" font-size="12">{e:.3g}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_bands(cfg: RunConfig) -> int:
    waypoints = cfg.path
    if waypoints is None:
        waypoints = [np.array([0.0, 0.0]), np.array([0.5, 0.0]),
                     np.array([0.5, 0.5]), np.array([0.0, 0.0])]
    arcs, ks, energies = _band_path(cfg.model, waypoints, cfg.samples)
    _emit(_bands_csv(arcs, ks, energies), cfg.out)
    if cfg.svg:
        _emit(_bands_svg(arcs, energies, cfg.model.fermi_energy), cfg.svg)
    return 0


# -- fermi-points ----------------------------------------------------------------

def cmd_fermi_points(cfg: RunConfig) -> int:
    model = cfg.model
    scan = find_fermi_points(model, coarse=cfg.grid)
    records = []
    for k, gap in zip(scan.locations, scan.gaps):
        Q, tilt, resid = fit_cone(model, k)
        ok, margin = check_cone_condition(Q, tilt)
        frac = wrap_fractional(model.lattice.to_fractional(k))
        records.append(
            {
                "omega_frac": [float(frac[0]), float(frac[1])],
                "omega_cart": [float(k[0]), float(k[1])],
                "Q": [[float(Q[0, 0]), float(Q[0, 1])],
                      [float(Q[1, 0]), float(Q[1, 1])]],
                "tilt": [float(tilt[0]), float(tilt[1])],
                "residual": float(resid),
                "gap_at_omega": float(gap),
                "is_quantizing": bool(is_quantizing(Q)),
                "cone_condition": bool(ok),
                "cone_margin": float(margin),
            }
        )
    report = {
        "command": "fermi-points",
        "model": cfg.model_label,
        "units": UNITS_NOTE,
        "count": len(records),
        "min_gap": float(scan.min_gap),
        "warnings": list(scan.warnings),
        "points": records,
    }
    _emit(json_report(report), cfg.out)
    return 0


# -- sigma -----------------------------------------------------------------------

def _sigma_key(j: int, l: int) -> str:
    return f"{j}{l}"


def _sigma_csv(per_eta: dict) -> str:
    keys = list(per_eta)
    header = "eta," + ",".join(f"sigma_hat_{_sigma_key(*k)}" for k in keys)
    etas = [e for (e, _, _) in per_eta[keys[0]]]
    lines = [header]
    for i, eta in enumerate(etas):
        row = [eta] + [per_eta[k][i][1] for k in keys]
        lines.append(",".join("%.17g" % v for v in row))
    return "\n".join(lines) + "\n"


def cmd_sigma(cfg: RunConfig) -> int:
    model = cfg.model
    cones = characterize_cones(model, coarse=cfg.grid)
    payload = {
        "command": "sigma",
        "model": cfg.model_label,
        "units": UNITS_NOTE,
        "method": None,
        "sigma": {},
    }
    exit_code = 0
    if cfg.method == "closed":
        report = closed_form_report(cones, cfg.directions)
        payload["method"] = report.method
        payload["sigma"] = {
            _sigma_key(j, l): v for (j, l), v in report.sigma.items()
        }
        payload["per_cone"] = {
            str(j): list(v) for j, v in report.per_cone.items()
        }
        payload["diagnostics"] = report.diagnostics
    else:
        eta_seq = cfg.eta_seq or default_eta_sequence(model)
        policy = GridPolicy(base=cfg.grid)
        sigma, converged, per_eta = {}, {}, {}
        diagnostics = {}
        for (j, l) in cfg.directions:
            try:
                rep = sigma_kubo(model, j, l, eta_sequence=eta_seq,
                                 grid_policy=policy, cones=cones)
            except NotConverged as exc:
                rep = exc.report
                exit_code = 3
            sigma[_sigma_key(j, l)] = rep.sigma[(j, l)]
            converged[_sigma_key(j, l)] = rep.converged[(j, l)]
            per_eta[(j, l)] = rep.per_eta[(j, l)]
            diagnostics[_sigma_key(j, l)] = {
                "grid_points": rep.diagnostics["grid_points"],
                "f_values": {
                    "%.17g" % e: v
                    for e, v in rep.diagnostics["f_values"].items()
                },
            }
        payload["method"] = "kubo_extrapolation"
        payload["sigma"] = sigma
        payload["converged"] = converged
        payload["eta_sequence"] = list(eta_seq)
        payload["sigma_hat"] = {
            _sigma_key(j, l): [
                {"eta": e, "sigma_hat": s, "quad_error": q}
                for (e, s, q) in per_eta[(j, l)]
            ]
            for (j, l) in cfg.directions
        }
        payload["diagnostics"] = diagnostics
        csv_path = cfg.csv
        if csv_path is None and cfg.out:
            csv_path = cfg.out.rsplit(".", 1)[0] + ".csv"
        if csv_path:
            _emit(_sigma_csv(per_eta), csv_path)
    payload["cones"] = len(cones)
    _emit(json_report(payload), cfg.out)
    return exit_code


# -- verify ----------------------------------------------------------------------

def _verify_check(name, status, discrepancy, tolerance, detail) -> dict:
    return {
        "name": name,
        "status": status,
        "discrepancy": discrepancy,
        "tolerance": tolerance,
        "detail": detail,
    }


def cmd_verify(cfg: RunConfig) -> int:
    model = cfg.model
    cones = characterize_cones(model, coarse=cfg.grid)
    eta_seq = cfg.eta_seq or default_eta_sequence(model)
    policy = GridPolicy(base=cfg.grid)
    checks = []

    # (a) Schwinger term vs the eta -> 0 response: s_jl = -f_jl(0+); the
    # limit is taken by the linear-cancelling combination 2 f(eta) - f(2 eta)
    eta_min = eta_seq[-1]
    fine, comp = policy.grids_for(model, cones, eta_min)
    disc_a = 0.0
    for (j, l) in ((1, 1), (2, 2), (1, 2)):
        s = schwinger(model, j, l, fine, comp).value
        f_lo = fjl_eta(model, eta_min, j, l, fine, comp).value
        f_hi = fjl_eta(model, 2.0 * eta_min, j, l, fine, comp).value
        disc_a = max(disc_a, abs(s + 2.0 * f_lo - f_hi))
    checks.append(_verify_check(
        "schwinger_vs_f0", "pass" if disc_a < 1e-3 else "fail", disc_a, 1e-3,
        "max over (j,l) of |s_jl + lim f_jl(eta)|, limit via 2f(eta)-f(2eta) "
        f"at eta={eta_min:.6g}",
    ))

    # (b) the general pair-sum response equals its even two-band-structured
    # extension at eta > 0 (independent code paths)
    eta_b = eta_seq[min(2, len(eta_seq) - 1)]
    fine_b, comp_b = policy.grids_for(model, cones, eta_b)
    disc_b = 0.0
    for j in (1, 2):
        fa = fjl_eta(model, eta_b, j, j, fine_b, comp_b).value
        fb = ftilde_jj(model, eta_b, j, fine_b, comp_b).value
        disc_b = max(disc_b, abs(fa - fb) / max(abs(fb), 1e-300))
    checks.append(_verify_check(
        "fjl_vs_ftilde", "pass" if disc_b < 1e-8 else "fail", disc_b, 1e-8,
        f"max relative difference over j at eta={eta_b:.6g}",
    ))

    # (c) the response minus its cone-neighborhood singular part is flat in
    # eta (the regular remainder is even with bounded slope)
    if cones:
        e1 = eta_seq[min(2, len(eta_seq) - 1)]
        e2 = e1 / 2.0
        disc_c = 0.0
        scale_c = None
        for j in (1, 2):
            rs = []
            for e in (e1, e2):
                g, gc = policy.grids_for(model, cones, e)
                ft = ftilde_jj(model, e, j, g, gc).value
                fs = fjj_sing(model, cones, e, j, eps=cfg.eps).value
                rs.append(ft - fs)
                if e == e2:
                    scale_c = abs(ft)
            disc_c = max(disc_c, abs(rs[0] - rs[1]))
        tol_c = 2e-3 * scale_c
        checks.append(_verify_check(
            "singular_regular_flatness", "pass" if disc_c < tol_c else "fail",
            disc_c, tol_c,
            f"|r(eta1)-r(eta2)| for r = ftilde - f_sing at eta1={e1:.6g}, "
            f"eta2={e2:.6g}",
        ))
    else:
        checks.append(_verify_check(
            "singular_regular_flatness", "skipped", None, None,
            "no cones detected (gapped model)",
        ))

    # (d) sigma estimators from the eigenvalue-only zeta integral and from
    # the matrix-element singular integral agree
    if cones:
        eta_d = eta_seq[-1]
        s_fs = (
            fjj_sing(model, cones, 2.0 * eta_d, 1, eps=cfg.eps).value
            - fjj_sing(model, cones, eta_d, 1, eps=cfg.eps).value
        ) / eta_d
        s_zt = (
            zeta_jj(model, cones, 2.0 * eta_d, 1, eps=cfg.eps).value
            - zeta_jj(model, cones, eta_d, 1, eps=cfg.eps).value
        ) / eta_d
        disc_d = abs(s_fs - s_zt)
        checks.append(_verify_check(
            "zeta_vs_fsing_sigma", "pass" if disc_d < 5e-3 else "fail",
            disc_d, 5e-3,
            f"|sigma_hat(zeta) - sigma_hat(f_sing)| at eta={eta_d:.6g}, j=1",
        ))
    else:
        checks.append(_verify_check(
            "zeta_vs_fsing_sigma", "skipped", None, None,
            "no cones detected (gapped model)",
        ))

    # (e) closed form vs Kubo extrapolation (gapless), or sigma -> 0 (gapped)
    disc_e = 0.0
    if cones:
        closed = closed_form_report(cones, ((1, 1), (2, 2)))
        ok_e = True
        for j in (1, 2):
            try:
                rep = sigma_kubo(model, j, j, eta_sequence=eta_seq,
                                 grid_policy=policy, cones=cones)
            except NotConverged as exc:
                rep = exc.report
                ok_e = False
            ref = closed.sigma[(j, j)]
            disc_e = max(disc_e, abs(rep.sigma[(j, j)] - ref) / abs(ref))
        status = "pass" if ok_e and disc_e < 0.03 else "fail"
        checks.append(_verify_check(
            "closed_vs_kubo", status, disc_e, 0.03,
            "max relative |sigma_kubo - sigma_closed| over j (gapless mode)",
        ))
    else:
        for j in (1, 2):
            try:
                rep = sigma_kubo(model, j, j, eta_sequence=eta_seq,
                                 grid_policy=policy, cones=cones)
                val = rep.sigma[(j, j)]
            except NotConverged as exc:
                val = exc.report.sigma[(j, j)]
            disc_e = max(disc_e, abs(val))
        checks.append(_verify_check(
            "closed_vs_kubo", "pass" if disc_e < 1e-3 else "fail", disc_e, 1e-3,
            "|sigma_kubo| (gapped mode: longitudinal response must vanish)",
        ))

    failed = [c for c in checks if c["status"] == "fail"]
    report = {
        "command": "verify",
        "model": cfg.model_label,
        "units": UNITS_NOTE,
        "all_pass": not failed,
        "cones": len(cones),
        "checks": checks,
    }
    _emit(json_report(report), cfg.out)
    return 0 if not failed else 2


# -- entry point -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigParse(message)


def _make_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", help="model JSON file")
    common.add_argument("--preset", help="preset model name (haldane, qwz)")
    common.add_argument("--params", help="preset parameters k=v,...")
    common.add_argument("--grid", type=int, default=96,
                        help="coarse grid subdivision (default 96)")
    common.add_argument("--out", help="output path (default stdout)")

    parser = _Parser(prog="conecond",
                     description="Conical Fermi-point conductivity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common],
                   help="run model consistency checks")

    bands = sub.add_parser("bands", parents=[common],
                           help="band structure along a k-path (CSV/SVG)")
    bands.add_argument("--path",
                       help="waypoints in dual-basis coordinates 'f1,f2;f1,f2;...'")
    bands.add_argument("--samples", type=int, default=64,
                       help="samples per path segment (default 64)")
    bands.add_argument("--svg", help="write an SVG band plot to this path")

    sub.add_parser("fermi-points", parents=[common],
                   help="locate and characterize conical crossings (JSON)")

    sigma = sub.add_parser("sigma", parents=[common],
                           help="longitudinal conductivity (closed form or Kubo)")
    sigma.add_argument("--method", choices=("closed", "kubo"), default="closed")
    sigma.add_argument("--eta-seq", dest="eta_seq",
                       help="halving eta sequence a,b,c,...")
    sigma.add_argument("--eps", type=float, help="cone-neighborhood size")
    sigma.add_argument("--directions", default="11,22",
                       help="direction pairs, e.g. 11,22,12")
    sigma.add_argument("--csv", help="write the sigma_hat sequence CSV here")

    verify = sub.add_parser("verify", parents=[common],
                            help="run the cross-validation identity suite")
    verify.add_argument("--eta-seq", dest="eta_seq",
                        help="halving eta sequence a,b,c,...")
    verify.add_argument("--eps", type=float, help="cone-neighborhood size")

    return parser


_COMMANDS = {
    "validate": cmd_validate,
    "bands": cmd_bands,
    "fermi-points": cmd_fermi_points,
    "sigma": cmd_sigma,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
        try:
            cfg = _config_from_args(args)
        except HoppingConflict as exc:
            if args.command == "validate":
                # pairing violations are a validation finding, not a crash
                dummy = RunConfig(
                    model=preset_qwz(1.0), model_label=f"file:{args.model}",
                    out=args.out,
                )
                return cmd_validate(dummy, pairing_failure=str(exc))
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return _COMMANDS[args.command](cfg)
    except (ConfigParse, *_CONFIG_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
