"""Command-line front door.

One subcommand per analysis family::

    fockspec classify --config model.cfg --out results/
    fockspec branches --config model.cfg --out results/
    fockspec spectrum --config model.cfg --refine 2,3,4 --out results/
    fockspec weinberg --config model.cfg --grid-n 4 --z-list -1.0,-0.6
    fockspec report   --config model.cfg --out results/

JSON reports are deterministic for a fixed config (timing lives in a
separate meta field); CSV files carry the plot data.  Exit codes: 0 ok,
2 configuration error, 3 numeric-domain error, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, friedrichs, weinberg
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    InvalidArgumentError,
    InvariantViolationError,
    NumericDomainError,
)
from .grid import GridMode, build_grid
from .model import (
    check_orthogonality,
    classify_regime,
    example_family,
    min_max_w2,
    mu_thresholds,
    spectral_scale,
)
from .spectrum import (
    OperatorKind,
    assemble_operator,
    discrete_below_m,
    embedding_check,
    essential_spectrum,
    sigma_region,
)


def _round_floats(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return _round_floats(obj.item())
    return obj


def write_json(payload: dict, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(_round_floats(payload), fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _report(command: str, cfg: RunConfig, result: dict, t0: float) -> dict:
    return {
        "meta": {
            "tool": "fockspec",
            "version": __version__,
            "command": command,
            "timing_s": round(time.time() - t0, 3),
        },
        "config": cfg.echo(),
        "result": result,
    }


def _regime_payload(rc) -> dict:
    return {
        "kind": rc.kind.value,
        "min": rc.min_value,
        "max": rc.max_value,
        "argmin": rc.argmin.tolist(),
        "argmax": rc.argmax.tolist(),
        "tolerance": rc.tolerance,
        "band_case": rc.band_case,
    }


def cmd_classify(cfg: RunConfig, out_dir: str) -> dict:
    t0 = time.time()
    grid = cfg.build_grid()
    model = example_family(cfg.params)
    result: dict = {"thresholds": {}, "regimes": {}}
    for alpha in (1, 2):
        thr = mu_thresholds(cfg.params, alpha, grid)
        result["thresholds"][str(alpha)] = {
            "mu0": thr.mu0,
            "mu1": thr.mu1,
            "quadrature_error": list(thr.quad_error),
        }
        rc = classify_regime(model, grid, alpha)
        result["regimes"][str(alpha)] = _regime_payload(rc)
    # base-torus ambiguity record: the half-angle factor is not orthogonal
    # to base-periodic functions unless the grid is a shift-closed cover
    base = build_grid(max(4, cfg.grid_n // 2 * 2), GridMode.BASE, True)
    tests = [np.ones(base.node_count), np.cos(base.nodes[:, 0])]
    rep_base = check_orthogonality(model, base, tests)
    if grid.mode is GridMode.DOUBLE_COVER:
        tests_dc = [np.ones(grid.node_count), np.cos(grid.nodes[:, 0])]
        rep_cover = check_orthogonality(model, grid, tests_dc)
    else:
        rep_cover = None
    result["orthogonality"] = {
        "base_mode_max_abs": rep_base.max_abs,
        "cover_mode_max_abs": rep_cover.max_abs if rep_cover else None,
        "cover_bound": rep_cover.bound if rep_cover else None,
    }
    payload = _report("classify", cfg, result, t0)
    if out_dir:
        write_json(payload, os.path.join(out_dir, "classify.json"))
    return payload


def cmd_branches(cfg: RunConfig, out_dir: str, sweep_n: int = 9) -> dict:
    t0 = time.time()
    grid = cfg.build_grid()
    model = example_family(cfg.params)
    result = {}
    for alpha in (1, 2):
        br = friedrichs.two_particle_branch(alpha, model, grid, sweep_n=sweep_n)
        entry = {
            "empty": br.empty,
            "note": br.note,
        }
        if not br.empty:
            entry.update(
                E_min=br.E_min,
                E_max=br.E_max,
                e_max_at_band_bottom=br.e_max_at_band_bottom,
                zeros_min=[
                    {
                        "p": z.location.tolist(),
                        "order": z.exponent,
                        "coefficient": z.coefficient,
                        "hessian_min_eig": z.hessian_min_eig,
                    }
                    for z in br.zeros_min
                ],
                zeros_max=[
                    {"p": z.location.tolist(), "order": z.exponent}
                    for z in br.zeros_max
                ],
            )
        result[str(alpha)] = entry
        if out_dir:
            friedrichs.branch_to_csv(
                br, os.path.join(out_dir, f"branch_alpha{alpha}.csv")
            )
    payload = _report("branches", cfg, result, t0)
    if out_dir:
        write_json(payload, os.path.join(out_dir, "branches.json"))
    return payload


def cmd_spectrum(cfg: RunConfig, out_dir: str, refine: tuple[int, ...] = (2, 3, 4)) -> dict:
    t0 = time.time()
    grid = cfg.build_grid()
    model = example_family(cfg.params)
    ess = essential_spectrum(model, grid)
    sig = sigma_region(ess)
    edges = sorted({e for iv in sig.intervals for e in iv})
    report = discrete_below_m(model, refine, sigma_edges=edges, regimes=ess.regimes)
    result = {
        "m": ess.m,
        "M": ess.M,
        "intervals": [list(iv) for iv in ess.intervals],
        "tau_ess": ess.tau_ess,
        "band_cases": list(ess.band_cases),
        "sigma": {"intervals": [list(iv) for iv in sig.intervals], "case": sig.case},
        "refinement": [
            {"n": n, "count": c, "band_count": bc}
            for n, c, bc in zip(report.grid_ns, report.counts, report.band_counts)
        ],
        "count_stable": report.count_stable,
        "chains": [
            {"values": list(ch.values), "position_stable": ch.position_stable}
            for ch in report.chains
        ],
        "edge_distances": {f"{k:.12g}": list(v) for k, v in report.edge_distances.items()},
        "eigenvalues": [],
    }
    # embedded bound-state verification on a small shift-closed cover
    n_embed = 4
    g_embed = build_grid(n_embed, GridMode.DOUBLE_COVER, True)
    emb = embedding_check(model, g_embed)
    worst_full, worst_coupling = emb.worst()
    result["embedding"] = {
        "grid_n": n_embed,
        "pair_states": emb.pair_sector_total,
        "worst_full_residual": worst_full,
        "worst_coupling_residual": worst_coupling,
    }
    for ch in emb.pair_sector + emb.vacuum_sector:
        result["eigenvalues"].append({"value": ch.z, "residual": ch.full_residual})
    payload = _report("spectrum", cfg, result, t0)
    if out_dir:
        write_json(payload, os.path.join(out_dir, "spectrum.json"))
        _eigen_csv(result["eigenvalues"], os.path.join(out_dir, "eigenvalues.csv"))
    return payload


def _eigen_csv(rows: list[dict], path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("value,residual\n")
        for row in rows:
            fh.write(f"{row['value']:.12g},{row['residual']:.3e}\n")
    os.replace(tmp, path)


def cmd_weinberg(
    cfg: RunConfig, out_dir: str, z_list: tuple[float, ...] = (), seed: int = 0
) -> dict:
    t0 = time.time()
    grid = cfg.build_grid()
    model = example_family(cfg.params)
    m, M, _ = min_max_w2(model, grid)
    scale = spectral_scale(m, M)
    if not z_list:
        z_list = (m - 1.0, m - 0.5, m - 0.25)
    result: dict = {"xi": {}, "hs_norms": {}, "rank_one": {}, "fixed_point": []}
    for z in z_list:
        s1, s2 = weinberg.xi(model, grid, z)
        result["xi"][f"{z:.12g}"] = [s1, s2]
    w = weinberg.assemble_W(model, grid, z_list[0])
    result["hs_norms"] = weinberg.hs_norm(w)
    for key in ("01", "10", "20"):
        result["rank_one"][key] = weinberg.block_singular_values(w, key).tolist()
    table = weinberg.continuity_modulus(model, grid, z_list)
    result["continuity"] = {f"{i}-{j}": v for (i, j), v in table.items()}
    # fixed-point residuals at discrete eigenvalues in the gap below m
    op = assemble_operator(OperatorKind.H, model, grid)
    vals, vecs = np.linalg.eigh(op.dense())
    ess = essential_spectrum(model, grid)
    for j, z in enumerate(vals):
        if z >= m - 1e-9 * scale:
            break
        inside = any(a - 1e-6 * scale <= z <= b + 1e-6 * scale for a, b in ess.intervals)
        if inside:
            continue
        wz = weinberg.assemble_W(model, grid, float(z))
        res = weinberg.fixed_point_residual(wz, model, grid, vecs[:, j])
        result["fixed_point"].append(
            {"z": float(z), "residuals": res.residuals, "best": res.best_name}
        )
    payload = _report("weinberg", cfg, result, t0)
    if out_dir:
        write_json(payload, os.path.join(out_dir, "weinberg.json"))
    return payload


def cmd_report(cfg: RunConfig, out_dir: str, refine: tuple[int, ...]) -> dict:
    t0 = time.time()
    combined = {
        "classify": cmd_classify(cfg, "")["result"],
        "branches": cmd_branches(cfg, out_dir)["result"],
        "spectrum": cmd_spectrum(cfg, out_dir, refine)["result"],
    }
    payload = _report("report", cfg, combined, t0)
    if out_dir:
        write_json(payload, os.path.join(out_dir, "report.json"))
    return payload


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated number list, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fockspec", description=__doc__)
    ap.add_argument("command", choices=["classify", "branches", "spectrum", "weinberg", "report"])
    ap.add_argument("--config", required=True, help="model configuration file")
    ap.add_argument("--out", default="", help="output directory for reports")
    ap.add_argument("--grid-n", type=int, default=None, help="override grid.n")
    ap.add_argument("--grid-mode", choices=["base", "double"], default=None)
    ap.add_argument("--refine", default="2,3,4", help="refinement grid sizes, e.g. 2,3,4")
    ap.add_argument("--z-list", default="", help="spectral parameters for the weinberg command")
    ap.add_argument("--tol", type=float, default=None, help="override reporting tolerance")
    ap.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.grid_n is not None or args.grid_mode is not None:
            mode = cfg.grid_mode if args.grid_mode is None else (
                GridMode.BASE if args.grid_mode == "base" else GridMode.DOUBLE_COVER
            )
            cfg = RunConfig(
                params=cfg.params,
                grid_n=args.grid_n if args.grid_n is not None else cfg.grid_n,
                grid_mode=mode,
                grid_offset=cfg.grid_offset,
            )
        if args.out:
            os.makedirs(args.out, exist_ok=True)
        refine = _parse_int_list(args.refine)
        if args.command == "classify":
            payload = cmd_classify(cfg, args.out)
        elif args.command == "branches":
            payload = cmd_branches(cfg, args.out)
        elif args.command == "spectrum":
            payload = cmd_spectrum(cfg, args.out, refine)
        elif args.command == "weinberg":
            payload = cmd_weinberg(cfg, args.out, _parse_float_list(args.z_list), args.seed)
        else:
            payload = cmd_report(cfg, args.out, refine)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericDomainError as exc:
        print(f"numeric-domain error: {exc}", file=sys.stderr)
        return 3
    except InvariantViolationError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    if not args.out:
        json.dump(_round_floats(payload), sys.stdout, sort_keys=True, indent=1)
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
