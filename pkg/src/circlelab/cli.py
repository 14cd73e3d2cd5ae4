"""Scenario runner: ``lab run``, ``lab examples``, ``lab selftest``.

A scenario is a YAML file with the sections ``generators``, ``base_point``,
``pipelines`` and ``params``. Every pipeline returns claims with a
pass/fail/inconclusive status and the radius/grid/tolerance they were made at;
an exception inside a pipeline is recorded as an error for that pipeline only.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import yaml

from . import __version__
from .amalgam import presentation_from_config
from .checks import jet_check, nonlinearity_cocycle_residual, random_words, schwarzian_cocycle_residual
from .circlemap import GeneratorSet, Interval, MapError, generators_from_config, integral_nonlinearity, koenigs_chart
from .discreteness import build_family, commutator_probe, frontier_stats, sufficient_estimate_report
from .endsenergy import (WellDefinednessError, build_projective_atlas, cusp_energy_oracle, end_limit,
                         energy, energy_series, extract_gaps, gap_energy, gap_increment_residual, gap_records,
                         gap_stabilizer, point_stabilizer, power_ray, projective_holonomy_test,
                         q_increment_residual, schwarzian_energy)
from .groupaction import ball, orbit, stabilizer_probe
from .markov import (NonTermination, check_star, comparability_constant, cusp_partition, detect_NE,
                     disjoint_by_level, expand_point, max_derivative, partition_from_config, ping_pong_partition,
                     refine_level, validate_partition)
from .schreier import DeadEnd, build_schreier, ends_estimate, oracle_ends, ray_to_infinity, tree_ball_oracle
from .words import format_word, invert_word, multiply, parse_word

log = logging.getLogger("circlelab")

PIPELINES = ("jets-selftest", "orbit", "schreier-ends", "markov-validate", "expansion", "energy", "duminy",
             "holonomy", "atlas", "discreteness", "probe")
STATUSES = ("pass", "fail", "inconclusive")


class ConfigError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# ---------------------------------------------------------------- serialization


def fmt(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def to_plain(obj: Any) -> Any:
    """Convert report values to JSON-compatible structures (words become strings)."""
    if isinstance(obj, Interval):
        return [obj.left, obj.right]
    if hasattr(obj, "as_dict"):
        return to_plain(obj.as_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, tuple) and obj and all(isinstance(s, str) for s in obj):
        return format_word(obj)
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON with floats at 17 significant digits; key order as inserted."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, str, bool)) or v is None for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_csv(path: Path, header: List[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------- configuration


def scenario_dir():
    return resources.files("circlelab") / "scenarios"


def list_examples() -> List[Dict[str, str]]:
    """Shipped scenarios, sorted by name, with their one-line descriptions."""
    out = []
    for entry in sorted(scenario_dir().iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".yaml"):
            cfg = yaml.safe_load(entry.read_text())
            out.append({"name": cfg.get("name", entry.name[:-5]), "description": cfg.get("description", "")})
    return out


def load_config(source) -> dict:
    """Read a scenario from a path or a shipped scenario name."""
    p = Path(source)
    if p.exists():
        text = p.read_text()
    else:
        shipped = scenario_dir() / f"{source}.yaml"
        if not shipped.is_file():
            raise ConfigError("", f"no such file or shipped scenario: {source}")
        text = shipped.read_text()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(where, f"YAML syntax error: {getattr(e, 'problem', e)}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("", "scenario must be a mapping")
    return cfg


def apply_overrides(cfg: dict, overrides: List[str]) -> dict:
    """``key.sub=value`` assignments; values are parsed as YAML scalars or lists."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for k in parts[:-1]:
            nxt = node.get(k)
            if nxt is None:
                nxt = node[k] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(key, f"{k} is not a section")
            node = nxt
        node[parts[-1]] = yaml.safe_load(val)
    return cfg


@dataclass
class Scenario:
    name: str
    description: str
    seed: int
    gens: GeneratorSet
    base_point: float
    pipelines: List[str]
    params: Dict[str, dict]
    raw: dict

    def p(self, pipeline: str) -> dict:
        return dict(self.params.get(pipeline) or {})


def _check_positive(d: dict, path: str, keys=("tol", "tail_tol", "eps0")):
    for k in keys:
        if k in d and not (isinstance(d[k], (int, float)) and d[k] > 0):
            raise ConfigError(f"{path}.{k}", f"must be a positive number, got {d[k]!r}")
    for k, v in d.items():
        if (k == "radius" or k.endswith("_radius")) and not (isinstance(v, int) and 0 <= v <= 14):
            raise ConfigError(f"{path}.{k}", f"radius must be an integer in 0..14, got {v!r}")


def validate_config(cfg: dict) -> Scenario:
    for key in ("name", "generators", "pipelines"):
        if key not in cfg:
            raise ConfigError(key, "missing required field")
    if not isinstance(cfg["generators"], dict) or not cfg["generators"]:
        raise ConfigError("generators", "must be a non-empty mapping of labels to maps")
    try:
        gens = generators_from_config(cfg["generators"])
    except (MapError, ValueError, KeyError, TypeError) as e:
        raise ConfigError("generators", str(e)) from e
    pipes = cfg["pipelines"]
    if not isinstance(pipes, list):
        raise ConfigError("pipelines", "must be a list")
    for i, name in enumerate(pipes):
        if name not in PIPELINES:
            raise ConfigError(f"pipelines[{i}]", f"unknown pipeline {name!r}; choose from {', '.join(PIPELINES)}")
    params = cfg.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params", "must be a mapping")
    for name, d in params.items():
        if name not in PIPELINES:
            raise ConfigError(f"params.{name}", "parameters for an unknown pipeline")
        if not isinstance(d, dict):
            raise ConfigError(f"params.{name}", "must be a mapping")
        _check_positive(d, f"params.{name}")
        for k, v in d.items():
            if k in ("letter", "f1", "f2") and v not in gens.letters:
                raise ConfigError(f"params.{name}.{k}", f"unknown generator label {v!r}")
            if k in ("gamma", "sigma", "psi") and isinstance(v, str):
                try:
                    gens.word_map(parse_word(v))
                except (KeyError, ValueError) as e:
                    raise ConfigError(f"params.{name}.{k}", f"word does not resolve: {e}") from e
    try:
        x0 = float(cfg.get("base_point", 0.0)) % 1.0
    except (TypeError, ValueError) as e:
        raise ConfigError("base_point", "must be a number") from e
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    ordered = [p for p in PIPELINES if p in pipes]
    return Scenario(str(cfg["name"]), str(cfg.get("description", "")), seed, gens, x0, ordered, params, cfg)


# ---------------------------------------------------------------- reports


@dataclass
class Claim:
    name: str
    status: str
    provenance: Dict[str, Any]
    value: Any = None
    note: str = ""

    def as_dict(self):
        d = {"claim": self.name, "status": self.status, "provenance": self.provenance}
        if self.value is not None:
            d["value"] = self.value
        if self.note:
            d["note"] = self.note
        return d


@dataclass
class PipelineResult:
    claims: List[Claim] = field(default_factory=list)
    files: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def status(self) -> str:
        if self.error is not None:
            return "error"
        st = [c.status for c in self.claims]
        if "fail" in st:
            return "fail"
        if "inconclusive" in st or not st:
            return "inconclusive"
        return "pass"

    def claim(self, name, ok, provenance, value=None, note="", inconclusive=False):
        status = "inconclusive" if inconclusive else ("pass" if ok else "fail")
        self.claims.append(Claim(name, status, provenance, value, note))

    def as_dict(self):
        d = {"status": self.status, "claims": [c.as_dict() for c in self.claims], "files": self.files,
             "summary": self.summary}
        if self.warnings:
            d["warnings"] = self.warnings
        if self.error is not None:
            d["error"] = self.error
        return d


@dataclass
class RunReport:
    scenario: str
    description: str
    seed: int
    pipelines: Dict[str, PipelineResult]
    out_dir: Path

    @property
    def errored(self) -> List[str]:
        return [k for k, v in self.pipelines.items() if v.error is not None]

    @property
    def exit_code(self) -> int:
        return 1 if self.errored else 0

    def as_dict(self):
        return {"scenario": self.scenario, "description": self.description, "seed": self.seed,
                "version": __version__,
                "pipelines": {k: v.as_dict() for k, v in self.pipelines.items()},
                "summary": {k: v.status for k, v in self.pipelines.items()}}


# ---------------------------------------------------------------- pipelines


class Context:
    def __init__(self, sc: Scenario, out: Path):
        self.sc = sc
        self.out = out
        self.cache: Dict[str, Any] = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def partition(self):
        if "partition" not in self.cache:
            p = self.sc.p("markov-validate").get("partition")
            if p is None:
                raise ConfigError("params.markov-validate.partition", "a partition is required")
            self.cache["partition"] = build_partition(p, self.sc.gens)
        return self.cache["partition"]


def build_partition(cfg: dict, gens: GeneratorSet):
    builder = cfg.get("builder")
    if builder == "ping-pong":
        return ping_pong_partition(gens, [(float(c), str(w)) for c, w in cfg["arcs"]], cfg.get("lambda"))
    if builder == "cusp":
        return cusp_partition(gens, [float(c) for c in cfg["cusps"]], [str(w) for w in cfg["letters"]],
                              cfg.get("lambda"))
    if builder is None:
        return partition_from_config(cfg, gens)
    raise ConfigError("params.markov-validate.partition.builder", f"unknown builder {builder!r}")


def run_jets(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("jets-selftest")
    rng = np.random.default_rng(sc.seed)
    count, length, points = int(p.get("words", 100)), int(p.get("max_length", 6)), int(p.get("points", 100))
    jc = jet_check(sc.gens, rng, count, length, points)
    prov = {"words": count, "max_length": length, "points": points, "tol": list(jc.as_dict()["tolerances"]),
            "seed": sc.seed}
    res.claim("jets match finite differences", jc.passed, prov, jc.as_dict())
    ws = random_words(sc.gens, rng, 2 * count, length)
    xs = rng.random(count)
    s_res = n_res = 0.0
    for i in range(count):
        f, g = sc.gens.word_map(ws[2 * i]), sc.gens.word_map(ws[2 * i + 1])
        s_res = max(s_res, float(schwarzian_cocycle_residual(f, g, xs[i])))
        n_res = max(n_res, float(nonlinearity_cocycle_residual(f, g, xs[i])))
    prov = {"triples": count, "max_length": length, "tol": 1e-9, "seed": sc.seed}
    res.claim("Schwarzian cocycle", s_res < 1e-9, prov, s_res)
    res.claim("nonlinearity cocycle", n_res < 1e-9, prov, n_res)


def run_orbit(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("orbit")
    radius, tol = int(p.get("radius", 6)), float(p.get("tol", 1e-9))
    orb = orbit(sc.gens, sc.base_point, radius, tol=tol)
    ctx.cache["orbit"] = orb
    worst = 0.0
    for pt in orb:
        y = float(sc.gens.word_map(pt.witness)(sc.base_point))
        worst = max(worst, abs(((y - pt.position + 0.5) % 1.0) - 0.5))
    write_csv(ctx.path("orbit.csv"), ["index", "position", "distance", "witness"],
              ([i, pt.position, pt.distance, format_word(pt.witness)] for i, pt in enumerate(orb)))
    res.files.append("orbit.csv")
    shells = [0] * (radius + 1)
    for pt in orb:
        shells[pt.distance] += 1
    res.summary.update({"points": len(orb), "shell_sizes": shells})
    res.claim("witnesses reproduce orbit points", worst <= tol, {"radius": radius, "tol": tol}, worst)


def run_schreier(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("schreier-ends")
    radius, tol = int(p.get("radius", 6)), float(p.get("tol", 1e-9))
    offset = int(p.get("offset", 3))
    start = float(p.get("start", sc.base_point))
    orb = orbit(sc.gens, start, radius, tol=tol)
    graph = build_schreier(orb, sc.gens)
    graph.write_edgelist(ctx.path("schreier.edges"))
    res.files.append("schreier.edges")
    res.warnings.extend(graph.warnings)
    rank = p.get("oracle_free_rank")
    expected = p.get("expected")
    oracle_adj = tree_ball_oracle(int(rank), radius)[1] if rank else None
    rows = []
    for i, r in enumerate(p.get("r", [0, 1, 2])):
        R = r + offset
        est = ends_estimate(graph, r, R)
        ref = None
        if oracle_adj is not None:
            ref = oracle_ends(oracle_adj, r, R)
        elif expected is not None:
            ref = int(expected[i])
        rows.append([r, R, est.count, "" if ref is None else ref, est.reliable])
        prov = {"radius": radius, "r": r, "R": R, "tol": tol}
        if not est.reliable:
            res.claim(f"ends estimate r={r}", False, prov, est.count, "; ".join(est.warnings), inconclusive=True)
        elif ref is None:
            res.claim(f"ends estimate r={r}", False, prov, est.count, "no reference value", inconclusive=True)
        else:
            res.claim(f"ends estimate r={r}", est.count == ref, prov, est.count, f"reference {ref}")
    write_csv(ctx.path("ends.csv"), ["r", "R", "components", "reference", "reliable"], rows)
    res.files.append("ends.csv")
    res.summary.update({"start": start, "vertices": graph.n, "edges": len(graph.edges)})
    try:
        ray = ray_to_infinity(graph)
        res.summary["greedy_ray"] = [orb.points[v].position for v in ray]
    except (DeadEnd, ValueError) as e:
        res.summary["greedy_ray"] = None
        res.warnings.append(f"ray: {e}")


def run_markov(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("markov-validate")
    part = ctx.partition()
    grid = int(p.get("grid", 1024))
    rep = validate_partition(part, sc.gens, grid=grid)
    write_csv(ctx.path("partition.csv"), ["left", "right", "word", "kind"],
              ([a.interval.left, a.interval.right, format_word(a.word), a.kind] for a in part.atoms))
    res.files.append("partition.csv")
    prov = {"grid": grid, "tol": rep.tol}
    res.claim("structure", rep.structural_ok, prov, None, rep.structural_message)
    for key, item in rep.items.items():
        res.claim(f"item {key}", item.passed, prov, item.worst, item.witness)
    res.summary.update({"atoms": len(part.atoms), "lambda": part.lam, "mode": part.mode,
                        "ne_points": list(part.ne_points)})
    if rep.structural_ok:
        sizes = []
        for k in range(int(p.get("levels", 0)) + 1):
            lev = refine_level(part, sc.gens, k)
            sizes.append({"level": k, "atoms": len(lev.atoms), "truncated": lev.truncated})
        res.summary["levels"] = sizes


def run_expansion(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("expansion")
    part = ctx.partition()
    radius, tol = int(p.get("radius", 6)), float(p.get("tol", 1e-9))
    max_steps = int(p.get("max_steps", 200))
    orb = orbit(sc.gens, sc.base_point, radius, tol=tol)
    results, stuck = [], []
    for pt in orb:
        try:
            results.append(expand_point(part, sc.gens, pt.position, max_steps=max_steps, tol=tol))
        except NonTermination as e:
            stuck.append(f"{pt.position:.17g}: {e}")
    prov = {"radius": radius, "tol": tol, "max_steps": max_steps}
    res.claim("expansion terminates", not stuck, prov, len(results), "; ".join(stuck[:3]))
    if results:
        ratios = [r.derivative / part.lam ** r.level for r in results]
        res.claim("derivative at least lambda^level", min(ratios) >= 1.0 - 1e-9, prov, min(ratios))
        disj = disjoint_by_level(results)
        res.claim("intervals disjoint within each level", all(disj.values()), prov,
                  {str(k): v for k, v in sorted(disj.items())})
        res.summary.update({"points": len(results), "max_level": max(r.level for r in results),
                            "max_distortion": max(r.distortion for r in results),
                            "comparability": comparability_constant(results)})
    write_csv(ctx.path("expansion.csv"), ["x", "level", "word", "derivative", "distortion", "ne_point"],
              ([r.x, r.level, format_word(r.word), r.derivative, r.distortion, r.ne_point] for r in results))
    res.files.append("expansion.csv")


def _integer_matrices(raw_gens: dict):
    out = {}
    for lab, desc in raw_gens.items():
        m = desc.get("mobius") if isinstance(desc, dict) else None
        if m is None:
            return None
        flat = np.asarray(m, dtype=float).ravel()
        if not np.all(flat == np.round(flat)):
            return None
        a, b, c, d = (int(v) for v in flat)
        out[lab] = ((a, b), (c, d))
    return out


def run_energy(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("energy")
    gens, x0 = sc.gens, sc.base_point
    tol = float(p.get("tol", 1e-9))
    ne_r = int(p.get("ne_radius", 8))
    md = float(max_derivative(gens, [x0], radius=ne_r)[0][0])
    res.claim("base point is NE", md <= 1.0 + tol, {"radius": ne_r, "tol": tol}, md)
    scan_r, scan_grid = int(p.get("scan_radius", 3)), int(p.get("scan_grid", 256))
    ne = detect_NE(gens, scan_r, grid=scan_grid)
    res.warnings.extend(ne.warnings)
    res.summary["ne_scan"] = {"radius": scan_r, "grid": scan_grid, "fraction": ne.fraction,
                              "candidates": len(ne.candidates)}

    star_r = int(p.get("star_radius", 2))
    st = check_star(gens, x0, star_r)
    prov = {"radius": star_r, "delta": st.delta}
    value = {"g_plus": st.g_plus, "g_minus": st.g_minus}
    if st.found:
        res.claim("property (star) witnesses", True, prov, value)
    else:
        res.claim("property (star) witnesses", False, prov, value, "no isolating element within radius",
                  inconclusive=True)

    stab_r = int(p.get("stabilizer_radius", 6))
    sp = stabilizer_probe(gens, x0, stab_r, tol=tol)
    sd = point_stabilizer(gens, x0, stab_r, tol=tol)
    res.summary["stabilizer"] = {"generator": sp.generator, "finite_order": sp.finite_order,
                                 "elements": len(sp.words), "b": sd.b}
    prov = {"radius": stab_r, "tol": tol}
    if sp.generator is None:
        res.claim("stabilizer is cyclic", False, prov, None, "no stabilizing word found", inconclusive=True)
    else:
        res.claim("stabilizer is cyclic", sp.cyclic_consistent, prov, format_word(sp.generator))

    series_r = int(p.get("series_radius", 6))
    es = energy_series(gens, x0, series_r, tol=tol)
    res.warnings.extend(es.warnings)
    res.summary["series"] = es.as_dict()
    res.claim("energy partial sums monotone", es.monotone, {"radius": series_r, "tol": tol}, es.partial_sums[-1])
    decay = all(b <= a * (1 + 1e-12) for a, b in zip(es.increments, es.increments[1:]))
    if es.warnings:
        res.claim("energy increments non-increasing", decay, {"radius": series_r}, None, es.warnings[0],
                  inconclusive=True)
    else:
        res.claim("energy increments non-increasing", decay, {"radius": series_r}, es.increments[-1])
    mats = _integer_matrices(sc.raw["generators"])
    if mats is not None and x0 == 0.0:
        _, sums = cusp_energy_oracle(series_r, mats)
        diff = max(abs(float(s) - v) for s, v in zip(sums, es.increments))
        res.claim("energy increments match integer-matrix oracle", diff < 1e-9,
                  {"radius": series_r, "tol": 1e-9}, diff)

    pair_r = int(p.get("pair_radius", 6))
    orb = orbit(gens, x0, pair_r, tol=tol)
    recs, pairs, worst_inc = [], 0, 0.0
    h = sd.h
    prov = {"radius": pair_r, "tol": 1e-6}
    try:
        for pt in orb:
            others = [multiply(pt.witness, h), multiply(pt.witness, invert_word(h))] if h else []
            energy(gens, x0, pt.witness, others, distance=pt.distance)
            recs.append(schwarzian_energy(gens, x0, pt.witness, sd, others, distance=pt.distance))
            pairs += len(others)
        res.claim("E and Q agree across witness pairs", True, prov, pairs)
    except WellDefinednessError as e:
        res.claim("E and Q agree across witness pairs", False, prov, pairs, str(e))
    by_pos = {}
    for pt, rec in zip(orb, recs):
        by_pos[pt.position] = rec
    for rec in recs:
        for lab in gens.letters:
            j = orb.find(float(gens.letter(lab)(rec.point)))
            if j is None:
                continue
            target = by_pos.get(orb.points[j].position)
            if target is not None:
                worst_inc = max(worst_inc, q_increment_residual(gens, x0, sd, lab, rec, target))
    res.claim("Q increment residual mod b", worst_inc < 1e-9, {"radius": pair_r, "tol": 1e-9}, worst_inc)
    write_csv(ctx.path("energy.csv"), ["point", "distance", "E", "Q_mod_b", "witness"], (r.row() for r in recs))
    res.files.append("energy.csv")


def run_duminy(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("duminy")
    gens = sc.gens
    gap_r = int(p.get("gap_radius", 8))
    cell, min_len = float(p.get("cell", 1e-5)), float(p.get("min_length", 1e-4))
    gs = extract_gaps(gens, sc.base_point, gap_r, cell, min_len)
    write_csv(ctx.path("gaps.csv"), ["left", "right", "length"],
              ([g.left, g.right, g.length] for g in gs.gaps))
    res.files.append("gaps.csv")
    res.summary["gaps"] = {"count": len(gs.gaps), "radius": gap_r, "cell": cell, "min_length": min_len,
                           "orbit_points": gs.sample_size}
    if not gs.gaps:
        res.claim("gaps found", False, {"radius": gap_r, "cell": cell}, 0, "orbit closure looks like the circle",
                  inconclusive=True)
        return
    stab_r = int(p.get("stabilizer_radius", 6))
    sd, J0 = gap_stabilizer(gens, gs.gaps[0], stab_r)
    res.summary["gap"] = [J0.left, J0.right]
    res.summary["stabilizer"] = sd.as_dict()
    a0 = gens.letters[0]
    res.summary["N_first_letter_of_gap"] = integral_nonlinearity(gens.letter(a0), J0)

    orb_r = int(p.get("orbit_radius", 5))
    orb, recs = gap_records(gens, J0, sd, orb_r)
    worst = 0.0
    index = {pt.position: rec for pt, rec in zip(orb, recs)}
    for rec in recs:
        for lab in gens.letters:
            j = orb.find(float(gens.letter(lab)(rec.point)))
            if j is not None:
                worst = max(worst, gap_increment_residual(gens, J0, sd, lab, rec, index[orb.points[j].position]))
    res.claim("N increment residual mod b", worst < 1e-9, {"radius": orb_r, "tol": 1e-9}, worst)
    write_csv(ctx.path("gap_energy.csv"), ["point", "distance", "E", "N_mod_b", "witness"],
              (r.row() for r in recs))
    res.files.append("gap_energy.csv")

    length, tail_tol = int(p.get("ray_length", 12)), float(p.get("tail_tol", 1e-3))
    rows = []
    for w in p.get("rays", [a0]):
        word = parse_word(w)
        vals = [gap_energy(gens, J0, g, sd).raw for g in power_ray(word, length)]
        cr = end_limit(vals, sd.b, tail_tol)
        prov = {"ray_length": length, "tol": tail_tol}
        res.claim(f"ray {w} is Cauchy", cr.cauchy, prov, {"tail": cr.tail, "ratio": cr.ratio, "limit": cr.limit},
                  inconclusive=not cr.cauchy)
        rows.append([w, cr.limit, cr.tail, cr.ratio, cr.cauchy])
    limits = sorted(r[1] for r in rows if r[4])
    if len(limits) > 1:
        # observed end limits only; the set of all limits is not claimed complete
        gaps = np.diff(limits)
        res.summary["end_limits"] = {"values": limits, "spread": limits[-1] - limits[0],
                                     "min_separation": float(np.min(gaps)), "rays": len(limits)}
    write_csv(ctx.path("rays.csv"), ["ray", "limit", "tail", "ratio", "cauchy"], rows)
    res.files.append("rays.csv")


def _chart(sc: Scenario, p: dict):
    return koenigs_chart(sc.gens.letter(p["letter"]), float(p.get("fixed_point", 0.0)))


def _projective_claim(res: PipelineResult, name: str, value: float, expect: bool, prov: dict):
    if expect:
        res.claim(name + " vanishes", value < 1e-8, dict(prov, tol=1e-8), value)
    else:
        res.claim(name + " is nonzero", value > 1e-3, dict(prov, tol=1e-3), value)


def run_holonomy(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("holonomy")
    chart = _chart(sc, p)
    res.claim("Koenigs conjugacy residual", chart.residual < 1e-10, {"tol": 1e-10}, chart.residual)
    res.summary["chart_domain"] = [chart.domain.left, chart.domain.right]
    grid = int(p.get("grid", 201))
    gamma = p.get("gamma", p["letter"])
    rep = projective_holonomy_test(chart, sc.gens.word_map(parse_word(gamma)), grid=grid)
    res.summary["holonomy"] = rep.as_dict()
    _projective_claim(res, f"Schwarzian of {gamma} in the chart", rep.max_abs,
                      bool(p.get("expect_projective", True)), {"grid": grid})


def run_atlas(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("atlas")
    chart = _chart(sc, p)
    radius, grid, m = int(p.get("radius", 3)), int(p.get("grid", 64)), int(p.get("max_arcs", 20))
    at = build_projective_atlas(sc.gens, m, chart, radius=radius, grid=grid)
    res.summary["atlas"] = at.as_dict()
    write_csv(ctx.path("atlas.csv"), ["left", "right", "word"],
              ([a.left, a.right, format_word(w)] for a, w in zip(at.arcs, at.words)))
    res.files.append("atlas.csv")
    _projective_claim(res, "generator compatibility", at.generator_max, bool(p.get("expect_projective", True)),
                      {"radius": radius, "grid": grid})


def run_discreteness(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("discreteness")
    gens, x0 = sc.gens, sc.base_point
    rows, ok = [], True
    for n in p.get("ball_radii", [1, 2, 3, 4]):
        B = ball(gens, int(n))
        st = frontier_stats(B.words, x0, gens)
        rows.append([n, st.rho, st.c_E, st.S_E, st.x_E, st.ell_E, format_word(st.g_E)])
        ok &= st.c_E >= 1 and st.ell_E > 0 and st.S_E > 0
    write_csv(ctx.path("frontier.csv"), ["n", "rho", "c_E", "S_E", "x_E", "ell_E", "g_E"], rows)
    res.files.append("frontier.csv")
    res.claim("frontier invariants", ok, {"radii": list(p.get("ball_radii", [1, 2, 3, 4]))},
              [r[2] for r in rows], "c_E per radius")
    if "presentation" not in p:
        return
    pres = presentation_from_config(p["presentation"])
    binding = dict(p["binding"])
    sigma = parse_word(p["sigma"])
    psi = parse_word(p["psi"]) if p.get("psi") else None
    R1 = int(p.get("R1", 1))
    fams = [build_family(pres, gens, binding, sigma, R1, int(n), psi=psi, x0=x0) for n in p.get("n", [1, 2, 3])]
    contained = all(f.rho <= f.rho_bound for f in fams)
    res.claim("families inside the predicted ball", contained, {"R1": R1, "n": [f.n for f in fams]},
              [[f.rho, f.rho_bound] for f in fams])
    conj = [f for f in fams if f.S_conj is not None and f.n <= 4]
    if conj:
        good = all(f.S_conj >= f.conj_lower_bound * (1 - 1e-9) for f in conj)
        res.claim("conjugation lower bound", good, {"grid": 256, "n": [f.n for f in conj]},
                  [[f.S_conj, f.conj_lower_bound] for f in conj])
    est = sufficient_estimate_report(fams, x0, gens)
    write_csv(ctx.path("estimate.csv"), ["n", "rho", "c", "S", "ratio", "r_n", "rescaled_c1"],
              ([r.n, r.rho, r.c, r.S, r.ratio, r.r_n, r.rescaled_c1] for r in est))
    res.files.append("estimate.csv")
    ratios = [r.ratio for r in est]
    trend = "decreasing" if all(b < a for a, b in zip(ratios, ratios[1:])) else "not decreasing"
    res.claim("sufficient-estimate ratio", False, {"R1": R1, "n": [r.n for r in est]}, ratios,
              f"diagnostic only; ratio {trend}", inconclusive=True)
    res.summary["families"] = [f.as_dict() for f in fams]


def run_probe(ctx: Context, res: PipelineResult):
    sc, p = ctx.sc, ctx.sc.p("probe")
    f1, f2 = sc.gens.letter(p["f1"]), sc.gens.letter(p["f2"])
    lo, hi = p.get("interval", [0.2, 0.3])
    I = Interval.from_endpoints(float(lo), float(hi))
    steps, eps0 = int(p.get("steps", 6)), float(p.get("eps0", 0.05))
    rep = commutator_probe(f1, f2, I, k=steps, eps0=eps0)
    res.summary["probe"] = rep.as_dict()
    write_csv(ctx.path("probe.csv"), ["step", "c0", "c1"],
              ([i + 1, a, b] for i, (a, b) in enumerate(zip(rep.c0, rep.c1))))
    res.files.append("probe.csv")
    expect = p.get("expect")
    prov = {"steps": steps, "eps0": eps0, "interval": [I.left, I.right]}
    label = rep.verdict + (f" at step {rep.step}" if rep.step is not None else "")
    if expect is None:
        res.claim("probe verdict", False, prov, label, "no expectation configured", inconclusive=True)
    else:
        res.claim(f"probe verdict is {expect}", rep.verdict == expect, prov, label, rep.message)


RUNNERS: Dict[str, Callable[[Context, PipelineResult], None]] = {
    "jets-selftest": run_jets,
    "orbit": run_orbit,
    "schreier-ends": run_schreier,
    "markov-validate": run_markov,
    "expansion": run_expansion,
    "energy": run_energy,
    "duminy": run_duminy,
    "holonomy": run_holonomy,
    "atlas": run_atlas,
    "discreteness": run_discreteness,
    "probe": run_probe,
}


def _run_one(ctx: Context, name: str) -> PipelineResult:
    res = PipelineResult()
    try:
        RUNNERS[name](ctx, res)
    except Exception as e:  # recorded per pipeline; independent pipelines keep running
        log.exception("pipeline %s failed", name)
        res.error = f"{type(e).__name__}: {e}"
    return res


def run_scenario(config, out, overrides: Optional[List[str]] = None, jobs: int = 1) -> RunReport:
    """Run every requested pipeline and write ``report.json`` plus tables into ``out``.

    With ``jobs > 1`` pipelines run on a thread pool; the shared Markov
    partition is built first, so the pipelines are independent, and results are
    merged in canonical pipeline order.
    """
    cfg = config if isinstance(config, dict) else load_config(config)
    cfg = apply_overrides(cfg, overrides or [])
    sc = validate_config(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(sc, out)
    results: Dict[str, PipelineResult] = {}
    pending = list(sc.pipelines)
    if jobs > 1 and len(pending) > 1:
        if {"markov-validate", "expansion"} & set(pending):
            try:
                ctx.partition()
            except Exception:
                pass  # reported by the pipelines that need it
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {name: pool.submit(_run_one, ctx, name) for name in pending}
            results = {name: futures[name].result() for name in pending}
    else:
        results = {name: _run_one(ctx, name) for name in pending}
    report = RunReport(sc.name, sc.description, sc.seed, results, out)
    (out / "report.json").write_text(dumps(to_plain(report.as_dict())) + "\n")
    return report


# ---------------------------------------------------------------- entry points


def selftest() -> int:
    """Run the jet and cocycle checks on every shipped scenario."""
    bad = 0
    for ex in list_examples():
        sc = validate_config(load_config(ex["name"]))
        rng = np.random.default_rng(sc.seed)
        jc = jet_check(sc.gens, rng, 20, 4, 20)
        print(f"{ex['name']:<22} jets {'ok' if jc.passed else 'FAILED'}  worst "
              + " ".join(format(w, ".2e") for w in jc.worst))
        bad += not jc.passed
    return 1 if bad else 0


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario file or shipped scenario name")
    r.add_argument("config")
    r.add_argument("--out", required=True)
    r.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--jobs", type=int, default=min(4, os.cpu_count() or 1),
                   help="pipelines run concurrently on this many threads")
    sub.add_parser("examples", help="list shipped scenarios")
    sub.add_parser("selftest", help="check jets against finite differences on shipped scenarios")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.cmd == "examples":
        for ex in list_examples():
            print(f"{ex['name']:<22} {ex['description']}")
        return 0
    if args.cmd == "selftest":
        return selftest()
    try:
        report = run_scenario(args.config, args.out, args.overrides, jobs=args.jobs)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    for name, res in report.pipelines.items():
        line = f"{name:<16} {res.status}"
        if res.error:
            line += f"  ({res.error})"
        print(line)
    print(f"report: {Path(args.out) / 'report.json'}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
