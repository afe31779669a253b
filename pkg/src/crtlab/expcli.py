"""Experiment runner: config parsing, replicate scheduling, files, plots.

Configs are TOML (or JSON) with a top-level `kind` plus optional sections;
defaults reproduce the standard parameterization of each experiment kind.
Outputs per run: one trajectory CSV and one rate-summary JSON per sweep
cell, a top-level summary JSON, density-snapshot and rate-vs-alpha SVGs,
and a manifest. Per-(cell, replicate) seeds are derived by hashing, so
results are byte-identical regardless of worker count or scheduling, and
adding cells never perturbs existing ones.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import os
import sys
import time
import traceback
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .distributions import (
    BiasSchedule,
    EvalGrid,
    GaussianComponent,
    TargetSpec,
    build_grid,
    mixture_cdf,
    mixture_pdf,
)
from .estimators import ECDF, EstimatorSpec, EstimatorState, cdf_on_grid, pdf_on_grid
from .metrics import MetricSettings
from .neuralgen import MlpSpec, NeuralRunConfig, TrainSpec, run_crt_neural
from .rates import RateSummary, fit_rate, should_normalize, summarize
from .recursion import RecursionConfig, m2_of, run_with_state
from .svgfig import SvgCanvas, nice_ticks
from .theory import (
    check_cesaro_bound,
    check_gamma_ratio_bounds,
    check_product_gamma_identity,
    predicted_rate,
    simulate_recursion_envelope,
)

KINDS = ("crt_ecdf", "crt_kde", "crt_neural", "bcrt_ecdf", "bcrt_kde", "theory_check")

CSV_HEADER = "replicate,t,M_t,w1,mmd,bias_level"


class ConfigError(ValueError):
    """Invalid or malformed experiment configuration."""


# ----------- Config model -----------


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    # target mixture
    weights: tuple = (0.35, 0.65)
    mus: tuple = (-2.0, 1.0)
    sigmas: tuple = (0.8, 1.3)
    # evaluation grid
    m_grid: int = 200
    tail_sds: float = 6.0
    # sweep / schedule
    m1: int = 50
    T: int = 2000
    replicates: int = 50
    base_seed: int = 0
    alphas: tuple = ()
    qs: tuple | None = None
    # estimator
    h0: float = 0.0
    p: float = 0.5
    bin_count: int = 800
    # bias schedule (bcrt kinds)
    bias_amplitude: float = 0.2
    bias_offset: float = 5.0
    bias_frozen: bool = False
    bias_mu: float = 3.0
    bias_sigma: float = 1.0
    # metrics
    gamma: float = 1.0
    squared: bool = False
    # neural generator (crt_neural)
    total_per_iteration: int = 500
    t_low_alpha: int = 200
    hidden_width: int = 64
    hidden_layers: int = 3
    leaky_slope: float = 0.02
    lr: float = 2e-4
    weight_decay: float = 1e-3
    batch_size: int = 1024
    epochs: int = 25
    eval_n: int = 20000
    # output
    output_dir: str = "runs"

    def target(self) -> TargetSpec:
        comps = tuple(GaussianComponent(m, s) for m, s in zip(self.mus, self.sigmas))
        return TargetSpec(tuple(self.weights), comps)

    def bias_schedule(self, q: float) -> BiasSchedule:
        return BiasSchedule(
            GaussianComponent(self.bias_mu, self.bias_sigma),
            amplitude=self.bias_amplitude,
            offset=self.bias_offset,
            q=q,
            frozen=self.bias_frozen,
        )

    def grid(self) -> EvalGrid:
        # q does not affect the grid span, only the component location does
        bias = self.bias_schedule(1.0) if self.kind.startswith("bcrt") else None
        return build_grid(self.target(), self.m_grid, self.tail_sds, bias=bias)

    def metric_settings(self) -> MetricSettings:
        return MetricSettings(gamma=self.gamma, squared=self.squared)

    def estimator(self) -> EstimatorSpec:
        kind = KDE_KINDS.get(self.kind)
        if kind is None:
            raise ConfigError(f"kind {self.kind} has no grid estimator")
        return EstimatorSpec(kind, h0=self.h0, p=self.p, bin_count=self.bin_count)


KDE_KINDS = {"crt_ecdf": "ecdf", "bcrt_ecdf": "ecdf", "crt_kde": "kde", "bcrt_kde": "kde"}

_DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(1, 11))

_KIND_DEFAULTS: dict[str, dict] = {
    "crt_ecdf": dict(m1=50, T=2000, replicates=50, h0=0.0, alphas=_DEFAULT_ALPHAS, qs=None),
    "crt_kde": dict(m1=50, T=2000, replicates=50, h0=0.5, alphas=_DEFAULT_ALPHAS, qs=None),
    "crt_neural": dict(m1=50, T=150, replicates=50, h0=0.0, alphas=_DEFAULT_ALPHAS, qs=None),
    "bcrt_ecdf": dict(
        m1=25, T=2000, replicates=100, h0=0.0,
        alphas=(0.25, 0.5, 0.75), qs=(0.25, 0.5, 0.75),
    ),
    "bcrt_kde": dict(
        m1=50, T=2000, replicates=20, h0=2.0,
        alphas=(0.25, 0.5, 0.75), qs=(0.25, 0.5, 0.75),
    ),
    "theory_check": dict(m1=1, T=1, replicates=1, h0=0.0, alphas=(1.0,), qs=None),
}

# section -> key -> (python type, config field)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "target": {
        "weights": (list, "weights"),
        "mus": (list, "mus"),
        "sigmas": (list, "sigmas"),
    },
    "grid": {"m_grid": (int, "m_grid"), "tail_sds": (float, "tail_sds")},
    "run": {
        "m1": (int, "m1"),
        "T": (int, "T"),
        "replicates": (int, "replicates"),
        "base_seed": (int, "base_seed"),
        "alphas": (list, "alphas"),
        "qs": (list, "qs"),
    },
    "estimator": {
        "h0": (float, "h0"),
        "p": (float, "p"),
        "bin_count": (int, "bin_count"),
    },
    "bias": {
        "amplitude": (float, "bias_amplitude"),
        "offset": (float, "bias_offset"),
        "frozen": (bool, "bias_frozen"),
        "mu": (float, "bias_mu"),
        "sigma": (float, "bias_sigma"),
    },
    "metrics": {"gamma": (float, "gamma"), "squared": (bool, "squared")},
    "neural": {
        "total_per_iteration": (int, "total_per_iteration"),
        "t_low_alpha": (int, "t_low_alpha"),
        "hidden_width": (int, "hidden_width"),
        "hidden_layers": (int, "hidden_layers"),
        "leaky_slope": (float, "leaky_slope"),
        "lr": (float, "lr"),
        "weight_decay": (float, "weight_decay"),
        "batch_size": (int, "batch_size"),
        "epochs": (int, "epochs"),
        "eval_n": (int, "eval_n"),
    },
    "output": {"dir": (str, "output_dir")},
}

_SECTION_KINDS = {
    "bias": ("bcrt_ecdf", "bcrt_kde"),
    "neural": ("crt_neural",),
    "estimator": ("crt_ecdf", "crt_kde", "bcrt_ecdf", "bcrt_kde"),
}


def _find_line(text: str, key: str) -> str:
    """Best-effort line hint for a config key in the raw source text."""
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith((key, f'"{key}"', f"[{key}]")):
            return f" (line {i})"
    return ""


def _coerce(value, typ, path: str, text: str):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number{_find_line(text, path.split('.')[-1])}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer{_find_line(text, path.split('.')[-1])}")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean{_find_line(text, path.split('.')[-1])}")
        return value
    if typ is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path} must be a list{_find_line(text, path.split('.')[-1])}")
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{path} entries must be numbers")
            out.append(float(v))
        return tuple(out)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string{_find_line(text, path.split('.')[-1])}")
        return value
    raise AssertionError(typ)


def parse_config(source) -> ExperimentConfig:
    """Load and validate a config from a file path or inline text.

    A string containing a newline (or starting with '{') is treated as the
    config text itself; anything else must be a readable file path. JSON is
    detected by a leading '{'; everything else parses as TOML. Unknown keys
    are rejected with the offending key named.
    """
    text = None
    if isinstance(source, str) and ("\n" in source or source.lstrip().startswith("{")):
        text = source
    else:
        path = os.fspath(source)
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config is not valid TOML: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table/object")
    return build_config(data, text)


def build_config(data: dict, text: str = "") -> ExperimentConfig:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind is None:
        raise ConfigError("missing required key 'kind'")
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    fields: dict = dict(kind=kind)
    fields.update(_KIND_DEFAULTS[kind])
    for section, content in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown key '{section}'{_find_line(text, section)}")
        allowed_kinds = _SECTION_KINDS.get(section)
        if allowed_kinds is not None and kind not in allowed_kinds:
            raise ConfigError(f"section [{section}] does not apply to kind {kind}")
        if not isinstance(content, dict):
            raise ConfigError(f"'{section}' must be a section/table")
        for key, value in content.items():
            entry = _SCHEMA[section].get(key)
            if entry is None:
                raise ConfigError(f"unknown key '{section}.{key}'{_find_line(text, key)}")
            typ, field = entry
            fields[field] = _coerce(value, typ, f"{section}.{key}", text)
    cfg = ExperimentConfig(**fields)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if not (len(cfg.weights) == len(cfg.mus) == len(cfg.sigmas)):
        raise ConfigError("target weights/mus/sigmas must have equal lengths")
    try:
        cfg.target()
        cfg.grid()
        cfg.metric_settings()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if cfg.kind == "theory_check":
        return
    if not cfg.alphas:
        raise ConfigError("run.alphas must be nonempty")
    for a in cfg.alphas:
        if not (0 < a <= 1):
            raise ConfigError(f"run.alphas entries must lie in (0, 1], got {a!r}")
    if cfg.kind.startswith("bcrt"):
        if not cfg.qs:
            raise ConfigError("run.qs must be nonempty for bcrt kinds")
        for q in cfg.qs:
            if not (q > 0):
                raise ConfigError(f"run.qs entries must be positive, got {q!r}")
    if cfg.replicates < 1:
        raise ConfigError("run.replicates must be at least 1")
    if cfg.m1 < 1:
        raise ConfigError("run.m1 must be at least 1")
    if cfg.T < 1:
        raise ConfigError("run.T must be at least 1")
    if cfg.kind in ("crt_kde", "bcrt_kde") and not (cfg.h0 > 0):
        raise ConfigError("estimator.h0 must be positive for kde kinds")
    if cfg.kind == "crt_neural":
        try:
            MlpSpec(
                hidden_width=cfg.hidden_width,
                hidden_layers=cfg.hidden_layers,
                leaky_slope=cfg.leaky_slope,
            )
            TrainSpec(
                lr=cfg.lr,
                weight_decay=cfg.weight_decay,
                batch_size=cfg.batch_size,
                epochs_per_iteration=cfg.epochs,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if cfg.total_per_iteration < 2:
            raise ConfigError("neural.total_per_iteration must be at least 2")


# ----------- Seeds, cells, workers -----------


def cell_seed(base_seed: int, kind: str, alpha: float, q: float | None, r: int) -> int:
    """Stable 64-bit per-(cell, replicate) seed."""
    msg = f"{base_seed}|{kind}|{alpha!r}|{q!r}|{r}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "big")


def _cells(cfg: ExperimentConfig) -> list[tuple[float, float | None]]:
    qs = cfg.qs if cfg.qs else (None,)
    return [(alpha, q) for alpha in cfg.alphas for q in qs]


def cell_label(alpha: float, q: float | None) -> str:
    return f"alpha={alpha:g}" + ("" if q is None else f";q={q:g}")


def _cell_fname(alpha: float, q: float | None) -> str:
    return f"alpha{alpha:g}" + ("" if q is None else f"_q{q:g}")


def _neural_m1(cfg: ExperimentConfig, alpha: float) -> int:
    return max(1, round(alpha * cfg.total_per_iteration))


def _alpha_effective(cfg: ExperimentConfig, alpha: float) -> float:
    m1 = _neural_m1(cfg, alpha) if cfg.kind == "crt_neural" else cfg.m1
    return m1 / (m1 + m2_of(m1, alpha))


def run_replicate(cfg: ExperimentConfig, alpha: float, q: float | None, r: int) -> dict:
    """Run one trajectory; returns rows, rate fits, and snapshot curves.

    Computation is pinned to one BLAS thread so results are bit-identical
    whether executed inline or in a worker pool.
    """
    seed = cell_seed(cfg.base_seed, cfg.kind, alpha, q, r)
    target = cfg.target()
    grid = cfg.grid()
    with threadpool_limits(limits=1):
        snapshot = None
        if cfg.kind == "crt_neural":
            ncfg = NeuralRunConfig(
                m1=_neural_m1(cfg, alpha),
                alpha=alpha,
                T=cfg.t_low_alpha if alpha == 0.1 else cfg.T,
                mlp=MlpSpec(
                    hidden_width=cfg.hidden_width,
                    hidden_layers=cfg.hidden_layers,
                    leaky_slope=cfg.leaky_slope,
                ),
                train=TrainSpec(
                    lr=cfg.lr,
                    weight_decay=cfg.weight_decay,
                    batch_size=cfg.batch_size,
                    epochs_per_iteration=cfg.epochs,
                ),
                seed=seed,
                eval_n=cfg.eval_n,
                metric_settings=cfg.metric_settings(),
            )
            traj = run_crt_neural(ncfg, target, grid)
        else:
            bias = None
            if cfg.kind.startswith("bcrt"):
                bias = cfg.bias_schedule(q if q is not None else 1.0)
            rcfg = RecursionConfig(
                m1=cfg.m1,
                alpha=alpha,
                T=cfg.T,
                estimator=cfg.estimator(),
                bias=bias,
                seed=seed,
                metric_settings=cfg.metric_settings(),
            )
            traj, state = run_with_state(rcfg, target, grid)
            if r == 0:
                snapshot = _snapshot_curves(state, target, grid)
        q_theory = None if (q is None or cfg.bias_frozen) else q
        norm = should_normalize(_alpha_effective(cfg, alpha), cfg.p, q_theory)
        fit_w1 = fit_rate(traj, normalize_log=norm, metric="w1")
        fit_mmd = fit_rate(traj, normalize_log=norm, metric="mmd")
    rows = [(pt.t, pt.M_t, pt.w1, pt.mmd, pt.bias_level) for pt in traj.points]
    return {
        "alpha": alpha,
        "q": q,
        "replicate": r,
        "rows": rows,
        "fit_w1": fit_w1,
        "fit_mmd": fit_mmd,
        "snapshot": snapshot,
    }


def _snapshot_curves(state: EstimatorState, target: TargetSpec, grid: EvalGrid) -> dict:
    if state.spec.kind == ECDF:
        est = cdf_on_grid(state, grid)
        tgt = mixture_cdf(target, grid.points)
        curve = "cdf"
    else:
        est = pdf_on_grid(state, grid)
        pdf = mixture_pdf(target, grid.points)
        tgt = pdf / np.trapezoid(pdf, dx=grid.spacing)
        curve = "pdf"
    return {"curve": curve, "est": [float(v) for v in est], "target": [float(v) for v in tgt]}


def _pool_task(args):
    cfg_fields, alpha, q, r = args
    cfg = ExperimentConfig(**cfg_fields)
    try:
        return run_replicate(cfg, alpha, q, r), None
    except Exception:
        return {"alpha": alpha, "q": q, "replicate": r}, traceback.format_exc()


# ----------- Output writers -----------


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _trajectory_csv(results: list[dict]) -> str:
    lines = [CSV_HEADER]
    for res in sorted(results, key=lambda d: d["replicate"]):
        r = res["replicate"]
        for t, m, w1, mmd, lvl in res["rows"]:
            lines.append(f"{r},{t},{m},{w1!r},{mmd!r},{lvl!r}")
    return "\n".join(lines) + "\n"


def _summary_entry(alpha, q, summary: RateSummary, sum_mmd) -> dict:
    return {
        "alpha": alpha,
        "q": q,
        "theory_rate": summary.theory_rate,
        "log_flag": summary.theory_log_flag,
        "mean_rate_w1": summary.mean_rate,
        "sd_rate_w1": summary.sd_rate,
        "mean_rate_mmd": sum_mmd.mean_rate,
        "sd_rate_mmd": sum_mmd.sd_rate,
        "n_replicates": len(summary.per_replicate),
    }


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    timestamp: str
    version: str
    files: tuple[str, ...]
    failed_cells: tuple[str, ...]


def config_hash(cfg: ExperimentConfig) -> str:
    """Identity of the experiment itself; where it is written does not matter."""
    fields = dataclasses.asdict(cfg)
    fields.pop("output_dir")
    blob = json.dumps(fields, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# ----------- Experiment driver -----------


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> RunManifest:
    """Run every (cell, replicate), then write CSVs, summaries, and plots.

    Failures are isolated per cell: a failed cell is recorded in the
    manifest and the remaining cells still complete.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    if cfg.kind == "theory_check":
        return _run_theory_check(cfg)

    tasks = [(alpha, q, r) for alpha, q in _cells(cfg) for r in range(cfg.replicates)]
    by_cell: dict[tuple, list[dict]] = {}
    errors: dict[tuple, str] = {}
    if workers <= 1:
        for alpha, q, r in tasks:
            try:
                res = run_replicate(cfg, alpha, q, r)
            except Exception:
                errors.setdefault((alpha, q), traceback.format_exc())
                continue
            by_cell.setdefault((alpha, q), []).append(res)
    else:
        cfg_fields = dataclasses.asdict(cfg)
        args = [(cfg_fields, alpha, q, r) for alpha, q, r in tasks]
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for res, err in pool.map(_pool_task, args, chunksize=1):
                key = (res["alpha"], res["q"])
                if err is not None:
                    errors.setdefault(key, err)
                else:
                    by_cell.setdefault(key, []).append(res)

    files: list[str] = []
    summary_all: dict[str, dict] = {}
    failed: list[str] = []
    for alpha, q in _cells(cfg):
        label = cell_label(alpha, q)
        if (alpha, q) in errors:
            failed.append(label)
            sys.stderr.write(f"cell {label} failed:\n{errors[(alpha, q)]}\n")
            continue
        results = sorted(by_cell.get((alpha, q), []), key=lambda d: d["replicate"])
        fname = _cell_fname(alpha, q)
        csv_path = os.path.join(cfg.output_dir, f"traj_{fname}.csv")
        _write_text(csv_path, _trajectory_csv(results))
        files.append(csv_path)
        a_eff = _alpha_effective(cfg, alpha)
        q_theory = None if (q is None or cfg.bias_frozen) else q
        sum_w1 = summarize([d["fit_w1"] for d in results], cfg.p, q_theory, a_eff)
        sum_mmd = summarize([d["fit_mmd"] for d in results], cfg.p, q_theory, a_eff)
        entry = _summary_entry(alpha, q, sum_w1, sum_mmd)
        summary_all[label] = entry
        json_path = os.path.join(cfg.output_dir, f"summary_{fname}.json")
        _write_json(json_path, entry)
        files.append(json_path)
        snap = next((d["snapshot"] for d in results if d["snapshot"] is not None), None)
        if snap is not None:
            svg_path = os.path.join(cfg.output_dir, f"density_{fname}.svg")
            _render_comparison(
                cfg.grid().points, np.array(snap["est"]), np.array(snap["target"]),
                snap["curve"], svg_path, {"cell": label},
            )
            files.append(svg_path)

    summary_path = os.path.join(cfg.output_dir, "summary.json")
    _write_json(summary_path, summary_all)
    files.append(summary_path)

    qs = cfg.qs if cfg.qs else (None,)
    if len(cfg.alphas) >= 2:
        for q in qs:
            pairs = [
                (alpha, summary_all[cell_label(alpha, q)])
                for alpha in cfg.alphas
                if cell_label(alpha, q) in summary_all
            ]
            if len(pairs) < 2:
                continue
            suffix = "" if q is None else f"_q{q:g}"
            plot_path = os.path.join(cfg.output_dir, f"rate_vs_alpha{suffix}.svg")
            _rate_plot_from_entries(pairs, plot_path)
            files.append(plot_path)

    manifest = RunManifest(
        config_hash=config_hash(cfg),
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        version=__version__,
        files=tuple(os.path.relpath(f, cfg.output_dir) for f in files),
        failed_cells=tuple(failed),
    )
    _write_json(os.path.join(cfg.output_dir, "manifest.json"), dataclasses.asdict(manifest))
    return manifest


# ----------- Theory check battery -----------


def _run_theory_check(cfg: ExperimentConfig) -> RunManifest:
    report = theory_check_report(cfg.base_seed)
    path = os.path.join(cfg.output_dir, "theory_report.json")
    _write_json(path, report)
    manifest = RunManifest(
        config_hash=config_hash(cfg),
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        version=__version__,
        files=("theory_report.json",),
        failed_cells=() if report["all_pass"] else ("theory_check",),
    )
    _write_json(os.path.join(cfg.output_dir, "manifest.json"), dataclasses.asdict(manifest))
    return manifest


_ENVELOPE_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
_ENVELOPE_BIAS_CELLS = (
    (0.5, 0.75, 0.25),
    (0.9, 0.9, 0.25),
    (0.5, 0.5, 0.5),
    (0.3, 0.8, 0.6),
    (0.7, 0.9, 0.45),
)


def theory_check_report(base_seed: int = 0) -> dict:
    """Machine-readable results of the full oracle battery."""
    rng = np.random.default_rng(cell_seed(base_seed, "theory_check", 0.0, None, 0))
    max_rel = 0.0
    for _ in range(1000):
        t = int(rng.integers(3, 2001))
        j = int(rng.integers(1, t - 1))
        alpha = float(rng.uniform(0.05, 0.95))
        lhs, _, diff = check_product_gamma_identity(j, t, alpha)
        max_rel = max(max_rel, diff / lhs)
    identity = {"n_triples": 1000, "max_rel_diff": max_rel, "tol": 1e-10,
                "pass": max_rel <= 1e-10}

    t_range = list(range(2, 101)) + [158, 251, 398, 631, 1000, 1585, 2512, 3981, 6310, 10000]
    gamma_ratio = {}
    for alpha in [round(0.1 * i, 1) for i in range(1, 10)]:
        left, right = check_gamma_ratio_bounds(alpha, t_range)
        big = left.ts >= 50
        lo50 = float(left.ratios[big].min())
        hi50 = float(left.ratios[big].max())
        gamma_ratio[f"{alpha:g}"] = {
            "lo": left.lo, "hi": left.hi, "lo_t50": lo50, "hi_t50": hi50,
            "inverse_lo": right.lo, "inverse_hi": right.hi,
            "pass": 0.9 <= lo50 and hi50 <= 1.1,
        }

    cesaro = {}
    for q in (0.25, 0.5, 1.0, 2.0):
        rep = check_cesaro_bound(q, 10_000)
        cesaro[f"{q:g}"] = {"sup_ratio": rep.hi, "inf_ratio": rep.lo, "pass": rep.hi <= 3.0}

    cells = []
    max_diff = 0.0
    for p in _ENVELOPE_GRID:
        for alpha in _ENVELOPE_GRID:
            cells.append((p, alpha, None))
    cells.extend(_ENVELOPE_BIAS_CELLS)
    env_rows = []
    for p, alpha, q in cells:
        res = simulate_recursion_envelope(p, alpha, C=1.0, t_max=100_000, q=q)
        pred = predicted_rate(p, alpha, q)
        diff = abs(res.fitted_exponent - pred.exponent)
        max_diff = max(max_diff, diff)
        env_rows.append({
            "p": p, "alpha": alpha, "q": q,
            "fitted": res.fitted_exponent, "predicted": pred.exponent,
            "log_normalized": res.log_normalized, "abs_diff": diff,
        })
    envelope = {"cells": env_rows, "max_abs_diff": max_diff, "tol": 0.05,
                "pass": max_diff <= 0.05}

    all_pass = bool(
        identity["pass"]
        and all(v["pass"] for v in gamma_ratio.values())
        and all(v["pass"] for v in cesaro.values())
        and envelope["pass"]
    )
    return {
        "identity": identity,
        "gamma_ratio": gamma_ratio,
        "cesaro": cesaro,
        "envelope": envelope,
        "all_pass": all_pass,
    }


# ----------- Plot emission -----------

_BLUE = "#2b6cb0"
_RED = "#c0392b"
_BAND = "#7fb3e0"

_REGIME_COLORS = {
    "real_data_limited": "#c65353",
    "baseline_limited": "#5379c6",
    "bias_limited": "#8c5fb5",
    "boundary": "#e8e3d8",
}


def emit_rate_plot(summaries, out) -> None:
    """Empirical mean rate with a +-sd band against the predicted rate.

    `summaries` is a sequence of (alpha, RateSummary) pairs, at least two.
    """
    pairs = [(float(a), s) for a, s in summaries]
    if len(pairs) < 2:
        raise ValueError("need at least two alpha values to plot")
    pairs.sort(key=lambda p: p[0])
    entries = [
        (a, {"mean_rate_w1": s.mean_rate, "sd_rate_w1": s.sd_rate, "theory_rate": s.theory_rate})
        for a, s in pairs
    ]
    _rate_plot_from_entries(entries, out)


def _rate_plot_from_entries(pairs, out) -> None:
    alphas = [a for a, _ in pairs]
    means = [e["mean_rate_w1"] for _, e in pairs]
    sds = [e["sd_rate_w1"] for _, e in pairs]
    theory = [e["theory_rate"] for _, e in pairs]
    lo_band = [m - s for m, s in zip(means, sds)]
    hi_band = [m + s for m, s in zip(means, sds)]
    ymin = min(0.0, min(lo_band), min(theory))
    ymax = max(max(hi_band), max(theory)) * 1.15 + 1e-9
    cv = SvgCanvas()
    cv.set_view(min(alphas), max(alphas), ymin, ymax)
    cv.set_metadata({
        "alpha": alphas, "mean_rate": means, "sd_rate": sds, "theory_rate": theory,
    })
    cv.polygon(alphas + alphas[::-1], hi_band + lo_band[::-1], _BAND, opacity=0.35)
    cv.polyline(alphas, theory, _RED, width=2.5)
    cv.polyline(alphas, means, _BLUE, width=2.5)
    for a, m in zip(alphas, means):
        cv.circle(a, m, 3.2, _BLUE)
    cv.axes(
        "real-data fraction alpha", "convergence rate",
        nice_ticks(min(alphas), max(alphas)), nice_ticks(ymin, ymax),
        title="Empirical vs predicted rate",
    )
    cv.legend([("empirical mean +- sd", _BLUE), ("theory", _RED)])
    cv.write(out)


def emit_phase_diagram(p_grid, alpha_grid, out) -> None:
    """Regime heatmap over (alpha, p) with the phase boundary diagonal."""
    ps = [float(v) for v in p_grid]
    alphas = [float(v) for v in alpha_grid]
    if not ps or not alphas:
        raise ValueError("grids must be nonempty")
    ps.sort()
    alphas.sort()
    regimes = [[predicted_rate(p, a).regime for p in ps] for a in alphas]
    cv = SvgCanvas()

    def edges(vals):
        if len(vals) == 1:
            return [vals[0] - 0.5, vals[0] + 0.5]
        mids = [(vals[i] + vals[i + 1]) / 2 for i in range(len(vals) - 1)]
        first = vals[0] - (mids[0] - vals[0])
        last = vals[-1] + (vals[-1] - mids[-1])
        return [first] + mids + [last]

    xe, ye = edges(alphas), edges(ps)
    cv.set_view(xe[0], xe[-1], ye[0], ye[-1])
    cv.set_metadata({"p": ps, "alpha": alphas, "regime": regimes})
    for i, a in enumerate(alphas):
        for j, p in enumerate(ps):
            cv.rect_data(xe[i], xe[i + 1], ye[j], ye[j + 1], _REGIME_COLORS[regimes[i][j]])
    lo = max(xe[0], ye[0])
    hi = min(xe[-1], ye[-1])
    if hi > lo:
        cv.polyline([lo, hi], [lo, hi], "#222", width=2.0, dash="6,4")
    cv.axes(
        "real-data fraction alpha", "baseline rate p",
        nice_ticks(xe[0], xe[-1]), nice_ticks(ye[0], ye[-1]),
        title="Rate-limiting regime",
    )
    cv.write(out)


def emit_density_snapshot(state: EstimatorState, target: TargetSpec, grid: EvalGrid, out) -> None:
    """Final estimator fit against the target: CDFs for ECDF, densities for KDE."""
    if state.store.n == 0:
        raise ValueError("no data")
    snap = _snapshot_curves(state, target, grid)
    _render_comparison(
        grid.points, np.array(snap["est"]), np.array(snap["target"]), snap["curve"], out, {},
    )


def _render_comparison(xs, est, tgt, curve: str, out, extra_meta: dict) -> None:
    max_gap = float(np.max(np.abs(est - tgt)))
    ymax = float(max(est.max(), tgt.max()))
    cv = SvgCanvas()
    cv.set_view(float(xs[0]), float(xs[-1]), 0.0, ymax * 1.1 + 1e-9)
    meta = {"curve": curve, "max_gap": max_gap}
    meta.update(extra_meta)
    cv.set_metadata(meta)
    cv.polyline(xs, tgt, _RED, width=2.0)
    cv.polyline(xs, est, _BLUE, width=2.0)
    label = "CDF" if curve == "cdf" else "density"
    cv.axes(
        "x", label,
        nice_ticks(float(xs[0]), float(xs[-1])), nice_ticks(0.0, ymax * 1.1),
        title=f"Estimated vs target {label} (max gap {max_gap:.4f})",
    )
    cv.legend([("estimate", _BLUE), ("target", _RED)])
    cv.write(out)


# ----------- CLI -----------

_CMD_KINDS = {
    "crt": ("crt_ecdf", "crt_kde"),
    "bcrt": ("bcrt_ecdf", "bcrt_kde"),
    "wgan": ("crt_neural",),
    "theory-check": ("theory_check",),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crtlab",
        description="Recursive-training simulation lab: run sweeps, check theory, plot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("crt", "contaminated recursive training sweep (ecdf/kde estimators)"),
        ("bcrt", "biased contaminated recursive training sweep"),
        ("wgan", "recursive neural-generator sweep"),
        ("theory-check", "run the numeric oracle battery and write a JSON report"),
        ("plot", "re-emit figures from an existing output directory"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="TOML or JSON config file")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--replicates", type=int, help="override replicate count")
        sp.add_argument("--seed", type=int, help="override base seed")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    return parser


def _config_for(args) -> ExperimentConfig:
    if args.config:
        cfg = parse_config(args.config)
    else:
        default_kind = _CMD_KINDS[args.command][0]
        cfg = build_config({"kind": default_kind})
    if args.command in _CMD_KINDS and cfg.kind not in _CMD_KINDS[args.command]:
        raise ConfigError(
            f"config kind {cfg.kind} does not match subcommand {args.command!r}"
        )
    updates = {}
    if args.out:
        updates["output_dir"] = args.out
    if args.replicates is not None:
        if args.replicates < 1:
            raise ConfigError("--replicates must be at least 1")
        updates["replicates"] = args.replicates
    if args.seed is not None:
        updates["base_seed"] = args.seed
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _cmd_plot(args) -> int:
    out_dir = args.out or "runs"
    summary_path = os.path.join(out_dir, "summary.json")
    emitted = []
    if os.path.exists(summary_path):
        with open(summary_path, "rb") as fh:
            summary = json.load(fh)
        by_q: dict = {}
        for entry in summary.values():
            by_q.setdefault(entry["q"], []).append((entry["alpha"], entry))
        for q, pairs in sorted(by_q.items(), key=lambda kv: (kv[0] is not None, kv[0])):
            if len(pairs) < 2:
                continue
            pairs.sort(key=lambda p: p[0])
            suffix = "" if q is None else f"_q{q:g}"
            path = os.path.join(out_dir, f"rate_vs_alpha{suffix}.svg")
            _rate_plot_from_entries(pairs, path)
            emitted.append(path)
    grid_vals = [round(0.05 * k, 2) for k in range(1, 20)]
    phase_path = os.path.join(out_dir, "phase_diagram.svg")
    emit_phase_diagram(grid_vals, grid_vals, phase_path)
    emitted.append(phase_path)
    for path in emitted:
        print(path)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            os.makedirs(args.out or "runs", exist_ok=True)
            return _cmd_plot(args)
        cfg = _config_for(args)
    except ConfigError as e:
        sys.stderr.write(f"config error: {e}\n")
        return 1
    workers = max(1, args.workers)
    manifest = run_experiment(cfg, workers=workers)
    print(os.path.join(cfg.output_dir, "manifest.json"))
    if manifest.failed_cells:
        sys.stderr.write(f"failed cells: {', '.join(manifest.failed_cells)}\n")
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
