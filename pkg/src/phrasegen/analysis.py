"""Hyperparameter sweep orchestration and the intrinsic-vs-extrinsic OLS
study, plus CSV/SVG scatter export.

The sweep store is an append-only JSON-lines file keyed by config hash, so
interrupted sweeps resume without retraining finished configurations. OLS
is solved in closed form from the normal equations; F- and t-test p-values
go through a from-scratch regularized incomplete beta function (validated
against scipy in the test suite).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import generators as gen
from . import metrics as mx
from .corpus import Split
from .extrinsic import ClassifierConfig, augmentation_experiment
from .generators import (
    GeneratorConfig,
    ModelKind,
    SamplingStrategy,
    TrainingObjective,
    generate_for_phrases,
    train_generator,
)

METRIC_NAMES = mx.IntrinsicReport.METRICS


@dataclass(frozen=True)
class SweepConfig:
    kind: ModelKind
    objective: TrainingObjective
    sampling: SamplingStrategy
    generator: GeneratorConfig

    def config_hash(self):
        payload = json.dumps(
            {
                "kind": self.kind.value,
                "objective": self.objective.value,
                "sampling": self.sampling.value,
                "generator": self.generator.to_dict(),
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class SweepRecord:
    kind: str
    objective: str
    sampling: str
    config_hash: str
    report: mx.IntrinsicReport
    delta_f1: float
    config: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self):
        payload = {
            "kind": self.kind,
            "objective": self.objective,
            "sampling": self.sampling,
            "config_hash": self.config_hash,
            "delta_f1": self.delta_f1,
            "config": self.config,
            "error": self.error,
            "report": None if self.report is None else {
                f: getattr(self.report, f)
                for f in (*mx.IntrinsicReport.METRICS, "n_hypotheses", "excluded_fraction")
            },
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        data = json.loads(line)
        report = data["report"]
        return cls(
            kind=data["kind"],
            objective=data["objective"],
            sampling=data["sampling"],
            config_hash=data["config_hash"],
            report=None if report is None else mx.IntrinsicReport(**report),
            delta_f1=data["delta_f1"],
            config=data.get("config", {}),
            error=data.get("error"),
        )

    def metric(self, name):
        if name == "delta_f1":
            return self.delta_f1
        return self.report.metric(name)


def default_grid(base=None, max_runs=40):
    """The stock desk-scale sweep grid, pruned to at most `max_runs`."""
    base = base or GeneratorConfig()
    combos = [
        (ModelKind.CVAE, TrainingObjective.RECONSTRUCTION, SamplingStrategy.PRIOR),
        (ModelKind.CVAE, TrainingObjective.PARAPHRASE, SamplingStrategy.POSTERIOR),
        (ModelKind.VAE, TrainingObjective.RECONSTRUCTION, SamplingStrategy.PRIOR),
        (ModelKind.S2S, TrainingObjective.PARAPHRASE, SamplingStrategy.POSTERIOR),
    ]
    grid = []
    for hidden in (64, 128):
        for latent in (8, 16, 32):
            for temperature in (0.7, 1.0, 1.3):
                for dropout in (0.0, 0.25, 0.5):
                    for anneal in (500, 2000):
                        kind, objective, sampling = combos[len(grid) % len(combos)]
                        cfg = gen.GeneratorConfig(**{
                            **base.to_dict(),
                            "hidden_dim": hidden,
                            "latent_dim": latent,
                            "temperature": temperature,
                            "word_dropout": dropout,
                            "kl_anneal_steps": anneal,
                        })
                        grid.append(SweepConfig(kind, objective, sampling, cfg))
                        if len(grid) >= max_runs:
                            return grid
    return grid


def run_one(sweep_cfg, corpus, per_phrase=10, eval_seed=0, classifier_cfg=None,
            with_extrinsic=True):
    """Train one configuration and score it; returns a SweepRecord."""
    model = train_generator(sweep_cfg.kind, sweep_cfg.objective, corpus,
                            sweep_cfg.generator)
    test_phrases = corpus.phrases(Split.TEST)
    hyps, inputs = generate_for_phrases(model, test_phrases, sweep_cfg.sampling,
                                        per_phrase, seed=eval_seed)
    uses_inputs = sweep_cfg.sampling is SamplingStrategy.POSTERIOR
    report = mx.intrinsic_report(
        hyps,
        mx.references(corpus, Split.TRAIN),
        mx.references(corpus, Split.TEST),
        corpus.slot_inventory(),
        inputs_used=inputs if uses_inputs else None,
        assign_uncontrolled=True,
    )
    delta = 0.0
    if with_extrinsic:
        result = augmentation_experiment(
            corpus, [("gen", model)], cfg=classifier_cfg, per_phrase=per_phrase,
            seed=eval_seed,
        )
        delta = result.arms[0].delta
    return SweepRecord(
        kind=sweep_cfg.kind.value,
        objective=sweep_cfg.objective.value,
        sampling=sweep_cfg.sampling.value,
        config_hash=sweep_cfg.config_hash(),
        report=report,
        delta_f1=delta,
        config=sweep_cfg.generator.to_dict(),
    )


def _run_one_entry(args):
    sweep_cfg, corpus, per_phrase, eval_seed, classifier_cfg, with_extrinsic = args
    try:
        record = run_one(sweep_cfg, corpus, per_phrase, eval_seed, classifier_cfg,
                         with_extrinsic)
    except Exception as err:  # individual failures are recorded, sweep continues
        record = SweepRecord(
            kind=sweep_cfg.kind.value,
            objective=sweep_cfg.objective.value,
            sampling=sweep_cfg.sampling.value,
            config_hash=sweep_cfg.config_hash(),
            report=None,
            delta_f1=float("nan"),
            config=sweep_cfg.generator.to_dict(),
            error=f"{type(err).__name__}: {err}",
        )
    return record


def load_store(store_path):
    records = []
    if os.path.exists(store_path):
        with open(store_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(SweepRecord.from_json(line))
    return records


def run_sweep(grid, corpus, store_path, per_phrase=10, eval_seed=0,
              classifier_cfg=None, with_extrinsic=True, workers=1):
    """Run every configuration not already present in the store.

    Completed config hashes are skipped (resume contract); failures are
    recorded with their error text and do not stop the sweep. Returns all
    records in the store, sorted by config hash.
    """
    if not grid:
        raise ValueError("sweep grid is empty")
    done = {r.config_hash for r in load_store(store_path)}
    todo = [cfg for cfg in grid if cfg.config_hash() not in done]
    jobs = [(cfg, corpus, per_phrase, eval_seed, classifier_cfg, with_extrinsic)
            for cfg in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            new_records = list(pool.map(_run_one_entry, jobs))
    else:
        new_records = [_run_one_entry(job) for job in jobs]
    if new_records:
        with open(store_path, "a", encoding="utf-8") as fh:
            for record in new_records:
                fh.write(record.to_json() + "\n")
    return sorted(load_store(store_path), key=lambda r: r.config_hash)


# ---------------------------------------------------------------------------
# OLS with from-scratch distribution functions


def _log_beta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def betainc_regularized(a, b, x):
    """Regularized incomplete beta I_x(a, b) via the Lentz continued
    fraction, with the symmetry flip for fast convergence."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc_regularized requires a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    if x > (a + 1.0) / (a + b + 2.0):
        return 1.0 - betainc_regularized(b, a, 1.0 - x)
    front = math.exp(a * math.log(x) + b * math.log(1.0 - x) - _log_beta(a, b)) / a
    tiny = 1e-300
    c = 1.0
    d = 1.0 - (a + b) * x / (a + 1.0)
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        num = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            break
    return front * h


def f_sf(f_stat, d1, d2):
    """Survival function of the F distribution."""
    if f_stat <= 0:
        return 1.0
    return betainc_regularized(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f_stat))


def t_sf_two_sided(t_stat, dof):
    """Two-sided p for a t statistic."""
    t2 = t_stat * t_stat
    return betainc_regularized(dof / 2.0, 0.5, dof / (dof + t2))


@dataclass
class OlsResult:
    coefficients: np.ndarray  # without the intercept
    intercept: float
    r_squared: float
    f_statistic: float
    f_p_value: float
    coef_p_values: np.ndarray
    intercept_p_value: float
    residuals: np.ndarray = field(repr=False, default=None)


def ols_fit(x, y):
    """Closed-form OLS with intercept via the normal equations.

    Raises on rank deficiency, naming the offending columns (including a
    constant predictor column, which collides with the intercept).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim == 1:
        x = x[:, None]
    n, k = x.shape
    if y.shape[0] != n:
        raise ValueError(f"x has {n} rows but y has {y.shape[0]}")
    if n <= k + 1:
        raise ValueError(f"need more rows ({n}) than predictors plus intercept ({k + 1})")
    design = np.concatenate([np.ones((n, 1)), x], axis=1)
    rank = np.linalg.matrix_rank(design)
    if rank < k + 1:
        raise ValueError(
            "design matrix is rank deficient; collinear predictor columns: "
            f"{_collinear_columns(design)}"
        )
    xtx = design.T @ design
    beta = np.linalg.solve(xtx, design.T @ y)
    fitted = design @ beta
    resid = y - fitted
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    dof = n - k - 1
    sigma2 = ss_res / dof
    if ss_res <= 0 or ss_tot <= 0:
        f_stat, f_p = float("inf") if ss_tot > 0 else 0.0, 0.0 if ss_tot > 0 else 1.0
        se = np.full(k + 1, np.nan)
    else:
        f_stat = (r2 / k) / ((1.0 - r2) / dof) if r2 < 1.0 else float("inf")
        f_p = 0.0 if not math.isfinite(f_stat) else f_sf(f_stat, k, dof)
        se = np.sqrt(np.diag(np.linalg.inv(xtx)) * sigma2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = beta / se
    p_values = np.array([_p_from_t(t, dof) for t in t_stats])
    return OlsResult(
        coefficients=beta[1:],
        intercept=float(beta[0]),
        r_squared=r2,
        f_statistic=f_stat,
        f_p_value=f_p,
        coef_p_values=p_values[1:],
        intercept_p_value=float(p_values[0]),
        residuals=resid,
    )


def _p_from_t(t, dof):
    if math.isnan(t):
        return 1.0  # zero-variance case: no evidence either way
    if math.isinf(t):
        return 0.0
    return t_sf_two_sided(t, dof)


def _collinear_columns(design):
    """Greedy scan for columns that do not increase the design rank."""
    bad = []
    kept = design[:, :1]
    for j in range(1, design.shape[1]):
        trial = np.concatenate([kept, design[:, j:j + 1]], axis=1)
        if np.linalg.matrix_rank(trial) == kept.shape[1]:
            bad.append(j - 1)  # report as predictor index (intercept excluded)
        else:
            kept = trial
    return bad


def pearson_r(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float(xd @ xd) * float(yd @ yd))
    if denom == 0:
        raise ValueError("pearson_r undefined for constant input")
    return float(xd @ yd) / denom


@dataclass
class StudyResult:
    single_r2: dict
    single_p: dict
    combined_r2: float
    combined_p: float
    combined_dominates: bool

    def to_text(self):
        lines = ["predictor\tr_squared\tp_value"]
        for name in METRIC_NAMES:
            lines.append(f"{name}\t{self.single_r2[name]:.6f}\t{self.single_p[name]:.3g}")
        lines.append(f"all_six\t{self.combined_r2:.6f}\t{self.combined_p:.3g}")
        lines.append(f"combined_dominates_singles\t{str(self.combined_dominates).lower()}\t-")
        return "".join(line + "\n" for line in lines)


def intrinsic_extrinsic_study(records, min_records=10):
    """Per-metric and combined OLS of delta-F1 on the intrinsic metrics."""
    usable = [r for r in records if r.error is None and r.report is not None
              and math.isfinite(r.delta_f1)]
    if len(usable) < min_records:
        raise ValueError(f"need at least {min_records} sweep records, got {len(usable)}")
    y = np.array([r.delta_f1 for r in usable])
    single_r2 = {}
    single_p = {}
    for name in METRIC_NAMES:
        col = np.array([r.report.metric(name) for r in usable])
        fit = ols_fit(col[:, None], y)
        single_r2[name] = fit.r_squared
        single_p[name] = fit.f_p_value
    x_all = np.array([[r.report.metric(name) for name in METRIC_NAMES] for r in usable])
    fit_all = ols_fit(x_all, y)
    best_single = max(single_r2.values())
    return StudyResult(
        single_r2=single_r2,
        single_p=single_p,
        combined_r2=fit_all.r_squared,
        combined_p=fit_all.f_p_value,
        combined_dominates=fit_all.r_squared >= best_single - 1e-12,
    )


# ---------------------------------------------------------------------------
# scatter export

_GLYPHS = {
    "s2s": "circle",
    "vae": "square",
    "cvae": "triangle",
    "vae_disc": "diamond",
    "cvae_disc": "cross",
}


def export_scatter(records, x_metric, y_metric, path_prefix):
    """Write `<prefix>.csv` and `<prefix>.svg` for two record metrics.

    Unknown metric names raise. A horizontal rule at y=0 is drawn whenever
    the y metric can be negative (delta plots).
    """
    for name in (x_metric, y_metric):
        if name != "delta_f1" and name.replace(".", "_") not in METRIC_NAMES:
            raise KeyError(f"unknown metric {name!r}")
    usable = [r for r in records if r.error is None and r.report is not None]
    rows = [(r.kind, r.metric(x_metric), r.metric(y_metric)) for r in usable]
    csv_path = f"{path_prefix}.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(f"model,{x_metric},{y_metric}\n")
        for kind, xv, yv in rows:
            fh.write(f"{kind},{xv!r},{yv!r}\n")
    svg_path = f"{path_prefix}.svg"
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(_scatter_svg(rows, x_metric, y_metric))
    return csv_path, svg_path


def _scale(values, lo, hi, out_lo, out_hi):
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return [out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo) for v in values]


def _scatter_svg(rows, x_label, y_label, width=480, height=360, margin=50):
    xs = [r[1] for r in rows]
    ys = [r[2] for r in rows]
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if any(y < 0 for y in ys) or y_metric_is_delta(y_label):
        y_lo = min(y_lo, 0.0)
        y_hi = max(y_hi, 0.0)
    px = _scale(xs, x_lo, x_hi, margin, width - margin)
    py = _scale(ys, y_lo, y_hi, height - margin, margin)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.1f})">{y_label}</text>',
    ]
    if y_lo < 0 < y_hi:
        (zero_y,) = _scale([0.0], y_lo, y_hi, height - margin, margin)
        parts.append(
            f'<line x1="{margin}" y1="{zero_y:.1f}" x2="{width - margin}" '
            f'y2="{zero_y:.1f}" stroke="gray" stroke-dasharray="4 3"/>'
        )
    for (kind, _, _), x, y in zip(rows, px, py):
        parts.append(_glyph(_GLYPHS.get(kind, "circle"), x, y, kind))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def y_metric_is_delta(name):
    return name.startswith("delta")


def _glyph(shape, x, y, kind, r=4.0):
    title = f"<title>{kind}</title>"
    if shape == "square":
        return (f'<rect x="{x - r:.1f}" y="{y - r:.1f}" width="{2 * r}" height="{2 * r}" '
                f'fill="none" stroke="black">{title}</rect>')
    if shape == "triangle":
        pts = f"{x:.1f},{y - r:.1f} {x - r:.1f},{y + r:.1f} {x + r:.1f},{y + r:.1f}"
        return f'<polygon points="{pts}" fill="none" stroke="black">{title}</polygon>'
    if shape == "diamond":
        pts = f"{x:.1f},{y - r:.1f} {x - r:.1f},{y:.1f} {x:.1f},{y + r:.1f} {x + r:.1f},{y:.1f}"
        return f'<polygon points="{pts}" fill="none" stroke="black">{title}</polygon>'
    if shape == "cross":
        return (f'<path d="M {x - r:.1f} {y - r:.1f} L {x + r:.1f} {y + r:.1f} '
                f'M {x - r:.1f} {y + r:.1f} L {x + r:.1f} {y - r:.1f}" '
                f'stroke="black">{title}</path>')
    return f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{r}" fill="none" stroke="black">{title}</circle>'
