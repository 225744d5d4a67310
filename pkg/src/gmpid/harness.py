"""Seeded Monte-Carlo driver: detectors over random channels, CSV out.

Trial generation, execution, aggregation, a pure-analysis prediction
table, and a flat key=value spec-file parser.  Determinism is the
load-bearing property here: per-trial seeds come from a SplitMix64 mix
of the base seed and the trial id, trials share no mutable state, and
rows are sorted on (trial_id, detector, prior_var, iteration) before
serialization with 17 significant digits, so serial and parallel runs
of the same spec produce byte-identical CSV.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis
from .gmpid import (
    VERDICT_CONVERGED,
    VERDICT_DIVERGED,
    DetectionReport,
    IterationOptions,
    gmpid_run,
)
from .lmmse import lmmse_detect, predict_mmse_mse
from .model import (
    PRIOR_MODE_GENIE_NOISY,
    PRIOR_MODE_UNINFORMATIVE,
    NumericalFault,
    SystemConfig,
    generate_instance,
    mse,
)
from .sagmpid import (
    RELAXATION_ASYMPTOTIC,
    RELAXATION_EXACT_EIGEN,
    RELAXATION_MANUAL,
    choose_relaxation,
    sa_gmpid_run,
)

__all__ = [
    "DETECTOR_LMMSE",
    "DETECTOR_GMPID",
    "DETECTOR_SA_GMPID",
    "DETECTOR_JACOBI",
    "DETECTOR_RICHARDSON",
    "KNOWN_DETECTORS",
    "CSV_HEADER",
    "ExperimentSpec",
    "TrialRecord",
    "ExperimentResult",
    "derive_trial_seed",
    "run_experiment",
    "csv_bytes",
    "write_csv",
    "mean_mse_by_iteration",
    "prediction_row",
    "predict_rows",
    "predict",
    "format_summary",
    "load_spec",
]

DETECTOR_LMMSE = "lmmse"
DETECTOR_GMPID = "gmpid"
DETECTOR_SA_GMPID = "sa_gmpid"
DETECTOR_JACOBI = "jacobi"
DETECTOR_RICHARDSON = "richardson"
KNOWN_DETECTORS = (
    DETECTOR_LMMSE,
    DETECTOR_GMPID,
    DETECTOR_SA_GMPID,
    DETECTOR_JACOBI,
    DETECTOR_RICHARDSON,
)

CSV_HEADER = "trial_id,detector,prior_var,iteration,mse,mul_count_cumulative,verdict"

_PRIOR_MODES = (PRIOR_MODE_UNINFORMATIVE, PRIOR_MODE_GENIE_NOISY)
_RELAXATION_MODES = (RELAXATION_ASYMPTOTIC, RELAXATION_EXACT_EIGEN, RELAXATION_MANUAL)

_MASK64 = (1 << 64) - 1


@dataclasses.dataclass(frozen=True)
class ExperimentSpec:
    """Everything one experiment needs, validated up front.

    cfg.prior_var and cfg.seed act as templates: each trial re-derives
    its own seed from cfg.seed and the trial id, and each sweep value
    replaces the prior variance (the channel, symbols and noise stay
    identical across the sweep within a trial, so sweep curves differ
    only in the prior quality).

    prior_mode and relaxation_mode extend the core fields: the first
    selects how prior means are drawn (see generate_instance), the
    second how the scaled-and-added detector picks its relaxation
    factor (see choose_relaxation).
    """

    name: str
    detector_set: tuple
    cfg: SystemConfig
    prior_var_sweep: tuple
    n_trials: int
    max_iters: int
    output_path: str | None = None
    prior_mode: str = PRIOR_MODE_GENIE_NOISY
    relaxation_mode: str = RELAXATION_ASYMPTOTIC

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name.strip():
            raise ValueError("experiment name must be a nonempty string")
        detectors = tuple(dict.fromkeys(self.detector_set))
        if not detectors:
            raise ValueError("detector_set must not be empty")
        unknown = [d for d in detectors if d not in KNOWN_DETECTORS]
        if unknown:
            raise ValueError(f"unknown detectors {unknown}; known: {KNOWN_DETECTORS}")
        object.__setattr__(self, "detector_set", detectors)
        sweep = tuple(float(v) for v in self.prior_var_sweep)
        if not sweep or any(not v > 0.0 for v in sweep):
            raise ValueError("prior_var_sweep must be a nonempty list of positive values")
        object.__setattr__(self, "prior_var_sweep", sweep)
        if int(self.n_trials) < 1 or int(self.max_iters) < 1:
            raise ValueError("n_trials and max_iters must be >= 1")
        object.__setattr__(self, "n_trials", int(self.n_trials))
        object.__setattr__(self, "max_iters", int(self.max_iters))
        if self.prior_mode not in _PRIOR_MODES:
            raise ValueError(f"unknown prior_mode {self.prior_mode!r}")
        if self.relaxation_mode not in _RELAXATION_MODES:
            raise ValueError(f"unknown relaxation_mode {self.relaxation_mode!r}")
        if DETECTOR_SA_GMPID in detectors and self.cfg.beta <= 1.0:
            raise ValueError(
                "the scaled-and-added detector targets overloaded systems "
                f"(n_users > n_antennas); got n_users={self.cfg.n_users}, "
                f"n_antennas={self.cfg.n_antennas}"
            )


@dataclasses.dataclass(frozen=True)
class TrialRecord:
    """One CSV row; field order is the CSV schema."""

    trial_id: int
    detector: str
    prior_var: float
    iteration: int
    mse: float
    mul_count_cumulative: int
    verdict: str

    def sort_key(self):
        return (self.trial_id, self.detector, self.prior_var, self.iteration)


@dataclasses.dataclass(frozen=True)
class ExperimentResult:
    records: tuple
    summary: str
    csv_path: str | None


def derive_trial_seed(base_seed: int, trial_id: int) -> int:
    """SplitMix64 finalizer on base_seed advanced by (trial_id + 1) steps.

    A documented, fixed 64-bit mix so that any execution order (serial,
    threaded, resumed) assigns every trial the same generator seed.
    """
    z = (int(base_seed) + (int(trial_id) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _iterative_rows(trial_id, detector, prior_var, report: DetectionReport, x_true):
    """Per-iteration rows for a message-passing run.

    Cumulative multiplications bill the detection path only: setup plus
    iterations times the per-iteration cost (diagnostics in
    aux_mul_count stay out, matching report.mul_count).  A run that
    diverges before completing its first iteration still emits one row
    (iteration 0, scoring the initial decision) so every run is visible
    in the CSV.
    """
    rows = []
    for t, value in enumerate(report.mse_trace, start=1):
        rows.append(
            TrialRecord(
                trial_id=trial_id,
                detector=detector,
                prior_var=prior_var,
                iteration=t,
                mse=float(value),
                mul_count_cumulative=report.setup_mul_count
                + t * report.per_iteration_mul_count,
                verdict=report.verdict,
            )
        )
    if not rows:
        rows.append(
            TrialRecord(
                trial_id=trial_id,
                detector=detector,
                prior_var=prior_var,
                iteration=0,
                mse=mse(report.posterior_mean, x_true),
                mul_count_cumulative=report.mul_count,
                verdict=report.verdict,
            )
        )
    return rows


def _classical_rows(trial_id, detector, prior_var, channel, obs, prior, cfg, opts):
    """Rows for the Jacobi/Richardson baselines on the fixed-point system.

    Both splits cost one application of theta*H^T(H x) + x plus O(n_users)
    scaling per step, tallied as 2*n_users*n_antennas + 2*n_users; system
    assembly is 2*n_users*n_antennas + 3*n_users.  Richardson's
    eigenvalue pass is a design-time cost and is not billed, mirroring
    the relaxation selection of the scaled-and-added detector.
    """
    nu, nr = channel.n_users, channel.n_antennas
    if detector == DETECTOR_JACOBI:
        b_operator, c = analysis.jacobi_preset(channel, obs, prior, cfg)
    else:
        b_operator, c, _ = analysis.richardson_preset(channel, obs, prior, cfg)
    per_iter = 2 * nu * nr + 2 * nu
    setup = 2 * nu * nr + 3 * nu
    scores = []
    result = analysis.classical_iterate(
        b_operator, c, opts, callback=lambda t, x: scores.append(mse(x, obs.x_true))
    )
    rows = [
        TrialRecord(
            trial_id=trial_id,
            detector=detector,
            prior_var=prior_var,
            iteration=t,
            mse=value,
            mul_count_cumulative=setup + t * per_iter,
            verdict=result.verdict,
        )
        for t, value in enumerate(scores, start=1)
    ]
    if len(scores) < result.iterations:
        # The diverging step produced no callback; score the last finite
        # iterate so the run's final state is on record.
        rows.append(
            TrialRecord(
                trial_id=trial_id,
                detector=detector,
                prior_var=prior_var,
                iteration=result.iterations,
                mse=mse(result.solution, obs.x_true),
                mul_count_cumulative=setup + result.iterations * per_iter,
                verdict=result.verdict,
            )
        )
    return rows


def _study_relaxation(channel, cfg, mode):
    """Relaxation selection that cannot abort a study.

    In exact_eigen mode there is no radius-minimizing factor when the
    iteration matrix loses positive definiteness on a finite channel
    (possible near unit load).  A study should record such channels,
    not crash on them, so selection failures fall back to a factor
    with a 5% safety margin inside the stability window.
    """
    try:
        return choose_relaxation(channel, cfg, mode=mode)
    except NumericalFault:
        operator, n = analysis.sa_iteration_matrix_operator(
            channel, analysis.gamma_tilde(cfg)
        )
        _, lam_max = analysis.symmetric_extremes(operator, n)
        return choose_relaxation(channel, cfg, mode=RELAXATION_MANUAL, w=1.9 / lam_max)


def _run_single_trial(spec: ExperimentSpec, trial_id: int):
    trial_seed = derive_trial_seed(spec.cfg.seed, trial_id)
    opts = IterationOptions(max_iters=spec.max_iters)
    rows = []
    for prior_var in spec.prior_var_sweep:
        cfg = spec.cfg.with_prior_var(prior_var).with_seed(trial_seed)
        channel, obs, prior = generate_instance(cfg, prior_mode=spec.prior_mode)
        for detector in spec.detector_set:
            if detector == DETECTOR_LMMSE:
                result = lmmse_detect(channel, obs, prior, cfg.noise_var)
                rows.append(
                    TrialRecord(
                        trial_id=trial_id,
                        detector=detector,
                        prior_var=prior_var,
                        iteration=0,
                        mse=mse(result.posterior_mean, obs.x_true),
                        mul_count_cumulative=result.mul_count,
                        verdict=VERDICT_CONVERGED,
                    )
                )
            elif detector == DETECTOR_GMPID:
                report = gmpid_run(channel, obs, prior, cfg.noise_var, opts)
                rows.extend(_iterative_rows(trial_id, detector, prior_var, report, obs.x_true))
            elif detector == DETECTOR_SA_GMPID:
                relax = _study_relaxation(channel, cfg, spec.relaxation_mode)
                report = sa_gmpid_run(channel, obs, prior, cfg.noise_var, relax, opts)
                rows.extend(_iterative_rows(trial_id, detector, prior_var, report, obs.x_true))
            else:
                rows.extend(
                    _classical_rows(
                        trial_id, detector, prior_var, channel, obs, prior, cfg, opts
                    )
                )
    return rows


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """Run every trial, sort, serialize, summarize.

    workers > 1 executes trials in a thread pool; ordering and output
    bytes are unaffected because rows are sorted before serialization
    and every trial derives its randomness from its own id.
    """
    trial_ids = range(spec.n_trials)
    if workers <= 1:
        per_trial = [_run_single_trial(spec, t) for t in trial_ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(lambda t: _run_single_trial(spec, t), trial_ids))
    records = sorted((row for rows in per_trial for row in rows), key=TrialRecord.sort_key)
    keys = [r.sort_key() for r in records]
    if len(set(keys)) != len(keys):
        raise RuntimeError("duplicate (trial_id, detector, prior_var, iteration) rows")
    if spec.output_path is not None:
        write_csv(records, spec.output_path)
    return ExperimentResult(
        records=tuple(records),
        summary=format_summary(spec, records),
        csv_path=spec.output_path,
    )


def csv_bytes(records) -> bytes:
    """Serialize rows to the fixed CSV schema.

    Floats use 17 significant digits (round-trip exact for doubles) and
    lines end with a bare newline regardless of platform, so equal
    record lists give equal bytes.
    """
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.trial_id},{r.detector},{r.prior_var:.17g},{r.iteration},"
            f"{r.mse:.17g},{r.mul_count_cumulative},{r.verdict}"
        )
    return ("\n".join(lines) + "\n").encode("ascii")


def write_csv(records, path: str):
    with open(path, "wb") as handle:
        handle.write(csv_bytes(records))


def mean_mse_by_iteration(records, detector: str, prior_var: float):
    """Mean MSE curve over trials for one (detector, prior_var) cell.

    Trials that converged early hold their final value for the
    remaining iterations (the detector would not move); diverged trials
    are excluded from the curve entirely.  Returns (iterations, means)
    as arrays; both empty when nothing qualifies.
    """
    by_trial = {}
    for r in records:
        if r.detector != detector or r.prior_var != prior_var or r.iteration < 1:
            continue
        by_trial.setdefault(r.trial_id, []).append(r)
    traces = []
    for rows in by_trial.values():
        rows.sort(key=lambda r: r.iteration)
        if rows[0].verdict == VERDICT_DIVERGED:
            continue
        traces.append((np.array([r.mse for r in rows]), rows[0].verdict))
    if not traces:
        return np.array([], dtype=int), np.array([])
    horizon = max(len(values) for values, _ in traces)
    padded = []
    for values, verdict in traces:
        if len(values) < horizon:
            if verdict != VERDICT_CONVERGED:
                continue
            values = np.concatenate([values, np.full(horizon - len(values), values[-1])])
        padded.append(values)
    stack = np.vstack(padded)
    return np.arange(1, horizon + 1), stack.mean(axis=0)


def prediction_row(cfg: SystemConfig) -> dict:
    """Closed-form predictions for one configuration, as a plain dict.

    Every number comes from the analysis and lmmse modules, making this
    the cross-check target for the Monte-Carlo output.  Requires an
    overloaded system and a common prior variance.
    """
    if cfg.beta <= 1.0:
        raise ValueError(
            "predictions cover overloaded systems only (n_users > n_antennas); "
            f"got n_users={cfg.n_users}, n_antennas={cfg.n_antennas}"
        )
    prior_var = cfg.symmetric_prior_var
    fixed = analysis.solve_variance_fixed_point(cfg)
    rho_plain = analysis.gmpid_asymptotic_radius(cfg)
    return {
        "prior_var": prior_var,
        "snr": prior_var / cfg.noise_var,
        "mmse_mse": predict_mmse_mse(cfg),
        "posterior_var": fixed.v_hat,
        "sum_var": fixed.v_s,
        "gamma": fixed.gamma,
        "gamma_tilde": analysis.gamma_tilde(cfg),
        "relaxation": analysis.asymptotic_relaxation(cfg),
        "rho_gmpid": rho_plain,
        "rho_sa": analysis.sa_asymptotic_radius(cfg),
        "plain_contracts": rho_plain < 1.0,
        "beta_threshold_met": cfg.beta > analysis.BETA_CONVERGENCE_THRESHOLD,
    }


def predict_rows(spec: ExperimentSpec):
    """Pure-analysis predictions, one dict per sweep value; no sampling."""
    return [prediction_row(spec.cfg.with_prior_var(v)) for v in spec.prior_var_sweep]


_PREDICT_COLUMNS = (
    "prior_var",
    "snr",
    "mmse_mse",
    "posterior_var",
    "sum_var",
    "gamma",
    "gamma_tilde",
    "relaxation",
    "rho_gmpid",
    "rho_sa",
    "plain_contracts",
    "beta_threshold_met",
)


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def predict(spec: ExperimentSpec) -> str:
    """Human-readable prediction table for the spec's sweep."""
    rows = predict_rows(spec)
    cfg = spec.cfg
    header = [
        f"experiment: {spec.name}",
        f"system: n_users={cfg.n_users} n_antennas={cfg.n_antennas} "
        f"beta={cfg.beta:.6g} noise_var={cfg.noise_var:.6g}",
    ]
    table = [_PREDICT_COLUMNS]
    for row in rows:
        table.append(tuple(_format_cell(row[col]) for col in _PREDICT_COLUMNS))
    widths = [max(len(line[i]) for line in table) for i in range(len(_PREDICT_COLUMNS))]
    body = ["  ".join(cell.rjust(widths[i]) for i, cell in enumerate(line)) for line in table]
    return "\n".join(header + body)


_MILESTONES = (1, 2, 5, 10, 20, 50, 100, 200, 500)


def format_summary(spec: ExperimentSpec, records) -> str:
    """Aggregate view of one experiment: verdicts, MSE curves, predictions."""
    cfg = spec.cfg
    lines = [
        f"experiment: {spec.name}",
        f"system: n_users={cfg.n_users} n_antennas={cfg.n_antennas} "
        f"beta={cfg.beta:.6g} noise_var={cfg.noise_var:.6g} "
        f"trials={spec.n_trials} prior_mode={spec.prior_mode}",
    ]
    for prior_var in spec.prior_var_sweep:
        lines.append(f"prior_var={prior_var:.6g}:")
        for detector in spec.detector_set:
            cell = [
                r
                for r in records
                if r.detector == detector and r.prior_var == prior_var
            ]
            if not cell:
                continue
            finals = {}
            verdicts = {}
            for r in cell:
                previous = finals.get(r.trial_id)
                if previous is None or r.iteration >= previous.iteration:
                    finals[r.trial_id] = r
            for r in finals.values():
                verdicts[r.verdict] = verdicts.get(r.verdict, 0) + 1
            verdict_text = " ".join(f"{k}={v}" for k, v in sorted(verdicts.items()))
            settled = [r.mse for r in finals.values() if r.verdict != VERDICT_DIVERGED]
            parts = [f"  {detector}: {verdict_text}"]
            if settled:
                parts.append(f"final_mse_mean={np.mean(settled):.6g}")
            if detector != DETECTOR_LMMSE:
                iters, means = mean_mse_by_iteration(records, detector, prior_var)
                marks = [
                    f"t{m}={means[m - 1]:.4g}"
                    for m in _MILESTONES
                    if m <= len(iters)
                ]
                if marks:
                    parts.append("mean_mse[" + " ".join(marks) + "]")
            lines.append(" ".join(parts))
    if cfg.beta > 1.0:
        lines.append("predictions:")
        lines.append(predict(spec))
    return "\n".join(lines)


_SPEC_KEYS = {
    "name": str,
    "detectors": "csv",
    "n_users": int,
    "n_antennas": int,
    "noise_var": float,
    "source_var": float,
    "seed": int,
    "prior_var_sweep": "floats",
    "n_trials": int,
    "max_iters": int,
    "output_path": str,
    "prior_mode": str,
    "relaxation_mode": str,
}

_REQUIRED_KEYS = (
    "name",
    "detectors",
    "n_users",
    "n_antennas",
    "noise_var",
    "seed",
    "prior_var_sweep",
    "n_trials",
    "max_iters",
)


def load_spec(path: str) -> ExperimentSpec:
    """Parse the flat key=value spec-file format.

    One `key = value` pair per line; `#` starts a comment anywhere;
    lists are comma-separated.  Unknown keys are rejected so typos fail
    loudly instead of silently running defaults.  See the commented
    examples under specs/ for the full key set.
    """
    values = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _SPEC_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            kind = _SPEC_KEYS[key]
            if kind == "csv":
                values[key] = tuple(part.strip() for part in value.split(",") if part.strip())
            elif kind == "floats":
                values[key] = tuple(float(part) for part in value.split(",") if part.strip())
            elif kind is str:
                values[key] = value
            else:
                values[key] = kind(value)
    missing = [key for key in _REQUIRED_KEYS if key not in values]
    if missing:
        raise ValueError(f"{path}: missing required keys {missing}")
    cfg = SystemConfig(
        n_users=values["n_users"],
        n_antennas=values["n_antennas"],
        noise_var=values["noise_var"],
        prior_var=values["prior_var_sweep"][0],
        source_var=values.get("source_var", 1.0),
        seed=values["seed"],
    )
    extras = {}
    if "prior_mode" in values:
        extras["prior_mode"] = values["prior_mode"]
    if "relaxation_mode" in values:
        extras["relaxation_mode"] = values["relaxation_mode"]
    return ExperimentSpec(
        name=values["name"],
        detector_set=values["detectors"],
        cfg=cfg,
        prior_var_sweep=values["prior_var_sweep"],
        n_trials=values["n_trials"],
        max_iters=values["max_iters"],
        output_path=values.get("output_path"),
        **extras,
    )
