"""Experiment configuration, coverage studies and plot-data emission.

An experiment is one YAML file (see ``configs/``). ``run_coverage`` simulates
``replications`` datasets at ``theta0`` and runs the full pipeline on each:
build ``r_n``, sample, optionally adjust, form regions at every ``alpha``.
Replication ``i`` owns the random streams under path ``(i,)`` so results do
not depend on how replications are spread over workers.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .adjustment import adjust as adjust_particles
from .core import ApproxCDError, ParticleSet, RngStream, ValidationError, weighted_var
from .inference import (
    ConfidenceRegion,
    credible_interval,
    depth_region,
    identity_maps,
    interval_from_W,
    ks_to_grid_density,
    location_maps,
    location_scale_maps,
    scale_maps,
    cauchy_target_posterior_grid,
)
from .initial import (
    POINT_ESTIMATORS,
    MinibatchConfig,
    PmcConfig,
    default_location_box,
    default_scale_box,
    improper_location,
    improper_location_scale,
    improper_scale,
    minibatch_rn,
    refined_minibatch_rn,
)
from .kernels import FAMILIES, KernelSpec
from .models import (
    CauchyModel,
    GaussianLocationModel,
    RickerModel,
    SyntheticLikelihoodConfig,
    gaussian_acc_closed_form,
    max_synthetic_likelihood,
)
from .samplers import (
    ProposalDistribution,
    SamplerConfig,
    _no_sampler,
    abc_importance,
    abc_reject,
    acc_reject,
    normal_proposal,
    student_t_proposal,
)

METHODS = ("r-abc", "r-acc", "is-abc")
INITIAL_KINDS = ("prior", "flat", "one_over_sigma", "flat_one_over_sigma", "parametric",
                 "minibatch", "refined_minibatch")
PRIOR_KINDS = ("flat", "one_over_sigma", "flat_one_over_sigma", "flat_positive", "t4", "normal")
REGION_KINDS = ("interval", "upper", "depth", "credible", "marginal")
MAP_KINDS = ("location", "scale", "location_scale", "identity")

SUMMARY_FIELDS = (
    "setting", "method", "tolerance_mode", "tolerance", "adjusted", "alpha", "param",
    "coverage", "median_size", "replications", "failures", "total_attempts",
    "median_acceptance", "var_reduced_all",
)
REPLICATE_FIELDS = (
    "replication", "tolerance", "adjusted", "alpha", "param", "covered", "size", "record",
    "attempts", "accepted", "epsilon", "acceptance_proportion", "var_reduced",
    "sample_mean", "sample_var", "oracle_mean", "oracle_var",
)


class StageError(ApproxCDError):
    """A pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, exc: BaseException):
        self.stage = stage
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# configuration


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _as_list(x) -> list:
    if x is None:
        return []
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _require(cond: bool, msg: str):
    if not cond:
        raise ValidationError(msg)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; build with :meth:`from_mapping`."""

    name: str
    model: dict
    theta0: tuple[float, ...]
    method: str = "r-acc"
    initial: dict = field(default_factory=lambda: {"kind": "prior"})
    prior: dict = field(default_factory=lambda: {"kind": "flat"})
    sampler: dict = field(default_factory=dict)
    region: dict = field(default_factory=lambda: {"kind": "interval", "maps": "location"})
    adjust: tuple[bool, ...] = (True,)
    alpha: tuple[float, ...] = (0.05,)
    replications: int = 200
    seed: int = 0
    workers: int = 1
    oracle: bool = False

    @classmethod
    def from_mapping(cls, raw: dict, paper_scale: bool = False, **overrides) -> "ExperimentConfig":
        _require(isinstance(raw, dict), "configuration must be a mapping")
        raw = copy.deepcopy(raw)
        extra = raw.pop("paper_scale", None) or {}
        if paper_scale:
            raw = _deep_merge(raw, extra)
        for k, v in overrides.items():
            if v is not None:
                raw[k] = v
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        _require(not unknown, f"unknown configuration keys: {sorted(unknown)}")
        _require("name" in raw and "model" in raw and "theta0" in raw, "name, model and theta0 are required")
        kw = dict(raw)
        kw["theta0"] = tuple(float(t) for t in _as_list(raw["theta0"]))
        kw["adjust"] = tuple(bool(a) for a in _as_list(raw.get("adjust", [True])))
        kw["alpha"] = tuple(float(a) for a in _as_list(raw.get("alpha", [0.05])))
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        model = build_model(self.model)
        _require(len(self.theta0) == model.dim_theta,
                 f"theta0 has {len(self.theta0)} entries, model needs {model.dim_theta}")
        _require(self.method in METHODS, f"method must be one of {METHODS}")
        _require(self.initial.get("kind") in INITIAL_KINDS, f"initial.kind must be one of {INITIAL_KINDS}")
        _require(self.prior.get("kind") in PRIOR_KINDS, f"prior.kind must be one of {PRIOR_KINDS}")
        _require(self.region.get("kind") in REGION_KINDS, f"region.kind must be one of {REGION_KINDS}")
        _require(self.region.get("maps", "identity") in MAP_KINDS, f"region.maps must be one of {MAP_KINDS}")
        _require(self.region.get("center", "estimator") in ("estimator", "particle_mean"),
                 "region.center must be 'estimator' or 'particle_mean'")
        _require(bool(self.alpha) and all(0 < a < 1 for a in self.alpha), "alpha values must lie in (0, 1)")
        _require(bool(self.adjust), "adjust must list at least one variant")
        _require(self.replications >= 1, "replications must be >= 1")
        _require(self.workers >= 1, "workers must be >= 1")
        _require(0 <= self.seed < 2 ** 64, "seed must be a non-negative 64-bit integer")
        s = self.sampler
        _require(s.get("kernel", "gaussian") in FAMILIES, f"sampler.kernel must be one of {FAMILIES}")
        eps, acc = _as_list(s.get("epsilon")), _as_list(s.get("acceptance"))
        _require(bool(eps) != bool(acc), "sampler needs exactly one of epsilon and acceptance")
        _require(all(isinstance(e, (int, float)) and e > 0 and math.isfinite(e) for e in eps),
                 "epsilon values must be finite and > 0")
        _require(all(0 < q < 1 for q in acc), "acceptance proportions must lie in (0, 1)")
        self.sampler_configs()  # SamplerConfig validates on construction
        if self.method == "r-abc" or self.initial["kind"] == "prior":
            _require(self.prior["kind"] != "flat_positive", "flat_positive prior cannot be sampled")
        if self.initial["kind"] in ("minibatch", "refined_minibatch"):
            est = self.initial.get("estimator", "median")
            _require(est in POINT_ESTIMATORS or est == "msl", f"unknown point estimator {est!r}")
        if self.oracle:
            _require(self.model.get("name") == "gaussian", "oracle columns need the gaussian model")

    @property
    def tolerances(self) -> tuple[str, list[float]]:
        if self.sampler.get("acceptance") is not None:
            return "acceptance", [float(q) for q in _as_list(self.sampler["acceptance"])]
        return "epsilon", [float(e) for e in _as_list(self.sampler["epsilon"])]

    def sampler_configs(self) -> list[SamplerConfig]:
        s = self.sampler
        mode, values = self.tolerances
        family = s.get("kernel", "gaussian" if mode == "epsilon" else "uniform")
        out = []
        for v in values:
            try:
                out.append(SamplerConfig(
                    kernel=KernelSpec(family, v if mode == "epsilon" else 1.0),
                    n_proposals=s.get("n_proposals"),
                    target_accepted=s.get("target_accepted"),
                    max_attempts=s.get("max_attempts"),
                    acceptance=v if mode == "acceptance" else None,
                    block_size=s.get("block_size", 4096),
                    standardize=s.get("standardize"),
                ))
            except ValueError as exc:
                raise ValidationError(f"sampler: {exc}") from None
        return out

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["theta0"] = list(self.theta0)
        d["adjust"] = list(self.adjust)
        d["alpha"] = list(self.alpha)
        return d


def load_config(path, paper_scale: bool = False, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return ExperimentConfig.from_mapping(raw, paper_scale=paper_scale, **overrides)


# ---------------------------------------------------------------------------
# builders


def build_model(spec: dict):
    spec = dict(spec)
    name = spec.pop("name", None)
    try:
        if name == "gaussian":
            return GaussianLocationModel(**spec)
        if name == "cauchy":
            return CauchyModel(**spec)
        if name == "ricker":
            return RickerModel(**spec)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"model: {exc}") from None
    raise ValidationError(f"unknown model {name!r}")


def _box_for(kind: str, spec: dict, data):
    if kind == "location":
        if "lo" in spec and "hi" in spec:
            return spec["lo"], spec["hi"]
        return default_location_box(data, spec.get("width", 10.0))
    if "scale_lo" in spec and "scale_hi" in spec:
        return spec["scale_lo"], spec["scale_hi"]
    return default_scale_box(data, spec.get("factor", 50.0))


def build_prior(spec: dict, model, data) -> ProposalDistribution:
    kind = spec["kind"]
    data = np.asarray(data, dtype=float)
    if kind == "flat":
        if model.dim_theta == 1:
            return improper_location(*_box_for("location", spec, data))
        lo, hi = spec.get("lo"), spec.get("hi")
        if lo is None or hi is None:
            raise ValidationError("a multivariate flat prior needs explicit lo/hi")
        return improper_location(lo, hi)
    if kind == "one_over_sigma":
        return improper_scale(*_box_for("scale", spec, data))
    if kind == "flat_one_over_sigma":
        return improper_location_scale(_box_for("location", spec, data), _box_for("scale", spec, data))
    if kind == "flat_positive":
        # flat on the natural scale of log-parameterized coordinates
        return ProposalDistribution(_no_sampler, lambda th: np.sum(th, axis=1), model.dim_theta, "flat_positive")
    if kind == "t4":
        return student_t_proposal(spec["loc"], spec["scale"], spec.get("df", 4.0))
    if kind == "normal":
        return normal_proposal(spec["mean"], spec["sd"])
    raise ValidationError(f"unknown prior kind {kind!r}")


def _point_estimator(spec: dict, model):
    name = spec.get("estimator", "median")
    bias = np.asarray(spec.get("estimator_bias", 0.0), dtype=float)
    if name == "msl":
        sl = SyntheticLikelihoodConfig(**spec.get("synthetic", {}))

        def base(z, stream):
            sub = model.with_reference(z)
            return max_synthetic_likelihood(sub, sub.summarize(z), sl, stream, sub.crude_start(z)).theta
    else:
        base = POINT_ESTIMATORS[name]
    if not np.any(bias):
        return base
    return lambda z, stream: base(z, stream) + bias


def _minibatch_config(spec: dict, model, data) -> MinibatchConfig:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return MinibatchConfig(
            point_estimator=_point_estimator(spec, model),
            nu=spec.get("nu", 0.5),
            k=spec.get("k"),
            policy=spec.get("policy", "disjoint" if len(data) >= 100 else "overlapping"),
            stride=spec.get("stride"),
            subset_size=spec.get("subset_size"),
        )


def build_initial(spec: dict, prior_spec: dict, model, data, stream: RngStream) -> ProposalDistribution:
    kind = spec["kind"]
    if kind == "prior":
        return build_prior(prior_spec, model, data)
    if kind in ("flat", "one_over_sigma", "flat_one_over_sigma"):
        return build_prior(dict(spec, kind=kind), model, data)
    if kind == "parametric":
        return normal_proposal(spec.get("mu", model.mu_n), 1.0 / spec.get("b", model.b_n))
    mb = _minibatch_config(spec, model, data)
    if kind == "minibatch":
        return minibatch_rn(data, mb, stream).as_proposal()
    pmc = PmcConfig(**spec.get("pmc", {}))
    return refined_minibatch_rn(data, mb, model, pmc, stream).as_proposal()


def _maps(name: str, model, center=None):
    if center is not None:
        est = (lambda s, c=np.atleast_1d(center): c)
    else:
        est = model.summary_estimate
    if name == "location":
        return location_maps(est)
    if name == "scale":
        return scale_maps(est)
    if name == "location_scale":
        return location_scale_maps(est)
    return identity_maps(model.dim_theta)


def build_regions(region: dict, particles: ParticleSet, model, s_obs, alpha: float) -> list[tuple[str, ConfidenceRegion]]:
    """Regions for one particle set at one level, as ``(param_label, region)`` pairs."""
    kind = region["kind"]
    maps_name = region.get("maps", "identity")
    particle_center = region.get("center", "estimator") == "particle_mean"
    if kind == "credible":
        if particles.dim == 1:
            return [("0", credible_interval(particles, alpha))]
        kind, maps_name = "marginal", "identity"
    if kind == "depth":
        center = None
        if particle_center:
            center = np.average(particles.thetas, axis=0, weights=particles.weights)
        return [("joint", depth_region(particles, _maps(maps_name, model, center), s_obs, alpha, ridge=True))]
    if kind == "marginal":
        out = []
        for j in range(particles.dim):
            sub = particles.replace(thetas=particles.thetas[:, j:j + 1])
            if maps_name == "identity":
                out.append((str(j), credible_interval(sub, alpha)))
            else:
                c = float(np.average(sub.thetas[:, 0], weights=sub.weights))
                maps = location_maps(lambda s, c=c: np.array([c]))
                out.append((str(j), interval_from_W(sub, maps, s_obs, alpha)))
        return out
    center = None
    if particle_center:
        center = float(np.average(particles.thetas[:, 0], weights=particles.weights))
    sided = "upper" if kind == "upper" else "two_sided"
    return [("0", interval_from_W(particles, _maps(maps_name, model, center), s_obs, alpha, sided=sided))]


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class SingleRun:
    particles: dict[tuple[int, bool], ParticleSet]
    regions: dict[tuple[int, bool, float], list[tuple[str, ConfidenceRegion]]]
    rows: list[dict]


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_single(config: ExperimentConfig, data, stream: RngStream, replication: int = 0) -> SingleRun:
    """Full pipeline on one dataset: ``r_n`` -> sample -> adjust -> regions."""
    model = build_model(config.model)
    if isinstance(model, RickerModel):
        model = model.with_reference(data)
    data = np.asarray(data, dtype=float)
    s_obs = _stage("summarize", model.summarize, data)
    prior = _stage("prior", build_prior, config.prior, model, data)
    r_n = None
    if config.method != "r-abc":
        r_n = _stage("initial", build_initial, config.initial, config.prior, model, data, stream.spawn(1))
    theta0 = np.array(config.theta0)
    mode, values = config.tolerances
    particles, regions, rows = {}, {}, []
    for j, cfg in enumerate(config.sampler_configs()):
        sstream = stream.spawn(2, j)
        if config.method == "r-abc":
            raw = _stage("sample", abc_reject, model, prior, s_obs, cfg, sstream)
        elif config.method == "r-acc":
            raw = _stage("sample", acc_reject, model, r_n, s_obs, cfg, sstream)
        else:
            raw = _stage("sample", abc_importance, model, prior, r_n, s_obs, cfg, sstream)
        variants = {}
        for adj in config.adjust:
            variants[adj] = raw if not adj else _stage("adjust", adjust_particles, raw, s_obs, ridge_fallback=True)
        reduced = ""
        if True in variants and False in variants:
            reduced = int(np.all(weighted_var(variants[True].thetas, variants[True].weights)
                                 <= weighted_var(raw.thetas, raw.weights) * (1 + 1e-12) + 1e-300))
        oracle = {}
        if config.oracle:
            m_eps, v_eps = gaussian_acc_closed_form(float(s_obs[0]), model.n, values[j] if mode == "epsilon"
                                                    else raw.tolerance, model.mu_n, model.b_n)
            oracle = {"oracle_mean": m_eps, "oracle_var": v_eps}
        for adj, ps in variants.items():
            particles[(j, adj)] = ps
            mean = np.average(ps.thetas, axis=0, weights=ps.weights)
            var = weighted_var(ps.thetas, ps.weights)
            for alpha in config.alpha:
                regs = _stage("region", build_regions, config.region, ps, model, s_obs, alpha)
                regions[(j, adj, alpha)] = regs
                for label, reg in regs:
                    target = theta0 if label == "joint" else theta0[int(label)]
                    rows.append({
                        "replication": replication,
                        "tolerance": values[j],
                        "adjusted": int(adj),
                        "alpha": alpha,
                        "param": label,
                        "covered": int(bool(reg.contains(target))),
                        "size": _stage("region", reg.size),
                        "record": reg.to_record(),
                        "attempts": ps.attempts,
                        "accepted": len(ps),
                        "epsilon": ps.tolerance,
                        "acceptance_proportion": ps.acceptance_proportion,
                        "var_reduced": reduced,
                        "sample_mean": float(mean[0]) if config.oracle else "",
                        "sample_var": float(var[0]) if config.oracle else "",
                        "oracle_mean": oracle.get("oracle_mean", ""),
                        "oracle_var": oracle.get("oracle_var", ""),
                    })
    return SingleRun(particles, regions, rows)


def simulate_dataset(config: ExperimentConfig, replication: int) -> np.ndarray:
    model = build_model(config.model)
    return model.simulate(np.array(config.theta0), RngStream(config.seed, (replication, 0)).generator())


def _replicate(args) -> tuple[int, list[dict] | None, str | None]:
    config, i = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            data = simulate_dataset(config, i)
            run = run_single(config, data, RngStream(config.seed, (i,)), replication=i)
            return i, run.rows, None
        except Exception as exc:  # recorded and excluded, never silent
            return i, None, f"{type(exc).__name__}: {exc}"


@dataclass
class CoverageResult:
    summary: list[dict]
    replicates: list[dict]
    failures: dict[int, str]
    wall_time: float

    @property
    def failure_rate(self) -> float:
        n = len({r["replication"] for r in self.replicates}) + len(self.failures)
        return len(self.failures) / max(n, 1)

    @property
    def failed(self) -> bool:
        return self.failure_rate > 0.05


def run_coverage(config: ExperimentConfig) -> CoverageResult:
    """Replication study; rows are aggregated per (tolerance, adjusted, alpha, param)."""
    t0 = time.perf_counter()
    jobs = [(config, i) for i in range(config.replications)]
    if config.workers == 1:
        results = [_replicate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, len(jobs) // (4 * config.workers))))
    replicates, failures = [], {}
    for i, rows, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            failures[i] = err
        else:
            replicates.extend(rows)
    mode, _ = config.tolerances
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for r in replicates:
        groups[(r["tolerance"], r["adjusted"], r["alpha"], r["param"])].append(r)
    summary = []
    for (tol, adj, alpha, param), rows in groups.items():
        reduced = [r["var_reduced"] for r in rows if r["var_reduced"] != ""]
        summary.append({
            "setting": config.name,
            "method": config.method,
            "tolerance_mode": mode,
            "tolerance": tol,
            "adjusted": adj,
            "alpha": alpha,
            "param": param,
            "coverage": float(np.mean([r["covered"] for r in rows])),
            "median_size": float(np.median([r["size"] for r in rows])),
            "replications": len(rows),
            "failures": len(failures),
            "total_attempts": int(sum(r["attempts"] for r in rows)),
            "median_acceptance": float(np.median([r["acceptance_proportion"] for r in rows])),
            "var_reduced_all": int(all(reduced)) if reduced else "",
        })
    return CoverageResult(summary, replicates, failures, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# refinement check

REFINEMENT_FIELDS = ("trial", "coordinate", "theta0", "crude_mean", "refined_mean", "crude_error",
                     "refined_error", "improved")


def refinement_bias_check(config: ExperimentConfig, trials: int = 20, bias: float = 0.5,
                          coordinate: int = 0) -> list[dict]:
    """Does PMC refinement pull a deliberately biased crude estimator back toward theta0?

    Each trial simulates a dataset at ``config.theta0``, shifts the configured
    point estimator by ``bias`` in ``coordinate`` and builds the refined
    minibatch ``r_n`` from ``config.initial``. Rows compare the mean of the
    crude and refined KDE centers in that coordinate.
    """
    _require(config.initial.get("kind") == "refined_minibatch", "config must use a refined_minibatch initial")
    theta0 = np.array(config.theta0)
    rows = []
    for i in range(trials):
        data = simulate_dataset(config, i)
        model = build_model(config.model)
        if isinstance(model, RickerModel):
            model = model.with_reference(data)
        shift = np.zeros(model.dim_theta)
        shift[coordinate] = bias
        spec = dict(config.initial, estimator_bias=shift.tolist())
        mb = _minibatch_config(spec, model, data)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            refined, crude = refined_minibatch_rn(data, mb, model, PmcConfig(**spec.get("pmc", {})),
                                                  RngStream(config.seed, (i,)).spawn(1),
                                                  return_crude=True)
        c = float(crude.mean()[coordinate])
        r = float(refined.mean()[coordinate])
        t = float(theta0[coordinate])
        rows.append({"trial": i, "coordinate": coordinate, "theta0": t, "crude_mean": c, "refined_mean": r,
                     "crude_error": abs(c - t), "refined_error": abs(r - t),
                     "improved": int(abs(r - t) < abs(c - t))})
    return rows


# ---------------------------------------------------------------------------
# output


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_csv(path, rows: list[dict], fields: tuple[str, ...]) -> str:
    """Write rows with a fixed header; floats at 6 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f, "")) for f in fields])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def write_sidecar(path, **meta) -> None:
    """Run metadata (wall time, versions) kept out of the CSV so it stays reproducible."""
    meta = {"version": __version__, **meta}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def replicates_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".replicates" + p.suffix)


def save_coverage(result: CoverageResult, config: ExperimentConfig, out) -> None:
    write_csv(out, result.summary, SUMMARY_FIELDS)
    write_csv(replicates_path(out), result.replicates, REPLICATE_FIELDS)
    write_sidecar(out, wall_time=result.wall_time, workers=config.workers, seed=config.seed,
                  failures={str(k): v for k, v in result.failures.items()}, config=config.to_mapping())


# ---------------------------------------------------------------------------
# Gaussian closed-form suite

ORACLE_FIELDS = ("epsilon", "mu_n", "b_n", "accepted", "sample_mean", "sample_var",
                 "oracle_mean", "oracle_var", "z_mean", "z_var", "passed")


def oracle_suite(seed: int = 0, n: int = 100, s_obs: float = 1.0, accepted: int = 5000,
                 epsilons=(0.2, 0.1, 0.05), mus=(0.0, 0.5), bs=(0.0, 2.0), n_se: float = 4.0) -> list[dict]:
    """Compare accepted-draw moments with the closed form over a grid of settings.

    The flat case (``b_n = 0``) proposes from a box of +-10 around ``s_obs``,
    which carries all but a negligible share of the accepted-draw law.
    """
    rows = []
    idx = 0
    for eps in epsilons:
        for mu in mus:
            for b in bs:
                model = GaussianLocationModel(n, mu, b)
                prop = improper_location(s_obs - 10, s_obs + 10) if b == 0 else normal_proposal(mu, 1 / b)
                cfg = SamplerConfig(KernelSpec("gaussian", eps), target_accepted=accepted,
                                    max_attempts=10 ** 8, block_size=65536)
                ps = acc_reject(model, prop, [s_obs], cfg, RngStream(seed, (idx,)))
                idx += 1
                th = ps.thetas[:, 0]
                m_eps, v_eps = gaussian_acc_closed_form(s_obs, n, eps, mu, b)
                m = len(th)
                se_mean = math.sqrt(v_eps / m)
                # var of the sample variance of a normal sample
                se_var = v_eps * math.sqrt(2.0 / (m - 1))
                z_mean = (th.mean() - m_eps) / se_mean
                z_var = (th.var(ddof=1) - v_eps) / se_var
                rows.append({
                    "epsilon": eps, "mu_n": mu, "b_n": b, "accepted": m,
                    "sample_mean": th.mean(), "sample_var": th.var(ddof=1),
                    "oracle_mean": m_eps, "oracle_var": v_eps,
                    "z_mean": z_mean, "z_var": z_var,
                    "passed": int(abs(z_mean) <= n_se and abs(z_var) <= n_se),
                })
    return rows


# ---------------------------------------------------------------------------
# Figure 1 plot data

FIGURE1_FIELDS = ("epsilon", "theta", "target", "abc_mean", "abc_median")
FIGURE1_SUMMARY_FIELDS = ("n", "epsilon", "summary", "accepted", "attempts", "iqr", "ks_target", "kde_mode")


def figure1_grid(data, fine_points: int = 2001, coarse_points: int = 801) -> np.ndarray:
    """Fine grid near the sample median joined to a coarse one over the prior box."""
    lo, hi = default_location_box(data)
    med = float(np.median(data))
    half = max(0.5, 40.0 * 0.55 / math.sqrt(len(data)))
    fine = np.linspace(med - half, med + half, fine_points)
    coarse = np.linspace(lo, hi, coarse_points)
    return np.unique(np.concatenate([fine, coarse]))


def emit_figure1_data(n: int, epsilons=(0.1, 0.01, 0.001), seed: int = 0, theta0: float = 10.0,
                      tau: float = 0.55, particles: int = 2000) -> tuple[list[dict], list[dict]]:
    """Grid densities for the flat-prior ABC posteriors under mean and median summaries.

    Returns ``(grid_rows, summary_rows)``; the grid has one row per grid point
    and tolerance, with the reference posterior alongside KDEs of the
    accepted draws.
    """
    from scipy.stats import gaussian_kde

    stream = RngStream(seed, (n,))
    data = CauchyModel(n, scale=tau).simulate([theta0], stream.spawn(0).generator())
    grid = figure1_grid(data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        target = cauchy_target_posterior_grid(data, tau, grid)
    prior = improper_location(*default_location_box(data))
    grid_rows, summary_rows = [], []
    for j, eps in enumerate(epsilons):
        dens = {}
        for k, summary in enumerate(("mean", "median")):
            model = CauchyModel(n, "location", summary, scale=tau)
            cfg = SamplerConfig(KernelSpec("gaussian", eps), target_accepted=particles,
                                max_attempts=2 * 10 ** 8, block_size=1 << 16)
            ps = abc_reject(model, prior, model.summarize(data), cfg, stream.spawn(1, j, k))
            th = ps.thetas[:, 0]
            kde = gaussian_kde(th)
            dens[summary] = kde(grid)
            q75, q25 = np.percentile(th, [75, 25])
            summary_rows.append({
                "n": n, "epsilon": eps, "summary": summary, "accepted": len(ps), "attempts": ps.attempts,
                "iqr": q75 - q25, "ks_target": ks_to_grid_density(th, grid, target),
                "kde_mode": float(grid[np.argmax(dens[summary])]),
            })
        for g, t, a, b in zip(grid, target, dens["mean"], dens["median"]):
            grid_rows.append({"epsilon": eps, "theta": g, "target": t, "abc_mean": a, "abc_median": b})
    return grid_rows, summary_rows
