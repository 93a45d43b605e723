"""Config-driven experiment runners shared by the CLI and the acceptance tests.

A config is a nested mapping (YAML on disk).  ``validate`` checks the parts a
given command needs and reports every bad field at once; the ``run_*``
functions return plain result objects and never write files.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import yaml

from . import chaos, dde, oracle, parametric as pm, spectrum as sp, ssm, systems
from .embedding import EmbeddedData, EmbeddingConfig, embed, embed_rows, estimate_derivatives
from .histories import near_equilibrium_histories, random_sinusoid_histories


class ConfigError(ValueError):
    """Validation failure; ``errors`` holds ``(field, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.errors))


class EmptyInputError(ConfigError):
    pass


# --- config ---------------------------------------------------------------

def load_config(path) -> dict:
    with open(path) as fh:
        text = fh.read()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"not valid YAML: {exc}")]) from None
    if not isinstance(cfg, dict):
        raise ConfigError([("<file>", "top level must be a mapping")])
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


_NEEDS = {
    "simulate": ("system", "simulation"),
    "spectrum": ("system", "spectrum"),
    "fit": ("system", "embedding", "model"),
    "predict": ("embedding",),
    "diagnose": ("system", "simulation", "embedding", "model", "diagnostics"),
    "parametric": ("system", "simulation", "embedding", "model", "parametric"),
    "bifurcate": ("system", "simulation", "embedding", "model", "parametric", "bifurcation"),
    "oracle": ("system",),
}


def _num(errs, sec, key, lo=None, integer=False, required=True):
    where = f"{sec.get('__name__', '?')}.{key}"
    if key not in sec:
        if required:
            errs.append((where, "missing"))
        return
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        errs.append((where, f"expected {'an integer' if integer else 'a number'}, got {v!r}"))
    elif lo is not None and v < lo:
        errs.append((where, f"must be >= {lo}"))


def _section(cfg, name, errs):
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        errs.append((name, "missing section" if sec is None else "must be a mapping"))
        return None
    return dict(sec, __name__=name)


def validate(cfg: dict, command: str) -> dict:
    """Return ``cfg`` unchanged or raise ConfigError listing every bad field."""
    errs = []
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errs.append(("seed", f"must be a non-negative integer, got {seed!r}"))
    need = _NEEDS.get(command, ())
    secs = {n: _section(cfg, n, errs) for n in need}
    sysec = secs.get("system")
    if sysec is not None:
        name = sysec.get("name")
        if name not in systems.CATALOG:
            errs.append(("system.name", f"unknown system {name!r}; known: {sorted(systems.CATALOG)}"))
        else:
            params = sysec.get("params") or {}
            if not isinstance(params, dict):
                errs.append(("system.params", "must be a mapping"))
            else:
                for k in set(params) - set(systems.CATALOG[name].default_params):
                    errs.append((f"system.params.{k}", f"not a parameter of {name}"))
    sim = secs.get("simulation")
    if sim is not None:
        _num(errs, sim, "t_end", lo=0)
        _num(errs, sim, "dt", lo=1e-12)
        _num(errs, sim, "save_every", lo=1, integer=True, required=False)
        hist = sim.get("histories")
        if not isinstance(hist, dict):
            errs.append(("simulation.histories", "missing mapping"))
        else:
            kinds = ("sinusoid", "mode", "constant")
            if hist.get("kind") not in kinds:
                errs.append(("simulation.histories.kind", f"must be one of {kinds}"))
            if "values" not in hist:
                _num(errs, dict(hist, __name__="simulation.histories"), "count", lo=1, integer=True)
        if sim.get("integrator", "auto") not in ("auto", "digital"):
            errs.append(("simulation.integrator", "must be 'auto' or 'digital'"))
    emb = secs.get("embedding")
    if emb is not None:
        _num(errs, emb, "k", lo=1, integer=True)
        _num(errs, emb, "lag_steps", lo=1, integer=True)
        _num(errs, emb, "skip_time", lo=0, required=False)
        if not isinstance(emb.get("observable", [0]), list):
            errs.append(("embedding.observable", "must be a list of state indices"))
    mod = secs.get("model")
    if mod is not None:
        _num(errs, mod, "d", lo=1, integer=True)
        _num(errs, mod, "manifold_order", lo=1, integer=True)
        dyn = mod.get("dynamics", "poly")
        if dyn not in ("poly", "rbf"):
            errs.append(("model.dynamics", "must be 'poly' or 'rbf'"))
        if dyn == "poly":
            _num(errs, mod, "dynamics_order", lo=1, integer=True)
            _num(errs, mod, "ridge", lo=0, required=False)
        if emb is not None and isinstance(mod.get("d"), int) and isinstance(emb.get("k"), int):
            if emb["k"] <= 2 * mod["d"] and not emb.get("allow_small_k", False):
                errs.append(("embedding.k", f"k = {emb['k']} violates k > 2d = {2 * mod['d']}; "
                                            "set embedding.allow_small_k to override"))
    par = secs.get("parametric")
    if par is not None:
        nodes = par.get("nodes")
        if not isinstance(nodes, list) or len(nodes) < 2:
            errs.append(("parametric.nodes", "need a list of at least two parameter values"))
        elif len(set(nodes)) != len(nodes):
            errs.append(("parametric.nodes", "values must be distinct"))
        if not isinstance(par.get("param"), str):
            errs.append(("parametric.param", "missing parameter name"))
        if par.get("scheme", "linear") not in ("linear", "spline"):
            errs.append(("parametric.scheme", "must be 'linear' or 'spline'"))
    bif = secs.get("bifurcation")
    if bif is not None:
        g = bif.get("grid")
        if not isinstance(g, dict):
            errs.append(("bifurcation.grid", "missing mapping with start/stop/step"))
        else:
            gs = dict(g, __name__="bifurcation.grid")
            for k in ("start", "stop"):
                _num(errs, gs, k)
            _num(errs, gs, "step", lo=1e-12)
    if errs:
        raise ConfigError(errs)
    return cfg


# --- helpers --------------------------------------------------------------

def build_system(cfg: dict, overrides=None):
    """``(system, equilibrium, full parameter dict)``."""
    sec = cfg["system"]
    params = dict(sec.get("params") or {})
    params.update(overrides or {})
    full = dict(systems.CATALOG[sec["name"]].default_params)
    full.update(params)
    return systems.build(sec["name"], params), systems.equilibrium(sec["name"], params), full


def grid_values(g) -> np.ndarray:
    if isinstance(g, list):
        return np.asarray(g, dtype=float)
    n = int(math.floor((g["stop"] - g["start"]) / g["step"] + 1e-9)) + 1
    return np.round(g["start"] + g["step"] * np.arange(n), 10)


def embedding_config(cfg: dict) -> EmbeddingConfig:
    e = cfg["embedding"]
    return EmbeddingConfig(tuple(e.get("observable", [0])), int(e["k"]), int(e["lag_steps"]),
                           float(e.get("skip_time", 0.0)), cfg.get("model", {}).get("d"),
                           bool(e.get("allow_small_k", False)))


def _anchor(cfg: dict, ecfg: EmbeddingConfig, eq) -> Optional[np.ndarray]:
    a = cfg["model"].get("anchor", "equilibrium")
    if a == "equilibrium":
        obs = np.asarray(eq, dtype=float)[list(ecfg.observable)]
        return np.resize(obs, ecfg.k)
    if a is None or a == "mean":
        return None
    return np.broadcast_to(np.asarray(a, dtype=float), (ecfg.k,)).copy()


def _histories(spec: dict, system, eq, rng, n: int):
    kind = spec["kind"]
    if kind == "sinusoid":
        return random_sinusoid_histories(eq, n, spec["amp"], rng, tuple(spec.get("freq", (0.5, 3.0))))
    if kind == "mode":
        return near_equilibrium_histories(system, eq, n, spec["amp"], rng, spec.get("perturb_frac", 0.2),
                                          tuple(spec.get("freq", (0.3, 2.0))))
    if "values" in spec:
        return [dde.HistorySpec.constant(np.atleast_1d(np.asarray(v, dtype=float))) for v in spec["values"]]
    return [dde.HistorySpec.constant(rng.uniform(spec["low"], spec["high"], size=len(eq)))]


def _integrate(cfg: dict, system, params, hist):
    sim = cfg["simulation"]
    t_end, dt = float(sim["t_end"]), float(sim["dt"])
    save = int(sim.get("save_every", 1))
    if sim.get("integrator", "auto") == "digital":
        traj = dde.simulate_digital(system, float(params.get("resolution", 0.0)), hist, t_end, dt,
                                    save_every=save)
        if sim.get("stroboscopic", False):
            traj = dde.stroboscopic_sample(traj, system.periodic_delay[0])
        return traj
    return dde.simulate(system, hist, t_end, dt, save_every=save)


def simulate_set(cfg: dict, rng, overrides=None, count: Optional[int] = None) -> List[dde.Trajectory]:
    """Trajectories from the config's history recipe; ``count`` overrides the recipe size."""
    system, eq, params = build_system(cfg, overrides)
    spec = cfg["simulation"]["histories"]
    cap = spec.get("reject_above")
    if spec["kind"] == "constant" and "values" in spec:
        return [_integrate(cfg, system, params, h) for h in _histories(spec, system, eq, rng, 0)]
    n = int(spec["count"] if count is None else count)
    if spec["kind"] != "constant" and cap is None:
        return [_integrate(cfg, system, params, h) for h in _histories(spec, system, eq, rng, n)]
    out, tries = [], 0
    max_tries = int(spec.get("max_tries", 20 * n))
    while len(out) < n:
        if tries >= max_tries:
            raise dde.DDEError(f"only {len(out)} of {n} histories stayed below {cap} in {max_tries} tries")
        tries += 1
        traj = _integrate(cfg, system, params, _histories(spec, system, eq, rng, 1)[0])
        if cap is not None and np.max(np.abs(traj.samples - eq)) > cap:
            continue
        out.append(traj)
    return out


def rng_for(cfg: dict, offset: int = 0):
    return np.random.default_rng(int(cfg.get("seed", 0)) + offset)


def split_counts(cfg: dict, total: int):
    sp_ = cfg.get("split", {})
    n_test = int(sp_.get("test", 0))
    if n_test >= total:
        raise ConfigError([("split.test", f"{n_test} test trajectories leave none of {total} for training")])
    return total - n_test, n_test


# --- simulate / spectrum ------------------------------------------------------

def run_simulate(cfg: dict) -> List[dde.Trajectory]:
    return simulate_set(cfg, rng_for(cfg))


@dataclass
class SpectrumResult:
    spectrum: sp.Spectrum
    track: list = field(default_factory=list)       # (value, root)
    crossings: list = field(default_factory=list)


def run_spectrum(cfg: dict) -> SpectrumResult:
    sec = cfg["spectrum"]
    system, eq, _ = build_system(cfg)
    win = tuple(sec.get("window", (-3.0, 3.0, 10.0)))
    spec = sp.roots_in_window(sp.linearize(system, eq), *win, seeds_per_axis=int(sec.get("seeds_per_axis", 20)))
    res = SpectrumResult(spec)
    tr = sec.get("track")
    if tr:
        def builder(v):
            s, e, _ = build_system(cfg, {tr["param"]: float(v)})
            return s, e
        res.track, res.crossings = sp.track_rightmost(builder, tr["param"], grid_values(tr["grid"]),
                                                      window=tuple(tr.get("window", win)))
    return res


# --- fit / predict -----------------------------------------------------------

@dataclass
class FitResult:
    model: ssm.SSMModel
    train: EmbeddedData
    test: Optional[EmbeddedData]
    report: Optional[ssm.PredictionReport]
    eigenvalues: np.ndarray
    trajectories: list = field(default_factory=list, repr=False)


def fit_model(cfg: dict, train: EmbeddedData, eq) -> ssm.SSMModel:
    mod = cfg["model"]
    ecfg = train.cfg
    man = ssm.fit_manifold(train, int(mod["d"]), int(mod["manifold_order"]), anchor=_anchor(cfg, ecfg, eq),
                           cfg=ecfg)
    if mod.get("dynamics", "poly") == "rbf":
        return ssm.fit_rbf(train, man, stride=int(mod.get("stride", 1)), max_centers=mod.get("max_centers"),
                           tikhonov=float(mod.get("tikhonov", ssm.RBF_TIKHONOV)))
    return ssm.fit_polyfield(train, man, int(mod["dynamics_order"]), ridge=float(mod.get("ridge", 0.0)))


def run_fit(cfg: dict, trajectories=None, overrides=None, rng=None) -> FitResult:
    """Embed, split (last ``split.test`` trajectories held out), fit, score."""
    if trajectories is None:
        trajectories = simulate_set(cfg, rng_for(cfg) if rng is None else rng, overrides)
    if not trajectories:
        raise EmptyInputError([("trajectories", "no trajectories to fit")])
    _, eq, _ = build_system(cfg, overrides)
    ecfg = embedding_config(cfg)
    n_train, n_test = split_counts(cfg, len(trajectories))
    data = embed(trajectories, ecfg, min_rows=int(cfg["embedding"].get("min_rows", 1)))
    ids = np.unique(data.traj_ids)
    if len(ids) <= n_test:
        raise EmptyInputError([("trajectories", "too few trajectories survive the embedding skip")])
    n_train = len(ids) - n_test
    train = data.subset(ids[:n_train])
    if cfg["model"].get("dynamics", "poly") == "poly":
        train = estimate_derivatives(train)
    model = fit_model(cfg, train, eq)
    test = data.subset(ids[n_train:]) if n_test else None
    report = ssm.predict(model, test) if test is not None else None
    return FitResult(model, train, test, report, ssm.model_eigenvalues(model), trajectories)


def run_predict(cfg: dict, model: ssm.SSMModel, trajectories) -> ssm.PredictionReport:
    if not trajectories:
        raise EmptyInputError([("trajectories", "no trajectories to predict")])
    ecfg = model.cfg if model.cfg is not None else embedding_config(cfg)
    return ssm.predict(model, embed(trajectories, ecfg))


# --- diagnostics --------------------------------------------------------------

@dataclass
class DiagnoseResult:
    fit: FitResult
    corrdim_embedding: Optional[chaos.CorrDimFit] = None
    corrdim_reduced: Optional[chaos.CorrDimFit] = None
    orbit: Optional[np.ndarray] = None
    orbit_diverged: bool = False
    orbit_in_box: Optional[bool] = None
    pdf: Optional[chaos.PdfReport] = None
    reference_bounded: Optional[bool] = None
    lyapunov_full: Optional[chaos.LyapunovFit] = None
    lyapunov_model: Optional[chaos.LyapunovFit] = None

    def summary(self) -> dict:
        out = {"eigenvalues": [[float(z.real), float(z.imag)] for z in self.fit.eigenvalues]}
        if self.corrdim_embedding is not None:
            out["corrdim_embedding"] = self.corrdim_embedding.slope
            out["corrdim_reduced"] = self.corrdim_reduced.slope
        if self.orbit is not None:
            out["orbit_diverged"] = bool(self.orbit_diverged)
            out["orbit_in_box"] = None if self.orbit_in_box is None else bool(self.orbit_in_box)
        if self.pdf is not None:
            out["pdf_l1"] = [float(v) for v in self.pdf.distances]
        if self.reference_bounded is not None:
            out["reference_bounded"] = bool(self.reference_bounded)
        if self.lyapunov_full is not None:
            out["lyapunov_full"] = self.lyapunov_full.exponent
            out["lyapunov_model"] = self.lyapunov_model.exponent
        return out


def _attractor_rows(data: EmbeddedData, burn_time: float) -> np.ndarray:
    return np.flatnonzero(data.times >= burn_time)


def _lyapunov(cfg: dict, fit: FitResult, lcfg: dict):
    model = fit.model
    system, _, _ = build_system(cfg)
    ecfg = fit.train.cfg
    traj0 = fit.trajectories[0]
    dt = fit.train.dt
    sub = int(lcfg.get("substeps", 10))
    rows = np.arange(*lcfg["anchor_rows"])
    horizon, n, eps = int(lcfg["horizon"]), int(lcfg.get("n", 50)), float(lcfg.get("eps", 1e-3))
    obs = list(ecfg.observable)

    def full_adv(X0, nsteps):
        # each ensemble member restarts from a constant history at the perturbed state
        out = []
        for x in X0:
            tj = dde.simulate(system, dde.HistorySpec.constant(x), (nsteps + ecfg.span_steps) * dt,
                              dt / sub, save_every=sub)
            out.append(embed_rows(tj.samples[:, obs], ecfg.k, ecfg.lag_steps)[:nsteps + 1])
        return np.stack(out, axis=1)

    def model_adv(E0, nsteps):
        o, _ = ssm.rk4_orbit(model.dynamics, E0, nsteps, dt)
        return np.stack([model.lift(o[:, i]) for i in range(o.shape[1])], axis=1)

    X_anchor = traj0.samples[rows]
    E_anchor = model.reduce(fit.train.Y[rows])
    diam = chaos.attractor_diameter(fit.train.Y[_attractor_rows(fit.train, lcfg.get("burn_time", 0.0))])
    seed = int(cfg.get("seed", 0))
    lf = chaos.lyapunov_leading(full_adv, X_anchor, n, eps, horizon, dt, diam, seed=seed)
    lm = chaos.lyapunov_leading(model_adv, E_anchor, n, eps, horizon, dt, diam, seed=seed)
    return lf, lm


def run_diagnose(cfg: dict) -> DiagnoseResult:
    dcfg = cfg["diagnostics"]
    fit = run_fit(cfg)
    model, train = fit.model, fit.train
    res = DiagnoseResult(fit)
    burn = float(dcfg.get("burn_time", 0.0))
    keep = _attractor_rows(train, burn)
    eta = model.reduce(train.Y)
    if "corrdim" in dcfg:
        st = int(dcfg["corrdim"].get("stride", 1))
        res.corrdim_embedding = chaos.correlation_dimension(train.Y[keep][::st])
        res.corrdim_reduced = chaos.correlation_dimension(eta[keep][::st])
    ocfg = dcfg.get("orbit")
    if ocfg:
        if ocfg.get("start", "train") == "test" and fit.test is not None:
            eta0 = model.reduce(fit.test.Y[:1])[0]
        else:
            eta0 = eta[int(ocfg.get("start_row", 0))]
        steps = int(ocfg["steps"])
        bound = float(ocfg.get("bound", np.inf))
        if isinstance(model.dynamics, ssm.RBFMap):
            orbit, div = ssm.rbf_orbit(model.dynamics, eta0, steps, bound)
        else:
            orbit, div = ssm.advect(model, eta0, steps, train.dt, bound)
        orbit = orbit[int(ocfg.get("burn", 0))::int(ocfg.get("thin", 1))]
        res.orbit, res.orbit_diverged = orbit, bool(div)
        if "box_factor" in ocfg:
            ref = eta[keep]
            lo, hi = ref.min(0), ref.max(0)
            half = 0.5 * (hi - lo) * float(ocfg["box_factor"])
            res.orbit_in_box = bool(np.all(np.abs(orbit - 0.5 * (lo + hi)) <= half))
    pcfg = dcfg.get("pdf")
    if pcfg and res.orbit is not None:
        if pcfg.get("reference", "train") == "exact_map":
            m = pcfg["exact_map"]
            _, _, p = build_system(cfg)
            r = int(p["r"])
            ref = systems.micro_chaos_map(p["a"], p["p_gain"], p["resolution"], p["sample_period"], r,
                                          [float(m["x0"])] * (r + 1), int(m["steps"]))[int(m.get("burn", 0)):]
            res.reference_bounded = bool(np.all(np.isfinite(ref)) and np.max(np.abs(ref)) < float(m.get("bound", 1.0)))
            sample = model.lift(res.orbit)[:, 0]
        else:
            ref = eta[keep][::int(pcfg.get("ref_thin", 1))]
            sample = res.orbit
        res.pdf = chaos.pdf_compare(ref, sample)
    if "lyapunov" in dcfg:
        res.lyapunov_full, res.lyapunov_model = _lyapunov(cfg, fit, dcfg["lyapunov"])
    return res


# --- parametric -------------------------------------------------------------

@dataclass
class ParametricResult:
    family: pm.ParametricSSM
    node_nmte: Dict[float, list]
    validation_nmte: Dict[float, list] = field(default_factory=dict)
    validation_eigs: Dict[float, complex] = field(default_factory=dict)


def run_parametric(cfg: dict, validate_unseen: bool = True) -> ParametricResult:
    par = cfg["parametric"]
    name = par["param"]
    nodes = [float(v) for v in par["nodes"]]
    stride = int(par.get("seed_stride", 1))
    q = par.get("radius_quantile")
    models, radii, node_nmte = [], [], {}
    for i, mu in enumerate(nodes):
        fit = run_fit(cfg, overrides={name: mu}, rng=rng_for(cfg, stride * i))
        models.append(fit.model)
        node_nmte[mu] = [] if fit.report is None else list(fit.report.nmte)
        if q is not None:
            radii.append(float(np.quantile(np.linalg.norm(fit.model.reduce(fit.train.Y), axis=1), q)))
    fam = pm.ParametricSSM(nodes, models, par.get("scheme", "linear"), radii=radii or None)
    res = ParametricResult(fam, node_nmte)
    val = par.get("validation")
    if validate_unseen and val:
        ecfg = embedding_config(cfg)
        for j, mu in enumerate(val["values"]):
            mu = float(mu)
            trajs = simulate_set(cfg, np.random.default_rng(int(val.get("seed", 100)) + j), {name: mu},
                                 count=int(val.get("count", 2)))
            m = fam.interpolate(mu)
            res.validation_nmte[mu] = list(ssm.predict(m, embed(trajs, ecfg)).nmte)
            res.validation_eigs[mu] = complex(ssm.model_eigenvalues(m)[0])
    return res


def family_to_dict(fam: pm.ParametricSSM, param: str) -> dict:
    return {"schema": "ddessm.family/1", "param": param, "scheme": fam.scheme,
            "nodes": [float(v) for v in fam.nodes],
            "radii": None if fam.radii is None else [float(v) for v in fam.radii],
            "models": [m.to_dict() for m in fam.models]}


def family_from_dict(d: dict) -> pm.ParametricSSM:
    if d.get("schema") != "ddessm.family/1":
        raise ConfigError([("family.schema", f"unsupported schema {d.get('schema')!r}")])
    models = [ssm.SSMModel.from_dict(m) for m in d["models"]]
    return pm.ParametricSSM(d["nodes"], models, d["scheme"], align=False, radii=d.get("radii"))


def run_bifurcate(cfg: dict, family: Optional[pm.ParametricSSM] = None) -> pm.BifurcationDiagram:
    bif = cfg["bifurcation"]
    if family is None:
        family = run_parametric(cfg, validate_unseen=False).family
    finder = pm.family_finder(family, pm.PoincareSection(), n_seeds=int(bif.get("n_seeds", 20)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        diag = pm.fold_scan(finder, grid_values(bif["grid"]), tol=float(bif.get("tol", 1e-4)))
    for mu in bif.get("regimes", []):
        diag.counts.setdefault(float(mu), len(finder(float(mu))))
    return diag


# --- oracle ------------------------------------------------------------------

def run_oracle(cfg: dict) -> oracle.SSMCoefficients:
    sec = cfg["system"]
    if sec["name"] != "hutchinson":
        raise ConfigError([("system.name", "the equation-driven oracle covers the hutchinson system only")])
    p = dict(systems.CATALOG["hutchinson"].default_params)
    p.update(sec.get("params") or {})
    return oracle.solve(p["r"], p["K"], p["tau"])


def default_config(system_name: str) -> dict:
    return {"seed": 0, "system": {"name": system_name, "params": {}}}


def with_overrides(cfg: dict, **sections) -> dict:
    out = copy.deepcopy(cfg)
    for k, v in sections.items():
        out.setdefault(k, {}).update(v)
    return out
