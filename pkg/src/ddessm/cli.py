"""Command-line front end.

Every command writes its artifacts plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 validation failure, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, _accel, chaos, dde, oracle, parametric, spectrum, ssm, systems
from . import pipeline as P
from .embedding import EmbeddingError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

VALIDATION_ERRORS = (P.ConfigError, systems.CatalogError, EmbeddingError, dde.ConfigurationError)
NUMERIC_ERRORS = (dde.DDEError, spectrum.SpectrumError, ssm.SSMError, chaos.ChaosError,
                  parametric.ParametricError, oracle.OracleError, np.linalg.LinAlgError, FloatingPointError)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump(obj, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _c(z) -> list:
    return [float(np.real(z)), float(np.imag(z))]


def versions() -> dict:
    out = {"ddessm": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "backend": _accel.BACKEND}
    import scipy
    out["scipy"] = scipy.__version__
    if _accel.HAVE_NUMBA:
        import numba
        out["numba"] = numba.__version__
    return out


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command: str, out: Path, cfg: dict, inputs=()):
        self.command = command
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.inputs = {Path(p).name: _sha256(p) for p in inputs}
        self.outputs = []

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return p

    def json(self, name: str, obj):
        _dump(obj, self.path(name))

    def finish(self):
        manifest = {
            "command": self.command,
            "config_sha256": P.config_hash(self.cfg),
            "inputs": self.inputs,
            "seed": int(self.cfg.get("seed", 0)),
            "versions": versions(),
            "outputs": {n: _sha256(self.out / n) for n in sorted(set(self.outputs))},
        }
        _dump(manifest, self.out / "manifest.json")


def _read_trajectories(path) -> list:
    d = Path(path)
    if not d.is_dir():
        raise P.ConfigError([("--trajectories", f"{path} is not a directory")])
    files = sorted(d.glob("*.csv"))
    if not files:
        raise P.EmptyInputError([("--trajectories", f"no trajectory CSV files in {path}")])
    return files, [dde.read_trajectory_csv(f) for f in files]


def _load(args, command):
    if args.config is None:
        raise P.ConfigError([("--config", "required for this command")])
    cfg = P.load_config(args.config)
    return P.validate(cfg, command)


# --- commands ----------------------------------------------------------------

def cmd_simulate(args):
    cfg = _load(args, "simulate")
    run = Run("simulate", args.out, cfg, [args.config])
    for i, tr in enumerate(P.run_simulate(cfg)):
        dde.write_trajectory_csv(tr, run.path(f"trajectories/traj_{i:03d}.csv"))
    run.finish()


def cmd_spectrum(args):
    cfg = _load(args, "spectrum")
    run = Run("spectrum", args.out, cfg, [args.config])
    res = P.run_spectrum(cfg)
    res.spectrum.to_csv(run.path("spectrum.csv"))
    if res.track:
        with open(run.path("track.csv"), "w") as fh:
            fh.write("param,re,im\n")
            for v, z in res.track:
                fh.write("%.12e,%.12e,%.12e\n" % (v, z.real, z.imag))
        run.json("crossings.json", {"param": cfg["spectrum"]["track"]["param"],
                                    "crossings": [float(v) for v in res.crossings]})
    run.finish()


def _fit_report(res: P.FitResult) -> dict:
    out = {"eigenvalues": [_c(z) for z in res.eigenvalues]}
    if res.report is not None:
        out["nmte"] = [float(v) for v in res.report.nmte]
        out["mean_nmte"] = res.report.mean_nmte
    return out


def cmd_fit(args):
    cfg = _load(args, "fit")
    inputs = [args.config]
    trajs = None
    if args.trajectories is not None:
        files, trajs = _read_trajectories(args.trajectories)
        inputs += files
    run = Run("fit", args.out, cfg, inputs)
    res = P.run_fit(cfg, trajectories=trajs)
    res.model.to_json(run.path("model.json"))
    res.train.to_csv(run.path("embedded_train.csv"))
    run.json("fit_report.json", _fit_report(res))
    run.finish()


def cmd_predict(args):
    cfg = _load(args, "predict")
    if args.model is None:
        raise P.ConfigError([("--model", "required")])
    if args.trajectories is None:
        raise P.ConfigError([("--trajectories", "required")])
    files, trajs = _read_trajectories(args.trajectories)
    run = Run("predict", args.out, cfg, [args.config, args.model, *files])
    model = ssm.SSMModel.from_json(args.model)
    rep = P.run_predict(cfg, model, trajs)
    with open(run.path("predictions.csv"), "w") as fh:
        fh.write(",".join(["traj_id", "step"] + [f"y{i + 1}" for i in range(model.k)]) + "\n")
        for tid, Yp in enumerate(rep.predictions):
            for j, row in enumerate(Yp):
                fh.write("%d,%d," % (tid, j) + ",".join("%.12e" % v for v in row) + "\n")
    run.json("prediction_report.json", {"nmte": [float(v) for v in rep.nmte], "mean_nmte": rep.mean_nmte,
                                        "diverged": [bool(v) for v in rep.diverged]})
    run.finish()


def cmd_diagnose(args):
    cfg = _load(args, "diagnose")
    run = Run("diagnose", args.out, cfg, [args.config])
    res = P.run_diagnose(cfg)
    res.fit.model.to_json(run.path("model.json"))
    if res.corrdim_embedding is not None:
        res.corrdim_embedding.to_csv(run.path("corrdim_embedding.csv"))
        res.corrdim_reduced.to_csv(run.path("corrdim_reduced.csv"))
    if res.pdf is not None:
        res.pdf.to_csv(run.path("pdf.csv"))
    if res.lyapunov_full is not None:
        res.lyapunov_full.to_csv(run.path("lyapunov_full.csv"))
        res.lyapunov_model.to_csv(run.path("lyapunov_model.csv"))
    run.json("summary.json", res.summary())
    run.finish()


def cmd_parametric(args):
    cfg = _load(args, "parametric")
    run = Run("parametric", args.out, cfg, [args.config])
    res = P.run_parametric(cfg)
    run.json("family.json", P.family_to_dict(res.family, cfg["parametric"]["param"]))
    run.json("parametric_report.json", {
        "node_nmte": {repr(float(k)): [float(x) for x in v] for k, v in res.node_nmte.items()},
        "validation_nmte": {repr(float(k)): [float(x) for x in v] for k, v in res.validation_nmte.items()},
        "validation_leading_eigenvalue": {repr(float(k)): _c(v) for k, v in res.validation_eigs.items()},
    })
    run.finish()


def cmd_bifurcate(args):
    cfg = _load(args, "bifurcate")
    inputs = [args.config]
    fam = None
    if args.family is not None:
        with open(args.family) as fh:
            fam = P.family_from_dict(json.load(fh))
        inputs.append(args.family)
    run = Run("bifurcate", args.out, cfg, inputs)
    diag = P.run_bifurcate(cfg, fam)
    diag.to_csv(run.path("diagram.csv"))
    run.json("folds.json", {"folds": [float(v) for v in diag.folds],
                            "counts": {repr(float(k)): int(v) for k, v in sorted(diag.counts.items())},
                            "gaps": [[float(mu), msg] for mu, msg in diag.gaps]})
    run.finish()


def cmd_oracle(args):
    if args.config is not None:
        cfg = _load(args, "oracle")
        inputs = [args.config]
    else:
        cfg = P.validate(P.default_config(args.system), "oracle")
        inputs = []
    run = Run("oracle", args.out, cfg, inputs)
    co = P.run_oracle(cfg)
    d = co.to_dict()
    d["invariance_residual"] = {repr(r): oracle.boundary_residual(co, r) for r in (1e-2, 2e-2, 4e-2)}
    d["nonresonance"] = {f"{j}{k}": v for (j, k), v in oracle.check_nonresonance(co.eig).items()}
    run.json("oracle.json", d)
    run.finish()


def cmd_systems(args):
    listing = systems.catalog_listing()
    text = json.dumps(listing, indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        run = Run("systems list", args.out, {"systems": sorted(listing)})
        run.json("systems.json", listing)
        run.finish()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddessm", description="SSM reduction of delay differential equations")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, needs_out=True):
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="experiment YAML")
        p.add_argument("-o", "--out", required=needs_out, help="artifact directory")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate)
    add("spectrum", cmd_spectrum)
    add("fit", cmd_fit).add_argument("--trajectories", help="directory of trajectory CSVs")
    p = add("predict", cmd_predict)
    p.add_argument("--model", help="model JSON from `fit`")
    p.add_argument("--trajectories", help="directory of trajectory CSVs")
    add("diagnose", cmd_diagnose)
    add("parametric", cmd_parametric)
    add("bifurcate", cmd_bifurcate).add_argument("--family", help="family JSON from `parametric`")
    add("oracle", cmd_oracle).add_argument("--system", default="hutchinson")
    sp = sub.add_parser("systems")
    sp.add_argument("action", choices=["list"])
    sp.add_argument("-o", "--out", help="also write systems.json here")
    sp.set_defaults(func=cmd_systems)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            if not os.environ.get("DDESSM_SHOW_WARNINGS"):
                warnings.simplefilter("ignore", RuntimeWarning)
            args.func(args)
    except VALIDATION_ERRORS as exc:
        errs = getattr(exc, "errors", None) or [(type(exc).__name__, str(exc))]
        for fld, msg in errs:
            print(f"error: {fld}: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
