"""Experiment harness: config loading, pipeline orchestration, rate fits,
and the command-line entry points.

A config is one JSON document naming a model, a dataset source, an order
declaration (or "auto"), and the dynamics settings. `run` executes the whole
pipeline (orders -> verify -> dynamics -> margins -> homogenization -> kkt ->
rates) and writes trajectory.csv, metadata.json and summary.json; `report`
turns a summary into a pass/fail inventory with exit code 0 or 1.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional

import click
import numpy as np

from . import kkt as kktmod
from . import margins as mg
from . import toy as toymod
from .dynamics import DynamicsConfig, Trajectory, run_gd, run_gf
from .engine import (Dataset, NetworkModel, ScalarPowerModel, ToyTwoLayerModel,
                     LinearBlock, ActPowBlock, AvgPoolBlock, ResidualBlock,
                     SwigluBlock, LinearAttentionBlock, ReluAttentionBlock)
from .homogenize import check_error_bound, leading_component_positive
from .orders import (BlockKind, OrderDescriptor, activation_power_order,
                     catalog_order, network_order, verify_near_homogeneity)
from .poly import NonnegPoly, build_pa_gd, build_pa_gf


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    model: dict
    dataset: dict
    order: object                 # "auto" | {"M":…, "p":[…], "q":[…]}
    dynamics: dict
    theta0: object = None         # explicit list | {"scale": s} | None (zeros)
    seed: int = 0
    name: str = "experiment"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        missing = [k for k in ("model", "dataset", "order", "dynamics") if k not in raw]
        if missing:
            raise ValueError(f"config missing keys: {missing}")
        return cls(model=dict(raw["model"]), dataset=dict(raw["dataset"]),
                   order=raw["order"], dynamics=dict(raw["dynamics"]),
                   theta0=raw.get("theta0"), seed=int(raw.get("seed", 0)),
                   name=str(raw.get("name", "experiment")))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"name": self.name, "model": self.model, "dataset": self.dataset,
                "order": self.order, "dynamics": self.dynamics,
                "theta0": self.theta0, "seed": self.seed}


def default_config(name: str) -> ExperimentConfig:
    """Builtin fixture configs: 'toy' (reduced flow), 'toy_gd', 'example35'."""
    if name == "toy":
        return ExperimentConfig(
            model={"name": "toy", "d": 2, "alpha_l": 0.5},
            dataset={"generator": "toy", "n": 8, "gamma_star": 0.5},
            order="auto",
            dynamics={"mode": "gf_reduced", "horizon": 1e5, "rk_tolerance": 1e-9},
            seed=0, name="toy")
    if name == "toy_gd":
        return ExperimentConfig(
            model={"name": "toy", "d": 2, "alpha_l": 0.5},
            dataset={"generator": "toy", "n": 8, "gamma_star": 0.5},
            order="auto",
            dynamics={"mode": "gd", "eta": 0.1, "max_steps": 150000,
                      "record_every": 1},
            theta0={"scale": 0.0},
            seed=0, name="toy_gd")
    if name == "example35":
        return ExperimentConfig(
            model={"name": "example35", "M": 3},
            dataset={"generator": "single"},
            order="auto",
            dynamics={"mode": "gf", "horizon": 1e4, "gf_tolerance": 1e-10},
            theta0=[-1.0],
            seed=0, name="example35")
    raise ValueError(f"unknown fixture config {name!r}")


# ---------------------------------------------------------------------------
# model / dataset / order assembly

def _block_from_dict(b: dict):
    kind = b["kind"]
    if kind == "linear":
        return LinearBlock(b["d_in"], b["d_out"], b.get("bias", True))
    if kind == "activation":
        return ActPowBlock(b["activation"], b.get("power", 1), b["dim"],
                           b.get("alpha", 0.01))
    if kind == "pooling":
        return AvgPoolBlock(b["dim"])
    if kind == "residual":
        return ResidualBlock(_block_from_dict(b["inner"]))
    if kind == "swiglu":
        return SwigluBlock(b["d_in"], b["d_out"], b.get("beta", 1.0))
    if kind == "linear_attention":
        return LinearAttentionBlock(b["d"], b["ctx"])
    if kind == "relu_attention":
        return ReluAttentionBlock(b["d"], b["ctx"])
    raise ValueError(f"unknown block kind {kind!r}")


def _order_from_dict(b: dict) -> OrderDescriptor:
    kind = b["kind"]
    if kind == "activation":
        return activation_power_order(b["activation"], b.get("power", 1))
    if kind == "residual":
        return catalog_order(BlockKind("residual"))
    return catalog_order(BlockKind(kind, activation=b.get("activation"),
                                   power=b.get("power", 1),
                                   d_in=b.get("d_in", b.get("d", 1)),
                                   d_out=b.get("d_out", b.get("d", 1))))


def orders_from_config(blocks: List[dict]) -> OrderDescriptor:
    """Config lists blocks input-side first (outermost last); network_order
    wants outermost first."""
    descs = [_order_from_dict(b) for b in reversed(blocks)]
    return network_order(descs)


def build_model(config: ExperimentConfig):
    """Return (model, M, p, q) from the config; resolves order 'auto'."""
    spec = config.model
    name = spec.get("name", "network")
    if name == "toy":
        model = ToyTwoLayerModel(spec.get("d", 2), spec.get("alpha_l", 0.5))
        M, p, q = toymod.TOY_M, toymod.TOY_ENV_P, toymod.TOY_ENV_Q
    elif name == "example35":
        M = spec.get("M", 3)
        model = ScalarPowerModel(M)
        p = NonnegPoly((0.0,) * M + (1.0,))          # x^M, so p_a = M x^{M-1}
        # |f| <= rho^M + M rho^{M-1} and ||f'|| <= M rho^{M-1} + M(M-1) rho^{M-2}
        q = NonnegPoly((0.0,) * (M - 1) + (float(M), 1.0))
    elif name == "network":
        model = NetworkModel([_block_from_dict(b) for b in reversed(spec["blocks"])])
        desc = orders_from_config(spec["blocks"])
        M, p, q = desc.m_param, desc.env_p, desc.env_q
    else:
        raise ValueError(f"unknown model {name!r}")
    if config.order != "auto":
        decl = config.order
        if int(decl["M"]) != M and name == "network":
            raise ValueError(f"declared M={decl['M']} but network order is {M}")
        M = int(decl["M"])
        p = NonnegPoly(tuple(decl["p"]))
        q = NonnegPoly(tuple(decl["q"])) if decl.get("q") else q
    return model, M, p, q


def build_dataset(config: ExperimentConfig) -> Dataset:
    src = config.dataset
    if "file" in src:
        return Dataset.from_csv(src["file"])
    gen = src.get("generator")
    if gen == "toy":
        tc = toymod.ToyConfig(d=config.model.get("d", 2), n=src.get("n", 8),
                              gamma_star=src.get("gamma_star", 0.5),
                              alpha_l=config.model.get("alpha_l", 0.5))
        return toymod.gen_symmetric_dataset(tc, seed=src.get("seed", config.seed))
    if gen == "single":
        return Dataset(X=np.array([[1.0]]), y=np.array([1.0]))
    raise ValueError("dataset needs a 'file' or a known 'generator'")


def initial_theta(config: ExperimentConfig, dim: int) -> np.ndarray:
    t0 = config.theta0
    if t0 is None:
        return np.zeros(dim)
    if isinstance(t0, dict):
        scale = float(t0.get("scale", 0.1))
        rng = np.random.default_rng(config.seed)
        return scale * rng.standard_normal(dim)
    arr = np.asarray(t0, dtype=float)
    if arr.size != dim:
        raise ValueError(f"theta0 has size {arr.size}, model needs {dim}")
    return arr


# ---------------------------------------------------------------------------
# rate fitting

@dataclass
class RateFit:
    loss_slope: float
    norm_band: tuple            # (min, max) of rho^M / log t over the window
    window: tuple               # (t_lo, t_hi)
    r_squared: float
    n_points: int


def fit_rates(times, log_losses, rhos, M: int, mode: str = "gf") -> RateFit:
    """Least-squares slope of log_loss + (2 - 2/M) log log t against log t
    over the last decade of t; GD trajectories already log t = eta * step,
    so the same fit applies.
    """
    t = np.asarray(times, dtype=float)
    ll = np.asarray(log_losses, dtype=float)
    rr = np.asarray(rhos, dtype=float)
    keep = np.isfinite(t) & np.isfinite(ll) & (t > math.e)
    t, ll, rr = t[keep], ll[keep], rr[keep]
    if t.size < 5:
        raise ValueError("insufficient window: too few usable records")
    t_hi = t.max()
    t_lo = t_hi / 10.0
    win = t >= t_lo
    if t[win].size < 5 or t.min() > t_lo:
        raise ValueError("insufficient window: need at least one decade of t")
    corr = 2.0 - 2.0 / M
    yv = ll[win] + corr * np.log(np.log(t[win]))
    xv = np.log(t[win])
    slope, intercept = np.polyfit(xv, yv, 1)
    resid = yv - (slope * xv + intercept)
    ss_tot = float(np.sum((yv - yv.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    band_vals = rr[win] ** M / np.log(t[win])
    return RateFit(loss_slope=float(slope),
                   norm_band=(float(band_vals.min()), float(band_vals.max())),
                   window=(float(t_lo), float(t_hi)),
                   r_squared=r2, n_points=int(t[win].size))


def zeta_tail_fraction(times, zetas) -> Optional[float]:
    """Arc length accumulated over the final time decade as a fraction of the
    total; the directional-convergence proxy."""
    t = np.asarray(times, dtype=float)
    z = np.asarray(zetas, dtype=float)
    if t.size < 2 or z[-1] <= 0:
        return None
    t_hi = t.max()
    idx = np.searchsorted(t, t_hi / 10.0)
    if idx == 0:
        return None
    z_start = z[min(idx, z.size - 1)]
    return float((z[-1] - z_start) / z[-1])


# ---------------------------------------------------------------------------
# pipeline

def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None) -> dict:
    """Execute the full pipeline; returns the summary dict and, when out_dir
    is given, writes trajectory.csv, metadata.json, summary.json.

    A stage failure is recorded under summary['errors'][stage] and later
    stages that depend on it are skipped; files written so far stay on disk.
    """
    summary: dict = {"name": config.name, "seed": config.seed,
                     "config": config.to_dict(), "errors": {}, "checks": {}}
    traj: Optional[Trajectory] = None
    model = M = p = q = data = None

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:             # record and keep partial outputs
            summary["errors"][name] = f"{type(exc).__name__}: {exc}"
            return None

    def _orders():
        m, mm, pp, qq = build_model(config)
        return m, mm, pp, qq

    got = stage("orders", _orders)
    if got is None:
        return _finish(summary, traj, out_dir)
    model, M, p, q = got
    summary["order"] = {"M": M, "p": list(p.coeffs),
                        "q": list(q.coeffs) if q is not None else None}

    data = stage("dataset", lambda: build_dataset(config))
    if data is None:
        return _finish(summary, traj, out_dir)
    summary["dataset"] = {"n": data.n, "d": data.d}

    def _verify():
        if model.dim > 200:
            return None
        rep = verify_near_homogeneity(model, data, M, p,
                                      q if q is not None else NonnegPoly((0.0,) * M + (1.0,)),
                                      samples=50, radius=3.0, seed=config.seed)
        return {"max_euler_excess": rep.max_a1,
                "max_grad_excess": rep.max_a2,
                "max_value_excess": rep.max_a3,
                "ok": rep.ok}
    vrep = stage("verify", _verify)
    if vrep is not None:
        summary["verify"] = vrep

    dyn = dict(config.dynamics)
    mode = dyn.pop("mode", "gf")

    def _dynamics():
        if mode == "gf_reduced":
            if not isinstance(model, ToyTwoLayerModel):
                raise ValueError("gf_reduced only applies to the toy model")
            tc = toymod.ToyConfig(d=model.d, n=data.n,
                                  gamma_star=config.dataset.get("gamma_star", 0.5),
                                  alpha_l=model.alpha_l,
                                  rk_tolerance=dyn.get("rk_tolerance", 1e-9))
            return toymod.run_reduced_ode(data, tc, horizon=float(dyn.get("horizon", 1e3)))
        theta0 = initial_theta(config, model.dim)
        dc = DynamicsConfig(mode=mode,
                            eta=float(dyn.get("eta", 0.01)),
                            horizon=float(dyn.get("horizon", 1e3)),
                            max_steps=int(dyn.get("max_steps", 100000)),
                            gf_tolerance=float(dyn.get("gf_tolerance", 1e-8)),
                            B=dyn.get("B"), A=float(dyn.get("A", 1.0)),
                            record_every=int(dyn.get("record_every", 1)))
        runner = run_gd if mode == "gd" else run_gf
        return runner(model, data, theta0, dc, M, p, q)

    traj = stage("dynamics", _dynamics)
    if traj is None:
        return _finish(summary, traj, out_dir)

    recs = traj.records
    s_idx = traj.first_sep_index()
    summary["dynamics"] = {"mode": mode, "records": len(recs),
                           "t_final": recs[-1].t,
                           "sep_reached": s_idx is not None,
                           "sep_time": recs[s_idx].t if s_idx is not None else None,
                           "final_log_loss": recs[-1].log_loss,
                           "final_rho": recs[-1].rho}
    if s_idx is None:
        summary["dynamics"]["note"] = "separability never reached"

    def _margins():
        out = {}
        col = "gamma_hat" if mode == "gd" else "gamma_tilde"
        if s_idx is not None:
            post = [getattr(r, col) for r in recs[s_idx:]]
            out["monotone_column"] = col
            out["monotone_violations"] = mg.check_monotone(post, tol=1e-10)
            pa = build_pa_gf(p, M)
            pa_gd = build_pa_gd(p, M)
            sandwich_ok = True
            persist_ok = True
            for r in recs[s_idx:]:
                if not r.sep:
                    persist_ok = False
                if r.eps_t is not None and r.gamma_tilde is not None:
                    s = 1e-9 * (1.0 + abs(r.gamma))
                    if not (r.gamma_tilde <= r.gamma_bar + s
                            and r.gamma_bar <= r.gamma + s
                            and r.gamma <= (1.0 + r.eps_t) * r.gamma_tilde + s):
                        sandwich_ok = False
            out["sandwich_ok"] = sandwich_ok
            out["sep_persistent"] = persist_ok
            eps_s = recs[s_idx].eps_t
            eps_f = recs[-1].eps_t
            out["eps_t_at_s"] = eps_s
            out["eps_t_final"] = eps_f
            out["eps_t_decreased"] = (eps_s is not None and eps_f is not None
                                      and eps_f < eps_s)
        out["final_gamma"] = recs[-1].gamma
        out["final_gamma_hat"] = recs[-1].gamma_hat
        return out
    mrep = stage("margins", _margins)
    if mrep is not None:
        summary["margins"] = mrep

    def _homog():
        pa = build_pa_gf(p, M)
        rng = np.random.default_rng(config.seed + 1)
        thetas = [rng.standard_normal(model.dim) for _ in range(20)]
        rep = check_error_bound(model, thetas, data.X[0], M, pa)
        out = {"max_residual": rep.max_residual, "ok": rep.ok}
        if s_idx is not None:
            lead = leading_component_positive(model, recs[-1].theta, data, M, pa)
            out["min_homog_margin"] = lead.min_homog_margin
            out["leading_positive"] = lead.ok
        return out
    hrep = stage("homogenization", _homog)
    if hrep is not None:
        summary["homogenization"] = hrep

    def _kkt():
        if s_idx is None:
            return {"skipped": "not separable"}
        pa = build_pa_gf(p, M)
        gam_s = recs[s_idx].gamma_tilde
        def one(r):
            rep = kktmod.kkt_diagnostics(model, r.theta, data, M, pa,
                                         gamma_tilde_s=gam_s,
                                         gamma_tilde_now=r.gamma_tilde)
            return {"beta": rep.beta, "eps": rep.eps, "delta": rep.delta,
                    "stationarity_residual": rep.stationarity_residual,
                    "complementarity_residual": rep.complementarity_residual,
                    "B_const": rep.B_const, "B_now": rep.B_now,
                    "fM_min": rep.fM_min, "ok": rep.ok}
        at_s = one(recs[s_idx])
        at_end = one(recs[-1])
        return {"at_s": at_s, "final": at_end,
                "delta_decreased": at_end["delta"] < at_s["delta"]}
    krep = stage("kkt", _kkt)
    if krep is not None:
        summary["kkt"] = krep

    def _rates():
        if s_idx is None:
            return {"skipped": "not separable"}
        fit = fit_rates(traj.column("t"), traj.column("log_loss"),
                        traj.column("rho"), M, mode="gd" if mode == "gd" else "gf")
        band = fit.norm_band
        return {"loss_slope": fit.loss_slope, "r_squared": fit.r_squared,
                "norm_band": band,
                "norm_band_ratio": band[1] / band[0] if band[0] > 0 else math.inf,
                "window": fit.window, "n_points": fit.n_points}
    rrep = stage("rates", _rates)
    if rrep is not None:
        summary["rates"] = rrep

    summary["zeta"] = {"total": recs[-1].zeta,
                       "tail_fraction": zeta_tail_fraction(traj.column("t"),
                                                           traj.column("zeta"))}

    if isinstance(model, ToyTwoLayerModel) and mode == "gf_reduced":
        def _toychecks():
            tc = toymod.ToyConfig(d=model.d, n=data.n,
                                  gamma_star=config.dataset.get("gamma_star", 0.5),
                                  alpha_l=model.alpha_l)
            bal = max(abs(toymod.balancing_residual(r.theta, tc.c_l, model.d))
                      for r in recs if r.theta is not None)
            brep = toymod.check_toy_bounds(traj, tc)
            return {"balancing_max_abs": bal,
                    "bounds_ok": brep.ok,
                    "loss_margin": brep.loss_margin,
                    "norm_lower_margin": brep.norm_lower_margin,
                    "norm_upper_margin": brep.norm_upper_margin,
                    "t0": brep.t0}
        trep = stage("toy_checks", _toychecks)
        if trep is not None:
            summary["toy_checks"] = trep

    if isinstance(model, ScalarPowerModel):
        thetas = [float(r.theta[0]) for r in recs if r.theta is not None]
        summary["counterexample"] = {
            "theta_max": max(thetas),
            "log_loss_min": min(r.log_loss for r in recs),
            "always_nonpositive": max(thetas) <= 0.0,
            "loss_floor_held": min(r.log_loss for r in recs) >= -4.0 - 1e-3,
        }

    return _finish(summary, traj, out_dir)


def _finish(summary: dict, traj: Optional[Trajectory], out_dir: Optional[str]) -> dict:
    summary["passed"] = _evaluate(summary)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        if traj is not None:
            traj.to_csv(os.path.join(out_dir, "trajectory.csv"))
            traj.write_metadata(os.path.join(out_dir, "metadata.json"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, default=_json_default)
    return summary


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _evaluate(summary: dict) -> bool:
    """Overall verdict; every entry references a summary field that itself
    traces back to a trajectory column or a module report."""
    if summary["errors"]:
        return False
    checks = []
    mrg = summary.get("margins", {})
    if "monotone_violations" in mrg:
        checks.append(("margin monotone", not mrg["monotone_violations"]))
        checks.append(("sandwich", mrg["sandwich_ok"]))
        checks.append(("separability persistent", mrg["sep_persistent"]))
    v = summary.get("verify")
    if v is not None:
        checks.append(("near-homogeneity envelopes", v["ok"]))
    h = summary.get("homogenization")
    if h is not None and "ok" in h:
        checks.append(("homogenization bound", h["ok"]))
    t = summary.get("toy_checks")
    if t is not None:
        checks.append(("balancing conservation", t["balancing_max_abs"] <= 1e-6))
        checks.append(("reduced-flow bounds", t["bounds_ok"]))
    c = summary.get("counterexample")
    if c is not None:
        checks.append(("theta stays nonpositive", c["always_nonpositive"]))
        checks.append(("loss floor", c["loss_floor_held"]))
    summary["checks"] = {name: bool(ok) for name, ok in checks}
    return all(ok for _, ok in checks)


# ---------------------------------------------------------------------------
# report rendering

CHECK_INVENTORY = [
    ("margin monotone", "post-separability modified margin nondecreasing, tol 1e-10 per record"),
    ("sandwich", "gamma_tilde <= gamma_bar <= gamma <= (1+eps_t) gamma_tilde, tol 1e-9 relative"),
    ("separability persistent", "sep flag never clears after first set"),
    ("near-homogeneity envelopes", "sampled Euler/gradient/value residuals within envelopes"),
    ("homogenization bound", "|f - f_M| <= p_a(rho) + estimator tolerance"),
    ("balancing conservation", "|(a+1/c_L)^2 - ||w||^2 - 1/c_L^2| <= 1e-6"),
    ("reduced-flow bounds", "loss and norm growth bounds on their validity domains"),
    ("theta stays nonpositive", "counter-example trajectory confined to theta <= 0"),
    ("loss floor", "log_loss >= -4 - 1e-3 throughout"),
]


def emit_report(summary: dict) -> str:
    """Human-readable pass/fail inventory; first failing record cited."""
    lines = [f"experiment: {summary.get('name')}  seed: {summary.get('seed')}"]
    for stage, err in summary.get("errors", {}).items():
        lines.append(f"ERROR [{stage}] {err}")
    done = summary.get("checks", {})
    for name, desc in CHECK_INVENTORY:
        if name in done:
            mark = "PASS" if done[name] else "FAIL"
            lines.append(f"{mark}  {name}: {desc}")
    mrg = summary.get("margins", {})
    if mrg.get("monotone_violations"):
        lines.append(f"  first monotonicity violation at record index "
                     f"{mrg['monotone_violations'][0]}")
    r = summary.get("rates")
    if r and "loss_slope" in r:
        lines.append(f"rates: slope {r['loss_slope']:+.4f} (band [-1.2, -0.8]), "
                     f"r^2 {r['r_squared']:.4f}, norm ratio {r['norm_band_ratio']:.3f}")
    k = summary.get("kkt")
    if k and "final" in k:
        lines.append(f"kkt: beta {k['final']['beta']:.6f}, eps {k['final']['eps']:.4g}, "
                     f"delta {k['final']['delta']:.4g}, delta decreased: {k['delta_decreased']}")
    z = summary.get("zeta", {})
    if z.get("tail_fraction") is not None:
        lines.append(f"zeta tail fraction: {z['tail_fraction']:.4f}")
    lines.append("overall: " + ("PASS" if summary.get("passed") else "FAIL"))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# command line

def _load(ctx) -> ExperimentConfig:
    path = ctx.obj.get("config")
    if path is None:
        raise click.UsageError("--config required for this command")
    if path in ("toy", "toy_gd", "example35"):
        cfg = default_config(path)
    else:
        try:
            cfg = ExperimentConfig.from_file(path)
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"bad config {path}: {exc}")
    if ctx.obj.get("seed") is not None:
        cfg.seed = ctx.obj["seed"]
    return cfg


@click.group()
@click.option("--config", default=None,
              help="Config JSON path, or a builtin name: toy, toy_gd, example35.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out-dir", default="out", help="Artifact directory.")
@click.option("--threads", type=int, default=1, help="Parallel sweep width.")
@click.pass_context
def main(ctx, config, seed, out_dir, threads):
    """Margin dynamics experiment harness."""
    ctx.ensure_object(dict)
    ctx.obj.update(config=config, seed=seed, out_dir=out_dir, threads=threads)


@main.command()
@click.pass_context
def orders(ctx):
    """Print the homogeneity orders of the configured network."""
    cfg = _load(ctx)
    if cfg.model.get("name", "network") == "network":
        desc = orders_from_config(cfg.model["blocks"])
        click.echo(json.dumps({"M": desc.m_param, "M_input": desc.m_input,
                               "p": list(desc.env_p.coeffs),
                               "q": list(desc.env_q.coeffs)}, indent=2))
    else:
        _, M, p, q = build_model(cfg)
        click.echo(json.dumps({"M": M, "p": list(p.coeffs),
                               "q": list(q.coeffs) if q is not None else None},
                              indent=2))


@main.command()
@click.option("--samples", type=int, default=100)
@click.option("--radius", type=float, default=3.0)
@click.pass_context
def verify(ctx, samples, radius):
    """Sample-check the near-homogeneity envelopes of the configured model."""
    cfg = _load(ctx)
    model, M, p, q = build_model(cfg)
    data = build_dataset(cfg)
    rep = verify_near_homogeneity(model, data, M, p,
                                  q if q is not None else NonnegPoly((0.0,) * M + (1.0,)),
                                  samples=samples, radius=radius, seed=cfg.seed)
    click.echo(json.dumps({"max_euler_excess": rep.max_a1,
                           "max_grad_excess": rep.max_a2,
                           "max_value_excess": rep.max_a3,
                           "ok": rep.ok}, indent=2, default=_json_default))
    ctx.exit(0 if rep.ok else 1)


@main.command()
@click.option("--samples", type=int, default=100)
@click.pass_context
def homogenize(ctx, samples):
    """Check |f - f_M| <= p_a(rho) + tolerance on random parameter points."""
    cfg = _load(ctx)
    model, M, p, _ = build_model(cfg)
    data = build_dataset(cfg)
    pa = build_pa_gf(p, M)
    rng = np.random.default_rng(cfg.seed)
    thetas = [rng.standard_normal(model.dim) for _ in range(samples)]
    rep = check_error_bound(model, thetas, data.X[0], M, pa)
    click.echo(json.dumps({"max_residual": rep.max_residual,
                           "samples": rep.samples, "ok": rep.ok}, indent=2))
    ctx.exit(0 if rep.ok else 1)


@main.command()
@click.pass_context
def run(ctx):
    """Execute the full pipeline and write trajectory + summary artifacts."""
    cfg = _load(ctx)
    summary = run_experiment(cfg, out_dir=ctx.obj["out_dir"])
    click.echo(emit_report(summary))
    ctx.exit(0 if summary["passed"] else 1)


@main.command()
@click.option("--horizon", type=float, default=1e4)
@click.pass_context
def toy(ctx, horizon):
    """Run the builtin toy fixture through the reduced flow."""
    cfg = default_config("toy")
    cfg.dynamics["horizon"] = horizon
    if ctx.obj.get("seed") is not None:
        cfg.seed = ctx.obj["seed"]
    summary = run_experiment(cfg, out_dir=ctx.obj["out_dir"])
    click.echo(emit_report(summary))
    ctx.exit(0 if summary["passed"] else 1)


@main.command()
@click.argument("trajectory_csv", type=click.Path(exists=True))
@click.option("--order", "M", type=int, required=True)
@click.option("--mode", type=click.Choice(["gf", "gd"]), default="gf")
@click.pass_context
def rates(ctx, trajectory_csv, M, mode):
    """Fit the loss and norm rate laws over the last decade of a trajectory."""
    import csv as _csv
    with open(trajectory_csv, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    t = [float(r["t"]) for r in rows]
    ll = [float(r["log_loss"]) for r in rows]
    rho = [float(r["rho"]) for r in rows]
    try:
        fit = fit_rates(t, ll, rho, M, mode=mode)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    click.echo(json.dumps({"loss_slope": fit.loss_slope, "r_squared": fit.r_squared,
                           "norm_band": fit.norm_band, "window": fit.window,
                           "n_points": fit.n_points}, indent=2))
    ok = -1.2 <= fit.loss_slope <= -0.8 and fit.r_squared >= 0.98
    ctx.exit(0 if ok else 1)


@main.command()
@click.option("--horizon", type=float, default=1e3)
@click.pass_context
def kkt(ctx, horizon):
    """Run the configured experiment and audit KKT residuals at the end."""
    cfg = _load(ctx)
    cfg.dynamics.setdefault("horizon", horizon)
    summary = run_experiment(cfg, out_dir=None)
    rep = summary.get("kkt")
    if rep is None or "final" not in rep:
        click.echo(json.dumps({"skipped": "no separable endpoint"}, indent=2))
        ctx.exit(1)
    click.echo(json.dumps(rep, indent=2, default=_json_default))
    ctx.exit(0 if rep["final"]["ok"] else 1)


@main.command()
@click.argument("summary_json", type=click.Path(exists=True))
@click.pass_context
def report(ctx, summary_json):
    """Render a stored summary as a pass/fail inventory."""
    with open(summary_json) as fh:
        summary = json.load(fh)
    click.echo(emit_report(summary))
    ctx.exit(0 if summary.get("passed") else 1)


if __name__ == "__main__":
    main()
