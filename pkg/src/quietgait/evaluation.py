"""Experiment drivers: surface trials, speed and quiet-factor sweeps, the long walk,
acoustic-gain calibration, a scripted trot baseline and CSV reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import optimize, stats

from quietgait import acoustics, checkpoint, phase, sim
from quietgait import terrain as terrain_mod
from quietgait.policy import ActorCritic, actor_input, action_to_targets, default_dims

log = logging.getLogger(__name__)

SAFE_LEVEL = 70.0
CALIBRATION_ANCHORS = {"wood": 73.51, "carpet": 71.90, "tiles": 72.34}
DEFAULT_ROUTE = [("wood", 18.34), ("tiles", 18.34), ("carpet", 18.34), ("concrete", 18.34), ("wood", 18.34)]
TROT_LABEL = "scripted-trot baseline"


class CalibrationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# controllers


@dataclass
class TrotParams:
    stride: float = 0.25  # body travel per gait cycle, m
    amplitude_gain: float = 1.25
    knee_lift: float = 0.6
    # stance legs carry the body on soft PD joints; extend their knee targets to offset the sag
    stance_knee_comp: float = 0.0
    # open-loop targets need stiffer joints than the learned policy uses
    kp: float = 80.0
    kd: float = 2.0
    hip_bias: tuple = (0.0, 0.0, 0.0, 0.0)
    knee_bias: tuple = (0.0, 0.0, 0.0, 0.0)
    offsets: tuple = (0.0, 0.5, 0.5, 0.0)


def scripted_trot(t, speed_cmd, sim_cfg: sim.SimConfig | None = None, params: TrotParams | None = None):
    """Open-loop diagonal trot targets at time ``t``.

    Stride frequency is ``speed / stride``.  Each leg sweeps its hip backwards
    at constant rate in stance and returns along a half-cosine in swing while
    the knee flexes; there is no touchdown shaping.
    """
    cfg = sim_cfg or sim.SimConfig()
    p = params or TrotParams()
    q = np.array(cfg.q_stand, dtype=float)
    if speed_cmd == 0:
        return q
    freq = abs(speed_cmd) / p.stride
    # hip angle per metre of foot travel at the standing pose
    a, b = q[0], q[1]
    lever = cfg.thigh_length * math.cos(a) + cfg.calf_length * math.cos(a + b)
    amp = math.copysign(p.amplitude_gain * p.stride / 4.0 / lever, speed_cmd)
    for leg in range(sim.N_LEGS):
        s = (freq * t + p.offsets[leg]) % 1.0
        hip, knee = q[2 * leg] + p.hip_bias[leg], q[2 * leg + 1] + p.knee_bias[leg]
        comp = p.stance_knee_comp
        if s < 0.5:
            u = s / 0.5
            q[2 * leg] = hip + amp * (2.0 * u - 1.0)
            q[2 * leg + 1] = knee + comp
        else:
            u = (s - 0.5) / 0.5
            q[2 * leg] = hip + amp * math.cos(math.pi * u)
            q[2 * leg + 1] = knee + comp - (p.knee_lift + comp) * math.sin(math.pi * u)
    return q


class TrotController:
    name = TROT_LABEL

    def __init__(self, sim_cfg: sim.SimConfig, params: TrotParams | None = None):
        self.cfg = sim_cfg
        self.params = params or TrotParams()

    def reset(self, state, commands):
        self.commands = np.array(commands, dtype=float).reshape(state.num_envs, 3)
        self.k = 0

    def act(self, state):
        t = self.k * self.cfg.control_dt
        self.k += 1
        return np.stack([scripted_trot(t, v, self.cfg, self.params) for v in self.commands[:, 0]])

    def update(self, state):
        pass

    def joint_config(self, sim_cfg: sim.SimConfig) -> sim.SimConfig:
        return dataclasses.replace(sim_cfg, kp=self.params.kp, kd=self.params.kd)


class PolicyController:
    """Deployment path: observation history -> estimator -> actor mean."""

    def __init__(self, estimator: phase.PhaseEstimator, actor: torch.nn.Module, sim_cfg: sim.SimConfig,
                 history_length: int = 20, name: str = "policy"):
        self.estimator = estimator
        self.actor = actor
        self.cfg = sim_cfg
        self.history_length = history_length
        self.name = name
        self.offset, self.scale = sim.observation_normalizer(sim_cfg)

    def reset(self, state, commands):
        n = state.num_envs
        self.commands = np.array(commands, dtype=float).reshape(n, 3)
        self.prev_action = np.zeros((n, sim.N_JOINTS))
        self.history = phase.ObservationHistory(n, self.history_length)
        self.history.reset(np.arange(n), self._observe(state))

    def _observe(self, state):
        return np.nan_to_num(sim.observe(state, self.commands, self.prev_action))

    def act(self, state):
        v_hat, h_hat, _, z = self.estimator.estimate(self.history.window())
        x = actor_input(self._observe(state), h_hat, v_hat, z, self.offset, self.scale)
        with torch.no_grad():
            a = self.actor(torch.as_tensor(x, dtype=torch.float32)).numpy().astype(np.float64)
        a = np.clip(a, -1.0, 1.0)
        self.prev_action = a
        return action_to_targets(a, self.cfg.q_stand, self.cfg)

    def update(self, state):
        self.history.push(self._observe(state))


def load_policy(path, name: str = "policy") -> PolicyController:
    """Build a deployment controller from a training or deploy checkpoint."""
    from quietgait.trainer import TrainConfig  # local: trainer pulls in the whole training stack

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays, meta = checkpoint.load_arrays(path)
    cfg = TrainConfig(**meta["train_config"])
    sim_cfg = sim.SimConfig(**meta["sim_config"])
    offset, scale = sim.observation_normalizer(sim_cfg)
    estimator = phase.PhaseEstimator(hidden=cfg.estimator_hidden, latent=cfg.latent_dim,
                                     obs_offset=offset, obs_scale=scale)
    checkpoint.load_module("estimator", estimator, arrays)
    a_dim, c_dim = default_dims(cfg.latent_dim)
    ac = ActorCritic(a_dim, c_dim, hidden=cfg.hidden, layers=cfg.layers)
    if meta.get("kind") == "deploy":
        checkpoint.load_module("actor", ac.actor, arrays)
    else:
        checkpoint.load_module("ac", ac, arrays)
    estimator.eval()
    return PolicyController(estimator, ac.actor, sim_cfg, cfg.history_length, name)


# ---------------------------------------------------------------------------
# simulation runs


@dataclass
class SimRun:
    events: list  # per env, times relative to the end of warm-up
    times: np.ndarray  # control-step times after warm-up
    x: np.ndarray  # (steps, N) trunk x
    v_x: np.ndarray  # (steps, N)
    fell: np.ndarray
    fall_x: np.ndarray
    duration: float


def simulate(controller, sim_cfg: sim.SimConfig, terrains, seeds, commands, duration: float, warmup: float = 1.0,
             stop_x: float | None = None, fall_height: float = 0.15, fall_pitch: float = 1.0) -> SimRun:
    """Run a batch of environments under ``controller`` and log footfalls after ``warmup``.

    With ``stop_x`` the run ends once every surviving robot has passed it;
    ``duration`` is then the time cap.
    """
    n = len(seeds)
    stepper = sim.BatchStepper(sim_cfg, list(terrains))
    state = sim.reset_batch(sim_cfg, list(terrains), seeds)
    controller.reset(state, commands)
    dt = sim_cfg.control_dt
    n_warm = int(round(warmup / dt))
    n_total = n_warm + int(round(duration / dt))
    alive = np.ones(n, bool)
    fall_x = np.full(n, np.nan)
    events = [[] for _ in range(n)]
    xs, vs, ts = [], [], []
    q_stand = np.asarray(sim_cfg.q_stand)
    for k in range(n_total):
        q_des = controller.act(state)
        q_des[~alive] = q_stand
        state, evs, diverged = stepper.step(state, q_des)
        controller.update(state)
        t_rel = (k + 1) * dt - warmup
        for ev in evs:
            if alive[ev.env] and ev.time >= warmup - 1e-9:
                events[ev.env].append(dataclasses.replace(ev, time=ev.time - warmup))
        height = state.qpos[:, 1] - np.array([t.height(x) for t, x in zip(stepper.terrains, state.qpos[:, 0])])
        down = diverged | ~np.isfinite(height) | (height < fall_height) | (np.abs(state.qpos[:, 2]) > fall_pitch)
        newly = down & alive
        fall_x[newly] = np.nan_to_num(state.qpos[newly, 0])
        alive &= ~down
        if k >= n_warm:
            xs.append(state.qpos[:, 0].copy())
            vs.append(state.qvel[:, 0].copy())
            ts.append(t_rel)
        if stop_x is not None and k >= n_warm and np.all(~alive | (state.qpos[:, 0] >= stop_x)):
            break
    ran = ts[-1] if ts else 0.0
    return SimRun(events, np.array(ts), np.array(xs).reshape(-1, n), np.array(vs).reshape(-1, n), ~alive, fall_x,
                  float(ran))


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialSpec:
    surface: str = "wood"
    speed: float = 0.5
    duration: float = 10.0
    trials: int = 5
    beta: float = 0.0
    controller: str = "trot"  # checkpoint path or "trot"
    seed: int = 0
    warmup: float = 1.0
    randomize: bool = True

    def __post_init__(self):
        if self.duration < 10.0:
            raise ValueError("trial duration must be at least 10 s")
        if self.trials < 1:
            raise ValueError("at least one trial is required")
        if self.surface not in terrain_mod.MATERIALS:
            raise ValueError(f"unknown surface {self.surface!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def seeds(self):
        return [self.seed * 1000 + k for k in range(self.trials)]


@dataclass
class TrialResult:
    spec: TrialSpec
    method: str
    mnl: list
    pnl: list
    achieved_speed: list
    tracking_error: list
    failed: int
    traces: list = field(default_factory=list, repr=False)
    failed_trials: list = field(default_factory=list)

    def _stat(self, xs, fn):
        return float(fn(xs)) if len(xs) else math.nan

    @property
    def mnl_mean(self):
        return self._stat(self.mnl, np.mean)

    @property
    def mnl_std(self):
        return self._stat(self.mnl, np.std)

    @property
    def pnl_mean(self):
        return self._stat(self.pnl, np.mean)

    @property
    def pnl_std(self):
        return self._stat(self.pnl, np.std)

    def summary(self) -> dict:
        return {
            "kind": "surface", "method": self.method, "surface": self.spec.surface, "speed": self.spec.speed,
            "beta": self.spec.beta, "duration": self.spec.duration, "seeds": self.spec.seeds(),
            "mnl": self.mnl, "pnl": self.pnl, "mnl_mean": self.mnl_mean, "mnl_std": self.mnl_std,
            "pnl_mean": self.pnl_mean, "pnl_std": self.pnl_std, "achieved_speed": self.achieved_speed,
            "tracking_error": self.tracking_error, "failed": self.failed, "failed_trials": self.failed_trials,
        }


def make_controller(spec_controller, sim_cfg: sim.SimConfig, cache: dict | None = None,
                    trot_params: TrotParams | None = None):
    if spec_controller == "trot":
        return TrotController(sim_cfg, trot_params)
    if cache is not None and spec_controller in cache:
        return cache[spec_controller]
    ctrl = load_policy(spec_controller)
    if cache is not None:
        cache[spec_controller] = ctrl
    return ctrl


def method_label(spec: TrialSpec) -> str:
    return TROT_LABEL if spec.controller == "trot" else f"policy beta={spec.beta:g}"


def _trial_run(spec: TrialSpec, sim_cfg: sim.SimConfig, controller=None, trot_params=None) -> SimRun:
    cfg = dataclasses.replace(sim_cfg, domain_randomization=spec.randomize)
    ctrl = controller or make_controller(spec.controller, cfg, trot_params=trot_params)
    if isinstance(ctrl, PolicyController):
        ctrl.cfg = cfg
    elif isinstance(ctrl, TrotController):
        cfg = ctrl.joint_config(cfg)
    terrains = [terrain_mod.flat(x_max=max(40.0, spec.speed * (spec.duration + spec.warmup) * 1.5 + 5.0),
                                 material=spec.surface) for _ in range(spec.trials)]
    commands = np.tile([spec.speed, 0.0, spec.beta], (spec.trials, 1))
    return simulate(ctrl, cfg, terrains, spec.seeds(), commands, spec.duration, spec.warmup)


def summarize_run(spec: TrialSpec, run: SimRun, acoustic: acoustics.AcousticConfig, method: str,
                  leq: bool = False) -> TrialResult:
    mnls, pnls, speeds, errs, traces = [], [], [], [], []
    for i in range(spec.trials):
        if run.fell[i]:
            continue
        trace = acoustics.synthesize_trace(run.events[i], spec.duration, acoustic)
        mnls.append(acoustics.mnl(trace, leq=leq))
        pnls.append(acoustics.pnl(trace))
        speeds.append(float((run.x[-1, i] - run.x[0, i]) / max(run.times[-1] - run.times[0], 1e-9)))
        errs.append(float(np.mean((run.v_x[:, i] - spec.speed) ** 2)))
        traces.append(trace)
    failed = int(np.sum(run.fell))
    if failed:
        log.warning("%d of %d trials fell and were excluded", failed, spec.trials)
    return TrialResult(spec, method, mnls, pnls, speeds, errs, failed, traces,
                       [int(i) for i in np.flatnonzero(run.fell)])


def run_surface_trials(spec: TrialSpec, acoustic: acoustics.AcousticConfig | None = None,
                       sim_cfg: sim.SimConfig | None = None, controller=None, leq: bool = False,
                       trot_params: TrotParams | None = None) -> TrialResult:
    acoustic = acoustic or acoustics.AcousticConfig()
    sim_cfg = sim_cfg or sim.SimConfig()
    run = _trial_run(spec, sim_cfg, controller, trot_params)
    return summarize_run(spec, run, acoustic, method_label(spec), leq)


def speed_sweep(speeds, controllers, surface="wood", acoustic=None, sim_cfg=None, trials=5, duration=10.0,
                seed=0, leq=False, trot_params=None) -> list[TrialResult]:
    """``controllers`` is a list of ``(controller, beta)`` pairs."""
    out = []
    for ctrl, beta in controllers:
        for v in speeds:
            spec = TrialSpec(surface, v, duration, trials, beta, ctrl, seed)
            out.append(run_surface_trials(spec, acoustic, sim_cfg, leq=leq, trot_params=trot_params))
    return out


def beta_sweep(betas, speed_cmd, controller, surface="wood", acoustic=None, sim_cfg=None, trials=5,
               duration=10.0, seed=0, leq=False) -> list[TrialResult]:
    return [run_surface_trials(TrialSpec(surface, speed_cmd, duration, trials, b, controller, seed),
                               acoustic, sim_cfg, leq=leq) for b in betas]


def spearman(x, y) -> float:
    return float(stats.spearmanr(x, y).statistic)


# ---------------------------------------------------------------------------
# long walk


@dataclass
class LongWalkResult:
    trace: acoustics.NoiseTrace
    perceived: np.ndarray
    x: np.ndarray  # trunk x at each trace sample
    surface: list
    segments: list  # dicts: surface, start, end, mnl, pnl, samples
    mnl: float
    pnl: float
    completed: bool
    failure_x: float
    average_speed: float
    duration: float
    safe: bool

    def summary(self) -> dict:
        return {"kind": "longwalk", "mnl": self.mnl, "pnl": self.pnl, "completed": self.completed,
                "failure_x": self.failure_x, "average_speed": self.average_speed, "duration": self.duration,
                "below_safe_threshold": self.safe, "safe_threshold": SAFE_LEVEL, "segments": self.segments}


def long_walk(controller, route=None, speed_cmd=0.36, beta=1.0, acoustic=None, sim_cfg=None, seed=0,
              listener_distance=1.0, leq=False, time_factor=3.0, trot_params=None) -> LongWalkResult:
    route = list(route or DEFAULT_ROUTE)
    if not route or any(length <= 0 for _, length in route):
        raise ValueError("route lengths must be positive")
    acoustic = acoustic or acoustics.AcousticConfig()
    sim_cfg = sim_cfg or sim.SimConfig()
    total = float(sum(length for _, length in route))
    ground = terrain_mod.route(route)
    ctrl = make_controller(controller, sim_cfg, trot_params=trot_params) if isinstance(controller, str) else controller
    if isinstance(ctrl, TrotController):
        sim_cfg = ctrl.joint_config(sim_cfg)
    cap = total / speed_cmd * time_factor if speed_cmd > 0 else 20.0
    run = simulate(ctrl, sim_cfg, [ground], [seed], [[speed_cmd, 0.0, beta]], cap, warmup=0.0,
                   stop_x=total if speed_cmd > 0 else None)
    x_end = float(run.x[-1, 0]) if len(run.x) else 0.0
    completed = (not run.fell[0]) and (speed_cmd == 0 or x_end >= total)
    if run.fell[0]:
        # keep the walk up to the fall
        fall_steps = np.flatnonzero(run.x[:, 0] >= run.fall_x[0])
        duration = float(run.times[fall_steps[0]]) if len(fall_steps) else run.duration
    else:
        duration = run.duration
    trace = acoustics.synthesize_trace([e for e in run.events[0] if e.time <= duration], duration, acoustic)
    x_at = np.interp(trace.times, np.concatenate([[0.0], run.times]), np.concatenate([[0.0], run.x[:, 0]]))
    surface = [ground.material_at(float(x)) for x in x_at]
    perceived = np.array([acoustics.attenuate(lv, listener_distance, acoustic) for lv in trace.levels])
    bounds = np.concatenate([[0.0], np.cumsum([length for _, length in route])])
    seg_idx = np.clip(np.searchsorted(bounds, x_at, side="right") - 1, 0, len(route) - 1)
    segments = []
    for j, (name, _) in enumerate(route):
        sel = seg_idx == j
        sub = acoustics.NoiseTrace(trace.times[sel], trace.levels[sel])
        segments.append({"surface": name, "start": float(bounds[j]), "end": float(bounds[j + 1]),
                         "samples": int(sel.sum()),
                         "mnl": acoustics.mnl(sub, leq) if len(sub) else None,
                         "pnl": acoustics.pnl(sub) if len(sub) else None})
    overall = acoustics.mnl(trace, leq) if len(trace) else acoustics.AcousticConfig().floor_level
    peak = acoustics.pnl(trace) if len(trace) else overall
    avg = float(x_end / duration) if duration > 0 else 0.0
    return LongWalkResult(trace, perceived, x_at, surface, segments, overall, peak, completed,
                          float(run.fall_x[0]), avg, duration, overall < SAFE_LEVEL)


def combine_segment_leq(levels, counts) -> float:
    """Sample-weighted energy average of per-segment Leq values."""
    levels = np.asarray(levels, dtype=float)
    counts = np.asarray(counts, dtype=float)
    top = levels.max()
    return float(top + 10.0 * math.log10(math.fsum(counts * 10.0 ** ((levels - top) / 10.0)) / counts.sum()))


# ---------------------------------------------------------------------------
# calibration


def calibrate_gains(controller="trot", anchors=None, speed=0.5, trials=5, duration=10.0, seed=0,
                    acoustic=None, sim_cfg=None, bracket=(1e-4, 1e3), xtol=1e-10, trot_params=None) -> dict:
    """Fit one gain per anchored material so the controller's mean MNL hits the anchor.

    Footfalls do not depend on the gains, so each surface is simulated once and
    only the acoustic synthesis is repeated inside the root-finder.  Concrete,
    which has no anchor, gets the midpoint of the wood and tiles gains.
    """
    anchors = dict(anchors or CALIBRATION_ANCHORS)
    base = acoustic or acoustics.AcousticConfig()
    sim_cfg = sim_cfg or sim.SimConfig()
    gains = dict(base.gains)
    for surface, target in anchors.items():
        spec = TrialSpec(surface, speed, duration, trials, 0.0, controller, seed)
        run = _trial_run(spec, sim_cfg, trot_params=trot_params)
        ok = [i for i in range(trials) if not run.fell[i]]
        if not ok:
            raise CalibrationError(f"{surface}: every calibration trial fell")

        def excess(log_g):
            cfg = dataclasses.replace(base, gains={**gains, surface: math.exp(log_g)})
            vals = [acoustics.mnl(acoustics.synthesize_trace(run.events[i], duration, cfg)) for i in ok]
            return float(np.mean(vals)) - target

        lo, hi = math.log(bracket[0]), math.log(bracket[1])
        f_lo, f_hi = excess(lo), excess(hi)
        if not f_lo < 0 < f_hi:
            n_td = sum(1 for i in ok for e in run.events[i] if e.kind == "touchdown")
            raise CalibrationError(
                f"{surface}: anchor {target} dBA not bracketed (MNL {f_lo + target:.2f}..{f_hi + target:.2f} dBA "
                f"over gains {bracket}; {n_td} touchdowns in {len(ok)} trials)")
        gains[surface] = math.exp(optimize.brentq(excess, lo, hi, xtol=xtol, rtol=1e-14, maxiter=200))
    if "wood" in gains and "tiles" in gains:
        gains["concrete"] = 0.5 * (gains["wood"] + gains["tiles"])
    return gains


# ---------------------------------------------------------------------------
# results directory


def write_trial_result(result: TrialResult, exp_dir) -> Path:
    d = Path(exp_dir)
    d.mkdir(parents=True, exist_ok=True)
    k = 0
    for i, seed in enumerate(result.spec.seeds()):
        rec = {"trial": i, "seed": seed}
        if i not in result.failed_trials:
            rec.update(mnl=result.mnl[k], pnl=result.pnl[k], achieved_speed=result.achieved_speed[k],
                       tracking_error=result.tracking_error[k], failed=False)
            k += 1
        else:
            rec.update(failed=True)
        (d / f"trial_{i}.jsonl").write_text(json.dumps(rec, sort_keys=True) + "\n")
    if result.traces:
        (d / "trace.csv").write_text(result.traces[0].to_csv())
    (d / "summary.json").write_text(json.dumps(result.summary(), indent=1, sort_keys=True) + "\n")
    return d


def write_long_walk(result: LongWalkResult, exp_dir) -> Path:
    d = Path(exp_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "trace.csv").write_text(result.trace.to_csv())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "surface", "dBA", "perceived_dBA"])
    for t, x, s, lv, pv in zip(result.trace.times, result.x, result.surface, result.trace.levels, result.perceived):
        w.writerow([f"{t:.3f}", f"{x:.4f}", s, f"{lv:.6f}", f"{pv:.6f}"])
    (d / "path.csv").write_text(buf.getvalue())
    (d / "summary.json").write_text(json.dumps(result.summary(), indent=1, sort_keys=True) + "\n")
    return d


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.2f}"


def report(results_dir, out_dir=None) -> tuple[list[Path], list[str]]:
    """Build table2.csv, fig3.csv, fig4.csv and fig5_path.csv from ``runs/*/summary.json``.

    Returns the written files and a list of errors (missing or corrupt inputs).
    """
    root = Path(results_dir)
    out = Path(out_dir) if out_dir else root
    runs = root / "runs"
    errors = []
    summaries = []
    if not runs.is_dir():
        return [], [f"no runs directory under {root}"]
    for d in sorted(p for p in runs.iterdir() if p.is_dir()):
        f = d / "summary.json"
        if not f.exists():
            errors.append(f"{d.name}: missing summary.json")
            continue
        try:
            summaries.append((d, json.loads(f.read_text())))
        except json.JSONDecodeError as exc:
            errors.append(f"{d.name}: corrupt summary.json ({exc})")
    if not summaries:
        return [], errors or [f"no results under {runs}"]
    out.mkdir(parents=True, exist_ok=True)
    written = []

    surf = [s for _, s in summaries if s.get("kind") == "surface"]
    table = {}
    for s in surf:
        if s.get("sweep") is None:
            table.setdefault(s["method"], {})[s["surface"]] = s
    rows = [["method", "surface", "mnl_mean", "mnl_std", "pnl_mean", "pnl_std", "trials", "failed"]]
    for method in sorted(table):
        cells = table[method]
        for name in sorted(cells):
            s = cells[name]
            rows.append([method, name, _fmt(s["mnl_mean"]), _fmt(s["mnl_std"]), _fmt(s["pnl_mean"]),
                         _fmt(s["pnl_std"]), len(s["mnl"]), s["failed"]])
        means = [cells[n]["mnl_mean"] for n in sorted(cells)]
        peaks = [cells[n]["pnl_mean"] for n in sorted(cells)]
        rows.append([method, "Average", _fmt(float(np.mean(means))), _fmt(float(np.std(means))),
                     _fmt(float(np.mean(peaks))), _fmt(float(np.std(peaks))),
                     sum(len(cells[n]["mnl"]) for n in cells), sum(cells[n]["failed"] for n in cells)])
    written.append(_write_csv(out / "table2.csv", rows))

    rows = [["method", "speed_cmd", "achieved_speed", "mnl", "pnl"]]
    for s in sorted((s for s in surf if s.get("sweep") == "speed"), key=lambda s: (s["method"], s["speed"])):
        for v, m, p in zip(s["achieved_speed"], s["mnl"], s["pnl"]):
            rows.append([s["method"], f"{s['speed']:.2f}", f"{v:.4f}", f"{m:.4f}", f"{p:.4f}"])
    written.append(_write_csv(out / "fig3.csv", rows))

    rows = [["beta", "speed_cmd", "mnl_mean", "mnl_std", "pnl_mean", "pnl_std", "tracking_error"]]
    for s in sorted((s for s in surf if s.get("sweep") == "beta"), key=lambda s: s["beta"]):
        err = float(np.mean(s["tracking_error"])) if s["tracking_error"] else math.nan
        rows.append([f"{s['beta']:.2f}", f"{s['speed']:.2f}", _fmt(s["mnl_mean"]), _fmt(s["mnl_std"]),
                     _fmt(s["pnl_mean"]), _fmt(s["pnl_std"]), f"{err:.6f}"])
    written.append(_write_csv(out / "fig4.csv", rows))

    walks = [d for d, s in summaries if s.get("kind") == "longwalk"]
    if walks:
        path = walks[0] / "path.csv"
        if path.exists():
            (out / "fig5_path.csv").write_text(path.read_text())
            written.append(out / "fig5_path.csv")
        else:
            errors.append(f"{walks[0].name}: missing path.csv")
    return written, errors


def _write_csv(path: Path, rows) -> Path:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    path.write_text(buf.getvalue())
    return path
