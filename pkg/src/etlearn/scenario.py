"""Declarative scenario runner: full estimation-plus-learning experiments.

A scenario file (TOML, ``schema = 1``) declares the true system, the initial
prediction model, the trigger constants, the operating reference, the learning
experiment, optional mid-run changes of the true dynamics, and the run length
and seed. :func:`run_scenario` executes the whole loop deterministically:

    step truth -> advance predictors -> state trigger / reset -> tau sample
    -> learning-trigger evaluation -> (on sustained fire) chirp experiment,
    least-squares refit, model broadcast, window reset

Mid-run events change the *truth only*; the prediction model stays stale until
re-learned, which is exactly the mismatch the learning trigger must detect.
The per-step trace (CSV) and a metadata sidecar make runs diffable: the same
config and seed give byte-identical output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import sys as _sys
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .linsys import LinearSystem, ReferenceSignal, eval_reference, step
from .protocol import EtseLink, ModelEstimate, Transport
from .stopping import StoppingTimeEstimate, discretize_to_ou, mc_expected_stopping_time
from .sysid import assemble, ols_fit
from .trigger import (
    MODE_APPROX,
    MODE_EXACT,
    SustainGate,
    TauWindow,
    TriggerConfig,
    evaluate_approx,
    evaluate_exact,
)

if _sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

__all__ = [
    "ScenarioConfig",
    "ScenarioEvent",
    "ScenarioTrace",
    "LearningEpisode",
    "ConfigError",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
    "emit_csv",
    "builtin_scenario_path",
]

SCHEMA_VERSION = 1
OUT_DIR_ENV = "ETLEARN_OUT_DIR"

TRACE_COLUMNS = [
    "t",
    "z_norm",
    "gamma_state",
    "tau",
    "emp_mean",
    "sim_mean",
    "kappa",
    "gamma_learn_raw",
    "gamma_learn",
    "model_version",
    "messages",
    "bytes",
]


class ConfigError(ValueError):
    """Scenario configuration problem; carries the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class ScenarioEvent:
    """Mid-run change of the true dynamics (new A and/or new Sigma)."""

    time: float
    new_a: Optional[np.ndarray] = None
    new_sigma: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    system: LinearSystem
    initial_model: ModelEstimate
    trigger: TriggerConfig
    delta: float
    reference: ReferenceSignal
    learning_reference: ReferenceSignal
    learning_samples: int
    events: tuple
    duration: float
    seed: int
    out_path: Optional[str] = None
    source_text: Optional[str] = None

    @property
    def tau_max_steps(self) -> int:
        return int(round(self.trigger.tau_max / self.system.Ts))


@dataclass(frozen=True)
class LearningEpisode:
    start: float
    end: float
    model_version: int


@dataclass
class ScenarioTrace:
    """Per-step record of a scenario run plus the learning episodes.

    Column arrays all have one entry per simulation step. Optional quantities
    (tau samples, means, decisions) use NaN when absent; decision columns use
    -1 for "no decision yet", which the CSV writes as an empty field.
    """

    config: ScenarioConfig
    t: np.ndarray
    z_norm: np.ndarray
    gamma_state: np.ndarray
    tau: np.ndarray
    emp_mean: np.ndarray
    sim_mean: np.ndarray
    kappa: np.ndarray
    gamma_learn_raw: np.ndarray
    gamma_learn: np.ndarray
    model_version: np.ndarray
    messages: np.ndarray
    bytes: np.ndarray
    episodes: List[LearningEpisode] = field(default_factory=list)

    def steps(self) -> int:
        return len(self.t)

    def tau_samples(self) -> np.ndarray:
        return self.tau[~np.isnan(self.tau)]


# ---------------------------------------------------------------------------
# scenario file parsing


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"{path}.{key}", "missing required key")
    return table[key]


def _matrix(value, path: str) -> np.ndarray:
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"not a numeric matrix: {exc}") from None
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ConfigError(path, f"expected a matrix (list of rows), got {m.ndim} dims")
    return m


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _reference_from_table(table: dict, path: str) -> ReferenceSignal:
    kind = _require(table, "kind", path)
    try:
        if kind == "zero":
            return ReferenceSignal.zero()
        if kind == "cosine":
            return ReferenceSignal.cosine(
                amplitude=_number(_require(table, "amplitude", path), f"{path}.amplitude"),
                omega=_number(_require(table, "omega", path), f"{path}.omega"),
            )
        if kind == "chirp":
            return ReferenceSignal.chirp(
                amplitude=_number(_require(table, "amplitude", path), f"{path}.amplitude"),
                f0=_number(_require(table, "f0", path), f"{path}.f0"),
                f1=_number(_require(table, "f1", path), f"{path}.f1"),
                duration=_number(_require(table, "duration", path), f"{path}.duration"),
            )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(f"{path}.kind", f"unknown reference kind {kind!r}")


def parse_scenario(text: str, name: str = "scenario") -> ScenarioConfig:
    """Parse and validate a scenario document."""
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"invalid TOML: {exc}") from None

    schema = doc.get("schema")
    if schema != SCHEMA_VERSION:
        raise ConfigError("schema", f"expected schema = {SCHEMA_VERSION}, got {schema!r}")

    sys_tab = _require(doc, "system", "<document>")
    a = _matrix(_require(sys_tab, "A", "system"), "system.A")
    if a.shape[0] != a.shape[1]:
        raise ConfigError("system.A", f"must be square, got {a.shape}")
    b = _matrix(_require(sys_tab, "B", "system"), "system.B")
    sigma = _matrix(_require(sys_tab, "Sigma", "system"), "system.Sigma")
    n = a.shape[0]
    if b.shape[0] != n:
        # allow a row vector for a column when n > 1 is not intended
        if b.shape == (1, n) and n > 1:
            b = b.T
        else:
            raise ConfigError("system.B", f"must have {n} rows, got {b.shape}")
    q = b.shape[1]
    f_default = np.zeros((q, n))
    f = _matrix(sys_tab["F"], "system.F") if "F" in sys_tab else f_default
    ts = _number(_require(sys_tab, "Ts", "system"), "system.Ts")
    try:
        system = LinearSystem(A=a, B=b, Sigma=sigma, F=f, Ts=ts)
    except ValueError as exc:
        raise ConfigError("system", str(exc)) from None

    model_tab = _require(doc, "model", "<document>")
    try:
        initial_model = ModelEstimate(
            a_cl=_matrix(_require(model_tab, "A_cl", "model"), "model.A_cl"),
            b=_matrix(_require(model_tab, "B", "model"), "model.B"),
            sigma=_matrix(_require(model_tab, "Sigma", "model"), "model.Sigma"),
            version=0,
        )
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None
    if initial_model.n != n or initial_model.q != q:
        raise ConfigError(
            "model", f"model dimensions ({initial_model.n},{initial_model.q}) do not match system ({n},{q})"
        )

    trig_tab = _require(doc, "trigger", "<document>")
    delta = _number(_require(trig_tab, "delta", "trigger"), "trigger.delta")
    if not delta > 0:
        raise ConfigError("trigger.delta", "must be positive")
    window_mode = trig_tab.get("window_mode", "count")
    try:
        trigger = TriggerConfig(
            eta=_number(_require(trig_tab, "eta", "trigger"), "trigger.eta"),
            tau_max=_number(_require(trig_tab, "tau_max", "trigger"), "trigger.tau_max"),
            window=_number(_require(trig_tab, "window", "trigger"), "trigger.window"),
            window_mode=window_mode,
            sim_samples=int(_number(_require(trig_tab, "sim_samples", "trigger"), "trigger.sim_samples")),
            mode=trig_tab.get("mode", MODE_APPROX),
            kappa=(
                _number(trig_tab["kappa"], "trigger.kappa") if "kappa" in trig_tab else None
            ),
            sustain=_number(trig_tab.get("sustain", 0.0), "trigger.sustain"),
        )
    except ValueError as exc:
        raise ConfigError("trigger", str(exc)) from None
    tau_max_steps = round(trigger.tau_max / ts)
    if tau_max_steps < 1 or abs(tau_max_steps * ts - trigger.tau_max) > 1e-9 * trigger.tau_max:
        raise ConfigError("trigger.tau_max", f"must be a positive multiple of Ts={ts}")

    reference = _reference_from_table(_require(doc, "reference", "<document>"), "reference")

    learn_tab = _require(doc, "learning", "<document>")
    learning_samples = int(_number(_require(learn_tab, "samples", "learning"), "learning.samples"))
    if learning_samples < n + q:
        raise ConfigError("learning.samples", f"must be at least n+q = {n + q}")
    learning_reference = _reference_from_table(learn_tab, "learning")
    if learning_reference.kind == "chirp" and learning_reference.duration < learning_samples * ts:
        raise ConfigError(
            "learning.duration",
            f"chirp must cover the experiment: need >= {learning_samples * ts}s",
        )

    run_tab = _require(doc, "run", "<document>")
    duration = _number(_require(run_tab, "duration", "run"), "run.duration")
    if duration < 0:
        raise ConfigError("run.duration", "must be nonnegative")
    seed = run_tab.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("run.seed", "must be a nonnegative integer")
    out_path = run_tab.get("out")
    if out_path is not None and not isinstance(out_path, str):
        raise ConfigError("run.out", "must be a string path")

    events = []
    last_time = -math.inf
    for i, ev in enumerate(doc.get("events", [])):
        path = f"events[{i}]"
        t_ev = _number(_require(ev, "time", path), f"{path}.time")
        if t_ev <= last_time:
            raise ConfigError(f"{path}.time", "event times must be strictly increasing")
        if not 0 <= t_ev <= duration:
            raise ConfigError(f"{path}.time", "event time must lie within the run duration")
        last_time = t_ev
        new_a = _matrix(ev["A"], f"{path}.A") if "A" in ev else None
        new_sigma = _matrix(ev["Sigma"], f"{path}.Sigma") if "Sigma" in ev else None
        if new_a is None and new_sigma is None:
            raise ConfigError(path, "event must set A and/or Sigma")
        if new_a is not None and new_a.shape != (n, n):
            raise ConfigError(f"{path}.A", f"must be {n}x{n}, got {new_a.shape}")
        if new_sigma is not None and new_sigma.shape != (n, n):
            raise ConfigError(f"{path}.Sigma", f"must be {n}x{n}, got {new_sigma.shape}")
        events.append(ScenarioEvent(time=t_ev, new_a=new_a, new_sigma=new_sigma))

    return ScenarioConfig(
        name=doc.get("name", name),
        system=system,
        initial_model=initial_model,
        trigger=trigger,
        delta=delta,
        reference=reference,
        learning_reference=learning_reference,
        learning_samples=learning_samples,
        events=tuple(events),
        duration=duration,
        seed=seed,
        out_path=out_path,
        source_text=text,
    )


def load_scenario(path: str) -> ScenarioConfig:
    """Read and validate a scenario file."""
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    name = os.path.splitext(os.path.basename(path))[0]
    return parse_scenario(text, name=name)


def builtin_scenario_path(name: str) -> str:
    """Path of a scenario shipped with the package (e.g. "paper-sim")."""
    fname = name.replace("-", "_") + ".toml"
    here = os.path.join(os.path.dirname(__file__), "scenarios", fname)
    if not os.path.exists(here):
        raise ConfigError("name", f"no builtin scenario named {name!r}")
    return here


# ---------------------------------------------------------------------------
# the run loop


def _model_implied_estimate(
    model: ModelEstimate, delta: float, ts: float, trigger: TriggerConfig, rng: np.random.Generator
) -> StoppingTimeEstimate:
    ou = discretize_to_ou(model.a_cl, model.sigma, ts, delta)
    return mc_expected_stopping_time(ou, trigger.sim_samples, trigger.tau_max, rng)


def run_scenario(cfg: ScenarioConfig) -> ScenarioTrace:
    """Execute a scenario end to end; deterministic given (config, seed)."""
    sys_now = cfg.system
    ts = sys_now.Ts
    n_steps = int(round(cfg.duration / ts))
    trig = cfg.trigger

    master = np.random.SeedSequence(cfg.seed)
    plant_seq, mc_seq = master.spawn(2)
    plant_rng = np.random.default_rng(plant_seq)
    mc_children = iter_spawner(mc_seq)

    model = cfg.initial_model
    sim_est = _model_implied_estimate(model, cfg.delta, ts, trig, next(mc_children))

    x = np.zeros(sys_now.n)
    link = EtseLink(
        model=model,
        x0=x,
        delta=cfg.delta,
        tau_max_steps=cfg.tau_max_steps,
        ts=ts,
        transport=Transport(),
    )
    window = TauWindow(trig, epoch=0.0)
    gate = SustainGate(trig.sustain)
    sampler = sys_now.noise_sampler()

    cols = {name: np.full(n_steps, np.nan) for name in
            ("z_norm", "tau", "emp_mean", "sim_mean", "kappa")}
    gamma_state = np.zeros(n_steps, dtype=int)
    raw_col = np.full(n_steps, -1, dtype=int)
    gated_col = np.full(n_steps, -1, dtype=int)
    version_col = np.zeros(n_steps, dtype=int)
    msg_col = np.zeros(n_steps, dtype=int)
    byte_col = np.zeros(n_steps, dtype=int)
    t_col = np.empty(n_steps)
    episodes: List[LearningEpisode] = []

    events = list(cfg.events)
    next_event = 0
    k = 0                       # global step counter; row k covers t = (k+1)*Ts
    ref_step = 0                # step index for the operating reference phase
    learning_left = 0           # remaining data steps of an active episode
    learning_buffer = []        # (x, r, x_next) triplets of the episode
    episode_start = 0.0

    def apply_events(t_now: float):
        nonlocal sys_now, sampler, next_event
        while next_event < len(events) and events[next_event].time <= t_now:
            ev = events[next_event]
            try:
                sys_now = LinearSystem(
                    A=ev.new_a if ev.new_a is not None else sys_now.A,
                    B=sys_now.B,
                    Sigma=ev.new_sigma if ev.new_sigma is not None else sys_now.Sigma,
                    F=sys_now.F,
                    Ts=sys_now.Ts,
                )
            except ValueError as exc:
                raise RuntimeError(
                    f"step {k}: dynamics-change event at t={ev.time} is invalid: {exc}"
                ) from exc
            sampler = sys_now.noise_sampler()
            next_event += 1

    while k < n_steps:
        t_now = k * ts
        apply_events(t_now)
        t_next = (k + 1) * ts

        if learning_left > 0:
            # learning episode: chirp-driven plant, estimation suspended
            r = eval_reference(cfg.learning_reference, len(learning_buffer), ts, sys_now.q)
            x_next = step(sys_now, x, r, sampler.sample(plant_rng))
            learning_buffer.append((x, r, x_next))
            x = x_next
            learning_left -= 1
            t_col[k] = t_next
            if learning_left == 0:
                try:
                    model = ols_fit(assemble(learning_buffer), n=sys_now.n, version=model.version + 1)
                except Exception as exc:
                    raise RuntimeError(f"step {k}: model fit failed: {exc}") from exc
                link.broadcast_model(model, x)
                try:
                    sim_est = _model_implied_estimate(model, cfg.delta, ts, trig, next(mc_children))
                except Exception as exc:
                    raise RuntimeError(
                        f"step {k}: stopping-time estimate for the learned model failed: {exc}"
                    ) from exc
                window.reset(epoch=t_next)
                gate.reset()
                episodes.append(
                    LearningEpisode(start=episode_start, end=t_next, model_version=model.version)
                )
                learning_buffer = []
            version_col[k] = model.version
            cols["sim_mean"][k] = sim_est.mean
            msg_col[k] = link.transport.messages
            byte_col[k] = link.transport.bytes
            k += 1
            continue

        # --- normal event-triggered estimation step
        r = eval_reference(cfg.reference, ref_step, ts, sys_now.q)
        x_next = step(sys_now, x, r, sampler.sample(plant_rng))
        outcome = link.step(x_next, r)
        x = x_next
        ref_step += 1

        cols["z_norm"][k] = outcome.z_norm
        if outcome.event is not None:
            gamma_state[k] = 1
            cols["tau"][k] = outcome.tau
            window.append(outcome.tau, t_next)

        emp = window.mean()
        if emp is not None:
            cols["emp_mean"][k] = emp
        cols["sim_mean"][k] = sim_est.mean
        kappa_now = trig.threshold(effective_n=len(window))
        cols["kappa"][k] = kappa_now

        if trig.mode == MODE_EXACT:
            raw = evaluate_exact(window, sim_est.mean, kappa_now, now=t_next)
        else:
            raw = evaluate_approx(window, sim_est, kappa_now, now=t_next)
        gated = gate.update(t_next, raw)
        raw_col[k] = -1 if raw is None else raw
        gated_col[k] = gated

        version_col[k] = model.version
        t_col[k] = t_next
        msg_col[k] = link.transport.messages
        byte_col[k] = link.transport.bytes

        if gated == 1:
            learning_left = cfg.learning_samples
            episode_start = t_next
            learning_buffer = []
        k += 1

    return ScenarioTrace(
        config=cfg,
        t=t_col,
        z_norm=cols["z_norm"],
        gamma_state=gamma_state,
        tau=cols["tau"],
        emp_mean=cols["emp_mean"],
        sim_mean=cols["sim_mean"],
        kappa=cols["kappa"],
        gamma_learn_raw=raw_col,
        gamma_learn=gated_col,
        model_version=version_col,
        messages=msg_col,
        bytes=byte_col,
        episodes=episodes,
    )


def iter_spawner(seq: np.random.SeedSequence):
    """Yield child generators of a seed sequence one at a time, in order."""
    while True:
        yield np.random.default_rng(seq.spawn(1)[0])


# ---------------------------------------------------------------------------
# trace output


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def emit_csv(trace: ScenarioTrace, path: str) -> None:
    """Write the per-step trace as CSV plus a JSON metadata sidecar.

    Reruns of the same config and seed produce byte-identical files; floats
    are written with full round-trip precision.
    """
    out_dir = os.path.dirname(path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for i in range(trace.steps()):
                writer.writerow(
                    [
                        _fmt(trace.t[i]),
                        _fmt(trace.z_norm[i]),
                        str(int(trace.gamma_state[i])),
                        _fmt(trace.tau[i]),
                        _fmt(trace.emp_mean[i]),
                        _fmt(trace.sim_mean[i]),
                        _fmt(trace.kappa[i]),
                        "" if trace.gamma_learn_raw[i] < 0 else str(int(trace.gamma_learn_raw[i])),
                        "" if trace.gamma_learn[i] < 0 else str(int(trace.gamma_learn[i])),
                        str(int(trace.model_version[i])),
                        str(int(trace.messages[i])),
                        str(int(trace.bytes[i])),
                    ]
                )
        meta = {
            "scenario": trace.config.name,
            "schema": SCHEMA_VERSION,
            "seed": trace.config.seed,
            "config_sha256": hashlib.sha256(
                (trace.config.source_text or "").encode("utf-8")
            ).hexdigest(),
            "steps": trace.steps(),
            "learning_episodes": [
                {"start": ep.start, "end": ep.end, "model_version": ep.model_version}
                for ep in trace.episodes
            ],
        }
        with open(path + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def default_out_path(cfg: ScenarioConfig) -> str:
    base = cfg.out_path or (cfg.name + ".csv")
    if os.path.isabs(base):
        return base
    return os.path.join(os.environ.get(OUT_DIR_ENV, "."), base)
