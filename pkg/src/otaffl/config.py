"""Experiment configuration: TOML/JSON parsing, defaults and validation.

A config file has a few top-level keys plus the sections ``algorithm``,
``scheduler``, ``data``, ``model`` and ``channel``. Unknown keys are errors.
Only ``algorithm.kind`` is required; everything else has a default.
:meth:`ExperimentConfig.to_dict` gives the fully-resolved form, which
parses back to an identical config.
"""

import json
import sys
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError, OtaFflError
from .fedsim.client import ALGORITHMS, FEDAVG, FFL, QFFL, TERM, AlgorithmSpec
from .fedsim.scheduling import SCHEDULERS, SchedulerSpec
from .ota import DEFAULT_NOISE_VALUES, FADING_LAWS, NOISE_MODES, ChannelConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_EPSILON = 0.3
DEFAULT_GAMMA = 1.0
DEFAULT_Q_BASE = 2.0

# short spellings accepted for algorithm.kind
ALGORITHM_ALIASES = {"ffl": FFL, "fedavg": FEDAVG, "term": TERM, "qffl": QFFL, "q-ffl": QFFL}


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    num_clients: int = 10
    samples_per_client: int | tuple = 100
    features: int = 10
    classes: int = 3
    skew: float = 1.0
    test_fraction: float = 0.2
    images: str | None = None
    labels: str | None = None
    dirichlet_beta: float = 0.5
    min_per_client: int = 10
    max_samples: int | None = None


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "logistic"
    hidden: tuple = (32, 32)
    local_lr: float = 0.1
    local_steps: int = 1
    batch_size: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: AlgorithmSpec
    scheduler: SchedulerSpec = field(default_factory=SchedulerSpec)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    seed: int = 0
    rounds: int = 100
    global_lr: float = 0.1
    out_dir: str | None = None
    record_timing: bool = False

    def to_dict(self):
        out = {
            "seed": self.seed,
            "rounds": self.rounds,
            "global_lr": self.global_lr,
            "record_timing": self.record_timing,
        }
        if self.out_dir is not None:
            out["out_dir"] = self.out_dir
        for name in ("algorithm", "scheduler", "data", "model", "channel"):
            section = {k: _plain(v) for k, v in asdict(getattr(self, name)).items() if v is not None}
            out[name] = section
        if self.model.kind != "mlp":
            del out["model"]["hidden"]
        return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


_ALGO_PARAM_OWNERS = {"epsilon": (FFL,), "zeta": (FFL,), "gamma": (TERM, QFFL), "q_base": (QFFL,)}

_TOP_KEYS = {"seed", "rounds", "global_lr", "out_dir", "record_timing"}
_SECTIONS = {
    "algorithm": AlgorithmSpec,
    "scheduler": SchedulerSpec,
    "data": DataConfig,
    "model": ModelConfig,
    "channel": ChannelConfig,
}


def load_raw(path):
    """Read a TOML (default) or JSON config file into a dict."""
    path = str(path)
    try:
        if path.endswith(".json"):
            with open(path) as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def parse_config(source, overrides=None):
    """Build a validated :class:`ExperimentConfig`.

    Args:
        source: path to a ``.toml``/``.json`` file, or an already-loaded dict.
        overrides: dotted-key mapping (``{"algorithm.epsilon": 0.1}``) applied
            on top of the file; ``None`` values are skipped. Overriding
            ``algorithm.kind`` discards file parameters the new algorithm
            does not accept.
    """
    raw = load_raw(source) if not isinstance(source, dict) else source
    raw = json.loads(json.dumps(raw))
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    kind = overrides.get("algorithm.kind")
    algo_sec = raw.get("algorithm")
    if kind is not None and isinstance(algo_sec, dict) and algo_sec.get("kind") != kind:
        # switching algorithm on the command line drops the file's now-foreign parameters
        kind = ALGORITHM_ALIASES.get(str(kind).lower(), kind)
        for name, owners in _ALGO_PARAM_OWNERS.items():
            if kind not in owners:
                algo_sec.pop(name, None)
    for key, value in overrides.items():
        *parents, leaf = key.split(".")
        node = raw
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return _build(raw)


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where or 'config'} must be a table", key=where or None)
    for key in section:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown config key {key!r} ({name})", key=name)


def _typed(section, name, kind, where, minimum=None):
    if name not in section:
        return None
    v = section[name]
    key = f"{where}.{name}" if where else name
    ok = isinstance(v, bool) if kind is bool else (
        isinstance(v, kind) and not isinstance(v, bool) if kind is int else
        isinstance(v, (int, float)) and not isinstance(v, bool) if kind is float else
        isinstance(v, kind)
    )
    if not ok:
        raise ConfigError(f"{key} must be of type {kind.__name__}, got {v!r}", key=key)
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {v!r}", key=key)
    return float(v) if kind is float else v


def _build(raw):
    _check_keys(raw, _TOP_KEYS | set(_SECTIONS), "")
    sections = {}
    for name, cls in _SECTIONS.items():
        sec = raw.get(name, {})
        _check_keys(sec, {f.name for f in fields(cls)}, name)
        sections[name] = dict(sec)

    try:
        algorithm = _build_algorithm(sections["algorithm"])
        scheduler = _build_scheduler(sections["scheduler"])
        data = _build_data(sections["data"])
        model = _build_model(sections["model"], data)
        channel = _build_channel(sections["channel"], data)
    except ConfigError:
        raise
    except OtaFflError as exc:
        raise ConfigError(str(exc)) from exc

    if scheduler.kind != "full" and scheduler.target_size > data.num_clients:
        raise ConfigError(
            f"scheduler.target_size {scheduler.target_size} exceeds data.num_clients {data.num_clients}",
            key="scheduler.target_size",
        )
    seed = _typed(raw, "seed", int, "", 0)
    rounds = _typed(raw, "rounds", int, "", 0)
    lr = _typed(raw, "global_lr", float, "")
    if lr is not None and not lr > 0:
        raise ConfigError("global_lr must be > 0", key="global_lr")
    out_dir = _typed(raw, "out_dir", str, "")
    timing = _typed(raw, "record_timing", bool, "")
    return ExperimentConfig(
        algorithm=algorithm,
        scheduler=scheduler,
        data=data,
        model=model,
        channel=channel,
        seed=0 if seed is None else seed,
        rounds=100 if rounds is None else rounds,
        global_lr=0.1 if lr is None else lr,
        out_dir=out_dir,
        record_timing=bool(timing),
    )


def _build_algorithm(sec):
    if "kind" not in sec:
        raise ConfigError("missing required key algorithm.kind", key="algorithm.kind")
    kind = sec["kind"]
    if isinstance(kind, str):
        kind = ALGORITHM_ALIASES.get(kind.lower(), kind)
    if kind not in ALGORITHMS:
        raise ConfigError(f"algorithm.kind must be one of {ALGORITHMS}, got {kind!r}", key="algorithm.kind")
    for name, owners in _ALGO_PARAM_OWNERS.items():
        if name in sec and kind not in owners:
            raise ConfigError(f"algorithm.{name} is not allowed with algorithm.kind={kind!r}", key=f"algorithm.{name}")
    epsilon = _typed(sec, "epsilon", float, "algorithm")
    gamma = _typed(sec, "gamma", float, "algorithm")
    q_base = _typed(sec, "q_base", float, "algorithm")
    zeta = sec.get("zeta")
    if zeta is not None:
        if isinstance(zeta, list):
            if not all(isinstance(z, (int, float)) and not isinstance(z, bool) for z in zeta):
                raise ConfigError("algorithm.zeta must be a number or a list of numbers", key="algorithm.zeta")
            zeta = tuple(float(z) for z in zeta)
        else:
            zeta = _typed(sec, "zeta", float, "algorithm")
    if kind == FFL:
        epsilon = DEFAULT_EPSILON if epsilon is None else epsilon
        if not 0 <= epsilon <= 1:
            raise ConfigError(f"algorithm.epsilon must lie in [0, 1], got {epsilon!r}", key="algorithm.epsilon")
        zeta = 0.0 if zeta is None else zeta
    if kind in (TERM, QFFL):
        gamma = DEFAULT_GAMMA if gamma is None else gamma
    if kind == QFFL:
        q_base = DEFAULT_Q_BASE if q_base is None else q_base
        if not q_base > 0:
            raise ConfigError(f"algorithm.q_base must be > 0, got {q_base!r}", key="algorithm.q_base")
    return AlgorithmSpec(kind, epsilon=epsilon, zeta=zeta, gamma=gamma, q_base=q_base)


def _build_scheduler(sec):
    kind = sec.get("kind", "full")
    if kind not in SCHEDULERS:
        raise ConfigError(f"scheduler.kind must be one of {SCHEDULERS}, got {kind!r}", key="scheduler.kind")
    target = _typed(sec, "target_size", int, "scheduler", 1)
    if kind != "full" and target is None:
        raise ConfigError(f"missing required key scheduler.target_size for kind {kind!r}", key="scheduler.target_size")
    kwargs = {"kind": kind, "target_size": target}
    for name, typ, lo in (("gibbs_iters", int, 0), ("gibbs_temp0", float, None), ("gibbs_cooling", float, None),
                          ("gibbs_mu", float, 0), ("gibbs_grad_proxy", float, 0)):
        v = _typed(sec, name, typ, "scheduler", lo)
        if v is not None:
            kwargs[name] = v
    return SchedulerSpec(**kwargs)


def _build_data(sec):
    source = sec.get("source", "synthetic")
    if source not in ("synthetic", "idx"):
        raise ConfigError(f"data.source must be 'synthetic' or 'idx', got {source!r}", key="data.source")
    kwargs = {"source": source}
    for name, typ, lo in (("num_clients", int, 1), ("features", int, 1), ("classes", int, 1), ("skew", float, 0),
                          ("test_fraction", float, 0), ("dirichlet_beta", float, None), ("min_per_client", int, 1),
                          ("max_samples", int, 1), ("images", str, None), ("labels", str, None)):
        v = _typed(sec, name, typ, "data", lo)
        if v is not None:
            kwargs[name] = v
    if "samples_per_client" in sec:
        spc = sec["samples_per_client"]
        if isinstance(spc, list):
            if not all(isinstance(n, int) and not isinstance(n, bool) and n >= 2 for n in spc):
                raise ConfigError("data.samples_per_client entries must be integers >= 2", key="data.samples_per_client")
            kwargs["samples_per_client"] = tuple(spc)
        else:
            kwargs["samples_per_client"] = _typed(sec, "samples_per_client", int, "data", 2)
    data = DataConfig(**kwargs)
    if isinstance(data.samples_per_client, tuple) and len(data.samples_per_client) != data.num_clients:
        raise ConfigError("data.samples_per_client list must have one entry per client", key="data.samples_per_client")
    if not data.test_fraction < 1:
        raise ConfigError("data.test_fraction must be < 1", key="data.test_fraction")
    if data.dirichlet_beta <= 0:
        raise ConfigError("data.dirichlet_beta must be > 0", key="data.dirichlet_beta")
    if source == "idx":
        for name in ("images", "labels"):
            if getattr(data, name) is None:
                raise ConfigError(f"missing required key data.{name} for idx source", key=f"data.{name}")
    else:
        for name in ("images", "labels", "max_samples"):
            if name in sec:
                raise ConfigError(f"data.{name} only applies to the idx source", key=f"data.{name}")
    return data


def _build_model(sec, data):
    kind = sec.get("kind", "logistic")
    if kind not in ("linear", "logistic", "mlp"):
        raise ConfigError(f"model.kind must be linear, logistic or mlp, got {kind!r}", key="model.kind")
    if kind == "linear" and data.source == "idx":
        raise ConfigError("model.kind='linear' needs synthetic regression data, not idx", key="model.kind")
    kwargs = {"kind": kind}
    for name, typ, lo in (("local_lr", float, None), ("local_steps", int, 1), ("batch_size", int, 1)):
        v = _typed(sec, name, typ, "model", lo)
        if v is not None:
            kwargs[name] = v
    if "local_lr" in kwargs and not kwargs["local_lr"] > 0:
        raise ConfigError("model.local_lr must be > 0", key="model.local_lr")
    if "hidden" in sec:
        hidden = sec["hidden"]
        if kind != "mlp":
            raise ConfigError("model.hidden only applies to model.kind='mlp'", key="model.hidden")
        if not (isinstance(hidden, list) and len(hidden) == 2 and all(isinstance(h, int) and h >= 1 for h in hidden)):
            raise ConfigError("model.hidden must list two positive layer sizes", key="model.hidden")
        kwargs["hidden"] = tuple(hidden)
    return ModelConfig(**kwargs)


def _build_channel(sec, data):
    kwargs = {}
    p0 = _typed(sec, "power_budget", float, "channel")
    if p0 is not None:
        if not p0 > 0:
            raise ConfigError("channel.power_budget must be > 0", key="channel.power_budget")
        kwargs["power_budget"] = p0
    mode = sec.get("noise_mode", "cycle")
    if mode not in NOISE_MODES:
        raise ConfigError(f"channel.noise_mode must be one of {NOISE_MODES}, got {mode!r}", key="channel.noise_mode")
    kwargs["noise_mode"] = mode
    if "noise_values" in sec:
        vals = sec["noise_values"]
        if not (isinstance(vals, list) and vals and all(isinstance(v, (int, float)) and v >= 0 for v in vals)):
            raise ConfigError("channel.noise_values must be a non-empty list of deviations >= 0", key="channel.noise_values")
        kwargs["noise_values"] = tuple(float(v) for v in vals)
    else:
        kwargs["noise_values"] = DEFAULT_NOISE_VALUES
    fading = sec.get("fading", "rayleigh")
    if fading not in FADING_LAWS:
        raise ConfigError(f"channel.fading must be one of {FADING_LAWS}, got {fading!r}", key="channel.fading")
    kwargs["fading"] = fading
    if "gains" in sec:
        gains = sec["gains"]
        if fading == "rayleigh":
            raise ConfigError("channel.gains only applies to fixed or per_client fading", key="channel.gains")
        if isinstance(gains, list):
            if len(gains) != data.num_clients or not all(isinstance(g, (int, float)) and g > 0 for g in gains):
                raise ConfigError("channel.gains must list one positive gain per client", key="channel.gains")
            kwargs["gains"] = tuple(float(g) for g in gains)
        else:
            g = _typed(sec, "gains", float, "channel")
            if not g > 0:
                raise ConfigError("channel.gains must be positive", key="channel.gains")
            kwargs["gains"] = g
    elif fading == "per_client":
        raise ConfigError("missing required key channel.gains for per_client fading", key="channel.gains")
    return ChannelConfig(**kwargs)
