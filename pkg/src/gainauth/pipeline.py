"""Experiment pipeline behind the command line: synth, fit, wedge, train, score, eval."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .attack import UserProfile, contact_book, generate_attack_suite, generate_trace, profile_from_dict, \
    read_suite, write_suite
from .config import ModelConfig
from .evaluator import compute_metrics, export_plot_data, write_plot_data
from .events import read_contact_book, read_trace, write_contact_book, write_trace
from .gain import score_timeline, write_timeline
from .model import UserModel, fit_model
from .trainer import TrainConfig, format_search_log, split_time, time_split, train_weights

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid run configuration (exit code 1)."""


class PipelineError(RuntimeError):
    """Data or runtime failure while running a command (exit code 2)."""


DEMO_CONFIG = {
    "seed": 7,
    "out": "run",
    "days": 60,
    "tick_seconds": 60,
    "model": {"combiner": "weighted_sum"},
    "train": {},
    "attacks": {"count": 50, "colocated": False},
    "profiles": [
        {
            "user": "user_a",
            "call_rate": {"default": 0.3, "0-6": 0, "6-9": 1, "9-12": 1.5, "12-18": 4, "18-22": 3, "22-24": 0.8},
            "good_prob": 0.85,
            "places": [{"x": 0, "y": 0, "hours": "19-9"}, {"x": 3000, "y": 1500, "hours": "9-19"}],
        },
        {
            "user": "user_b",
            "call_rate": {"default": 0.5, "0-7": 0, "7-12": 2, "12-17": 1, "17-23": 3},
            "good_prob": 0.8,
            "places": [{"x": 20000, "y": -15000, "hours": "18-8"}, {"x": 24000, "y": -9000, "hours": "8-18"}],
        },
    ],
}

TOP_LEVEL_KEYS = {"seed", "out", "days", "tick_seconds", "model", "train", "attacks", "profiles", "paths"}
PATH_KEYS = ("traces", "books", "models", "attacks", "reports", "timelines")


def derive_seed(seed: int, *labels: str) -> int:
    digest = hashlib.sha256("/".join([str(seed), *labels]).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class RunConfig:
    seed: int
    out: str
    days: int
    tick_seconds: int
    model: ModelConfig
    train: TrainConfig
    attack_count: int
    colocated: bool
    profiles: Optional[List[UserProfile]]
    paths: Dict[str, str] = field(default_factory=dict)

    def path(self, kind: str, *parts: str) -> str:
        return os.path.join(self.paths[kind], *parts)


def load_config(path: Optional[str] = None, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    if path is None:
        raw = copy.deepcopy(DEMO_CONFIG)
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    return parse_config(raw, seed, out)


def parse_config(raw: dict, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        model = ModelConfig.from_dict(raw.get("model", {}))
        train = TrainConfig(**raw.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    profiles = None
    if "profiles" in raw:
        profiles = []
        for i, p in enumerate(raw["profiles"]):
            try:
                profiles.append(profile_from_dict(p))
            except KeyError as exc:
                raise ConfigError(f"profiles[{i}]: missing key {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"profiles[{i}]: {exc}") from None
        users = [p.user for p in profiles]
        if len(set(users)) != len(users):
            raise ConfigError("profile users must be unique")
    attacks = raw.get("attacks", {})
    out_dir = out if out is not None else raw.get("out", "run")
    paths = {k: os.path.join(out_dir, k) for k in PATH_KEYS}
    extra = raw.get("paths", {})
    if set(extra) - set(PATH_KEYS):
        raise ConfigError(f"unknown path keys: {sorted(set(extra) - set(PATH_KEYS))}")
    paths.update(extra)
    cfg = RunConfig(
        seed=int(seed if seed is not None else raw.get("seed", 0)),
        out=out_dir,
        days=int(raw.get("days", 60)),
        tick_seconds=int(raw.get("tick_seconds", 60)),
        model=model,
        train=train,
        attack_count=int(attacks.get("count", 50)),
        colocated=bool(attacks.get("colocated", False)),
        profiles=profiles,
        paths=paths,
    )
    if cfg.days < 1 or cfg.tick_seconds < 1 or cfg.attack_count < 1:
        raise ConfigError("days, tick_seconds and attacks.count must be positive")
    return cfg


# --- loading helpers ----------------------------------------------------------

def _users_in(directory: str, suffix: str) -> List[str]:
    if not os.path.isdir(directory):
        raise ConfigError(f"missing directory {directory}")
    return sorted(name[: -len(suffix)] for name in os.listdir(directory) if name.endswith(suffix))


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"missing input {path}")
    return path


def _load_inputs(cfg: RunConfig, need_models: bool = True, need_suite: bool = False):
    users = _users_in(cfg.paths["traces"], ".jsonl")
    if not users:
        raise ConfigError(f"no traces in {cfg.paths['traces']}")
    for u in users:
        _require(cfg.path("books", f"{u}.txt"))
        if need_models:
            _require(cfg.path("models", f"{u}.json"))
    if need_suite:
        _require(cfg.path("attacks", "manifest.tsv"))
    traces = {u: read_trace(cfg.path("traces", f"{u}.jsonl")) for u in users}
    books = {u: read_contact_book(cfg.path("books", f"{u}.txt")) for u in users}
    models = {u: UserModel.load(cfg.path("models", f"{u}.json")) for u in users} if need_models else {}
    suite = read_suite(cfg.path("attacks", "manifest.tsv")) if need_suite else []
    return users, traces, books, models, suite


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# --- commands -------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> List[str]:
    if cfg.profiles is None:
        raise ConfigError("config has no 'profiles' section")
    if len(cfg.profiles) == 0:
        raise ConfigError("'profiles' is empty")
    for d in ("traces", "books"):
        os.makedirs(cfg.paths[d], exist_ok=True)
    written = []
    for profile in cfg.profiles:
        trace = generate_trace(profile, cfg.days, derive_seed(cfg.seed, "synth", profile.user, str(profile.seed)))
        path = cfg.path("traces", f"{profile.user}.jsonl")
        write_trace(trace, path)
        write_contact_book(contact_book(profile), cfg.path("books", f"{profile.user}.txt"))
        log.info("wrote %s (%d events)", path, len(trace))
        written.append(path)
    return written


def cmd_fit(cfg: RunConfig) -> List[str]:
    users, traces, books, _, _ = _load_inputs(cfg, need_models=False)
    os.makedirs(cfg.paths["models"], exist_ok=True)
    failed = {}
    written = []
    for u in users:
        train, _ = time_split(traces[u], cfg.train.split_fraction)
        try:
            model = fit_model(train, books[u], cfg.model)
        except ValueError as exc:
            failed[u] = str(exc)
            continue
        path = cfg.path("models", f"{u}.json")
        model.save(path)
        written.append(path)
    if failed:
        raise PipelineError("fit failed for users: " + "; ".join(f"{u}: {m}" for u, m in sorted(failed.items())))
    return written


def cmd_wedge(cfg: RunConfig) -> str:
    users, traces, _, _, _ = _load_inputs(cfg, need_models=False)
    pool = [traces[u] for u in users]
    suite = generate_attack_suite(pool, pool, cfg.attack_count, derive_seed(cfg.seed, "wedge"), cfg.colocated)
    return write_suite(suite, cfg.paths["attacks"])


def cmd_train(cfg: RunConfig) -> Dict[str, dict]:
    users, traces, books, models, suite = _load_inputs(cfg, need_suite=True)
    results = train_weights(models, traces, books, suite, cfg.train)
    report = []
    for u in users:
        r = results[u]
        models[u].with_training(r.weights, r.threshold).save(cfg.path("models", f"{u}.json"))
        report.append(format_search_log(r))
    _write_text(cfg.path("reports", "train_log.tsv"), "".join(report))
    summary = {u: results[u].summary() for u in users}
    _write_text(cfg.path("reports", "train.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_score(cfg: RunConfig, user: Optional[str] = None, trace_path: Optional[str] = None,
              model_path: Optional[str] = None, book_path: Optional[str] = None,
              start: Optional[int] = None, end: Optional[int] = None) -> Dict[str, str]:
    if trace_path is None:
        if user is None:
            raise ConfigError("score needs --user or --trace")
        trace_path = cfg.path("traces", f"{user}.jsonl")
    trace = read_trace(_require(trace_path))
    user = user or trace.user
    model = UserModel.load(_require(model_path or cfg.path("models", f"{user}.json")))
    book = read_contact_book(_require(book_path or cfg.path("books", f"{user}.txt")))
    timeline = score_timeline(model, trace, book, cfg.tick_seconds, start, end)
    name = os.path.splitext(os.path.basename(trace_path))[0]
    os.makedirs(cfg.paths["timelines"], exist_ok=True)
    out = {
        "timeline": cfg.path("timelines", f"{name}.timeline.tsv"),
        "plot": cfg.path("timelines", f"{name}.plot.tsv"),
    }
    write_timeline(timeline, model.features, out["timeline"])
    write_plot_data(export_plot_data(timeline, model.config.utc_offset), out["plot"])
    return out


def cmd_eval(cfg: RunConfig) -> str:
    users, traces, books, models, suite = _load_inputs(cfg, need_suite=True)
    cuts = {u: split_time(traces[u], cfg.train.split_fraction) for u in users}
    held = [a for a in suite if a.victim in cuts and a.wedge_time >= cuts[a.victim]]
    report = compute_metrics(models, traces, books, held, cfg.train.horizon, cfg.tick_seconds,
                             windows={u: (cuts[u], None) for u in users})
    path = cfg.path("reports", "metrics.json")
    _write_text(path, report.to_json())
    _write_text(cfg.path("reports", "summary.txt"), report.summary())
    return path


def cmd_pipeline(cfg: RunConfig) -> str:
    cmd_synth(cfg)
    cmd_fit(cfg)
    cmd_wedge(cfg)
    cmd_train(cfg)
    return cmd_eval(cfg)
