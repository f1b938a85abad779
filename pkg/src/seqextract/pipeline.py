"""Run configuration and the staged extraction pipeline.

A run directory holds the resolved config, every stage's artifacts and the
reports. Stages read only persisted upstream artifacts, so any stage can be
rerun alone; each derives its seed from the global seed and its own name.
"""

import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import augment, data, distill, evaluate, models, wire
from .nn.checkpoint import load_into, save_checkpoint
from .oracle import Oracle, QueryBudget

log = logging.getLogger(__name__)

STAGES = ("prepare", "train-victim", "serve", "train-augmentor", "generate", "distill", "evaluate", "report")
BATCH_STAGES = tuple(s for s in STAGES if s != "serve")
ATTACK_ENV = "SEQEXTRACT_ATTACK_BUDGET"
SUPERVISION_ENV = "SEQEXTRACT_SUPERVISION_BUDGET"

# Per-dataset defaults: dropout, BERT4Rec mask probability and rank-loss
# margins follow the published settings; the fixture profile is desk-scale.
PROFILES = {
    "fixture": {
        "dropout": 0.1, "mask_prob": 0.2, "margins": (0.75, 1.5), "dim": 32, "max_len": 20, "k": 20,
        "sequences": 1000, "victim_epochs": 20, "augmentor_epochs": 30, "distill_epochs": 30,
    },
    "ml-1m": {
        "dropout": 0.1, "mask_prob": 0.2, "margins": (0.75, 1.5), "dim": 64, "max_len": 50, "k": 100,
        "sequences": 5000, "victim_epochs": 100, "augmentor_epochs": 50, "distill_epochs": 200,
    },
    "steam": {
        "dropout": 0.2, "mask_prob": 0.2, "margins": (0.5, 1.0), "dim": 64, "max_len": 50, "k": 100,
        "sequences": 5000, "victim_epochs": 100, "augmentor_epochs": 50, "distill_epochs": 200,
    },
    "beauty": {
        "dropout": 0.5, "mask_prob": 0.6, "margins": (0.5, 0.5), "dim": 64, "max_len": 50, "k": 100,
        "sequences": 5000, "victim_epochs": 100, "augmentor_epochs": 50, "distill_epochs": 200,
    },
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


class StageError(RuntimeError):
    def __init__(self, stage, detail, needs=None):
        self.stage, self.needs = stage, needs
        super().__init__(detail)


@dataclass
class DatasetConfig:
    tag: str = "fixture"
    path: str = None
    format: str = "tsv"
    min_seq_len: int = 3
    min_item_count: int = 1
    fixture_users: int = 200
    fixture_items: int = 200

    def errors(self, prefix=""):
        errs = []
        if self.tag not in PROFILES:
            errs.append((f"{prefix}tag", f"unknown dataset tag {self.tag!r} (one of {sorted(PROFILES)})"))
        if self.tag != "fixture" and not self.path:
            errs.append((f"{prefix}path", "required for non-fixture datasets"))
        if self.format not in ("ml-ratings", "tsv"):
            errs.append((f"{prefix}format", "must be 'ml-ratings' or 'tsv'"))
        if self.min_seq_len < 3:
            errs.append((f"{prefix}min_seq_len", "must be >= 3 for a leave-last-two split"))
        for name in ("min_item_count", "fixture_users", "fixture_items"):
            if getattr(self, name) < 1:
                errs.append((f"{prefix}{name}", "must be >= 1"))
        return errs


@dataclass
class BudgetConfig:
    attack: int = 1000
    supervision: int = None
    mode: str = "per-sequence"
    strict_supervision: bool = False

    def errors(self, prefix=""):
        errs = []
        if self.attack is not None and self.attack < 0:
            errs.append((f"{prefix}attack", "must be >= 0"))
        if self.supervision is not None and self.supervision < 0:
            errs.append((f"{prefix}supervision", "must be >= 0"))
        if self.mode not in ("per-sequence", "per-call"):
            errs.append((f"{prefix}mode", "must be 'per-sequence' or 'per-call'"))
        return errs

    def build(self, attack_spent=0):
        """Fresh budget; env vars override the configured limits."""
        attack = _env_limit(ATTACK_ENV, self.attack)
        supervision = _env_limit(SUPERVISION_ENV, self.supervision)
        if attack is not None:
            attack = max(attack - attack_spent, 0)
        return QueryBudget(attack, supervision, self.mode)


def _env_limit(name, default):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    if raw.lower() in ("none", "unlimited"):
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError([(name, f"must be an integer or 'none', got {raw!r}")]) from None


@dataclass
class FewShotConfig:
    ratio: float = 0.1
    window: int = None

    def errors(self, prefix=""):
        errs = []
        if not 0.0 < self.ratio <= 1.0:
            errs.append((f"{prefix}ratio", "must be in (0, 1]"))
        if self.window is not None and self.window < 1:
            errs.append((f"{prefix}window", "must be >= 1"))
        return errs


@dataclass
class TrainingConfig:
    victim_epochs: int = 20
    augmentor_epochs: int = 30
    distill_epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3

    def errors(self, prefix=""):
        errs = []
        for name in ("victim_epochs", "augmentor_epochs", "distill_epochs"):
            if getattr(self, name) < 0:
                errs.append((f"{prefix}{name}", "must be >= 0"))
        if self.batch_size < 1:
            errs.append((f"{prefix}batch_size", "must be >= 1"))
        if not self.lr > 0:
            errs.append((f"{prefix}lr", "must be > 0"))
        return errs


@dataclass
class RunConfig:
    run_id: str = "run"
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    victim: models.ModelConfig = field(default_factory=models.ModelConfig)
    surrogate: models.ModelConfig = field(default_factory=models.ModelConfig)
    sampler: augment.SamplerConfig = field(default_factory=augment.SamplerConfig)
    generation: augment.GenerationPlan = field(default_factory=augment.GenerationPlan)
    loss: distill.LossWeights = field(default_factory=distill.LossWeights)
    eval: evaluate.EvalProtocol = field(default_factory=evaluate.EvalProtocol)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    few_shot: FewShotConfig = field(default_factory=FewShotConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self):
        d = asdict(self)
        for section, names in _DERIVED.items():
            for name in names:
                d[section].pop(name, None)
        d["eval"]["ks"] = list(d["eval"]["ks"])
        return d


SECTIONS = {
    "dataset": DatasetConfig,
    "victim": models.ModelConfig,
    "surrogate": models.ModelConfig,
    "sampler": augment.SamplerConfig,
    "generation": augment.GenerationPlan,
    "loss": distill.LossWeights,
    "eval": evaluate.EvalProtocol,
    "budget": BudgetConfig,
    "few_shot": FewShotConfig,
    "training": TrainingConfig,
}
# fields the pipeline owns rather than the user
_DERIVED = {"generation": {"seed"}, "eval": {"seed", "users"}}


def _profile_defaults(tag):
    p = PROFILES.get(tag, PROFILES["fixture"])
    model = {"dim": p["dim"], "max_len": p["max_len"], "dropout": p["dropout"], "layers": 2, "heads": 2}
    return {
        "victim": dict(model),
        "surrogate": dict(model),
        "generation": {"k": p["k"], "sequences": p["sequences"], "length": 20},
        "loss": {"rank_margin": p["margins"][0], "negative_margin": p["margins"][1]},
        "budget": {"attack": p["sequences"]},
        "training": {k: p[k] for k in ("victim_epochs", "augmentor_epochs", "distill_epochs")},
    }


def _accepts(tp, value):
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    if tp is tuple:
        return isinstance(value, (list, tuple)) and all(_accepts(int, v) for v in value)
    return True


def _type_ok(value, f):
    tp = f.type
    options = getattr(tp, "__args__", None) or (tp,)
    if value is None:
        return f.default is None or type(None) in options
    return any(_accepts(o, value) for o in options if o is not type(None))


def _section(cls, raw, defaults, path, errs):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errs.append((path, "must be an object"))
        return cls(**{k: v for k, v in defaults.items() if k in {f.name for f in fields(cls)}})
    known = {f.name: f for f in fields(cls)}
    skip = _DERIVED.get(path, set())
    values = dict(defaults)
    for key, value in raw.items():
        if key not in known or key in skip:
            errs.append((f"{path}.{key}", "unknown field"))
            continue
        values[key] = value
    ok = {}
    for key, value in values.items():
        if key not in known:
            continue
        if not _type_ok(value, known[key]):
            errs.append((f"{path}.{key}", f"wrong type {type(value).__name__}"))
            if key in defaults:
                ok[key] = defaults[key]
            continue
        ok[key] = value
    if "ks" in ok:
        ok["ks"] = tuple(ok["ks"]) if isinstance(ok["ks"], (list, tuple)) else ok["ks"]
    return cls(**ok)


def validate_config(source=None, seed=None):
    """Parse and check a config (path, JSON text, dict or None) into a RunConfig.

    Every violation is collected; :class:`ConfigError` lists them all with
    dotted field paths.
    """
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = source
    else:
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
        if not text.strip():
            raw = {}
        else:
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError([("<root>", f"not valid JSON: {e}")]) from None
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    errs = []
    for key in raw:
        if key not in SECTIONS and key not in ("run_id", "seed"):
            errs.append((key, "unknown section"))
    ds_raw = raw.get("dataset") or {}
    tag = ds_raw.get("tag", "fixture") if isinstance(ds_raw, dict) else "fixture"
    prof = _profile_defaults(tag)
    built = {}
    for name, cls in SECTIONS.items():
        defaults = dict(prof.get(name, {}))
        if name in ("victim", "surrogate"):
            sec = raw.get(name) or {}
            arch = sec.get("architecture", "SASRec") if isinstance(sec, dict) else "SASRec"
            if arch == "BERT4Rec":
                defaults["mask_prob"] = PROFILES.get(tag, PROFILES["fixture"])["mask_prob"]
            if arch == "NARM":
                defaults["layers"] = 1
        built[name] = _section(cls, raw.get(name), defaults, name, errs)
    cfg = RunConfig(
        run_id=raw.get("run_id", "run"), seed=raw.get("seed", 0) if seed is None else seed, **built
    )
    if not isinstance(cfg.run_id, str) or not cfg.run_id:
        errs.append(("run_id", "must be a non-empty string"))
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        errs.append(("seed", "must be a non-negative integer"))
    for name in SECTIONS:
        obj = getattr(cfg, name)
        if name in ("victim", "surrogate"):
            # n_items comes from the data at prepare time
            probe = models.ModelConfig(**{**asdict(obj), "n_items": obj.n_items or 1})
            errs.extend(probe.errors(f"{name}."))
        else:
            try:
                errs.extend(obj.errors(f"{name}."))
            except TypeError as e:
                errs.append((name, str(e)))
    b, g = cfg.budget, cfg.generation
    if b.attack is not None and isinstance(g.sequences, int) and isinstance(g.length, int):
        cost = g.sequences if b.mode == "per-sequence" else g.sequences * g.length
        if cost > b.attack:
            errs.append(("generation.sequences", f"needs {cost} attack units but the budget is {b.attack}"))
    if errs:
        raise ConfigError(errs)
    return cfg


def stage_seed(global_seed, stage):
    """Seed for ``stage``; independent of which other stages exist."""
    return int(np.random.SeedSequence([int(global_seed), zlib.crc32(stage.encode())]).generate_state(1)[0])


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load_json(path):
    return json.loads(Path(path).read_text())


class Pipeline:
    """Stages over one run directory."""

    def __init__(self, cfg, run_dir):
        self.cfg = cfg
        self.dir = Path(run_dir)

    # -- helpers -----------------------------------------------------------
    def p(self, *parts):
        return self.dir.joinpath(*parts)

    def _require(self, stage, artifact, producer):
        if not self.p(artifact).exists():
            raise StageError(stage, f"missing artifact {artifact}; run stage '{producer}' first", needs=producer)

    def _persist_config(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        body = self.cfg.to_dict()
        cfg_path = self.p("config.json")
        if cfg_path.exists():
            existing = _load_json(cfg_path)
            if existing != json.loads(json.dumps(body)):
                raise StageError("config", f"{cfg_path} holds a different config; use a fresh run directory")
        else:
            _dump(body, cfg_path)

    def load_split(self, stage):
        self._require(stage, "data/split.json", "prepare")
        d = _load_json(self.p("data/split.json"))
        return data.SplitDataset(
            train=[np.asarray(s, dtype=np.int64) for s in d["train"]],
            val=np.asarray(d["val"], dtype=np.int64),
            test=np.asarray(d["test"], dtype=np.int64),
            n_items=d["n_items"],
            users=d["users"],
        )

    def _model_cfg(self, which, n_items):
        c = getattr(self.cfg, which)
        return models.ModelConfig(**{**asdict(c), "n_items": n_items})

    def load_victim(self, stage):
        self._require(stage, "victim/manifest.json", "train-victim")
        return models.load_model(self.p("victim"))

    def oracle(self, victim, attack_spent=0):
        return Oracle(victim, self.cfg.budget.build(attack_spent))

    def _supervision_spent(self):
        """Attack units consumed by supervision queries under strict charging."""
        if not self.cfg.budget.strict_supervision or not self.p("augmentor_report.json").exists():
            return 0
        return int(_load_json(self.p("augmentor_report.json"))["budget"]["used"]["attack"])

    def load_augmentor(self, stage, n_items):
        self._require(stage, "augmentor/manifest.json", "train-augmentor")
        aug = augment.build_augmentor(n_items, self.cfg.sampler, 0)
        load_into(aug.store, self.p("augmentor"), "augmentor")
        aug.store.eval()
        return aug

    # -- stages ---------------------------------------------------------------
    def run(self, stages):
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise StageError(unknown[0], f"unknown stage {unknown[0]!r}")
        self._persist_config()
        for s in STAGES:
            if s in stages:
                log.info("stage %s", s)
                getattr(self, "stage_" + s.replace("-", "_"))()
        return self.dir

    def stage_prepare(self):
        ds_cfg = self.cfg.dataset
        self.p("data").mkdir(parents=True, exist_ok=True)
        if ds_cfg.tag == "fixture":
            rows = data.markov_interactions(
                n_users=ds_cfg.fixture_users, n_items=ds_cfg.fixture_items, seed=stage_seed(self.cfg.seed, "prepare")
            )
            src = data.write_tsv(rows, self.p("data", "interactions.tsv"))
            ds = data.load_dataset(src, "tsv", ds_cfg.min_seq_len, ds_cfg.min_item_count)
            ds.source = "fixture"
        else:
            ds = data.load_dataset(ds_cfg.path, ds_cfg.format, ds_cfg.min_seq_len, ds_cfg.min_item_count)
        split = data.split_leave_last_two(ds)
        _dump(
            {
                "users": list(ds.users),
                "items": list(ds.items),
                "n_items": ds.n_items,
                "train": [s.tolist() for s in split.train],
                "val": split.val.tolist(),
                "test": split.test.tolist(),
            },
            self.p("data", "split.json"),
        )
        data.write_stats(ds, self.p("data", "stats.json"))

    def stage_train_victim(self):
        split = self.load_split("train-victim")
        t = self.cfg.training
        model = models.build_model(self._model_cfg("victim", split.n_items), stage_seed(self.cfg.seed, "victim-init"))
        model, history = models.train_victim(
            model, split, epochs=t.victim_epochs, batch_size=t.batch_size, lr=t.lr,
            seed=stage_seed(self.cfg.seed, "train-victim"), eval_every=max(t.victim_epochs // 5, 1),
        )
        models.save_model(model, self.p("victim"))
        with self.p("victim_log.jsonl").open("w") as fh:
            for rec in history:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def stage_serve(self, address=None, ready=None):
        victim = self.load_victim("serve")
        host, port = wire.parse_address(address)
        server = wire.serve_wire(self.oracle(victim), (host, port), background=True)
        log.info("oracle listening on %s:%s", *server.server_address[:2])
        if ready is not None:
            ready(server)
            return server
        try:
            server.thread.join()
        except KeyboardInterrupt:
            pass
        finally:
            server.shutdown()
            server.server_close()
        return server

    def stage_train_augmentor(self):
        split = self.load_split("train-augmentor")
        victim = self.load_victim("train-augmentor")
        seed = stage_seed(self.cfg.seed, "train-augmentor")
        fs = self.cfg.few_shot
        subset = data.sample_few_shot(split, fs.ratio, seed)
        orc = self.oracle(victim)
        ledger = "attack" if self.cfg.budget.strict_supervision else "supervision"
        part = data.partition_exploit_explore(
            subset, orc, self.cfg.generation.k, window=fs.window or victim.cfg.max_len, ledger=ledger
        )
        aug = augment.train_augmentor(
            part, self.cfg.sampler, epochs=self.cfg.training.augmentor_epochs,
            batch_size=self.cfg.training.batch_size, lr=self.cfg.training.lr, seed=seed,
        )
        save_checkpoint(aug.store, self.p("augmentor"), "augmentor", {"sampler": self.cfg.sampler.to_dict(), "n_items": split.n_items})
        report = dict(aug.report)
        report.update(
            {"few_shot_users": subset.users.tolist(), "raw_interactions": subset.size, "budget": orc.budget.snapshot()}
        )
        _dump(report, self.p("augmentor_report.json"))

    def stage_generate(self):
        victim = self.load_victim("generate")
        g = self.cfg.generation
        aug = self.load_augmentor("generate", victim.n) if g.policy == "few-shot" else None
        plan = augment.GenerationPlan(g.policy, g.sequences, g.length, g.k, stage_seed(self.cfg.seed, "generate"), g.chunk)
        orc = self.oracle(victim, self._supervision_spent() if g.policy == "few-shot" else 0)
        try:
            corpus = augment.generate_sequences(plan, orc, aug)
        except augment.GenerationInterrupted as e:
            raise StageError("generate", f"{e}; {len(e.completed)} complete sequences discarded") from e
        augment.save_corpus(corpus, self.p("corpus.jsonl"))
        modes = np.array([s.modes for s in corpus], dtype=object).reshape(-1)
        _dump(
            {
                "policy": g.policy,
                "sequences": len(corpus),
                "budget": orc.budget.snapshot(),
                "modes": {m: int((modes == m).sum()) for m in (augment.START, augment.EXPLOIT, augment.EXPLORE)},
            },
            self.p("generate_report.json"),
        )

    def stage_distill(self):
        self._require("distill", "corpus.jsonl", "generate")
        split = self.load_split("distill")
        corpus = augment.load_corpus(self.p("corpus.jsonl"))
        sur = models.build_model(self._model_cfg("surrogate", split.n_items), stage_seed(self.cfg.seed, "surrogate-init"))
        t = self.cfg.training
        sur, _ = distill.distill_train(
            sur, corpus, self.cfg.loss, epochs=t.distill_epochs, batch_size=t.batch_size, lr=t.lr,
            seed=stage_seed(self.cfg.seed, "distill"), agr_every=max(t.distill_epochs // 10, 1),
            log_path=self.p("distill_log.jsonl"),
        )
        models.save_model(sur, self.p("surrogate"))

    def stage_evaluate(self):
        split = self.load_split("evaluate")
        victim = self.load_victim("evaluate")
        self._require("evaluate", "surrogate/manifest.json", "distill")
        sur = models.load_model(self.p("surrogate"))
        proto = evaluate.EvalProtocol(ks=tuple(self.cfg.eval.ks), negatives=self.cfg.eval.negatives,
                                      seed=stage_seed(self.cfg.seed, "evaluate"))
        g = self.cfg.generation
        meta = {
            "run_id": self.cfg.run_id, "policy": g.policy, "budget": self.cfg.budget.attack, "ratio": self.cfg.few_shot.ratio,
            "k": g.k, "length": g.length, "seed": self.cfg.seed, "victim": victim.architecture,
            "surrogate": sur.architecture, "dataset": self.cfg.dataset.tag,
        }
        report = evaluate.compare_models(victim, sur, split, proto, meta=meta)
        evaluate.emit_report({self.cfg.run_id: report}, self.p("report.json"), "json")

    def stage_report(self):
        self._require("report", "report.json", "evaluate")
        reports = evaluate.load_report(self.p("report.json"))
        evaluate.emit_report(reports, self.p("report.csv"), "csv")
        evaluate.emit_report(reports, self.p("report.md"), "md-table")


def run_pipeline(config, run_dir, stages=BATCH_STAGES):
    cfg = config if isinstance(config, RunConfig) else validate_config(config)
    return Pipeline(cfg, run_dir).run(stages)
