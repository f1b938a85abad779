"""Desk-scale extraction experiments on the synthetic Markov fixture.

Shared by the pipeline, the acceptance suite and the sweep commands so that
every caller runs the same recipe.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import augment, data, distill, evaluate, models
from .oracle import Oracle, QueryBudget

log = logging.getLogger(__name__)


@dataclass
class DeskRecipe:
    users: int = 200
    items: int = 200
    victim_dim: int = 32
    max_len: int = 20
    victim_epochs: int = 20
    k: int = 20
    length: int = 20
    budget: int = 1000
    ratio: float = 0.1
    augmentor_epochs: int = 30
    distill_epochs: int = 30
    sampler: augment.SamplerConfig = field(default_factory=augment.SamplerConfig)
    weights: distill.LossWeights = field(default_factory=distill.LossWeights)
    fixture: dict = field(default_factory=dict)


def desk_split(seed, recipe=None):
    r = recipe or DeskRecipe()
    rows = data.markov_interactions(n_users=r.users, n_items=r.items, seed=seed, **r.fixture)
    return data.split_leave_last_two(data.from_interactions(rows, source=f"markov-{seed}"))


def desk_victim(split, seed, recipe=None):
    r = recipe or DeskRecipe()
    cfg = models.ModelConfig("SASRec", n_items=split.n_items, dim=r.victim_dim, max_len=r.max_len)
    victim, history = models.train_victim(
        models.build_model(cfg, seed), split, epochs=r.victim_epochs, seed=seed, eval_every=r.victim_epochs
    )
    return victim, history


def extract(victim, split, policy, seed, recipe=None, surrogate_cfg=None):
    """Generate a corpus under ``policy`` and distill a fresh surrogate.

    Returns a dict with the report, the distillation log and the augmentor
    report (few-shot only).
    """
    r = recipe or DeskRecipe()
    orc = Oracle(victim, QueryBudget(r.budget, None, "per-sequence"))
    aug = None
    if policy == "few-shot":
        subset = data.sample_few_shot(split, r.ratio, seed)
        part = data.partition_exploit_explore(subset, orc, r.k, window=r.max_len)
        aug = augment.train_augmentor(part, r.sampler, epochs=r.augmentor_epochs, seed=seed)
    plan = augment.GenerationPlan(policy, r.budget, r.length, r.k, seed)
    corpus = augment.generate_sequences(plan, orc, aug)
    sur_cfg = surrogate_cfg or victim.cfg
    surrogate = models.build_model(replace(sur_cfg), seed + 1)
    surrogate, dlog = distill.distill_train(
        surrogate, corpus, r.weights, epochs=r.distill_epochs, seed=seed, agr_every=max(r.distill_epochs // 3, 1)
    )
    report = evaluate.compare_models(
        victim, surrogate, split, evaluate.EvalProtocol(seed=seed),
        meta={"policy": policy, "budget": r.budget, "ratio": r.ratio, "k": r.k, "seed": seed},
    )
    return {
        "report": report,
        "distill_log": dlog,
        "augmentor": None if aug is None else {k: v for k, v in aug.report.items() if k != "history"},
        "budget": orc.budget.snapshot(),
        "surrogate": surrogate,
    }


def mean(xs):
    return float(np.mean(xs)) if len(xs) else float("nan")
