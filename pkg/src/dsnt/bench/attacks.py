"""Word-substitution attacks against any model exposing ``predict_proba``.

``predict_proba(sequences) -> [B, T]`` is the only thing the attacks use.
Every input handed to it counts as one query.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..encoders import UNK
from ..exceptions import ContractError


@dataclass
class AttackOutcome:
    original: tuple
    label: int
    perturbed: tuple
    substitutions: list = field(default_factory=list)  # (position, old, new)
    success: bool = False
    queries: int = 0

    def replay(self):
        toks = list(self.original)
        for pos, old, new in self.substitutions:
            if toks[pos] != old:
                raise ContractError(f"substitution at {pos} expects {old}, found {toks[pos]}")
            toks[pos] = new
        return tuple(toks)


@dataclass
class AttackConfig:
    method: str = "greedy"
    budget: int = None
    budget_fraction: float = 0.25
    scoring: str = "prob_drop"
    max_queries: int = 2000
    population: int = 8
    generations: int = 10
    seed: int = 0

    def budget_for(self, n_tokens):
        if self.budget is not None:
            return int(self.budget)
        return max(1, int(np.floor(self.budget_fraction * n_tokens)))

    def to_dict(self):
        return asdict(self)


class _Oracle:
    def __init__(self, model, label):
        self.model = model
        self.label = label
        self.queries = 0

    def gold(self, seqs):
        self.queries += len(seqs)
        p = np.asarray(self.model.predict_proba([list(s) for s in seqs]))
        return p[:, self.label], p.argmax(axis=1)


def _finish(tokens, label, current, subs, oracle, success):
    return AttackOutcome(tuple(tokens), int(label), tuple(current), subs, bool(success), oracle.queries)


def saliency_order_attack(model, tokens, label, table, budget, scoring="prob_drop", max_queries=2000):
    """Greedy synonym substitution in a fixed position order.

    Positions are ranked once on the clean input.  ``saliency`` ranks by word
    saliency (gold-probability drop when the token becomes ``<unk>``);
    ``prob_drop`` ranks by the PWWS score, the softmax of word saliencies
    times the best single-synonym drop at that position.  Walking down the
    ranking, each step evaluates every synonym at the position and commits
    the one that lowers the gold probability most, if it lowers it at all.
    """
    if budget < 0:
        raise ContractError("budget must be non-negative")
    if scoring not in ("prob_drop", "saliency"):
        raise ContractError(f"unknown scoring {scoring!r}")
    tokens = tuple(int(t) for t in tokens)
    oracle = _Oracle(model, label)
    p0, pred = oracle.gold([tokens])
    p_cur = p0[0]
    if pred[0] != label:
        return _finish(tokens, label, tokens, [], oracle, True)
    positions = [p for p, t in enumerate(tokens) if table.get(t)]
    if budget == 0 or not positions:
        return _finish(tokens, label, tokens, [], oracle, False)

    unk = [tokens[:p] + (UNK,) + tokens[p + 1 :] for p in positions]
    sal = p_cur - oracle.gold(unk)[0]
    if scoring == "saliency":
        score = sal
    else:
        cands = [(p, s) for p in positions for s in table.get(tokens[p])]
        drops = p_cur - oracle.gold([tokens[:p] + (s,) + tokens[p + 1 :] for p, s in cands])[0]
        best = {}
        for (p, _), dr in zip(cands, drops):
            best[p] = max(best.get(p, -np.inf), dr)
        w = np.exp(sal - sal.max())
        score = w / w.sum() * np.array([best[p] for p in positions])
    order = [positions[i] for i in np.argsort(-score, kind="stable")]

    current = list(tokens)
    subs = []
    for pos in order:
        if len(subs) >= budget or oracle.queries >= max_queries:
            break
        syns = table.get(current[pos])
        trials = [tuple(current[:pos]) + (s,) + tuple(current[pos + 1 :]) for s in syns]
        gold, preds = oracle.gold(trials)
        k = int(np.argmin(gold))
        if gold[k] >= p_cur:
            continue
        subs.append((pos, current[pos], syns[k]))
        current[pos] = syns[k]
        p_cur = gold[k]
        if preds[k] != label:
            return _finish(tokens, label, current, subs, oracle, True)
    return _finish(tokens, label, current, subs, oracle, False)


def population_attack(model, tokens, label, table, budget, population=8, generations=10, seed=0, max_queries=2000):
    """Genetic search over substitution sets (no language-model filter).

    An individual maps positions to substitutes, at most ``budget`` of them.
    Fitness is the drop of the gold-class probability.  Parents are drawn
    with probability proportional to fitness shifted to be non-negative;
    children mix their parents' substitutions position by position and then
    receive one random synonym swap.  The fittest member survives unchanged.
    """
    if budget < 0:
        raise ContractError("budget must be non-negative")
    if population < 1 or generations < 1:
        raise ContractError("population and generations must be at least 1")
    rng = np.random.default_rng(seed)
    tokens = tuple(int(t) for t in tokens)
    oracle = _Oracle(model, label)
    p0, pred = oracle.gold([tokens])
    if pred[0] != label:
        return _finish(tokens, label, tokens, [], oracle, True)
    positions = [p for p, t in enumerate(tokens) if table.get(t)]
    if budget == 0 or not positions:
        return _finish(tokens, label, tokens, [], oracle, False)

    def mutate(ind):
        ind = dict(ind)
        pos = positions[rng.integers(len(positions))]
        if pos not in ind and len(ind) >= budget:
            keys = sorted(ind)
            pos = keys[rng.integers(len(keys))]
        syns = table.get(tokens[pos])
        ind[pos] = syns[rng.integers(len(syns))]
        return ind

    def apply(ind):
        toks = list(tokens)
        for pos, s in ind.items():
            toks[pos] = s
        return tuple(toks)

    def crossover(a, b):
        child = {}
        for pos in sorted(set(a) | set(b)):
            src = a if rng.random() < 0.5 else b
            if pos in src:
                child[pos] = src[pos]
        while len(child) > budget:
            keys = sorted(child)
            del child[keys[rng.integers(len(keys))]]
        return child

    pop = [mutate({}) for _ in range(population)]
    for gen in range(generations):
        gold, preds = oracle.gold([apply(ind) for ind in pop])
        fitness = p0[0] - gold
        best = int(np.argmax(fitness))
        hit = np.flatnonzero(preds != label)
        if hit.size:
            best = int(hit[0])
        if hit.size or gen == generations - 1 or oracle.queries >= max_queries:
            ind = pop[best]
            subs = [(pos, tokens[pos], ind[pos]) for pos in sorted(ind)]
            return _finish(tokens, label, apply(ind), subs, oracle, bool(hit.size))
        w = fitness - fitness.min() + 1e-12
        w = w / w.sum()
        children = [pop[best]]
        for _ in range(population - 1):
            i, j = rng.choice(population, size=2, p=w)
            children.append(mutate(crossover(pop[i], pop[j])))
        pop = children


def run_attack(model, tokens, label, table, config, seed=None):
    budget = config.budget_for(len(tokens))
    if config.method == "greedy":
        return saliency_order_attack(model, tokens, label, table, budget, config.scoring, config.max_queries)
    if config.method == "population":
        return population_attack(
            model,
            tokens,
            label,
            table,
            budget,
            config.population,
            config.generations,
            config.seed if seed is None else seed,
            config.max_queries,
        )
    raise ContractError(f"unknown attack method {config.method!r}")


def evaluate_robustness(model, sequences, labels, table, config):
    """Clean accuracy, accuracy under attack, mean queries and substitutions.

    An example counts as robust when the clean prediction is correct and the
    attack fails.  Query and substitution means are over attacked examples.
    """
    if len(sequences) == 0:
        raise ContractError("empty test set")
    labels = np.asarray(labels, dtype=np.int64)
    probs = np.asarray(model.predict_proba([list(s) for s in sequences]))
    correct = probs.argmax(axis=1) == labels
    robust, queries, n_subs = 0, [], []
    for i in np.flatnonzero(correct):
        seed = int(np.random.SeedSequence([config.seed, int(i)]).generate_state(1)[0])
        out = run_attack(model, sequences[i], int(labels[i]), table, config, seed=seed)
        robust += not out.success
        queries.append(out.queries)
        n_subs.append(len(out.substitutions))
    n = len(sequences)
    return {
        "clean": float(correct.mean()),
        "under_attack": robust / n,
        "mean_queries": float(np.mean(queries)) if queries else 0.0,
        "mean_substitutions": float(np.mean(n_subs)) if n_subs else 0.0,
        "n": n,
    }
