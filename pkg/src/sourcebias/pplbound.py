"""Numerically verify a perplexity-gap bound by exhaustive enumeration.

The claim under test: when a generator aligns more closely with a
bidirectional scoring model than with the human text distribution (in a
precise per-prefix KL sense), the scoring model assigns generated
continuations lower expected perplexity than the human original.  All
quantities live on a tiny token alphabet (V symbols, length S) where
every sequence and every prefix can be enumerated, so each inequality of
the argument is checked with explicit sums rather than sampling.

Instances carry five autoregressive tables: human and scoring-model
("bert") tables both unconditioned and conditioned on the fixed human
document, plus the generator ("llm") table conditioned on it.  All PPL
values are in nats: PPL = −(1/S)·Σ log P(token | prefix).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

ENUMERATION_BUDGET = 10**6
_TOL = 1e-12

Prefix = tuple[int, ...]


class ConditionalTable:
    """One next-token distribution per prefix of lengths 0..S−1."""

    def __init__(self, alphabet_size: int, length: int,
                 probs: Mapping[Prefix, Sequence[float]]):
        if alphabet_size < 1:
            raise ValueError(f"alphabet size must be >= 1, got {alphabet_size}")
        if length < 1:
            raise ValueError(f"length must be >= 1, got {length}")
        self.alphabet_size = alphabet_size
        self.length = length
        table: dict[Prefix, np.ndarray] = {}
        for prefix, row in probs.items():
            arr = np.asarray(row, dtype=np.float64)
            if arr.shape != (alphabet_size,):
                raise ValueError(
                    f"prefix {prefix!r}: expected {alphabet_size} probabilities, "
                    f"got shape {arr.shape}"
                )
            if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
                raise ValueError(
                    f"prefix {prefix!r}: probabilities must be strictly positive"
                )
            if abs(float(arr.sum()) - 1.0) > _TOL:
                raise ValueError(
                    f"prefix {prefix!r}: probabilities sum to {arr.sum()!r}, not 1"
                )
            arr.setflags(write=False)
            table[tuple(prefix)] = arr
        for position in range(length):
            for prefix in itertools.product(range(alphabet_size), repeat=position):
                if prefix not in table:
                    raise ValueError(f"missing distribution for prefix {prefix!r}")
        self._table = table

    def distribution(self, prefix: Prefix) -> np.ndarray:
        try:
            return self._table[prefix]
        except KeyError:
            raise ValueError(f"no distribution for prefix {prefix!r}") from None

    def prob(self, prefix: Prefix, token: int) -> float:
        return float(self.distribution(prefix)[token])

    def items(self) -> Iterator[tuple[Prefix, np.ndarray]]:
        return iter(self._table.items())


def ppl_under(table: ConditionalTable, sequence: Sequence[int]) -> float:
    """−(1/S)·Σ_s log P(d_s | d_<s) under one autoregressive table.

    Conditioning on a reference document is expressed by which table is
    passed in (instances keep conditioned and unconditioned tables apart).
    """
    seq = tuple(sequence)
    if len(seq) != table.length:
        raise ValueError(
            f"sequence length {len(seq)} != table length {table.length}"
        )
    total = 0.0
    for position, token in enumerate(seq):
        total += math.log(table.prob(seq[:position], token))
    return -total / table.length


def sequence_probability(table: ConditionalTable, sequence: Sequence[int]) -> float:
    """Π_s P(d_s | d_<s): the chain-rule probability of the sequence."""
    seq = tuple(sequence)
    if len(seq) != table.length:
        raise ValueError(
            f"sequence length {len(seq)} != table length {table.length}"
        )
    product = 1.0
    for position, token in enumerate(seq):
        product *= table.prob(seq[:position], token)
    return product


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Σ p·ln(p/q) for strictly positive distributions."""
    return float(np.sum(p * (np.log(p) - np.log(q))))


@dataclass(frozen=True)
class TheoremInstance:
    alphabet_size: int
    length: int
    human_doc: tuple[int, ...]
    human_uncond: ConditionalTable
    human_cond: ConditionalTable
    bert_uncond: ConditionalTable
    bert_cond: ConditionalTable
    llm_cond: ConditionalTable
    epsilon: float

    def __post_init__(self) -> None:
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if len(self.human_doc) != self.length:
            raise ValueError(
                f"human document length {len(self.human_doc)} != {self.length}"
            )
        for token in self.human_doc:
            if not 0 <= token < self.alphabet_size:
                raise ValueError(f"token {token} outside alphabet")
        for name in ("human_uncond", "human_cond", "bert_uncond",
                     "bert_cond", "llm_cond"):
            table: ConditionalTable = getattr(self, name)
            if table.alphabet_size != self.alphabet_size or table.length != self.length:
                raise ValueError(f"table {name} has mismatched shape")

    def sequence_count(self) -> int:
        return self.alphabet_size ** self.length

    def to_json_dict(self) -> dict:
        def dump_table(table: ConditionalTable) -> dict[str, list[float]]:
            return {
                ",".join(map(str, prefix)): [float(p) for p in row]
                for prefix, row in table.items()
            }

        return {
            "schema_version": 1,
            "alphabet_size": self.alphabet_size,
            "length": self.length,
            "human_doc": list(self.human_doc),
            "epsilon": self.epsilon,
            "tables": {
                "human_uncond": dump_table(self.human_uncond),
                "human_cond": dump_table(self.human_cond),
                "bert_uncond": dump_table(self.bert_uncond),
                "bert_cond": dump_table(self.bert_cond),
                "llm_cond": dump_table(self.llm_cond),
            },
        }

    @staticmethod
    def from_json_dict(record: Mapping) -> "TheoremInstance":
        alphabet = int(record["alphabet_size"])
        length = int(record["length"])

        def parse_table(raw: Mapping[str, Sequence[float]]) -> ConditionalTable:
            probs = {
                tuple(int(t) for t in key.split(",") if t != ""): row
                for key, row in raw.items()
            }
            return ConditionalTable(alphabet, length, probs)

        tables = record["tables"]
        return TheoremInstance(
            alphabet_size=alphabet,
            length=length,
            human_doc=tuple(int(t) for t in record["human_doc"]),
            human_uncond=parse_table(tables["human_uncond"]),
            human_cond=parse_table(tables["human_cond"]),
            bert_uncond=parse_table(tables["bert_uncond"]),
            bert_cond=parse_table(tables["bert_cond"]),
            llm_cond=parse_table(tables["llm_cond"]),
            epsilon=float(record["epsilon"]),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_json_dict(), handle, sort_keys=True)
            handle.write("\n")

    @staticmethod
    def load(path: str | Path) -> "TheoremInstance":
        with open(path, encoding="utf-8") as handle:
            return TheoremInstance.from_json_dict(json.load(handle))


def _check_budget(inst: TheoremInstance) -> None:
    if inst.sequence_count() > ENUMERATION_BUDGET:
        raise ValueError(
            f"enumeration budget exceeded: V^S = {inst.sequence_count()} "
            f"> {ENUMERATION_BUDGET}"
        )


def enumerate_sequences(alphabet_size: int, length: int) -> Iterator[tuple[int, ...]]:
    return itertools.product(range(alphabet_size), repeat=length)


@dataclass(frozen=True)
class ConditionReport:
    """Measured slacks, each >= 0 exactly when its condition holds.

    semantic_superiority: PPL(d^H,B) − PPL(d^H,H).
    conditional_redundancy: min over d^G of PPL(d^H,H) − PPL(d^G|d^H,H).
    bounded_perplexity: ε − max over d^G of (PPL(d^G,B) − PPL(d^G|d^H,B)).
    kl_margin: per-prefix mode: min over positions and prefixes of
        KL(L‖H) − KL(L‖B) − ε; averaged mode: the same margin after
        averaging the KL terms over LLM prefix probabilities per position,
        then over positions.
    """

    semantic_superiority: float
    conditional_redundancy: float
    bounded_perplexity: float
    kl_margin: float
    kl_mode: str

    def booleans(self, tol: float = _TOL) -> dict[str, bool]:
        return {
            "semantic_superiority": self.semantic_superiority >= -tol,
            "conditional_redundancy": self.conditional_redundancy >= -tol,
            "bounded_perplexity": self.bounded_perplexity >= -tol,
            "kl_condition": self.kl_margin >= -tol,
        }

    @property
    def all_hold(self) -> bool:
        return all(self.booleans().values())

    def to_json_dict(self) -> dict:
        return {
            "slacks": {
                "semantic_superiority": self.semantic_superiority,
                "conditional_redundancy": self.conditional_redundancy,
                "bounded_perplexity": self.bounded_perplexity,
                "kl_condition": self.kl_margin,
            },
            "holds": self.booleans(),
            "kl_mode": self.kl_mode,
        }


def _prefix_weights(inst: TheoremInstance, position: int) -> Iterator[tuple[Prefix, float]]:
    """LLM-conditional probability of each prefix of the given length."""
    for prefix in itertools.product(range(inst.alphabet_size), repeat=position):
        weight = 1.0
        for s, token in enumerate(prefix):
            weight *= inst.llm_cond.prob(prefix[:s], token)
        yield prefix, weight


def check_conditions(inst: TheoremInstance, kl_mode: str = "per-prefix") -> ConditionReport:
    """Evaluate the four premises on an instance, returning slack values.

    The redundancy and bounded-perplexity premises are read universally
    over all V^S candidate sequences (the argument applies them inside an
    expectation, so the universal check is sufficient).
    """
    if kl_mode not in ("per-prefix", "averaged"):
        raise ValueError(f"unknown kl mode {kl_mode!r}")
    _check_budget(inst)

    ppl_h_bert = ppl_under(inst.bert_uncond, inst.human_doc)
    ppl_h_human = ppl_under(inst.human_uncond, inst.human_doc)
    slack1 = ppl_h_bert - ppl_h_human

    max_cond_human = -math.inf
    max_bert_gap = -math.inf
    for seq in enumerate_sequences(inst.alphabet_size, inst.length):
        max_cond_human = max(max_cond_human, ppl_under(inst.human_cond, seq))
        gap = ppl_under(inst.bert_uncond, seq) - ppl_under(inst.bert_cond, seq)
        max_bert_gap = max(max_bert_gap, gap)
    slack2 = ppl_h_human - max_cond_human
    slack3 = inst.epsilon - max_bert_gap

    if kl_mode == "per-prefix":
        margin = math.inf
        for position in range(inst.length):
            for prefix in itertools.product(range(inst.alphabet_size), repeat=position):
                llm = inst.llm_cond.distribution(prefix)
                gap = kl_divergence(llm, inst.human_cond.distribution(prefix)) - \
                    kl_divergence(llm, inst.bert_cond.distribution(prefix))
                margin = min(margin, gap - inst.epsilon)
    else:
        total_gap = 0.0
        for position in range(inst.length):
            for prefix, weight in _prefix_weights(inst, position):
                llm = inst.llm_cond.distribution(prefix)
                total_gap += weight * (
                    kl_divergence(llm, inst.human_cond.distribution(prefix))
                    - kl_divergence(llm, inst.bert_cond.distribution(prefix))
                )
        margin = total_gap / inst.length - inst.epsilon

    return ConditionReport(slack1, slack2, slack3, margin, kl_mode)


@dataclass(frozen=True)
class TheoremResult:
    expectation: float
    passed: bool


def verify_theorem(inst: TheoremInstance, tol: float = 1e-10) -> TheoremResult:
    """E_{d^G ~ LLM|d^H}[PPL(d^G,B) − PPL(d^H,B)] by full enumeration.

    Reports the expectation and whether it is <= tol.  The check is
    one-directional: on instances whose premises fail, the expectation is
    still computed and may legitimately be positive.
    """
    _check_budget(inst)
    ppl_h = ppl_under(inst.bert_uncond, inst.human_doc)
    expectation = 0.0
    for seq in enumerate_sequences(inst.alphabet_size, inst.length):
        weight = sequence_probability(inst.llm_cond, seq)
        expectation += weight * (ppl_under(inst.bert_uncond, seq) - ppl_h)
    return TheoremResult(expectation, expectation <= tol)


@dataclass(frozen=True)
class ProofStep:
    label: str
    lhs: float
    rhs: float
    equality: bool
    holds: bool


def verify_proof_chain(
    inst: TheoremInstance,
    kl_mode: str = "per-prefix",
    tol: float = 1e-10,
) -> list[ProofStep]:
    """Check every intermediate step of the bound numerically.

    Steps, in order (expectations over d^G ~ LLM conditioned on d^H):
      1. substitute PPL(d^H,H) for PPL(d^H,B) using semantic superiority;
      2. bound E[PPL(d^G|d^H,H)] by PPL(d^H,H) using conditional redundancy;
      3. identity: S·E[PPL(d^G|d^H,H) − PPL(d^G|d^H,G)] = Σ_s E KL(L‖H);
      4. identity: S·E[PPL(d^G|d^H,B) − PPL(d^G|d^H,G)] = Σ_s E KL(L‖B);
      5. assemble: the bounded-perplexity gap plus the KL gap is at most
         ε − ε = 0.
    The identities are evaluated on both sides by independent
    enumerations (sequences on the left, weighted prefixes on the right).
    """
    _check_budget(inst)

    ppl_h_bert = ppl_under(inst.bert_uncond, inst.human_doc)
    ppl_h_human = ppl_under(inst.human_uncond, inst.human_doc)

    e_bert_uncond = 0.0
    e_bert_cond = 0.0
    e_human_cond = 0.0
    e_llm_cond = 0.0
    for seq in enumerate_sequences(inst.alphabet_size, inst.length):
        weight = sequence_probability(inst.llm_cond, seq)
        e_bert_uncond += weight * ppl_under(inst.bert_uncond, seq)
        e_bert_cond += weight * ppl_under(inst.bert_cond, seq)
        e_human_cond += weight * ppl_under(inst.human_cond, seq)
        e_llm_cond += weight * ppl_under(inst.llm_cond, seq)

    kl_human_total = 0.0
    kl_bert_total = 0.0
    for position in range(inst.length):
        for prefix, weight in _prefix_weights(inst, position):
            llm = inst.llm_cond.distribution(prefix)
            kl_human_total += weight * kl_divergence(
                llm, inst.human_cond.distribution(prefix)
            )
            kl_bert_total += weight * kl_divergence(
                llm, inst.bert_cond.distribution(prefix)
            )

    target = e_bert_uncond - ppl_h_bert
    steps = [
        ProofStep(
            "semantic-superiority-substitution",
            lhs=target,
            rhs=e_bert_uncond - ppl_h_human,
            equality=False,
            holds=target <= (e_bert_uncond - ppl_h_human) + tol,
        ),
        ProofStep(
            "conditional-redundancy-bound",
            lhs=e_bert_uncond - ppl_h_human,
            rhs=e_bert_uncond - e_human_cond,
            equality=False,
            holds=(e_bert_uncond - ppl_h_human)
            <= (e_bert_uncond - e_human_cond) + tol,
        ),
        ProofStep(
            "kl-identity-human",
            lhs=inst.length * (e_human_cond - e_llm_cond),
            rhs=kl_human_total,
            equality=True,
            holds=abs(inst.length * (e_human_cond - e_llm_cond) - kl_human_total)
            <= tol,
        ),
        ProofStep(
            "kl-identity-bert",
            lhs=inst.length * (e_bert_cond - e_llm_cond),
            rhs=kl_bert_total,
            equality=True,
            holds=abs(inst.length * (e_bert_cond - e_llm_cond) - kl_bert_total)
            <= tol,
        ),
    ]

    # (E[PPL(dG,B)] − E[PPL(dG|dH,B)]) ≤ ε and (KL_B − KL_H)/S ≤ −ε; their
    # sum bounds target minus the redundancy slack by ε − ε = 0.
    assembled = (e_bert_uncond - e_bert_cond) + (kl_bert_total - kl_human_total) / inst.length
    steps.append(
        ProofStep(
            "final-epsilon-cancellation",
            lhs=assembled,
            rhs=0.0,
            equality=False,
            holds=assembled <= tol,
        )
    )
    return steps


class GenerationError(RuntimeError):
    pass


def _dirichlet_table(
    alphabet_size: int, length: int, rng: np.random.Generator
) -> ConditionalTable:
    probs = {
        prefix: rng.dirichlet(np.ones(alphabet_size))
        for position in range(length)
        for prefix in itertools.product(range(alphabet_size), repeat=position)
    }
    return ConditionalTable(alphabet_size, length, probs)


def _mixture_table(
    base: ConditionalTable,
    weight: float,
    rng: np.random.Generator,
) -> ConditionalTable:
    """(1−weight)·base + weight·fresh Dirichlet noise, prefix by prefix."""
    probs = {
        prefix: (1.0 - weight) * row + weight * rng.dirichlet(np.ones(base.alphabet_size))
        for prefix, row in base.items()
    }
    return ConditionalTable(base.alphabet_size, base.length, probs)


def _uniform_mixture_table(
    alphabet_size: int, length: int, weight: float, rng: np.random.Generator
) -> ConditionalTable:
    uniform = np.full(alphabet_size, 1.0 / alphabet_size)
    probs = {
        prefix: (1.0 - weight) * uniform + weight * rng.dirichlet(np.ones(alphabet_size))
        for position in range(length)
        for prefix in itertools.product(range(alphabet_size), repeat=position)
    }
    return ConditionalTable(alphabet_size, length, probs)


def _pick_human_doc(
    tables: dict[str, ConditionalTable],
    alphabet_size: int,
    length: int,
) -> tuple[tuple[int, ...], float]:
    """Best d^H by max-min slack over premises (1) and (2)."""
    max_cond_human = max(
        ppl_under(tables["human_cond"], seq)
        for seq in enumerate_sequences(alphabet_size, length)
    )
    best_doc: tuple[int, ...] | None = None
    best_slack = -math.inf
    for seq in enumerate_sequences(alphabet_size, length):
        ppl_b = ppl_under(tables["bert_uncond"], seq)
        ppl_h = ppl_under(tables["human_uncond"], seq)
        slack = min(ppl_b - ppl_h, ppl_h - max_cond_human)
        if slack > best_slack:
            best_slack = slack
            best_doc = seq
    assert best_doc is not None
    return best_doc, best_slack


def sample_instance(
    alphabet_size: int,
    length: int,
    rng: np.random.Generator,
    method: str = "guided",
    max_attempts: int = 100_000,
) -> TheoremInstance:
    """Draw one instance whose premises all hold (rejection sampling).

    ``dirichlet`` draws every table from a flat Dirichlet, which only
    works for the tiniest shapes: the per-prefix KL premise must hold at
    every one of the (V^S−1)/(V−1) prefixes, so acceptance decays
    geometrically.  ``guided`` (default) keeps the draws random but
    correlated the way the premises require — the scoring model close to
    the generator, the conditioned human model near uniform — and then
    still verifies every premise exactly before accepting.  ε is set to
    the largest bounded-perplexity gap (clamped at 0) so premise (3) is
    tight by construction.
    """
    if method not in ("guided", "dirichlet"):
        raise ValueError(f"unknown generation method {method!r}")
    if alphabet_size ** length > ENUMERATION_BUDGET:
        raise ValueError(
            f"enumeration budget exceeded: V^S = {alphabet_size ** length}"
        )
    for _ in range(max_attempts):
        if method == "dirichlet":
            tables = {
                name: _dirichlet_table(alphabet_size, length, rng)
                for name in ("human_uncond", "human_cond", "bert_uncond",
                             "bert_cond", "llm_cond")
            }
        else:
            llm_cond = _dirichlet_table(alphabet_size, length, rng)
            bert_cond = _mixture_table(llm_cond, 0.005, rng)
            bert_uncond = _mixture_table(bert_cond, 0.005, rng)
            tables = {
                "llm_cond": llm_cond,
                "bert_cond": bert_cond,
                "bert_uncond": bert_uncond,
                "human_cond": _uniform_mixture_table(alphabet_size, length, 0.1, rng),
                "human_uncond": _dirichlet_table(alphabet_size, length, rng),
            }

        human_doc, slack = _pick_human_doc(tables, alphabet_size, length)
        if slack < 0.0:
            continue
        max_gap = max(
            ppl_under(tables["bert_uncond"], seq) - ppl_under(tables["bert_cond"], seq)
            for seq in enumerate_sequences(alphabet_size, length)
        )
        candidate = TheoremInstance(
            alphabet_size=alphabet_size,
            length=length,
            human_doc=human_doc,
            epsilon=max(0.0, max_gap),
            **tables,
        )
        if check_conditions(candidate).all_hold:
            return candidate
    raise GenerationError(
        f"no premise-satisfying instance in {max_attempts} attempts "
        f"(V={alphabet_size}, S={length}, method={method!r})"
    )


def generate_instances(
    count: int,
    alphabet_size: int,
    length: int,
    seed: int,
    method: str = "guided",
    max_attempts: int = 100_000,
) -> list[TheoremInstance]:
    rng = np.random.default_rng(seed)
    return [
        sample_instance(alphabet_size, length, rng, method, max_attempts)
        for _ in range(count)
    ]
