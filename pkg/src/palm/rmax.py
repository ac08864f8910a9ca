"""Tabular R-MAX model for one lifted subtask.

Abstract states are tuples and actions are child labels. One table is
shared by every grounding of a subtask.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .core import PalmError
from .lamdp.ground import decode_values, encode_values

MODEL_HEADER = "palm-model"
MODEL_VERSION = "1"


class ModelLoadError(PalmError):
    pass


class _Optimistic:
    def __repr__(self) -> str:
        return "OPTIMISTIC"


OPTIMISTIC = _Optimistic()


@dataclass(frozen=True)
class Transition:
    next_state: tuple
    probability: float
    reward: float


def default_m(stochastic: bool) -> int:
    return 5 if stochastic else 1


class TabularModel:
    """Counts, empirical transitions and known-pair bookkeeping.

    ``log`` records every pair whose prediction changed, so compiled
    planners can update incrementally.
    """

    def __init__(self, name: str, phi_signature: str, m: int, gamma: float,
                 value_max: float, frozen: bool = False):
        if m < 1:
            raise ValueError("known threshold m must be a positive integer")
        self.name = name
        self.phi_signature = phi_signature
        self.m = int(m)
        self.gamma = float(gamma)
        self.value_max = float(value_max)
        self.frozen = frozen
        self.n_sa: dict[tuple, int] = {}
        self.n_sas: dict[tuple, dict[tuple, int]] = {}
        self.reward_sum: dict[tuple, dict[tuple, float]] = {}
        self.log: list[tuple] = []
        self.version = 0

    @classmethod
    def for_subtask(cls, node, m: int, gamma: float) -> TabularModel:
        return cls(node.name, node.phi_signature(), m, gamma, node.pseudo_reward.goal / (1.0 - gamma))

    # -- learning -------------------------------------------------------------

    def is_known(self, s: tuple, a: str) -> bool:
        return self.frozen or self.n_sa.get((s, a), 0) >= self.m

    def observe(self, s: tuple, a: str, s_next: tuple, r: float, child_known: bool = True) -> bool:
        """Record a transition; returns whether the pair was known beforehand."""
        if self.frozen:
            return True
        key = (s, a)
        n = self.n_sa.get(key, 0)
        was_known = n >= self.m
        if not child_known:
            return was_known
        outcomes = self.n_sas.get(key)
        if outcomes is None:
            outcomes = self.n_sas[key] = {}
            self.reward_sum[key] = {}
        prev = outcomes.get(s_next, 0)
        prev_mean = self.reward_sum[key][s_next] / prev if prev else None
        outcomes[s_next] = prev + 1
        self.reward_sum[key][s_next] = self.reward_sum[key].get(s_next, 0.0) + r
        self.n_sa[key] = n + 1
        # prediction changes on becoming known, or (once known) unless the
        # single observed outcome simply repeats with the same reward
        if n + 1 == self.m:
            changed = True
        elif was_known:
            changed = len(outcomes) > 1 or prev == 0 or prev_mean != self.reward_sum[key][s_next] / (prev + 1)
        else:
            changed = False
        if changed:
            self.log.append(key)
            self.version += 1
        return was_known

    def freeze(self) -> TabularModel:
        self.frozen = True
        self.log.append(None)  # everything may have changed
        self.version += 1
        return self

    def remove_action(self, a: str) -> int:
        """Delete every row for action ``a``; returns the number of pairs removed."""
        keys = [k for k in self.n_sa if k[1] == a]
        for k in keys:
            del self.n_sa[k]
            del self.n_sas[k]
            del self.reward_sum[k]
            self.log.append(k)
        if keys:
            self.version += 1
        return len(keys)

    # -- queries ----------------------------------------------------------------

    def predicted(self, s: tuple, a: str):
        """Empirical distribution for known pairs, OPTIMISTIC otherwise.

        A frozen model with no record of the pair returns an empty list;
        planners treat that as a self-loop with the default reward.
        """
        key = (s, a)
        n = self.n_sa.get(key, 0)
        if not self.frozen and n < self.m:
            return OPTIMISTIC
        if n == 0:
            return []
        sums = self.reward_sum[key]
        return [Transition(s2, c / n, sums[s2] / c) for s2, c in self.n_sas[key].items()]

    def states(self) -> set[tuple]:
        out = set()
        for (s, _), outcomes in self.n_sas.items():
            out.add(s)
            out.update(outcomes)
        return out

    def pairs(self):
        return list(self.n_sa)

    def check_consistency(self) -> bool:
        return all(sum(self.n_sas[k].values()) == n for k, n in self.n_sa.items())

    # -- serialization ------------------------------------------------------------

    def serialize(self) -> bytes:
        lines = [
            f"{MODEL_HEADER} {MODEL_VERSION}",
            f"lamdp {self.name}",
            f"phi-signature {self.phi_signature}",
            f"m {self.m}",
            f"gamma {self.gamma.hex()}",
            f"value-max {self.value_max.hex()}",
            f"frozen {int(self.frozen)}",
        ]
        rows = []
        for (s, a), outcomes in self.n_sas.items():
            s_key = encode_values(s)
            for s2, count in outcomes.items():
                r = float(self.reward_sum[(s, a)][s2])
                rows.append("\t".join([s_key, a, encode_values(s2), str(count), r.hex()]))
        rows.sort()
        lines.append(f"rows {len(rows)}")
        lines.extend(rows)
        body = "\n".join(lines) + "\n"
        digest = hashlib.sha256(body.encode()).hexdigest()
        return (body + f"checksum {digest}\n").encode()

    @classmethod
    def deserialize(cls, data: bytes) -> TabularModel:
        text = data.decode()
        body, sep, tail = text.rpartition("checksum ")
        if not sep or hashlib.sha256(body.encode()).hexdigest() != tail.strip():
            raise ModelLoadError("model file checksum mismatch")
        lines = body.rstrip("\n").split("\n")
        if lines[0] != f"{MODEL_HEADER} {MODEL_VERSION}":
            raise ModelLoadError(f"unsupported model file header {lines[0]!r}")
        try:
            header = dict(line.split(" ", 1) for line in lines[1:8])
            model = cls(
                header["lamdp"],
                header["phi-signature"],
                int(header["m"]),
                float.fromhex(header["gamma"]),
                float.fromhex(header["value-max"]),
                bool(int(header["frozen"])),
            )
            n_rows = int(header["rows"])
        except (KeyError, ValueError) as exc:
            raise ModelLoadError(f"malformed model header: {exc}") from exc
        rows = lines[8:]
        if len(rows) != n_rows:
            raise ModelLoadError(f"expected {n_rows} rows, found {len(rows)}")
        for row in rows:
            s_key, a, s2_key, count, r = row.split("\t")
            s, s2 = decode_values(s_key), decode_values(s2_key)
            key = (s, a)
            model.n_sas.setdefault(key, {})[s2] = int(count)
            model.reward_sum.setdefault(key, {})[s2] = float.fromhex(r)
            model.n_sa[key] = model.n_sa.get(key, 0) + int(count)
        return model


def observe(model: TabularModel, s, a, s_next, r, child_known: bool = True) -> bool:
    return model.observe(s, a, s_next, r, child_known)


def is_known(model: TabularModel, s, a) -> bool:
    return model.is_known(s, a)


def predicted(model: TabularModel, s, a):
    return model.predicted(s, a)


def serialize(model: TabularModel) -> bytes:
    return model.serialize()


def deserialize(data: bytes) -> TabularModel:
    return TabularModel.deserialize(data)


def freeze(model: TabularModel) -> TabularModel:
    return model.freeze()
