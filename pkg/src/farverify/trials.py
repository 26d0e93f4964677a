"""Trial-protocol generation from a manifest, plus validation and stats.

Every utterance eligible as an enrollment anchor receives a configured
number of same-speaker (target) and different-speaker (nontarget)
partners. Enrollment anchors are close-talk utterances; telephone
recordings may additionally enroll when the cross-channel case is on,
in which case their test partners are restricted to tablet/telephone
recordings. Nontarget partners are drawn mostly from the same gender,
with a configurable fraction of cross-gender pairs.

Sampling is without replacement inside each candidate pool. When a pool
is smaller than requested, the whole pool is used and the shortfall is
flagged in the protocol stats; trials are never duplicated. Generation
is deterministic given (manifest, config, seed): anchors are visited in
utt_id order and each anchor draws from its own seed derived from the
run seed and the anchor id.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .corpus import (
    Channel,
    Domain,
    Manifest,
    NONTARGET,
    TARGET,
    TrialPair,
    UtteranceMeta,
    derive_tags,
)
from .errors import ConfigInvalid, EmptyCasePool, InsufficientSpeakers, UnknownId

ENROLL_CLOSE_TALK_ONLY = "close_talk_only"
ENROLL_TELEPHONE_ALLOWED = "telephone_allowed"

TEXT_MIXED = "mixed"
TEXT_TD_ONLY = "TD_only"
TEXT_TI_ONLY = "TI_only"


@dataclass(frozen=True)
class TrialConfig:
    """Knobs of the protocol generator."""

    n_target_per_enroll: int = 4
    n_nontarget_per_enroll: int = 10
    same_gender_ratio: float = 0.9
    include_cross_domain: bool = True
    include_cross_channel: bool = True
    enroll_channel_policy: str = ENROLL_TELEPHONE_ALLOWED
    text_mode: str = TEXT_MIXED
    seed: int = 0

    def __post_init__(self):
        if self.n_target_per_enroll < 0 or self.n_nontarget_per_enroll < 0:
            raise ConfigInvalid("per-enroll counts must be >= 0")
        if not 0.0 <= self.same_gender_ratio <= 1.0:
            raise ConfigInvalid(f"same_gender_ratio must be in [0,1], got {self.same_gender_ratio}")
        if self.enroll_channel_policy not in (ENROLL_CLOSE_TALK_ONLY, ENROLL_TELEPHONE_ALLOWED):
            raise ConfigInvalid(f"unknown enroll_channel_policy {self.enroll_channel_policy!r}")
        if self.text_mode not in (TEXT_MIXED, TEXT_TD_ONLY, TEXT_TI_ONLY):
            raise ConfigInvalid(f"unknown text_mode {self.text_mode!r}")
        if self.include_cross_channel and self.enroll_channel_policy == ENROLL_CLOSE_TALK_ONLY:
            raise ConfigInvalid(
                "cross-channel trials need enroll_channel_policy=telephone_allowed"
            )
        if self.seed < 0:
            raise ConfigInvalid("seed must be >= 0")


@dataclass(frozen=True)
class ProtocolStats:
    """Per-tag counts of a trial list plus generator shortfall flags."""

    n_trials: int
    n_target: int
    n_nontarget: int
    tag_counts: Mapping[str, int] = field(default_factory=dict)
    short_target_pools: int = 0
    short_nontarget_pools: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tag_counts", dict(self.tag_counts))


class Violation(NamedTuple):
    kind: str
    index: int
    message: str


def _enroll_rng(seed: int, utt_id: str) -> np.random.Generator:
    digest = hashlib.blake2s(utt_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "big")])


def _text_ok(mode: str, enroll: UtteranceMeta, cand: UtteranceMeta) -> bool:
    if mode == TEXT_TD_ONLY:
        return enroll.text_id == cand.text_id
    if mode == TEXT_TI_ONLY:
        return enroll.text_id != cand.text_id
    return True


def _sample(pool: list[UtteranceMeta], want: int, rng: np.random.Generator):
    """Draw up to `want` without replacement; report whether the pool fell short."""
    if want <= 0:
        return [], False
    if len(pool) <= want:
        idx = rng.permutation(len(pool))
        return [pool[i] for i in idx], len(pool) < want
    idx = rng.choice(len(pool), size=want, replace=False)
    return [pool[i] for i in idx], False


def generate_trials(manifest: Manifest, cfg: TrialConfig) -> list[TrialPair]:
    trials, _ = generate_with_stats(manifest, cfg)
    return trials


def generate_with_stats(manifest: Manifest, cfg: TrialConfig) -> tuple[list[TrialPair], ProtocolStats]:
    """Generate the labeled, tagged protocol plus its generation stats."""
    metas = sorted(manifest.values(), key=lambda m: m.utt_id)
    unlabeled = [m.utt_id for m in metas if not m.speaker_id]
    if unlabeled:
        raise ConfigInvalid(
            f"trial generation needs speaker_id for every utterance "
            f"(missing for {unlabeled[0]!r} and {len(unlabeled) - 1} more)"
        )
    speakers = {m.speaker_id for m in metas}
    if len(speakers) < 2:
        raise InsufficientSpeakers(f"need >= 2 speakers, manifest has {len(speakers)}")

    allowed_enroll = {Channel.CLOSE_TALK}
    if cfg.include_cross_channel and cfg.enroll_channel_policy == ENROLL_TELEPHONE_ALLOWED:
        allowed_enroll.add(Channel.TELEPHONE)
    anchors = [m for m in metas if m.channel in allowed_enroll]
    if not anchors:
        raise EmptyCasePool("no utterances are eligible for enrollment")

    pairs: list[TrialPair] = []
    n_target = n_nontarget = 0
    short_t = short_n = 0
    for anchor in anchors:
        rng = _enroll_rng(cfg.seed, anchor.utt_id)

        def eligible(cand: UtteranceMeta) -> bool:
            if cand.utt_id == anchor.utt_id:
                return False
            if anchor.channel is Channel.TELEPHONE and cand.channel not in (
                Channel.TABLET,
                Channel.TELEPHONE,
            ):
                return False
            if not cfg.include_cross_domain and cand.domain is not anchor.domain:
                return False
            return _text_ok(cfg.text_mode, anchor, cand)

        candidates = [m for m in metas if eligible(m)]
        tgt_pool = [m for m in candidates if m.speaker_id == anchor.speaker_id]
        same_pool = [
            m for m in candidates
            if m.speaker_id != anchor.speaker_id and m.gender is anchor.gender
        ]
        cross_pool = [
            m for m in candidates
            if m.speaker_id != anchor.speaker_id and m.gender is not anchor.gender
        ]

        picked_t, fell_short = _sample(tgt_pool, cfg.n_target_per_enroll, rng)
        short_t += fell_short
        n_same = int(round(cfg.same_gender_ratio * cfg.n_nontarget_per_enroll))
        n_cross = cfg.n_nontarget_per_enroll - n_same
        picked_same, short_s = _sample(same_pool, n_same, rng)
        picked_cross, short_c = _sample(cross_pool, n_cross, rng)
        short_n += short_s or short_c

        for cand in picked_t:
            pairs.append(
                TrialPair(anchor.utt_id, cand.utt_id, TARGET, derive_tags(anchor, cand))
            )
        for cand in picked_same + picked_cross:
            pairs.append(
                TrialPair(anchor.utt_id, cand.utt_id, NONTARGET, derive_tags(anchor, cand))
            )
        n_target += len(picked_t)
        n_nontarget += len(picked_same) + len(picked_cross)

    if cfg.n_target_per_enroll > 0 and n_target == 0:
        raise EmptyCasePool("target trials requested but no same-speaker pairs exist")
    if cfg.n_nontarget_per_enroll > 0 and n_nontarget == 0:
        raise EmptyCasePool("nontarget trials requested but no cross-speaker pairs exist")

    counts: dict[str, int] = {}
    for p in pairs:
        for tag in p.tags:
            counts[tag] = counts.get(tag, 0) + 1
    stats = ProtocolStats(
        n_trials=len(pairs),
        n_target=n_target,
        n_nontarget=n_nontarget,
        tag_counts=counts,
        short_target_pools=short_t,
        short_nontarget_pools=short_n,
    )
    return pairs, stats


def validate_trials(trials: Sequence[TrialPair], manifest: Manifest) -> list[Violation]:
    """Check a protocol against its manifest.

    Reports same-utterance pairs, labels contradicting speaker ids,
    duplicated (enroll, test) pairs, and stored tags that disagree with
    the tags recomputed from the manifest.
    """
    violations: list[Violation] = []
    seen: set[tuple[str, str]] = set()
    for i, pair in enumerate(trials):
        enroll = manifest.meta(pair.enroll_id)
        test = manifest.meta(pair.test_id)
        if pair.enroll_id == pair.test_id:
            violations.append(Violation("same_utterance", i, f"({pair.enroll_id}) paired with itself"))
        key = (pair.enroll_id, pair.test_id)
        if key in seen:
            violations.append(Violation("duplicate_pair", i, f"pair {key} repeated"))
        seen.add(key)
        if pair.label is not None and enroll.speaker_id and test.speaker_id:
            expected = TARGET if enroll.speaker_id == test.speaker_id else NONTARGET
            if pair.label != expected:
                violations.append(
                    Violation("label_mismatch", i, f"pair {key} labeled {pair.label}, expected {expected}")
                )
        if pair.tags:
            derived = derive_tags(enroll, test)
            if pair.tags != derived:
                violations.append(
                    Violation(
                        "tag_mismatch",
                        i,
                        f"pair {key} stored tags {sorted(pair.tags)} != derived {sorted(derived)}",
                    )
                )
    return violations


def protocol_stats(trials: Sequence[TrialPair], manifest: Manifest) -> ProtocolStats:
    """Exact per-tag counts of an existing protocol (tags recomputed)."""
    counts: dict[str, int] = {}
    n_target = n_nontarget = 0
    for pair in trials:
        enroll = manifest.meta(pair.enroll_id)
        test = manifest.meta(pair.test_id)
        for tag in derive_tags(enroll, test):
            counts[tag] = counts.get(tag, 0) + 1
        if pair.label == TARGET:
            n_target += 1
        elif pair.label == NONTARGET:
            n_nontarget += 1
    return ProtocolStats(
        n_trials=len(trials),
        n_target=n_target,
        n_nontarget=n_nontarget,
        tag_counts=counts,
    )


def stats_to_dict(stats: ProtocolStats) -> dict:
    return {
        "n_trials": stats.n_trials,
        "n_target": stats.n_target,
        "n_nontarget": stats.n_nontarget,
        "tag_counts": {k: stats.tag_counts[k] for k in sorted(stats.tag_counts)},
        "short_target_pools": stats.short_target_pools,
        "short_nontarget_pools": stats.short_nontarget_pools,
    }


def stats_to_json(stats: ProtocolStats) -> str:
    return json.dumps(stats_to_dict(stats), indent=2) + "\n"


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

_BOOL_FIELDS = {"include_cross_domain", "include_cross_channel"}
_INT_FIELDS = {"n_target_per_enroll", "n_nontarget_per_enroll", "seed"}
_FLOAT_FIELDS = {"same_gender_ratio"}
_STR_FIELDS = {"enroll_channel_policy", "text_mode"}


def parse_key_values(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected `key = value`")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigInvalid(f"{key}: {value!r} is not a boolean")


def trial_config_from_text(text: str, seed: int | None = None) -> TrialConfig:
    kv = parse_key_values(text)
    kwargs = {}
    for key, value in kv.items():
        if key in _BOOL_FIELDS:
            kwargs[key] = _parse_bool(value, key)
        elif key in _INT_FIELDS:
            kwargs[key] = int(value)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(value)
        elif key in _STR_FIELDS:
            kwargs[key] = value
        else:
            raise ConfigInvalid(f"unknown trial config key {key!r}")
    cfg = TrialConfig(**kwargs)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def load_trial_config(path, seed: int | None = None) -> TrialConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return trial_config_from_text(fh.read(), seed=seed)
