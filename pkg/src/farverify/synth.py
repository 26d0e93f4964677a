"""Deterministic synthetic embedding corpus with ground-truth labels.

Utterances are generated as

    l2_normalize(speaker_mean + visit_drift + channel_offset + noise)

where the speaker mean is an isotropic Gaussian draw, the visit drift is
a cumulative random walk across visits (so larger visit gaps hurt more),
each channel contributes a fixed offset direction, and the noise scale
is the within-speaker spread plus a per-distance increment. The default
distance-noise ordering makes 1M easiest and -1.5M hardest, with 3M
worse than 5M, so stratified reports on this corpus reproduce the
qualitative far-field difficulty pattern.

The generator is pure given its config: the random stream is consumed
in a fixed order that does not depend on any scale value, so two
configs differing only in scales describe the same utterances with the
same noise directions. That is what makes the oracle refresher work:
shrinking the noise scales moves every embedding toward its speaker
mean without re-rolling the corpus.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import (
    Channel,
    Distance,
    Domain,
    EmbeddingSet,
    Gender,
    Manifest,
    UtteranceMeta,
    format_embeddings,
    format_manifest,
)
from .errors import ConfigInvalid
from .clustering import PseudoLabels

DEFAULT_DISTANCE_NOISE: Mapping[str, float] = {
    "1M": 0.05,
    "5M": 0.11,
    "3M": 0.18,
    "-1.5M": 0.28,
    "NA": 0.0,
}

DEFAULT_CHANNEL_OFFSETS: Mapping[str, float] = {
    "close_talk": 0.0,
    "tablet": 0.06,
    "telephone": 0.10,
}

_FAR_CYCLE = (Distance.NEG1_5M, Distance.M1, Distance.M3, Distance.M5)
_TEXT_POOL = tuple(f"t{i:02d}" for i in range(10))


@dataclass(frozen=True)
class SynthConfig:
    """Shape and nuisance scales of the generated corpus."""

    n_speakers: int = 120
    utts_per_speaker_per_visit: int | tuple[int, ...] = (7, 7, 6)
    dim: int = 64
    speaker_spread: float = 1.0
    within_spread: float = 0.22
    channel_offsets: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CHANNEL_OFFSETS)
    )
    distance_noise: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_DISTANCE_NOISE)
    )
    visits: int = 3
    visit_drift: float = 0.10
    seed: int = 12345

    def __post_init__(self):
        object.__setattr__(self, "channel_offsets", dict(self.channel_offsets))
        object.__setattr__(self, "distance_noise", dict(self.distance_noise))
        if self.n_speakers < 2:
            raise ConfigInvalid("n_speakers must be >= 2")
        if self.dim < 2:
            raise ConfigInvalid("dim must be >= 2")
        if not 1 <= self.visits <= 3:
            raise ConfigInvalid("visits must be 1..3 (visit index is 0..2)")
        for name in ("speaker_spread", "within_spread", "visit_drift"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be >= 0")
        for ch in self.channel_offsets:
            if ch not in {c.value for c in Channel}:
                raise ConfigInvalid(f"unknown channel {ch!r} in channel_offsets")
        for key, value in self.distance_noise.items():
            if key not in {d.value for d in Distance}:
                raise ConfigInvalid(f"unknown distance {key!r} in distance_noise")
            if value < 0:
                raise ConfigInvalid("distance_noise scales must be >= 0")
        if self.seed < 0:
            raise ConfigInvalid("seed must be >= 0")
        counts = self.visit_counts()
        if len(counts) != self.visits or any(c < 1 for c in counts):
            raise ConfigInvalid(
                "utts_per_speaker_per_visit must be a positive int or a "
                f"{self.visits}-tuple of positive ints"
            )

    def visit_counts(self) -> tuple[int, ...]:
        raw = self.utts_per_speaker_per_visit
        if isinstance(raw, int):
            return (raw,) * self.visits
        return tuple(int(c) for c in raw)


@dataclass(frozen=True)
class SynthCorpus:
    """Embeddings, fully labeled manifest, truth map, and the recipe."""

    embeddings: EmbeddingSet
    manifest: Manifest
    truth: Mapping[str, str]
    config: SynthConfig

    def __post_init__(self):
        object.__setattr__(self, "truth", dict(self.truth))
        if set(self.truth) != set(self.embeddings.ids) or set(self.manifest.ids) != set(
            self.embeddings.ids
        ):
            raise ConfigInvalid("manifest/truth must cover exactly the embedding ids")


def _utt_channel(j: int) -> Channel:
    if j == 0:
        return Channel.CLOSE_TALK
    if j == 1:
        return Channel.TELEPHONE
    return Channel.TABLET


def gen_corpus(cfg: SynthConfig) -> SynthCorpus:
    """Generate the corpus; bit-identical for identical configs."""
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    counts = cfg.visit_counts()

    # Fixed draw order: channel offset directions first, then per-speaker
    # mean, per-visit drift step, and per-utterance text + noise draws.
    offsets: dict[Channel, np.ndarray] = {}
    for channel in (Channel.CLOSE_TALK, Channel.TABLET, Channel.TELEPHONE):
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        offsets[channel] = cfg.channel_offsets.get(channel.value, 0.0) * direction

    ids: list[str] = []
    rows: list[np.ndarray] = []
    metas: list[UtteranceMeta] = []
    truth: dict[str, str] = {}
    for s in range(cfg.n_speakers):
        speaker_id = f"s{s:03d}"
        gender = Gender.MALE if s % 2 == 0 else Gender.FEMALE
        mean = cfg.speaker_spread * rng.standard_normal(d)
        drift = np.zeros(d)
        far_counter = 0
        for visit in range(cfg.visits):
            drift = drift + cfg.visit_drift * rng.standard_normal(d)
            for j in range(counts[visit]):
                channel = _utt_channel(j)
                if channel is Channel.TABLET:
                    distance = _FAR_CYCLE[far_counter % len(_FAR_CYCLE)]
                    far_counter += 1
                    domain = Domain.FAR
                else:
                    distance = Distance.NA
                    domain = Domain.CLOSE
                text_id = _TEXT_POOL[int(rng.integers(len(_TEXT_POOL)))]
                noise = rng.standard_normal(d)
                sigma = cfg.within_spread + cfg.distance_noise.get(distance.value, 0.0)
                vec = mean + drift + offsets[channel] + sigma * noise
                vec = vec / np.linalg.norm(vec)
                utt_id = f"{speaker_id}_v{visit}_u{j:02d}"
                ids.append(utt_id)
                rows.append(vec)
                truth[utt_id] = speaker_id
                metas.append(
                    UtteranceMeta(
                        utt_id=utt_id,
                        speaker_id=speaker_id,
                        gender=gender,
                        channel=channel,
                        distance=distance,
                        visit=visit,
                        text_id=text_id,
                        domain=domain,
                    )
                )

    embeddings = EmbeddingSet(ids, np.vstack(rows))
    return SynthCorpus(embeddings=embeddings, manifest=Manifest(metas), truth=truth, config=cfg)


def oracle_refresher(
    corpus: SynthCorpus, shrink: float = 0.5
) -> Callable[[PseudoLabels], EmbeddingSet]:
    """Embedding refresher that simulates fine-tuning on pseudo-labels.

    Every call regenerates the corpus with within-speaker and distance
    noise scales multiplied by another factor of ``shrink`` (compounding
    across calls), on the same seed lineage. shrink=1.0 reproduces the
    original embeddings exactly.
    """
    if not 0.0 < shrink <= 1.0:
        raise ConfigInvalid(f"shrink must be in (0, 1], got {shrink}")
    base = corpus.config
    calls = {"n": 0}

    def refresh(labels: PseudoLabels) -> EmbeddingSet:
        calls["n"] += 1
        factor = shrink ** calls["n"]
        cfg = replace(
            base,
            within_spread=base.within_spread * factor,
            distance_noise={k: v * factor for k, v in base.distance_noise.items()},
        )
        return gen_corpus(cfg).embeddings

    return refresh


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def format_truth(truth: Mapping[str, str]) -> str:
    return "".join(f"{utt}\t{truth[utt]}\n" for utt in sorted(truth))


def parse_truth(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        utt, spk = line.split("\t")
        out[utt] = spk
    return out


def load_truth(path) -> dict[str, str]:
    return parse_truth(Path(path).read_text(encoding="utf-8"))


def save_corpus(corpus: SynthCorpus, out_dir) -> dict[str, str]:
    """Write embeddings.txt, manifest.csv and truth.tsv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "embeddings": str(out / "embeddings.txt"),
        "manifest": str(out / "manifest.csv"),
        "truth": str(out / "truth.tsv"),
    }
    (out / "embeddings.txt").write_text(format_embeddings(corpus.embeddings), encoding="utf-8")
    (out / "manifest.csv").write_text(format_manifest(corpus.manifest), encoding="utf-8")
    (out / "truth.tsv").write_text(format_truth(corpus.truth), encoding="utf-8")
    return paths


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

def synth_config_from_text(text: str, seed: int | None = None) -> SynthConfig:
    """Build a config from `key = value` lines.

    Scalar keys match the dataclass fields; map entries use dotted keys,
    e.g. ``distance_noise.3M = 0.2`` or ``channel_offsets.tablet = 0.1``.
    ``utts_per_speaker_per_visit`` accepts an int or a comma list.
    """
    from .trials import parse_key_values  # shared key=value syntax

    kv = parse_key_values(text)
    kwargs: dict = {}
    channel_offsets = dict(DEFAULT_CHANNEL_OFFSETS)
    distance_noise = dict(DEFAULT_DISTANCE_NOISE)
    for key, value in kv.items():
        if key.startswith("distance_noise."):
            distance_noise[key.split(".", 1)[1]] = float(value)
        elif key.startswith("channel_offsets."):
            channel_offsets[key.split(".", 1)[1]] = float(value)
        elif key in ("n_speakers", "dim", "visits", "seed"):
            kwargs[key] = int(value)
        elif key in ("speaker_spread", "within_spread", "visit_drift"):
            kwargs[key] = float(value)
        elif key == "utts_per_speaker_per_visit":
            if "," in value:
                kwargs[key] = tuple(int(v) for v in value.split(","))
            else:
                kwargs[key] = int(value)
        else:
            raise ConfigInvalid(f"unknown synth config key {key!r}")
    cfg = SynthConfig(channel_offsets=channel_offsets, distance_noise=distance_noise, **kwargs)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def load_synth_config(path, seed: int | None = None) -> SynthConfig:
    return synth_config_from_text(Path(path).read_text(encoding="utf-8"), seed=seed)
