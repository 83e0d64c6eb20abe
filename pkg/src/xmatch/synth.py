"""Synthetic document/selfie feature generator with age-gap subsets.

Each subject has a unit identity vector ``z``. Features are::

    selfie = z + sigma * e1
    doc    = z + drift * (selfie_age - doc_age) * w + m + sigma * e2 [+ sigma_y * e3]

``m`` is one global modality offset shared by every document, ``w`` a
per-subject unit direction inside a low-rank aging subspace, and ``e*`` are
isotropic Gaussian vectors scaled to unit expected norm. Yellow cards get the
extra ``sigma_y`` term.
"""
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import CardFormat, Gender, PairedDataset, SubsetLabel
from .errors import ConfigError, RangeError

DEFAULT_SUBSETS = ((10, 18), (12, 18), (14, 18), (16, 18), (18, 18))

# Subject counts of the five evaluation subsets, keyed by subset name.
REFERENCE_SUBSET_SIZES = {
    "i10s1819": 631, "i12s1819": 2010, "i14s1819": 2620, "i16s1819": 1619, "i18s1819": 2642,
}

# Share of yellow cards by age on the document, from per-subset card counts.
_YELLOW_AGES = np.array([10.0, 12.0, 14.0, 16.0, 18.0])
_YELLOW_SHARE = np.array([630 / 631, 1936 / 2010, 138 / 2620, 2 / 1619, 3 / 2642])


def yellow_probability(doc_age):
    return np.interp(doc_age, _YELLOW_AGES, _YELLOW_SHARE)


def subset_label(doc_age, selfie_age):
    """``(10, 18) -> "i10s1819"``; the selfie side spans two years."""
    for age in (doc_age, selfie_age):
        if not 9 <= int(age) <= 19:
            raise RangeError(f"age {age} outside [9, 19]")
    if doc_age > selfie_age:
        raise RangeError("document age cannot exceed selfie age")
    doc_age, selfie_age = int(doc_age), int(selfie_age)
    name = f"i{doc_age:02d}s{selfie_age:02d}{selfie_age + 1:02d}"
    return SubsetLabel(name, doc_age, (selfie_age, selfie_age + 1))


@dataclass(frozen=True)
class SynthConfig:
    n_train_subjects: int = 20000
    n_test_per_subset: int = 600
    d_in: int = 128
    modality_offset_norm: float = 1.0
    drift_per_year: float = 0.18
    noise_sigma: float = 0.88
    yellow_extra_noise: float = 0.9
    drift_rank: int = 8
    subsets: tuple = DEFAULT_SUBSETS
    gender_fraction_male: float = 0.56
    selfie_age_spread: int = 1
    seed: int = 0
    # optional per-subset sizes overriding n_test_per_subset, e.g. REFERENCE_SUBSET_SIZES
    subset_sizes: dict = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "subsets", tuple(tuple(int(a) for a in s) for s in self.subsets))
        if self.subset_sizes is not None:
            object.__setattr__(self, "subset_sizes", dict(self.subset_sizes))
        self.validate()

    def validate(self):
        if not self.subsets:
            raise ConfigError("subsets must be non-empty")
        for name in ("modality_offset_norm", "drift_per_year", "noise_sigma",
                     "yellow_extra_noise", "n_train_subjects", "n_test_per_subset",
                     "selfie_age_spread"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.d_in < 2:
            raise ConfigError("d_in must be at least 2")
        if not 1 <= self.drift_rank <= self.d_in:
            raise ConfigError("drift_rank must lie in [1, d_in]")
        if not 0.0 <= self.gender_fraction_male <= 1.0:
            raise ConfigError("gender_fraction_male must lie in [0, 1]")
        for doc_age, selfie_age in self.subsets:
            subset_label(doc_age, selfie_age)

    def labels(self):
        return [subset_label(d, s) for d, s in self.subsets]

    def size_of(self, label):
        if self.subset_sizes and label.name in self.subset_sizes:
            return int(self.subset_sizes[label.name])
        return self.n_test_per_subset

    def to_dict(self):
        d = asdict(self)
        d["subsets"] = [list(s) for s in self.subsets]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class BlockTruth:
    identity: np.ndarray
    drift: np.ndarray
    yellow: np.ndarray
    selfie_noise_norm: np.ndarray
    doc_noise_norm: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    """Latent generator state; for diagnostics only, never fed to training."""

    modality_offset: np.ndarray
    aging_basis: np.ndarray
    blocks: dict

    def save(self, path):
        arrays = {"modality_offset": self.modality_offset, "aging_basis": self.aging_basis}
        for name, blk in self.blocks.items():
            for f in fields(BlockTruth):
                arrays[f"{name}/{f.name}"] = getattr(blk, f.name)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _block(cfg, rng, n, doc_ages, selfie_base, ids, offset, basis):
    d = cfg.d_in
    selfie_ages = selfie_base + rng.integers(0, cfg.selfie_age_spread + 1, size=n)
    male = rng.random(n) < cfg.gender_fraction_male
    yellow = rng.random(n) < yellow_probability(doc_ages)
    z = _unit_rows(rng.standard_normal((n, d)))
    w = _unit_rows(rng.standard_normal((n, basis.shape[0]))) @ basis
    scale = 1.0 / np.sqrt(d)
    e1 = rng.standard_normal((n, d)) * scale
    e2 = rng.standard_normal((n, d)) * scale
    e3 = rng.standard_normal((n, d)) * scale

    gap = (selfie_ages - doc_ages).astype(np.float64)
    drift = (cfg.drift_per_year * gap)[:, None] * w
    selfie_noise = cfg.noise_sigma * e1
    doc_noise = cfg.noise_sigma * e2 + cfg.yellow_extra_noise * yellow[:, None] * e3
    selfie = z + selfie_noise
    doc = z + drift + offset + doc_noise

    ds = PairedDataset(
        ids, doc, selfie,
        [Gender.MALE if m else Gender.FEMALE for m in male],
        doc_ages, selfie_ages,
        [CardFormat.YELLOW if y else CardFormat.BLUE for y in yellow])
    truth = BlockTruth(z, drift, yellow, np.linalg.norm(selfie_noise, axis=1),
                       np.linalg.norm(doc_noise, axis=1))
    return ds, truth


def generate(config, rng=None):
    """Build the training set and one test set per configured subset.

    Returns ``(train, {SubsetLabel: PairedDataset}, GroundTruth)``. Output is a
    pure function of ``config.seed`` unless ``rng`` is given, in which case
    the root seed is drawn from it.
    """
    config.validate()
    root = config.seed if rng is None else int(rng.integers(2**63 - 1))
    labels = config.labels()
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(root).spawn(2 + len(labels))]

    g = streams[0]
    offset = g.standard_normal(config.d_in)
    offset *= config.modality_offset_norm / np.linalg.norm(offset)
    basis, _ = np.linalg.qr(g.standard_normal((config.d_in, config.drift_rank)))
    basis = basis.T

    doc_lo = min(d for d, _ in config.subsets)
    doc_hi = max(d for d, _ in config.subsets)
    selfie_base = max(s for _, s in config.subsets)
    n = config.n_train_subjects
    tr = streams[1]
    doc_ages = tr.integers(doc_lo, doc_hi + 1, size=n)
    train, train_truth = _block(config, tr, n, doc_ages, selfie_base,
                                [f"tr{i:06d}" for i in range(n)], offset, basis)

    tests, blocks = {}, {"train": train_truth}
    for label, (doc_age, selfie_age), stream in zip(labels, config.subsets, streams[2:]):
        n = config.size_of(label)
        ds, truth = _block(config, stream, n, np.full(n, doc_age), selfie_age,
                           [f"{label.name}-{i:05d}" for i in range(n)], offset, basis)
        tests[label] = ds
        blocks[label.name] = truth
    return train, tests, GroundTruth(offset, basis, blocks)
