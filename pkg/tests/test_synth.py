import numpy as np
import pytest

from xmatch.analysis import embed_dataset, split_scores, subset_score_matrix
from xmatch.core import CardFormat
from xmatch.errors import ConfigError, RangeError
from xmatch.metrics import tar_at_far
from xmatch.synth import (REFERENCE_SUBSET_SIZES, SynthConfig, generate, subset_label,
                          yellow_probability)


@pytest.mark.parametrize("doc,selfie,name", [(10, 18, "i10s1819"), (18, 18, "i18s1819"),
                                             (12, 18, "i12s1819")])
def test_subset_label(doc, selfie, name):
    label = subset_label(doc, selfie)
    assert label.name == name and label.doc_age == doc and label.selfie_age_range == (18, 19)


@pytest.mark.parametrize("doc,selfie", [(25, 18), (8, 18), (10, 20), (18, 12)])
def test_subset_label_range(doc, selfie):
    with pytest.raises(RangeError):
        subset_label(doc, selfie)


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(noise_sigma=-0.1)
    with pytest.raises(ConfigError):
        SynthConfig(subsets=())
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"sigma": 1})
    cfg = SynthConfig(n_train_subjects=5, subset_sizes=REFERENCE_SUBSET_SIZES)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def small(**kw):
    base = dict(n_train_subjects=200, n_test_per_subset=50, d_in=16, drift_rank=4)
    base.update(kw)
    return SynthConfig(**base)


def test_same_seed_identical():
    a_train, a_tests, a_truth = generate(small(seed=4))
    b_train, b_tests, b_truth = generate(small(seed=4))
    assert a_train == b_train
    assert all(a_tests[k] == b_tests[k] for k in a_tests)
    np.testing.assert_array_equal(a_truth.modality_offset, b_truth.modality_offset)
    c_train, _, _ = generate(small(seed=5))
    assert c_train != a_train


def test_structure():
    cfg = small(subset_sizes={"i10s1819": 7})
    train, tests, truth = generate(cfg)
    assert train.n_subjects == 200 and train.d_in == 16
    names = [lbl.name for lbl in tests]
    assert names == ["i10s1819", "i12s1819", "i14s1819", "i16s1819", "i18s1819"]
    sizes = {lbl.name: ds.n_subjects for lbl, ds in tests.items()}
    assert sizes["i10s1819"] == 7 and sizes["i18s1819"] == 50
    for lbl, ds in tests.items():
        assert np.all(ds.age_doc == lbl.doc_age)
        assert np.all((ds.age_selfie >= 18) & (ds.age_selfie <= 19))
    assert np.linalg.norm(truth.modality_offset) == pytest.approx(cfg.modality_offset_norm)
    ids = set(train.subject_ids)
    for ds in tests.values():
        assert not ids & set(ds.subject_ids)


def test_noiseless_is_perfect():
    cfg = small(noise_sigma=0.0, drift_per_year=0.0, modality_offset_norm=0.0,
                yellow_extra_noise=0.0)
    _, tests, _ = generate(cfg)
    for ds in tests.values():
        np.testing.assert_array_equal(ds.doc, ds.selfie)
        scores = split_scores(subset_score_matrix(ds))
        for far in (1e-4, 1e-3):
            assert tar_at_far(scores, far).tar == 1.0


def test_yellow_probability_shape():
    p = yellow_probability(np.array([10, 12, 14, 16, 18]))
    assert np.all(np.diff(p) < 0)
    assert p[0] > 0.99 and p[-1] < 0.01


def test_card_format_follows_age():
    _, tests, _ = generate(small(n_test_per_subset=400))
    share = {lbl.doc_age: np.mean([c is CardFormat.YELLOW for c in ds.card_format])
             for lbl, ds in tests.items()}
    assert share[10] > 0.95 and share[12] > 0.85
    assert share[14] < 0.15 and share[18] < 0.05


def authentic_mean(ds):
    s, d = embed_dataset(ds)
    return float(np.mean(np.sum(s * d, axis=1)))


def test_age_gap_monotone_baseline():
    # n >= 5000 per subset for the strict ordering of means
    _, tests, _ = generate(SynthConfig(n_train_subjects=10, n_test_per_subset=5000, seed=11))
    means = [authentic_mean(ds) for ds in tests.values()]
    assert all(a < b for a, b in zip(means, means[1:]))


def test_modality_offset_effect():
    means = {}
    for mu in (0.0, 0.5, 1.0):
        _, tests, _ = generate(small(n_test_per_subset=3000, modality_offset_norm=mu, seed=2))
        ds = tests[next(iter(tests))]
        m = subset_score_matrix(ds)
        n = m.shape[0]
        imp = split_scores(m).impostor
        # impostors sharing a selfie (row) or a document (column) are correlated,
        # so the standard error is clustered on both
        off = m - np.diag(np.diag(m))
        row_se = (off.sum(1) / (n - 1)).std(ddof=1) / np.sqrt(n)
        col_se = (off.sum(0) / (n - 1)).std(ddof=1) / np.sqrt(n)
        assert abs(imp.mean()) < 3 * np.hypot(row_se, col_se)
        means[mu] = authentic_mean(ds)
    assert means[0.0] > means[0.5] > means[1.0]


def test_yellow_below_blue_at_equal_gap():
    _, tests, _ = generate(SynthConfig(n_train_subjects=10, n_test_per_subset=6000, seed=3))
    ds = tests[subset_label(12, 18)]
    s, d = embed_dataset(ds)
    g = np.sum(s * d, axis=1)
    yellow = np.array([c is CardFormat.YELLOW for c in ds.card_format])
    assert g[yellow].mean() < g[~yellow].mean()


def test_truth_save(tmp_path):
    _, _, truth = generate(small())
    truth.save(tmp_path / "t.npz")
    with np.load(tmp_path / "t.npz") as z:
        assert "modality_offset" in z and "train/identity" in z
