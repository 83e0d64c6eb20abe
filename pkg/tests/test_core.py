import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_dataset
from xmatch.core import (CardFormat, Gender, ImageRecord, Modality, PairedDataset,
                         cosine_similarity, cross_modal_scores, l2_normalize, l2_normalize_rows,
                         load_dataset, squared_distance, write_dataset)
from xmatch.errors import (DimensionError, EmptyInputError, NormalizationError, ParseError)

finite_vec = arrays(np.float64, st.integers(1, 32),
                    elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False))


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8])
    with pytest.raises(NormalizationError):
        l2_normalize([0.0, 0.0])
    with pytest.raises(NormalizationError):
        l2_normalize([np.nan, 1.0])
    with pytest.raises(DimensionError):
        l2_normalize([])


@given(finite_vec)
def test_l2_normalize_unit_and_idempotent(v):
    if not np.any(v):
        with pytest.raises(NormalizationError):
            l2_normalize(v)
        return
    z = l2_normalize(v)
    assert abs(np.linalg.norm(z) - 1.0) <= 1e-12
    np.testing.assert_allclose(l2_normalize(z), z, atol=1e-15)


@given(finite_vec, st.integers(-300, 300))
def test_l2_normalize_rows_scale_invariant(v, exp):
    if not np.any(v):
        return
    x = np.stack([v, v * 10.0 ** exp])
    z = l2_normalize_rows(x)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(z[1], z[0], atol=1e-12)


def test_cosine_examples():
    assert cosine_similarity([1.0, 0.0], [1.0, 0.0]) == 1.0
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine_similarity([1.0, 0.0], [-1.0, 0.0]) == -1.0
    with pytest.raises(DimensionError):
        cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def test_squared_distance_examples():
    assert squared_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0)
    assert squared_distance([0.6, 0.8], [0.6, 0.8]) == 0.0


@settings(max_examples=200)
@given(st.integers(2, 16), st.integers(0, 2**32 - 1))
def test_cosine_symmetric_bounded_and_distance_identity(d, seed):
    rng = np.random.default_rng(seed)
    a, b = l2_normalize_rows(rng.standard_normal((2, d)))
    c = cosine_similarity(a, b)
    assert c == cosine_similarity(b, a)
    assert -1.0 <= c <= 1.0
    # for unit vectors |a-b|^2 = 2 - 2 cos
    assert squared_distance(a, b) == pytest.approx(2.0 - 2.0 * c, abs=1e-12)


def test_cross_modal_scores_oracle():
    rng = np.random.default_rng(5)
    docs = l2_normalize_rows(rng.standard_normal((4, 7)))
    selfies = l2_normalize_rows(rng.standard_normal((3, 7)))
    m = cross_modal_scores(docs, selfies)
    assert m.shape == (3, 4)
    for i in range(3):
        for j in range(4):
            assert m[i, j] == pytest.approx(cosine_similarity(selfies[i], docs[j]), abs=1e-14)


def test_cross_modal_scores_errors():
    with pytest.raises(EmptyInputError):
        cross_modal_scores(np.zeros((0, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        cross_modal_scores(np.eye(3), np.eye(4))


def test_image_record_card_format_rule():
    ImageRecord("a", Modality.SELFIE, Gender.MALE, 18, CardFormat.NOT_APPLICABLE, [1.0])
    with pytest.raises(ValueError):
        ImageRecord("a", Modality.SELFIE, Gender.MALE, 18, CardFormat.BLUE, [1.0])
    with pytest.raises(ValueError):
        ImageRecord("a", Modality.DOCUMENT, Gender.MALE, 10, CardFormat.NOT_APPLICABLE, [1.0])


def test_dataset_records_roundtrip(small_dataset):
    again = PairedDataset.from_records(small_dataset.records())
    assert again == small_dataset
    assert small_dataset.doc.flags.writeable is False
    assert "s0003" in small_dataset and small_dataset.index_of("s0003") == 3


def test_dataset_take_preserves_rows(small_dataset):
    sub = small_dataset.take([5, 2])
    assert sub.subject_ids == ("s0005", "s0002")
    np.testing.assert_array_equal(sub.doc[1], small_dataset.doc[2])


def test_dataset_rejects_duplicates():
    with pytest.raises(ValueError):
        PairedDataset(["a", "a"], np.ones((2, 2)), np.ones((2, 2)), ["male"] * 2, [10, 10],
                      [18, 18], ["blue"] * 2)


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_write_load_roundtrip(tmp_path, small_dataset, fmt):
    path = tmp_path / "ds.bin"
    write_dataset(small_dataset, path, fmt)
    back = load_dataset(path)
    assert back.subject_ids == small_dataset.subject_ids
    assert back.gender == small_dataset.gender
    assert back.card_format == small_dataset.card_format
    # csv keeps 9 significant digits; binary stores float32
    np.testing.assert_allclose(back.doc, small_dataset.doc, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(back.selfie, small_dataset.selfie, rtol=1e-6, atol=1e-7)


def test_csv_write_is_byte_stable(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "a.csv")
    write_dataset(load_dataset(tmp_path / "a.csv"), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


HEADER = "subject_id,modality,gender,age_doc,age_selfie,card_format,dim,f0,f1\n"


@pytest.mark.parametrize("body,row", [
    ("a,document,male,10,18,blue,2,1,0\na,document,male,10,18,blue,2,1,0\n", 3),
    ("a,document,male,10,18,blue,2,1,0\n", 2),
    ("a,document,male,10,18,blue,2,1\n", 2),
    ("a,document,male,10,18,blue,2,1,0\na,selfie,female,10,18,na,2,1,0\n", 3),
    ("a,selfie,male,10,18,blue,2,1,0\n", 2),
    ("a,document,male,10,18,blue,2,x,0\n", 2),
    ("a,document,robot,10,18,blue,2,1,0\n", 2),
])
def test_csv_errors_carry_row(tmp_path, body, row):
    path = tmp_path / "bad.csv"
    path.write_text(HEADER + body)
    with pytest.raises(ParseError) as err:
        load_dataset(path)
    assert err.value.row == row
    assert str(err.value).startswith(f"row {row}:")


def test_csv_empty_and_bad_header(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text(HEADER)
    with pytest.raises(ParseError, match="no records"):
        load_dataset(path)
    path.write_text("id,x\n")
    with pytest.raises(ParseError):
        load_dataset(path)


def test_csv_dimension_mismatch(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(HEADER + "a,document,male,10,18,blue,3,1,0\n")
    with pytest.raises(ParseError) as err:
        load_dataset(path)
    assert err.value.row == 2


def test_binary_truncated(tmp_path, small_dataset):
    path = tmp_path / "t.xmv"
    write_dataset(small_dataset, path, "binary")
    data = path.read_bytes()
    path.write_bytes(data[:-4])
    with pytest.raises(ParseError):
        load_dataset(path)


def test_gender_enum_values():
    ds = make_dataset(4)
    assert {g.value for g in ds.gender} == {"male", "female"}
