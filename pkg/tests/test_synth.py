import numpy as np
import pytest

from subuda.exceptions import ValidationError
from subuda.synth import (
    PRESET_NAMES,
    DomainShiftSpec,
    SourceView,
    TargetView,
    generate_domain_pair,
    make_preset,
    read_dataset_csv,
    scenario_presets,
    write_dataset_csv,
)


def _tiny_spec(**over):
    doc = dict(
        num_classes=2,
        subtypes_per_class=(1, 2),
        input_dim=2,
        means={
            "source": [[[0.0, 0.0]], [[5.0, 0.0], [0.0, 5.0]]],
            "target": [[[0.0, 0.0]], [[5.0, 0.0], [0.0, 5.0]]],
        },
        noise_std=0.0,
        class_proportions={"source": [0.5, 0.5], "target": [0.5, 0.5]},
        subtype_proportions={"source": [[1.0], [0.5, 0.5]], "target": [[1.0], [1.0, 0.0]]},
        samples_per_domain={"source": 200, "target": 200},
    )
    doc.update(over)
    return DomainShiftSpec(**doc)


def test_zero_noise_samples_sit_on_means():
    src, tgt = generate_domain_pair(_tiny_spec(), 0)
    spec = _tiny_spec()
    for data in (src, tgt):
        for x, y, k in zip(data.X, data.y, data.subtype):
            np.testing.assert_array_equal(x, spec.means[data.domain][y][k])


def test_zero_proportion_subtype_absent():
    _, tgt = generate_domain_pair(_tiny_spec(), 3)
    assert not np.any((tgt.y == 1) & (tgt.subtype == 1))


def test_proportions_must_sum_to_one():
    with pytest.raises(ValidationError):
        _tiny_spec(class_proportions={"source": [0.5, 0.6], "target": [0.5, 0.5]})


def test_mean_shape_validated():
    with pytest.raises(ValidationError):
        _tiny_spec(means={"source": [[[0.0]], [[1.0], [2.0]]], "target": [[[0.0]], [[1.0], [2.0]]]})


def test_deterministic_and_ids_disjoint():
    spec = _tiny_spec()
    a = generate_domain_pair(spec, 11)
    b = generate_domain_pair(spec, 11)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.X, y.X)
    assert set(a[0].ids).isdisjoint(a[1].ids)


def test_views_hide_subtypes_and_target_labels():
    src, tgt = generate_domain_pair(_tiny_spec(), 0)
    sv, tv = src.source_view(), tgt.target_view()
    assert isinstance(sv, SourceView) and isinstance(tv, TargetView)
    assert set(SourceView._fields) == {"ids", "X", "y"}
    assert set(TargetView._fields) == {"ids", "X"}


def test_class_frequencies_follow_proportions():
    spec = _tiny_spec(
        class_proportions={"source": [0.2, 0.8], "target": [0.5, 0.5]},
        samples_per_domain={"source": 20000, "target": 10},
    )
    src, _ = generate_domain_pair(spec, 5)
    assert abs(np.mean(src.y == 1) - 0.8) < 0.015


def test_csv_round_trip(tmp_path):
    spec = make_preset("subtype-condshift", input_dim=4, samples=30)
    src, tgt = generate_domain_pair(spec, 2)
    path = tmp_path / "d.csv"
    write_dataset_csv(path, src, tgt)
    s2, t2 = read_dataset_csv(path)
    for a, b in ((src, s2), (tgt, t2)):
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.subtype, b.subtype)
        np.testing.assert_array_equal(a.ids, b.ids)


def test_spec_json_round_trip(tmp_path):
    spec = make_preset("missing-subtypes-50", input_dim=3, samples=10)
    spec.save(tmp_path / "s.json")
    back = DomainShiftSpec.load(tmp_path / "s.json")
    assert back.to_dict() == spec.to_dict()


def test_preset_catalog():
    cat = scenario_presets(input_dim=8, samples=10)
    assert set(cat) == set(PRESET_NAMES)
    with pytest.raises(KeyError):
        make_preset("no-such-preset")


def test_labelshift_preset_keeps_means():
    spec = make_preset("subtype-labelshift", input_dim=8)
    assert not spec.has_conditional_shift
    assert any(
        not np.allclose(a, b)
        for a, b in zip(spec.subtype_proportions["source"], spec.subtype_proportions["target"])
    )


def test_condshift_preset_moves_means():
    assert make_preset("subtype-condshift", input_dim=8).has_conditional_shift


@pytest.mark.parametrize("frac", [0, 25, 50, 75])
def test_missing_subtype_fraction(frac):
    spec = make_preset(f"missing-subtypes-{frac}", input_dim=8)
    props = np.concatenate(spec.subtype_proportions["target"])
    assert np.mean(props == 0) == frac / 100
